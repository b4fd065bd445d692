#pragma once

// Subcommands of the `vibegen` executable. Exit codes: 0 success,
// 1 usage / configuration / IO error, 2 numerical divergence.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vibegen/checkpoint.hpp"
#include "vibegen/config.hpp"
#include "vibegen/csv.hpp"
#include "vibegen/data.hpp"
#include "vibegen/eval.hpp"
#include "vibegen/gradcheck_suite.hpp"
#include "vibegen/model.hpp"
#include "vibegen/training.hpp"

namespace vibegen {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitDivergence = 2;

inline constexpr double kGradcheckTolerance = 1e-4;

/// Infer-mode generator outputs for `count` latents drawn from `seed`.
template <class T>
Tensor<T> generate_signals(GanModel<T>& model, std::size_t count, std::uint64_t seed, std::size_t chunk = 64) {
    if (count < 1) throw ConfigError("count must be >= 1");
    std::seed_seq seq{seed, std::uint64_t(0x67656e)};
    Rng rng(seq);
    const Tensor<T> z = sample_latent<T>(model.arch, count, rng);
    const std::size_t L = model.arch.signal_length();
    Tensor<T> out(count, 1, L);
    const std::size_t per = model.arch.latent_channels * model.arch.latent_length;
    for (std::size_t start = 0; start < count; start += chunk) {
        const std::size_t n = std::min(chunk, count - start);
        std::vector<T> part(z.data() + start * per, z.data() + (start + n) * per);
        Tensor<T> zc(model.latent_shape(n), std::move(part));
        Tensor<T> y = generator_forward(model, zc, Mode::infer);
        std::copy(y.data(), y.data() + y.size(), out.data() + start * L);
    }
    return out;
}

/// Windows starting at multiples of the window length, picked uniformly with
/// replacement. Useful when the record is a concatenation of generated windows.
template <class T, class R>
WindowBatch<T> sample_aligned_windows(const SignalDataset& ds, std::size_t batch, R& rng,
                                      std::size_t window = kWindowLength) {
    if (ds.size() < window) throw DatasetTooSmallError("record shorter than one window");
    std::uniform_int_distribution<std::size_t> pick(0, ds.size() / window - 1);
    WindowBatch<T> out{Tensor<T>(batch, 1, window), std::vector<std::size_t>(batch)};
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t o = pick(rng) * window;
        out.offsets[b] = o;
        for (std::size_t t = 0; t < window; ++t) out.tensor(b, 0, t) = T(ds.samples[o + t]);
    }
    return out;
}

template <class T>
void write_fid_report(const FidReport& report, const Tensor<T>& real, const Tensor<T>& fake,
                      const std::filesystem::path& dir) {
    {
        CsvWriter csv(dir / "fid_scores.csv");
        csv.row("i", "j", "score");
        for (std::size_t i = 0; i < report.matrix.rows; ++i)
            for (std::size_t j = 0; j < report.matrix.cols; ++j) csv.row(i, j, report.matrix.at(i, j));
        csv.close();
    }
    {
        CsvWriter csv(dir / "fid_hist.csv");
        csv.row("bin_left", "bin_right", "density");
        const auto& h = report.histogram;
        for (std::size_t k = 0; k < h.density.size(); ++k) csv.row(h.edges[k], h.edges[k + 1], h.density[k]);
        csv.close();
    }
    {
        CsvWriter csv(dir / "exemplars.csv");
        csv.row("label", "real_index", "fake_index", "rank", "score", "t", "real", "fake");
        const std::pair<const char*, const ScorePair*> picks[] = {{"low", &report.exemplars.low},
                                                                  {"median", &report.exemplars.median},
                                                                  {"high", &report.exemplars.high}};
        for (const auto& [label, p] : picks) {
            auto r = real.sample(p->real);
            auto f = fake.sample(p->fake);
            for (std::size_t t = 0; t < r.size(); ++t)
                csv.row(std::string(label), p->real, p->fake, p->rank, p->score, t, r[t], f[t]);
        }
        csv.close();
    }
    {
        CsvWriter csv(dir / "box_stats.csv");
        csv.row("signal", "mean", "median", "q1", "q3", "whisker_low", "whisker_high", "outliers");
        for (const auto& [label, b] : report.box)
            csv.row(label, b.mean, b.median, b.q1, b.q3, b.whisker_low, b.whisker_high, b.outliers);
        csv.close();
    }
}

inline SignalDataset load_run_data(const RunConfig& cfg) {
    if (cfg.data.empty()) throw ConfigError("--data is required");
    return load_signal(cfg.data, parse_signal_format(cfg.format));
}

inline int cmd_train(RunConfig cfg, std::ostream& out) {
    cfg.train.validate();
    if (cfg.out.empty()) throw ConfigError("--out is required");
    const SignalDataset ds = load_run_data(cfg);
    std::filesystem::create_directories(cfg.out);
    write_resolved_config(cfg, cfg.out);
    cfg.train.record_wall_time = !deterministic_mode();

    GanModel<float> model;
    TrainLog prior;
    if (!cfg.checkpoint.empty()) {
        model = load_checkpoint<float>(cfg.checkpoint);
        const auto log_path = cfg.out / "train_log.csv";
        if (std::filesystem::exists(log_path)) {
            prior = read_train_log(log_path);
            prior.epochs.erase(std::remove_if(prior.epochs.begin(), prior.epochs.end(),
                                              [&](const EpochRecord& r) { return r.epoch > model.epoch; }),
                               prior.epochs.end());
        }
        out << "resuming from " << cfg.checkpoint.string() << " at epoch " << model.epoch << "\n";
    } else {
        model = GanModel<float>(GanArch::standard(cfg.train.dropout_rate), cfg.train.seed);
    }

    const auto stats = dataset_stats(ds);
    out << "record: " << ds.size() << " samples, mean " << format_number(stats.mean) << ", std "
        << format_number(stats.std) << "\n";
    TrainSinks sinks;
    sinks.out_dir = cfg.out;
    sinks.on_epoch = [&](const EpochRecord& r) {
        out << "epoch " << r.epoch << "/" << cfg.train.epochs << "  critic " << format_number(r.critic_loss) << "  gen "
            << format_number(r.gen_loss) << "  fid " << format_number(r.fid) << "  sigma " << format_number(r.noise_sigma)
            << std::endl;
    };
    try {
        train(model, ds, cfg.train, sinks, prior);
    } catch (const DivergenceError& e) {
        out << "training diverged: " << e.what();
        if (!e.last_checkpoint().empty()) out << " (last good checkpoint: " << e.last_checkpoint() << ")";
        out << "\n";
        return kExitDivergence;
    }
    return kExitOk;
}

inline int cmd_generate(RunConfig cfg, std::ostream& out) {
    if (cfg.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    if (cfg.out.empty()) throw ConfigError("--out is required");
    if (cfg.count < 1) throw ConfigError("--count must be >= 1");
    GanModel<float> model = load_checkpoint<float>(cfg.checkpoint);
    const Tensor<float> signals = generate_signals(model, cfg.count, cfg.train.seed);
    std::filesystem::create_directories(cfg.out);
    write_resolved_config(cfg, cfg.out);
    CsvWriter csv(cfg.out / "generated.csv");
    for (std::size_t b = 0; b < signals.batch(); ++b) {
        for (float v : signals.sample(b)) csv.field(v);
        csv.end_row();
    }
    csv.close();
    const std::vector<double> flat(signals.span().begin(), signals.span().end());
    write_f32le(cfg.out / "generated.f32", flat);
    out << "wrote " << cfg.count << " signals of length " << signals.length() << " to " << cfg.out.string() << "\n";
    return kExitOk;
}

inline int cmd_evaluate(RunConfig cfg, std::ostream& out) {
    if (cfg.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    if (cfg.out.empty()) throw ConfigError("--out is required");
    if (cfg.num < 1) throw ConfigError("--num must be >= 1");
    const SignalDataset ds = load_run_data(cfg);
    GanModel<float> model = load_checkpoint<float>(cfg.checkpoint);
    const Tensor<float> fake = generate_signals(model, cfg.num, cfg.train.seed);
    std::seed_seq seq{cfg.train.seed, std::uint64_t(0x7265616c)};
    Rng rng(seq);
    const std::size_t L = model.arch.signal_length();
    const auto real = cfg.aligned_windows ? sample_aligned_windows<float>(ds, cfg.num, rng, L)
                                          : sample_windows<float>(ds, cfg.num, rng, L);
    const FidReport report = build_fid_report(real.tensor, fake, cfg.bins);
    std::filesystem::create_directories(cfg.out);
    write_resolved_config(cfg, cfg.out);
    write_fid_report(report, real.tensor, fake, cfg.out);
    out << "scores: " << report.matrix.scores.size() << " (" << report.matrix.rows << " real x " << report.matrix.cols
        << " generated)\n";
    out << "min " << format_number(report.min) << "  max " << format_number(report.max) << "  mean "
        << format_number(report.mean) << "\n";
    out << "pooled " << format_number(pooled_fid(real.tensor, fake)) << "\n";
    const auto& ex = report.exemplars;
    for (const auto* p : {&ex.low, &ex.median, &ex.high})
        out << "exemplar real " << p->real << " / fake " << p->fake << "  score " << format_number(p->score) << "\n";
    return kExitOk;
}

inline int cmd_gradcheck(RunConfig cfg, std::ostream& out) {
    bool ok = true;
    for (const auto& r : run_gradcheck_suite(cfg.train.seed)) {
        const bool pass = r.max_rel_error < kGradcheckTolerance;
        ok = ok && pass;
        out << r.label << ": max relative error " << format_number(r.max_rel_error) << " over " << r.coordinates
            << " coordinates" << (pass ? "" : "  FAIL (" + r.worst_target + ")") << "\n";
    }
    return ok ? kExitOk : kExitUsage;
}

inline int cmd_synth_data(std::size_t samples, std::uint64_t seed, const std::filesystem::path& path,
                          std::ostream& out) {
    if (samples < 1) throw ConfigError("--samples must be >= 1");
    if (path.empty()) throw ConfigError("--out is required");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto values = synthesize_signal(samples, seed);
    const auto ext = path.extension().string();
    if (ext == ".f64") {
        write_f64le(path, values);
    } else if (ext == ".csv") {
        CsvWriter csv(path);
        for (double v : values) csv.row(static_cast<float>(v));
        csv.close();
    } else {
        write_f32le(path, values);
    }
    out << "wrote " << samples << " samples to " << path.string() << "\n";
    return kExitOk;
}

/// Parses `args` (without the program name) and runs the selected subcommand.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"1-D Wasserstein DCGAN for vibration signal synthesis", "vibegen"};
    app.require_subcommand(1);

    std::map<std::string, std::string> flags;  // config key -> raw value
    std::string config_file;
    auto add_value = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
        sub->add_option_function<std::string>(flag, [&flags, key](const std::string& v) { flags[key] = v; }, help);
    };
    auto add_training = [&](CLI::App* sub) {
        add_value(sub, "--lr,--learning-rate", "learning_rate", "AdamW learning rate");
        add_value(sub, "--epochs", "epochs", "number of epochs");
        add_value(sub, "--batch-size", "batch_size", "windows per batch");
        add_value(sub, "--critic-iters", "critic_iters_per_gen", "critic updates per generator update");
        add_value(sub, "--clip", "clip_value", "critic weight clip value");
        add_value(sub, "--dropout", "dropout_rate", "critic dropout rate");
        add_value(sub, "--noise-fraction", "noise_sigma0_fraction", "initial real-batch noise, fraction of record std");
        add_value(sub, "--beta1", "beta1", "AdamW beta1");
        add_value(sub, "--beta2", "beta2", "AdamW beta2");
        add_value(sub, "--weight-decay", "weight_decay", "AdamW decoupled weight decay");
        add_value(sub, "--adam-eps", "adam_eps", "AdamW epsilon");
        add_value(sub, "--eval-samples", "eval_samples_per_epoch", "generated/real windows for the epoch FID");
        add_value(sub, "--windows-per-epoch", "windows_per_epoch", "windows per epoch (0: record length / 1024)");
    };
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_file, "key = value config file");
        add_value(sub, "--seed", "seed", "random seed");
    };

    auto* train_cmd = app.add_subcommand("train", "train a model on a vibration record");
    add_common(train_cmd);
    add_value(train_cmd, "--data", "data", "record file (.csv, .f32, .f64)");
    add_value(train_cmd, "--format", "format", "auto|csv|f32le|f64le");
    add_value(train_cmd, "--out", "out", "run directory");
    add_value(train_cmd, "--checkpoint", "checkpoint", "resume from this checkpoint");
    add_training(train_cmd);

    auto* gen_cmd = app.add_subcommand("generate", "synthesize signals from a checkpoint");
    add_common(gen_cmd);
    add_value(gen_cmd, "--checkpoint", "checkpoint", "trained checkpoint");
    add_value(gen_cmd, "--count", "count", "number of signals");
    add_value(gen_cmd, "--out", "out", "output directory");

    auto* eval_cmd = app.add_subcommand("evaluate", "pairwise FID evaluation of a checkpoint");
    add_common(eval_cmd);
    add_value(eval_cmd, "--checkpoint", "checkpoint", "trained checkpoint");
    add_value(eval_cmd, "--data", "data", "record file (.csv, .f32, .f64)");
    add_value(eval_cmd, "--format", "format", "auto|csv|f32le|f64le");
    add_value(eval_cmd, "--num", "num", "windows per side");
    add_value(eval_cmd, "--bins", "bins", "histogram bins");
    add_value(eval_cmd, "--out", "out", "output directory");
    eval_cmd->add_flag_callback("--aligned-windows", [&flags] { flags["aligned_windows"] = "true"; },
                                "sample real windows at multiples of 1024");

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every layer, 64-bit");
    add_common(grad_cmd);

    std::size_t samples = 262144;
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    auto* synth_cmd = app.add_subcommand("synth-data", "write a seeded synthetic vibration record");
    synth_cmd->add_option("--samples", samples, "number of samples");
    synth_cmd->add_option("--seed", synth_seed, "random seed");
    synth_cmd->add_option("--out", synth_out, "output file (.f32, .f64 or .csv)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    try {
        if (synth_cmd->parsed()) return cmd_synth_data(samples, synth_seed, synth_out, out);
        RunConfig cfg;
        if (!config_file.empty()) apply_config_file(cfg, config_file);
        for (const auto& [key, value] : flags) apply_config_value(cfg, key, value);
        cfg.train.validate();
        if (train_cmd->parsed()) return cmd_train(cfg, out);
        if (gen_cmd->parsed()) return cmd_generate(cfg, out);
        if (eval_cmd->parsed()) return cmd_evaluate(cfg, out);
        if (grad_cmd->parsed()) return cmd_gradcheck(cfg, out);
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        for (auto* sub : app.get_subcommands()) err << sub->help();
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace vibegen
