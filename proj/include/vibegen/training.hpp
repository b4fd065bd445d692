#pragma once

// Wasserstein training loop: critic_iters_per_gen critic updates (weight
// clipped) per generator update, AdamW on both networks, and linearly
// decaying Gaussian noise on the real windows.
//
//   critic loss     L_C = mean C(G(z)) - mean C(x + noise)
//   generator loss  L_G = -mean C(G(z))

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "vibegen/checkpoint.hpp"
#include "vibegen/csv.hpp"
#include "vibegen/data.hpp"
#include "vibegen/errors.hpp"
#include "vibegen/eval.hpp"
#include "vibegen/model.hpp"
#include "vibegen/optim.hpp"

namespace vibegen {

struct TrainConfig {
    double learning_rate = 1e-5;
    std::size_t epochs = 45;
    std::size_t batch_size = 64;
    std::size_t critic_iters_per_gen = 5;
    double clip_value = 0.01;
    double dropout_rate = 0.3;
    double noise_sigma0_fraction = 0.1;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double weight_decay = 0.01;
    double adam_eps = 1e-8;
    std::size_t eval_samples_per_epoch = 64;
    std::size_t windows_per_epoch = 0;  // 0: floor(record length / window)
    std::uint64_t seed = 0;
    bool record_wall_time = true;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (!(clip_value > 0.0)) throw ConfigError("clip_value must be > 0");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
        if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch norm needs statistics)");
        if (critic_iters_per_gen < 1) throw ConfigError("critic_iters_per_gen must be >= 1");
        if (!(noise_sigma0_fraction >= 0.0)) throw ConfigError("noise_sigma0_fraction must be >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw ConfigError("adamw betas must lie in [0, 1)");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
        if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
        if (eval_samples_per_epoch < 1) throw ConfigError("eval_samples_per_epoch must be >= 1");
    }

    AdamWConfig adamw() const { return {learning_rate, beta1, beta2, weight_decay, adam_eps}; }

    /// Generator updates per epoch: ceil(windows / batch).
    std::size_t iterations_per_epoch(std::size_t record_length, std::size_t window = kWindowLength) const {
        const std::size_t windows = windows_per_epoch ? windows_per_epoch : std::max<std::size_t>(1, record_length / window);
        return (windows + batch_size - 1) / batch_size;
    }
};

/// sigma(e) = sigma0 * max(0, 1 - e/E), sigma0 = fraction * dataset_std.
inline double noise_sigma(std::size_t epoch, const TrainConfig& cfg, double dataset_std) {
    const double sigma0 = cfg.noise_sigma0_fraction * dataset_std;
    return sigma0 * std::max(0.0, 1.0 - double(epoch) / double(cfg.epochs));
}

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double critic_loss = 0.0;
    double gen_loss = 0.0;
    double fid = 0.0;
    double noise_sigma = 0.0;
    double seconds = 0.0;
    std::size_t critic_updates = 0;
    std::size_t gen_updates = 0;

    bool operator==(const EpochRecord&) const = default;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
};

inline void write_train_log(const TrainLog& log, const std::filesystem::path& path) {
    CsvWriter csv(path);
    csv.row("epoch", "critic_loss", "gen_loss", "fid", "noise_sigma", "seconds", "critic_updates", "gen_updates");
    for (const auto& r : log.epochs)
        csv.row(r.epoch, r.critic_loss, r.gen_loss, r.fid, r.noise_sigma, r.seconds, r.critic_updates, r.gen_updates);
    csv.close();
}

/// Reads back rows written by write_train_log (used when resuming).
inline TrainLog read_train_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open train log: " + path.string());
    TrainLog log;
    std::string line;
    std::getline(in, line);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> f;
        std::size_t start = 0;
        while (start <= line.size()) {
            const std::size_t end = std::min(line.find(',', start), line.size());
            double v = 0.0;
            if (!detail::parse_double(std::string_view(line).substr(start, end - start), v))
                throw ParseError("train log: bad field", line_no);
            f.push_back(v);
            start = end + 1;
        }
        if (f.size() != 8) throw ParseError("train log: expected 8 fields", line_no);
        log.epochs.push_back({std::size_t(f[0]), f[1], f[2], f[3], f[4], f[5], std::size_t(f[6]), std::size_t(f[7])});
    }
    return log;
}

/// Clamps every critic parameter (conv weights and biases, norm gain and shift) to [-c, c].
template <class T>
void clip_weights(Network<T>& critic, double c) {
    const T lo = T(-c), hi = T(c);
    for (auto& p : critic.params("critic"))
        for (auto& v : p.value) v = std::clamp(v, lo, hi);
}

template <class T>
double max_abs_param(Network<T>& net) {
    double m = 0.0;
    for (auto& p : net.params("net"))
        for (T v : p.value) m = std::max(m, std::abs(double(v)));
    return m;
}

template <class T>
void check_finite_loss(double loss, const char* which, const GanModel<T>& model) {
    if (!std::isfinite(loss))
        throw DivergenceError(std::string(which) + " loss is non-finite at epoch " + std::to_string(model.epoch + 1) +
                              ", step " + std::to_string(model.step));
}

/// Dropout masks of the critic passes on the fake and real batches. Empty
/// means "draw fresh masks".
template <class T>
struct CriticMasks {
    std::vector<Tensor<T>> fake;
    std::vector<Tensor<T>> real;
};

/// L_C for fixed fake and real batches, accumulating critic gradients only.
template <class T>
double critic_loss_backward(GanModel<T>& model, const Tensor<T>& fake, const Tensor<T>& real, Rng& rng,
                            CriticMasks<T>* masks = nullptr, bool replay = false) {
    ForwardCache<T> cf, cr;
    const auto* fixed_fake = replay && masks ? &masks->fake : nullptr;
    const auto* fixed_real = replay && masks ? &masks->real : nullptr;
    Tensor<T> s_fake = critic_forward(model, fake, Mode::train, rng, &cf, fixed_fake);
    Tensor<T> s_real = critic_forward(model, real, Mode::train, rng, &cr, fixed_real);
    if (masks && !replay) {
        masks->fake = cf.masks();
        masks->real = cr.masks();
    }
    double mf = 0.0, mr = 0.0;
    for (T v : s_fake.span()) mf += double(v);
    for (T v : s_real.span()) mr += double(v);
    mf /= double(fake.batch());
    mr /= double(real.batch());
    const BackwardOptions params_only{true, false};
    model.critic.backward(Tensor<T>(s_fake.shape(), T(1.0 / double(fake.batch()))), cf, params_only);
    model.critic.backward(Tensor<T>(s_real.shape(), T(-1.0 / double(real.batch()))), cr, params_only);
    return mf - mr;
}

/// L_G for a fixed latent batch, accumulating generator gradients only.
template <class T>
double generator_loss_backward(GanModel<T>& model, const Tensor<T>& z, Rng& rng,
                               std::vector<Tensor<T>>* critic_masks = nullptr, bool replay = false) {
    ForwardCache<T> cg, cc;
    Tensor<T> fake = generator_forward(model, z, Mode::train, &cg);
    Tensor<T> score = critic_forward(model, fake, Mode::train, rng, &cc, replay ? critic_masks : nullptr);
    if (critic_masks && !replay) *critic_masks = cc.masks();
    double m = 0.0;
    for (T v : score.span()) m += double(v);
    m /= double(z.batch());
    Tensor<T> g_fake = model.critic.backward(Tensor<T>(score.shape(), T(-1.0 / double(z.batch()))), cc, {false, true});
    model.generator.backward(g_fake, cg, {true, false});
    return -m;
}

template <class T>
void add_noise(Tensor<T>& x, double sigma, Rng& rng) {
    if (sigma <= 0.0) return;
    std::normal_distribution<double> dist(0.0, sigma);
    for (auto& v : x.span()) v = T(double(v) + dist(rng));
}

/// One critic update: noisy real batch vs a fresh fake batch, AdamW, clip.
template <class T>
double critic_step(GanModel<T>& model, const WindowBatch<T>& real, const TrainConfig& cfg, Rng& rng, double sigma) {
    Tensor<T> noisy = real.tensor;
    add_noise(noisy, sigma, rng);
    const std::size_t B = noisy.batch();
    Tensor<T> fake = generator_forward(model, sample_latent<T>(model.arch, B, rng), Mode::train);
    model.critic.zero_grad();
    const double loss = critic_loss_backward(model, fake, noisy, rng);
    check_finite_loss(loss, "critic", model);
    if (!model.critic_opt) model.critic_opt.emplace();
    adamw_step(model.critic.params("critic"), *model.critic_opt, cfg.adamw());
    clip_weights(model.critic, cfg.clip_value);
    return loss;
}

/// One generator update through the (unchanged) critic.
template <class T>
double generator_step(GanModel<T>& model, const TrainConfig& cfg, Rng& rng) {
    model.generator.zero_grad();
    const double loss = generator_loss_backward(model, sample_latent<T>(model.arch, cfg.batch_size, rng), rng);
    check_finite_loss(loss, "generator", model);
    if (!model.generator_opt) model.generator_opt.emplace();
    adamw_step(model.generator.params("generator"), *model.generator_opt, cfg.adamw());
    return loss;
}

/// Pooled-statistics score between `count` infer-mode fakes and `count` fresh real windows.
template <class T>
double epoch_fid(GanModel<T>& model, const SignalDataset& ds, std::size_t count, Rng& rng) {
    Tensor<T> fake = generator_forward(model, sample_latent<T>(model.arch, count, rng), Mode::infer);
    auto real = sample_windows<T>(ds, count, rng, model.arch.signal_length());
    return pooled_fid(real.tensor, fake);
}

struct TrainSinks {
    std::filesystem::path out_dir;  // empty: no files written
    std::function<void(const EpochRecord&)> on_epoch;
    std::function<void(std::size_t epoch, double critic_loss)> on_critic_step;
};

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t epoch) {
    char name[32];
    std::snprintf(name, sizeof(name), "ckpt_epoch_%03zu.wdcg", epoch);
    return dir / name;
}

/// Runs epochs model.epoch .. cfg.epochs-1. Each epoch performs
/// iterations_per_epoch() rounds of {critic_iters_per_gen critic steps, one
/// generator step}, then logs the pooled epoch FID and writes a checkpoint.
/// All randomness comes from model.rng, which is checkpointed, so a resumed
/// run continues bit-for-bit.
template <class T>
TrainLog train(GanModel<T>& model, const SignalDataset& ds, const TrainConfig& cfg, const TrainSinks& sinks = {},
               TrainLog log = {}) {
    cfg.validate();
    validate_dataset(ds, model.arch.signal_length());
    if (model.arch.dropout_rate != cfg.dropout_rate)
        throw ConfigError("model dropout rate differs from the training config");
    const double data_std = dataset_stats(ds).std;
    const std::size_t iterations = cfg.iterations_per_epoch(ds.size(), model.arch.signal_length());
    std::string last_checkpoint;
    if (!sinks.out_dir.empty()) std::filesystem::create_directories(sinks.out_dir);

    try {
        for (std::size_t e = model.epoch; e < cfg.epochs; ++e) {
            const auto t0 = std::chrono::steady_clock::now();
            const double sigma = noise_sigma(e, cfg, data_std);
            EpochRecord rec;
            rec.epoch = e + 1;
            rec.noise_sigma = sigma;
            double critic_sum = 0.0, gen_sum = 0.0;
            for (std::size_t it = 0; it < iterations; ++it) {
                for (std::size_t k = 0; k < cfg.critic_iters_per_gen; ++k) {
                    auto real = sample_windows<T>(ds, cfg.batch_size, model.rng, model.arch.signal_length());
                    const double lc = critic_step(model, real, cfg, model.rng, sigma);
                    critic_sum += lc;
                    ++rec.critic_updates;
                    if (sinks.on_critic_step) sinks.on_critic_step(e + 1, lc);
                }
                gen_sum += generator_step(model, cfg, model.rng);
                ++rec.gen_updates;
                ++model.step;
            }
            rec.critic_loss = critic_sum / double(rec.critic_updates);
            rec.gen_loss = gen_sum / double(rec.gen_updates);
            rec.fid = epoch_fid(model, ds, cfg.eval_samples_per_epoch, model.rng);
            if (!std::isfinite(rec.fid)) throw DivergenceError("epoch FID is non-finite at epoch " + std::to_string(e + 1));
            const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
            rec.seconds = cfg.record_wall_time ? dt.count() : 0.0;
            model.epoch = e + 1;
            log.epochs.push_back(rec);
            if (!sinks.out_dir.empty()) {
                const auto path = checkpoint_path(sinks.out_dir, e + 1);
                save_checkpoint(model, path);
                last_checkpoint = path.string();
                write_train_log(log, sinks.out_dir / "train_log.csv");
            }
            if (sinks.on_epoch) sinks.on_epoch(rec);
        }
    } catch (DivergenceError& err) {
        err.set_last_checkpoint(last_checkpoint);
        throw;
    }
    return log;
}

}  // namespace vibegen
