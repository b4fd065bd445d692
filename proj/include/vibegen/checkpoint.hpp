#pragma once

// Checkpoint file (all integers little-endian):
//
//   "WDCG"                      magic
//   u32 version                 kCheckpointVersion
//   u32 precision               bytes per stored element (4 or 8)
//   arch block                  u32 latent_channels, u32 latent_length, f64 dropout_rate,
//                               then for generator and critic: u32 layer count and per layer
//                               u32 in, out, kernel, stride, padding, transposed, norm,
//                               activation, dropout, then f64 negative slope
//   meta block                  u64 seed, u64 epoch, u64 step, u32 n + n bytes rng state
//   u32 record count, records   u32 name length, UTF-8 name, u32 rank, u64 dims[rank],
//                               raw IEEE-754 data
//   u8 optimizer flags          bit 0 generator state present, bit 1 critic state present;
//                               each present state is u64 step, u32 record count, records
//   u32 CRC-32                  of every preceding byte

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vibegen/errors.hpp"
#include "vibegen/model.hpp"

namespace vibegen {

inline constexpr char kCheckpointMagic[4] = {'W', 'D', 'C', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

class ByteWriter {
public:
    template <class U>
    void put(U value) {
        if constexpr (std::is_floating_point_v<U>) {
            using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
            put(std::bit_cast<Bits>(value));
        } else {
            for (std::size_t i = 0; i < sizeof(U); ++i)
                bytes_.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(value) >> (8 * i)));
        }
    }

    void put_bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }

    void put_string(const std::string& s) {
        put(static_cast<std::uint32_t>(s.size()));
        put_bytes(s.data(), s.size());
    }

    std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <class U>
    U get(const char* what) {
        if constexpr (std::is_floating_point_v<U>) {
            using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
            return std::bit_cast<U>(get<Bits>(what));
        } else {
            need(sizeof(U), what);
            std::uint64_t v = 0;
            for (std::size_t i = 0; i < sizeof(U); ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
            pos_ += sizeof(U);
            return static_cast<U>(v);
        }
    }

    std::string get_string(const char* what) {
        const auto n = get<std::uint32_t>(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
    }

    std::size_t pos() const { return pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

inline void put_layer(ByteWriter& w, const LayerSpec& l) {
    for (std::uint32_t v : {std::uint32_t(l.conv.in_channels), std::uint32_t(l.conv.out_channels),
                            std::uint32_t(l.conv.kernel), std::uint32_t(l.conv.stride), std::uint32_t(l.conv.padding),
                            std::uint32_t(l.conv.transposed), std::uint32_t(l.norm), std::uint32_t(l.act.kind),
                            std::uint32_t(l.dropout)})
        w.put(v);
    w.put(l.act.alpha);
}

inline LayerSpec get_layer(ByteReader& r) {
    const std::size_t at = r.pos();
    std::uint32_t v[9];
    for (auto& x : v) x = r.get<std::uint32_t>("layer spec");
    LayerSpec l;
    l.conv = ConvSpec{v[0], v[1], v[2], v[3], v[4], v[5] != 0};
    if (v[6] > 2 || v[7] > 2 || v[5] > 1 || v[8] > 1) throw FormatError("checkpoint: invalid layer spec", at);
    l.norm = static_cast<NormKind>(v[6]);
    l.act.kind = static_cast<ActivationKind>(v[7]);
    l.dropout = v[8] != 0;
    l.act.alpha = r.get<double>("layer slope");
    return l;
}

template <class T>
void put_record(ByteWriter& w, const std::string& name, std::span<const std::uint64_t> dims, std::span<const T> data) {
    w.put_string(name);
    w.put(static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) w.put(d);
    for (T v : data) w.put(v);
}

/// Reads one record into `out`, converting from the stored precision.
template <class T>
void get_record(ByteReader& r, std::uint32_t precision, const std::string& expected_name, std::span<T> out) {
    const std::size_t at = r.pos();
    const std::string name = r.get_string("record name");
    if (name != expected_name)
        throw FormatError("checkpoint: expected record '" + expected_name + "', found '" + name + "'", at);
    const auto rank = r.get<std::uint32_t>("record rank");
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) count *= r.get<std::uint64_t>("record dims");
    if (count != out.size())
        throw FormatError("checkpoint: record '" + name + "' holds " + std::to_string(count) + " values, expected " +
                              std::to_string(out.size()),
                          at);
    r.need(count * precision, "record data");
    for (auto& v : out) v = precision == 4 ? T(r.get<float>("record data")) : T(r.get<double>("record data"));
}

template <class T>
std::vector<std::uint64_t> param_dims(const std::string& name, std::size_t size, const GanArch& arch) {
    // Conv weights are rank 3; everything else is a per-channel vector.
    if (name.ends_with(".conv.weight")) {
        const bool gen = name.starts_with("generator.");
        const std::size_t idx = std::stoul(name.substr(name.find('.') + 1));
        const ConvSpec& s = (gen ? arch.generator : arch.critic).layers.at(idx).conv;
        if (s.transposed) return {s.in_channels, s.out_channels, s.kernel};
        return {s.out_channels, s.in_channels, s.kernel};
    }
    return {size};
}

template <class T>
std::vector<std::pair<std::string, std::span<T>>> all_records(GanModel<T>& model) {
    std::vector<std::pair<std::string, std::span<T>>> out;
    for (auto& p : model.generator.params("generator")) out.emplace_back(p.name, p.value);
    for (auto& b : model.generator.buffers("generator")) out.push_back(b);
    for (auto& p : model.critic.params("critic")) out.emplace_back(p.name, p.value);
    for (auto& b : model.critic.buffers("critic")) out.push_back(b);
    return out;
}

template <class T>
void put_optimizer(ByteWriter& w, const AdamWState<T>& state, const std::vector<ParamRef<T>>& params,
                   const GanArch& arch) {
    w.put(state.step);
    w.put(static_cast<std::uint32_t>(2 * state.m.size()));
    for (std::size_t k = 0; k < state.m.size(); ++k) {
        const auto dims = param_dims<T>(params[k].name, state.m[k].size(), arch);
        put_record<T>(w, "adamw.m." + params[k].name, dims, state.m[k]);
        put_record<T>(w, "adamw.v." + params[k].name, dims, state.v[k]);
    }
}

template <class T>
AdamWState<T> get_optimizer(ByteReader& r, std::uint32_t precision, const std::vector<ParamRef<T>>& params) {
    AdamWState<T> state;
    state.step = r.get<std::uint64_t>("optimizer step");
    const std::size_t at = r.pos();
    const auto count = r.get<std::uint32_t>("optimizer record count");
    if (count != 0 && count != 2 * params.size())
        throw FormatError("checkpoint: optimizer state does not match the parameter list", at);
    if (count == 0) return state;
    for (const auto& p : params) {
        state.m.emplace_back(p.value.size());
        state.v.emplace_back(p.value.size());
        get_record<T>(r, precision, "adamw.m." + p.name, std::span<T>(state.m.back()));
        get_record<T>(r, precision, "adamw.v." + p.name, std::span<T>(state.v.back()));
    }
    return state;
}

}  // namespace detail

template <class T>
std::vector<std::uint8_t> serialize_checkpoint(GanModel<T>& model) {
    detail::ByteWriter w;
    w.put_bytes(kCheckpointMagic, 4);
    w.put(kCheckpointVersion);
    w.put(static_cast<std::uint32_t>(sizeof(T)));

    const GanArch& a = model.arch;
    w.put(static_cast<std::uint32_t>(a.latent_channels));
    w.put(static_cast<std::uint32_t>(a.latent_length));
    w.put(a.dropout_rate);
    for (const NetworkArch* net : {&a.generator, &a.critic}) {
        w.put(static_cast<std::uint32_t>(net->layers.size()));
        for (const auto& l : net->layers) detail::put_layer(w, l);
    }

    w.put(model.seed);
    w.put(model.epoch);
    w.put(model.step);
    std::ostringstream rng_text;
    rng_text << model.rng;
    w.put_string(rng_text.str());

    const auto records = detail::all_records(model);
    w.put(static_cast<std::uint32_t>(records.size()));
    for (const auto& [name, data] : records) {
        const auto dims = detail::param_dims<T>(name, data.size(), a);
        detail::put_record<T>(w, name, dims, data);
    }

    std::uint8_t flags = (model.generator_opt ? 1 : 0) | (model.critic_opt ? 2 : 0);
    w.put(flags);
    if (model.generator_opt) detail::put_optimizer(w, *model.generator_opt, model.generator.params("generator"), a);
    if (model.critic_opt) detail::put_optimizer(w, *model.critic_opt, model.critic.params("critic"), a);

    auto& bytes = w.bytes();
    const auto crc = static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
    w.put(crc);
    return std::move(w.bytes());
}

/// Parses a checkpoint written at either precision into a model of precision T.
template <class T>
GanModel<T> deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic", 0);
    detail::ByteReader r(bytes);
    r.get<std::uint32_t>("magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version), 4);
    const auto precision = r.get<std::uint32_t>("precision");
    if (precision != 4 && precision != 8)
        throw FormatError("checkpoint: unsupported precision tag " + std::to_string(precision), 8);
    if (bytes.size() < 16) throw FormatError("checkpoint truncated before checksum", bytes.size());
    const std::size_t body = bytes.size() - 4;
    const auto expected = static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(body)));
    detail::ByteReader tail(bytes.subspan(body));
    if (tail.get<std::uint32_t>("checksum") != expected) throw FormatError("checkpoint: CRC-32 mismatch", body);
    detail::ByteReader in(bytes.first(body));
    in.get<std::uint32_t>("magic");
    in.get<std::uint32_t>("version");
    in.get<std::uint32_t>("precision");

    GanArch arch;
    arch.latent_channels = in.get<std::uint32_t>("latent channels");
    arch.latent_length = in.get<std::uint32_t>("latent length");
    arch.dropout_rate = in.get<double>("dropout rate");
    for (NetworkArch* net : {&arch.generator, &arch.critic}) {
        const auto n = in.get<std::uint32_t>("layer count");
        for (std::uint32_t i = 0; i < n; ++i) net->layers.push_back(detail::get_layer(in));
    }
    const std::size_t arch_end = in.pos();
    try {
        arch.validate();
    } catch (const std::exception& e) {
        throw FormatError(std::string("checkpoint: invalid architecture: ") + e.what(), arch_end);
    }

    GanModel<T> model(arch, 0);
    model.seed = in.get<std::uint64_t>("seed");
    model.epoch = in.get<std::uint64_t>("epoch");
    model.step = in.get<std::uint64_t>("step");
    const std::size_t rng_at = in.pos();
    std::istringstream rng_text(in.get_string("rng state"));
    rng_text >> model.rng;
    if (rng_text.fail()) throw FormatError("checkpoint: unreadable rng state", rng_at);

    auto records = detail::all_records(model);
    const std::size_t count_at = in.pos();
    const auto count = in.get<std::uint32_t>("record count");
    if (count != records.size())
        throw FormatError("checkpoint: " + std::to_string(count) + " parameter records, expected " +
                              std::to_string(records.size()),
                          count_at);
    for (auto& [name, data] : records) detail::get_record<T>(in, precision, name, data);

    const std::size_t flags_at = in.pos();
    const auto flags = in.get<std::uint8_t>("optimizer flags");
    if (flags > 3) throw FormatError("checkpoint: invalid optimizer flags", flags_at);
    if (flags & 1) model.generator_opt = detail::get_optimizer<T>(in, precision, model.generator.params("generator"));
    if (flags & 2) model.critic_opt = detail::get_optimizer<T>(in, precision, model.critic.params("critic"));
    if (in.pos() != body) throw FormatError("checkpoint: trailing bytes before checksum", in.pos());
    return model;
}

template <class T>
void save_checkpoint(GanModel<T>& model, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class T>
GanModel<T> load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return deserialize_checkpoint<T>(bytes);
}

}  // namespace vibegen
