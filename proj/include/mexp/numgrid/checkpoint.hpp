#pragma once

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mexp/numgrid/grid.hpp"
#include "mexp/numgrid/param_set.hpp"

namespace mexp {

// Binary layout (all integers u32 little-endian, values IEEE-754 binary32 LE):
//   "MEXP" | version | entry count
//   per entry: name length | UTF-8 name | rank | extents[rank] | values
//   config length | config JSON (UTF-8)
// Entries are written in lexicographic name order. Optimizer state is stored
// as ordinary entries under kOptimizerPrefix.

inline constexpr char kCheckpointMagic[4] = {'M', 'E', 'X', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline const std::string kOptimizerPrefix = "optim.rmsprop.";

class CheckpointError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::map<std::string, Grid> entries;
    nlohmann::json config = nlohmann::json::object();
};

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::string out(kCheckpointMagic, 4);
    detail::put_u32(out, ckpt.version);
    detail::put_u32(out, static_cast<std::uint32_t>(ckpt.entries.size()));
    for (const auto& [name, grid] : ckpt.entries) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_u32(out, static_cast<std::uint32_t>(grid.rank()));
        for (int e : grid.shape()) detail::put_u32(out, static_cast<std::uint32_t>(e));
        out.reserve(out.size() + 4 * grid.size());
        for (float v : grid.values()) detail::put_f32(out, v);
    }
    const std::string cfg = ckpt.config.dump();
    detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        throw CheckpointError("not a checkpoint (bad magic)");
    }
    detail::Reader in(bytes);
    in.take(4);
    Checkpoint ckpt;
    ckpt.version = in.u32();
    if (ckpt.version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(ckpt.version));
    }
    const std::uint32_t count = in.u32();
    for (std::uint32_t k = 0; k < count; ++k) {
        std::string name = in.take(in.u32());
        const std::uint32_t rank = in.u32();
        if (rank == 0 || rank > 8) throw CheckpointError("entry '" + name + "' has invalid rank");
        Shape shape(rank);
        for (auto& e : shape) e = static_cast<int>(in.u32());
        std::vector<float> values(numel(shape));
        for (auto& v : values) v = in.f32();
        if (!ckpt.entries.emplace(name, Grid(shape, std::move(values))).second) {
            throw CheckpointError("duplicate entry '" + name + "'");
        }
    }
    const std::string cfg = in.take(in.u32());
    if (!in.done()) throw CheckpointError("trailing bytes after checkpoint");
    try {
        ckpt.config = nlohmann::json::parse(cfg);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint config is not valid JSON: ") + e.what());
    }
    return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw CheckpointError("cannot write " + tmp);
        const std::string bytes = encode_checkpoint(ckpt);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw CheckpointError("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

/// Parameters and their optimizer accumulators as checkpoint entries.
template <typename T>
Checkpoint to_checkpoint(const BasicParamSet<T>& params, nlohmann::json config) {
    Checkpoint ckpt;
    ckpt.config = std::move(config);
    for (const auto& [name, g] : params.entries()) {
        ckpt.entries.emplace(name, Grid(g.shape(), std::vector<float>(g.values().begin(), g.values().end())));
        const auto& acc = params.accumulator(name);
        ckpt.entries.emplace(kOptimizerPrefix + name, Grid(g.shape(), std::vector<float>(acc.begin(), acc.end())));
    }
    return ckpt;
}

/// Rebuilds a ParamSet; missing optimizer entries leave zero accumulators.
template <typename T = float>
BasicParamSet<T> params_from_checkpoint(const Checkpoint& ckpt) {
    BasicParamSet<T> params;
    for (const auto& [name, g] : ckpt.entries) {
        if (name.rfind(kOptimizerPrefix, 0) == 0) continue;
        params.add(name, BasicGrid<T>(g.shape(), std::vector<T>(g.values().begin(), g.values().end())));
    }
    for (const auto& [name, g] : ckpt.entries) {
        if (name.rfind(kOptimizerPrefix, 0) != 0) continue;
        const std::string target = name.substr(kOptimizerPrefix.size());
        if (!params.contains(target)) throw CheckpointError("optimizer state for unknown parameter '" + target + "'");
        if (g.shape() != params.at(target).shape()) throw CheckpointError("optimizer state shape mismatch for '" + target + "'");
        params.accumulator(target).assign(g.values().begin(), g.values().end());
    }
    return params;
}

}  // namespace mexp
