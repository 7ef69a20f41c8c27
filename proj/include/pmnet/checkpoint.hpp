#ifndef PMNET_CHECKPOINT_HPP
#define PMNET_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pmnet/config.hpp"
#include "pmnet/model.hpp"

namespace pmnet {

// Checkpoint: config text + named parameters (double bits, exact for float
// values) + prototype bank + training RNG state + epoch counters. Written
// atomically (tmp file + rename).

inline constexpr std::uint32_t kCheckpointMagic = 0x4B434D50;  // "PMCK" LE
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    RunConfig cfg;
    std::string config_text;
    std::vector<std::pair<std::string, std::vector<double>>> params;
    std::vector<double> prototypes;
    std::array<bool, kNumPhases> proto_initialized{};
    double bank_alpha = 0.99;
    std::uint64_t rng_state = 0;
    int epoch = 0;
    double best_val_jaccard = 0;
};

namespace ckpt_detail {

template <class V>
void put(std::ostream& out, const V& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& in, const std::string& file) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) throw DataFormatError("truncated checkpoint: " + file);
    return v;
}

inline void put_string(std::ostream& out, const std::string& s) {
    put(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, const std::string& file) {
    const auto n = get<std::uint32_t>(in, file);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw DataFormatError("truncated checkpoint: " + file);
    return s;
}

}  // namespace ckpt_detail

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     std::uint64_t rng_state, int epoch, double best_val_jaccard) {
    namespace fs = std::filesystem;
    using namespace ckpt_detail;
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataFormatError("cannot open for writing: " + tmp.string());
        put(f, kCheckpointMagic);
        put(f, kCheckpointVersion);
        put_string(f, config_to_text(model.config()));
        put(f, rng_state);
        put(f, static_cast<std::int32_t>(epoch));
        put(f, best_val_jaccard);

        const auto& entries = model.params().entries();
        put(f, static_cast<std::uint32_t>(entries.size()));
        for (const auto& e : entries) {
            put_string(f, e.name);
            put(f, static_cast<std::uint32_t>(e.rows));
            put(f, static_cast<std::uint32_t>(e.cols));
            for (const T v : e.value) put(f, static_cast<double>(v));
        }

        const auto& bank = model.bank();
        put(f, static_cast<std::uint32_t>(bank.channels()));
        put(f, bank.alpha());
        for (int j = 0; j < kNumPhases; ++j)
            put(f, static_cast<std::uint8_t>(bank.raw_initialized()[j] ? 1 : 0));
        for (const double v : bank.raw_prototypes()) put(f, v);
        if (!f) throw DataFormatError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    using namespace ckpt_detail;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataFormatError("cannot open checkpoint: " + path.string());
    const std::string file = path.string();
    if (get<std::uint32_t>(f, file) != kCheckpointMagic)
        throw DataFormatError("bad checkpoint magic in " + file);
    if (get<std::uint32_t>(f, file) != kCheckpointVersion)
        throw DataFormatError("unsupported checkpoint version in " + file);
    Checkpoint ck;
    ck.config_text = get_string(f, file);
    {
        std::istringstream ss(ck.config_text);
        ck.cfg = parse_config_text(ss, file + " (embedded config)");
    }
    ck.rng_state = get<std::uint64_t>(f, file);
    ck.epoch = get<std::int32_t>(f, file);
    ck.best_val_jaccard = get<double>(f, file);

    const auto n_params = get<std::uint32_t>(f, file);
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::string name = get_string(f, file);
        const auto rows = get<std::uint32_t>(f, file);
        const auto cols = get<std::uint32_t>(f, file);
        std::vector<double> vals(static_cast<std::size_t>(rows) * cols);
        for (auto& v : vals) v = get<double>(f, file);
        ck.params.emplace_back(name, std::move(vals));
    }

    const auto channels = get<std::uint32_t>(f, file);
    ck.bank_alpha = get<double>(f, file);
    for (int j = 0; j < kNumPhases; ++j)
        ck.proto_initialized[j] = get<std::uint8_t>(f, file) != 0;
    ck.prototypes.resize(static_cast<std::size_t>(kNumPhases) * channels);
    for (auto& v : ck.prototypes) v = get<double>(f, file);
    return ck;
}

// Restore parameters and prototype bank into a model built from ck.cfg.
template <class T>
void apply_checkpoint(const Checkpoint& ck, Model<T>& model) {
    auto& entries = model.params().entries();
    if (entries.size() != ck.params.size())
        throw DataFormatError("checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto& e = entries[i];
        const auto& [name, vals] = ck.params[i];
        if (name != e.name || vals.size() != e.value.size())
            throw DataFormatError("checkpoint parameter mismatch at " + e.name);
        for (std::size_t j = 0; j < vals.size(); ++j) e.value[j] = static_cast<T>(vals[j]);
    }
    auto& bank = model.bank();
    if (bank.raw_prototypes().size() != ck.prototypes.size())
        throw DataFormatError("checkpoint prototype width mismatch");
    bank.raw_prototypes() = ck.prototypes;
    bank.raw_initialized() = ck.proto_initialized;
    bank.set_alpha(ck.bank_alpha);
}

template <class T>
Model<T> model_from_checkpoint(const Checkpoint& ck) {
    Model<T> m(ck.cfg);
    apply_checkpoint(ck, m);
    return m;
}

}  // namespace pmnet

#endif  // PMNET_CHECKPOINT_HPP
