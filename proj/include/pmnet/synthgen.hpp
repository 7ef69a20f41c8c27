#ifndef PMNET_SYNTHGEN_HPP
#define PMNET_SYNTHGEN_HPP

#include <array>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "pmnet/errors.hpp"
#include "pmnet/rng.hpp"

namespace pmnet {

enum class Phase : int {
    Preparing = 0,
    Knotting = 1,
    Resecting = 2,
    Releasing = 3,
    Postprocessing = 4,
};

inline constexpr int kNumPhases = 5;
inline constexpr const char* kPhaseNames[kNumPhases] = {"Preparing", "Knotting", "Resecting",
                                                        "Releasing", "Postprocessing"};

inline bool blocking_relevant(Phase p) { return p == Phase::Knotting || p == Phase::Releasing; }

struct GeneratorParams {
    int n_procedures = 50;
    int frames_min = 313;
    int frames_max = 726;
    int frames_mean = 501;
    std::array<double, kNumPhases> phase_fractions{0.0966, 0.0938, 0.6661, 0.0586, 0.0849};
    double ineffective_fraction = 0.10;
    double high_rate_fps = 3.0;   // Knotting / Releasing
    double low_rate_fps = 0.33;   // everything else
    double occlusion_fraction = 0.12;  // fraction of frames covered by distractor bursts
    int image_size = 64;
    std::uint64_t seed = 7;

    void validate() const {
        double sum = 0;
        for (double f : phase_fractions) sum += f;
        if (std::abs(sum - 1.0) > 1e-9)
            throw ConfigError("generator: phase_fractions must sum to 1, got " + std::to_string(sum));
        if (frames_min > frames_max || frames_min > frames_mean || frames_mean > frames_max)
            throw ConfigError("generator: need frames_min <= frames_mean <= frames_max");
        if (n_procedures < 0 || image_size < 16)
            throw ConfigError("generator: bad n_procedures/image_size");
        if (ineffective_fraction < 0.0 || ineffective_fraction > 1.0)
            throw ConfigError("generator: ineffective_fraction must be a probability");
        if (occlusion_fraction < 0.0 || occlusion_fraction > 0.9)
            throw ConfigError("generator: occlusion_fraction must be in [0, 0.9]");
    }
};

struct Box {
    int x = 0, y = 0, w = 0, h = 0;
};

struct FrameRecord {
    std::vector<float> image;  // H*W*3, interleaved, values in [0,1]
    int h = 0, w = 0;
    Phase phase = Phase::Preparing;
    std::optional<bool> effective;  // present iff phase == Knotting
    Box box;
    double t_seconds = 0.0;
    bool occluded = false;  // distractor appearance; not serialized, label unchanged
};

struct SyntheticProcedure {
    std::string id;
    std::vector<FrameRecord> frames;
    bool effective_case = true;
};

namespace synth_detail {

// Ineffective cases are a fixed, evenly spaced index set so datasets of any
// size hit round(n * fraction) exactly and generation stays a pure function
// of (params, index).
inline bool is_ineffective_index(const GeneratorParams& p, int index) {
    const int k = static_cast<int>(std::llround(p.n_procedures * p.ineffective_fraction));
    if (k <= 0) return false;
    for (int m = 0; m < k; ++m)
        if (index == (m * p.n_procedures) / k) return true;
    return false;
}

// Dirichlet(50 * fractions) segment lengths, largest-remainder rounded, with
// floors: every phase >= 2 frames and Knotting+Releasing >= 30.
inline std::array<int, kNumPhases> plan_segments(const GeneratorParams& p, Rng& rng,
                                                 int frame_count) {
    std::array<double, kNumPhases> draw{};
    double total = 0;
    for (int j = 0; j < kNumPhases; ++j) {
        draw[j] = rng.gamma(50.0 * p.phase_fractions[j]);
        total += draw[j];
    }
    std::array<double, kNumPhases> target{};
    std::array<int, kNumPhases> len{};
    int assigned = 0;
    for (int j = 0; j < kNumPhases; ++j) {
        target[j] = frame_count * draw[j] / total;
        len[j] = static_cast<int>(std::floor(target[j]));
        assigned += len[j];
    }
    // largest remainder
    std::array<int, kNumPhases> order{0, 1, 2, 3, 4};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double ra = target[a] - std::floor(target[a]);
        const double rb = target[b] - std::floor(target[b]);
        return ra != rb ? ra > rb : a < b;
    });
    for (int i = 0; assigned < frame_count; ++i, ++assigned) len[order[i % kNumPhases]] += 1;

    auto largest = [&]() {
        int j = 0;
        for (int i = 1; i < kNumPhases; ++i)
            if (len[i] > len[j]) j = i;
        return j;
    };
    for (int j = 0; j < kNumPhases; ++j)
        while (len[j] < 2) {
            len[largest()] -= 1;
            len[j] += 1;
        }
    const int kKnot = static_cast<int>(Phase::Knotting);
    const int kRel = static_cast<int>(Phase::Releasing);
    const int kr_floor = std::min(30, frame_count - 2 * (kNumPhases - 2));
    // donate frames from the largest non-Knotting/Releasing phase
    auto largest_other = [&]() {
        int j = -1;
        for (int i = 0; i < kNumPhases; ++i) {
            if (i == kKnot || i == kRel) continue;
            if (j < 0 || len[i] > len[j]) j = i;
        }
        return j;
    };
    while (len[kKnot] + len[kRel] < kr_floor) {
        const int donor = largest_other();
        if (len[donor] <= 2) break;
        len[donor] -= 1;
        // grow whichever of the pair is further below its expected share
        if (len[kKnot] * p.phase_fractions[kRel] <= len[kRel] * p.phase_fractions[kKnot])
            len[kKnot] += 1;
        else
            len[kRel] += 1;
    }
    return len;
}

struct Rgb {
    double r, g, b;
};

// Knotting and Releasing share a background on purpose: the two phases must
// only be separable through motion direction, not per-frame appearance.
inline Rgb phase_base(Phase p) {
    switch (p) {
        case Phase::Preparing: return {0.52, 0.58, 0.50};
        case Phase::Knotting: return {0.46, 0.36, 0.38};
        case Phase::Releasing: return {0.46, 0.36, 0.38};
        case Phase::Resecting: return {0.50, 0.44, 0.30};
        case Phase::Postprocessing: return {0.36, 0.46, 0.56};
    }
    return {0, 0, 0};
}

}  // namespace synth_detail

// Deterministic in (params.seed, index); distinct procedures are independent
// streams and may be generated in parallel.
inline SyntheticProcedure generate_procedure(const GeneratorParams& params, int index) {
    params.validate();
    if (index < 0 || index >= params.n_procedures)
        throw ConfigError("generate_procedure: index out of range");
    using namespace synth_detail;
    Rng rng(mix_seed(params.seed, static_cast<std::uint64_t>(index)));

    SyntheticProcedure proc;
    {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "proc_%04d", index);
        proc.id = buf;
    }
    proc.effective_case = !is_ineffective_index(params, index);

    const int frame_count =
        static_cast<int>(rng.uniform_int(params.frames_min, params.frames_max));
    const auto seg = plan_segments(params, rng, frame_count);

    const int size = params.image_size;
    // ischemia box, fully inside the frame
    Box box;
    box.w = static_cast<int>(rng.uniform_int(12, 18));
    box.h = static_cast<int>(rng.uniform_int(12, 18));
    box.x = static_cast<int>(rng.uniform_int(2, size - box.w - 2));
    box.y = static_cast<int>(rng.uniform_int(2, size - box.h - 2));

    const double tex_fx = rng.uniform(0.15, 0.45);
    const double tex_fy = rng.uniform(0.15, 0.45);
    const double tex_phase = rng.uniform(0.0, 6.28);
    const std::uint64_t pix_seed = rng.next_u64();

    std::array<int, kNumPhases> seg_start{};
    int acc = 0;
    for (int j = 0; j < kNumPhases; ++j) {
        seg_start[j] = acc;
        acc += seg[j];
    }
    const int knot_start = seg_start[static_cast<int>(Phase::Knotting)];
    // ischemia ramp spans Knotting plus Resecting
    const int ramp_len = std::max(1, seg[static_cast<int>(Phase::Knotting)] +
                                         seg[static_cast<int>(Phase::Resecting)]);
    // Frames per sawtooth cycle. Must not divide evenly into the frame
    // stride times the clip width (8*4=32): at period 24 a stride-8 clip
    // samples glyph positions (p, p+1/3, p+2/3, p) whose forward and
    // reversed orders are equal as multisets, making sweep direction
    // invisible to permutation-equivariant attention.
    constexpr int kGlyphPeriod = 36;

    // Occlusion bursts: contiguous runs of frames whose appearance is
    // replaced by a distractor rendering (another phase's background, no
    // glyph, no ischemia patch). Labels stay the true phase, so recovering
    // an occluded clip requires temporal context from neighbouring clips.
    std::vector<int> occ(static_cast<std::size_t>(frame_count), -1);
    {
        const int target =
            static_cast<int>(std::llround(frame_count * params.occlusion_fraction));
        int covered = 0;
        for (int guard = 0; covered < target && guard < 16 * frame_count; ++guard) {
            const int len = static_cast<int>(rng.uniform_int(4, 9));
            const int start =
                static_cast<int>(rng.uniform_int(0, std::max(0, frame_count - len)));
            const int distract = static_cast<int>(rng.uniform_int(0, kNumPhases - 1));
            for (int i = start; i < std::min(frame_count, start + len); ++i) {
                if (occ[i] < 0) ++covered;
                occ[i] = distract;
            }
        }
    }

    proc.frames.reserve(frame_count);
    double t = 0.0;
    Phase prev_phase = Phase::Preparing;
    for (int i = 0; i < frame_count; ++i) {
        Phase phase = Phase::Postprocessing;
        for (int j = 0; j < kNumPhases; ++j)
            if (i >= seg_start[j] && i < seg_start[j] + seg[j]) phase = static_cast<Phase>(j);
        if (i > 0) t += 1.0 / (blocking_relevant(prev_phase) ? params.high_rate_fps
                                                             : params.low_rate_fps);
        prev_phase = phase;

        FrameRecord fr;
        fr.h = size;
        fr.w = size;
        fr.phase = phase;
        fr.box = box;
        fr.t_seconds = t;
        if (phase == Phase::Knotting) fr.effective = proc.effective_case;
        fr.occluded = occ[i] >= 0;
        fr.image.resize(static_cast<std::size_t>(size) * size * 3);

        const Phase appearance = fr.occluded ? static_cast<Phase>(occ[i]) : phase;
        const Rgb base = phase_base(appearance);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double wave =
                    0.05 * std::sin(tex_fx * x + tex_fy * y + tex_phase +
                                    0.03 * static_cast<int>(appearance));
                const double noise =
                    0.06 * (hash01(pix_seed, static_cast<std::uint64_t>(i) * size * size +
                                                 static_cast<std::uint64_t>(y) * size + x) -
                            0.5);
                float* px = fr.image.data() + (static_cast<std::size_t>(y) * size + x) * 3;
                px[0] = static_cast<float>(base.r + wave + noise);
                px[1] = static_cast<float>(base.g + wave + noise);
                px[2] = static_cast<float>(base.b + wave + noise);
            }

        // instrument glyph: sawtooth sweep, forward during Knotting and
        // time-reversed during Releasing
        if (!fr.occluded && blocking_relevant(phase)) {
            const int local = i - seg_start[static_cast<int>(phase)];
            double pos = static_cast<double>(local % kGlyphPeriod) / kGlyphPeriod;
            if (phase == Phase::Releasing) pos = 1.0 - pos;
            const int gx = 2 + static_cast<int>(pos * (size - 10));
            for (int y = 6; y < size - 6; ++y)
                for (int x = gx; x < gx + 5; ++x) {
                    float* px = fr.image.data() + (static_cast<std::size_t>(y) * size + x) * 3;
                    px[0] = 0.92f;
                    px[1] = 0.90f;
                    px[2] = 0.95f;
                }
        }

        // ischemia patch: bright red, darkening after Knotting onset only in
        // effective cases
        double bright = 0.85;
        if (proc.effective_case && i >= knot_start) {
            const double u = std::min(1.0, static_cast<double>(i - knot_start) / ramp_len);
            bright = 0.85 + (0.25 - 0.85) * u;
        }
        if (!fr.occluded) {
            for (int y = box.y; y < box.y + box.h; ++y)
                for (int x = box.x; x < box.x + box.w; ++x) {
                    const double n =
                        0.02 * (hash01(pix_seed ^ 0xabcdefull,
                                       static_cast<std::uint64_t>(i) * size * size +
                                           static_cast<std::uint64_t>(y) * size + x) -
                                0.5);
                    float* px = fr.image.data() + (static_cast<std::size_t>(y) * size + x) * 3;
                    px[0] = static_cast<float>(bright + n);
                    px[1] = static_cast<float>(0.14 + n);
                    px[2] = static_cast<float>(0.12 + n);
                }
        }

        for (float& v : fr.image) v = std::clamp(v, 0.0f, 1.0f);
        proc.frames.push_back(std::move(fr));
    }
    return proc;
}

// ---- on-disk dataset format ----
//
//   root/manifest.txt          "id split" per line
//   root/<id>/frames.bin       16-byte header (magic,H,W,C,N) + f32 LE data
//   root/<id>/labels.txt       effective_case line, then one record per frame
//
// frames.bin header: u32 magic 'PMFT', u16 H, u16 W, u16 C, u16 zero, u32 N.

inline constexpr std::uint32_t kFramesMagic = 0x54464D50;  // "PMFT" LE

struct ManifestEntry {
    std::string id;
    std::string split;  // train | val | test
};

inline std::vector<ManifestEntry> make_split(const std::vector<std::string>& ids) {
    const int n = static_cast<int>(ids.size());
    const int n_train = static_cast<int>(std::llround(n * 0.70));
    const int n_val = static_cast<int>(std::llround(n * 0.10));
    std::vector<ManifestEntry> out;
    for (int i = 0; i < n; ++i)
        out.push_back({ids[i], i < n_train ? "train" : (i < n_train + n_val ? "val" : "test")});
    return out;
}

inline void write_procedure(const std::filesystem::path& root, const SyntheticProcedure& proc) {
    namespace fs = std::filesystem;
    const fs::path tmp = root / (proc.id + ".tmp");
    const fs::path fin = root / proc.id;
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    {
        std::ofstream f(tmp / "frames.bin", std::ios::binary);
        const int h = proc.frames.empty() ? 0 : proc.frames[0].h;
        const int w = proc.frames.empty() ? 0 : proc.frames[0].w;
        const std::uint32_t magic = kFramesMagic;
        const std::uint16_t hh = static_cast<std::uint16_t>(h), ww = static_cast<std::uint16_t>(w),
                            cc = 3, zero = 0;
        const std::uint32_t n = static_cast<std::uint32_t>(proc.frames.size());
        f.write(reinterpret_cast<const char*>(&magic), 4);
        f.write(reinterpret_cast<const char*>(&hh), 2);
        f.write(reinterpret_cast<const char*>(&ww), 2);
        f.write(reinterpret_cast<const char*>(&cc), 2);
        f.write(reinterpret_cast<const char*>(&zero), 2);
        f.write(reinterpret_cast<const char*>(&n), 4);
        for (const auto& fr : proc.frames)
            f.write(reinterpret_cast<const char*>(fr.image.data()),
                    static_cast<std::streamsize>(fr.image.size() * sizeof(float)));
        if (!f) throw DataFormatError("write failed: " + (tmp / "frames.bin").string());
    }
    {
        std::ofstream f(tmp / "labels.txt");
        f << "effective_case " << (proc.effective_case ? 1 : 0) << "\n";
        char buf[160];
        for (std::size_t i = 0; i < proc.frames.size(); ++i) {
            const auto& fr = proc.frames[i];
            std::snprintf(buf, sizeof(buf), "%zu %.17g %d %s %d %d %d %d\n", i, fr.t_seconds,
                          static_cast<int>(fr.phase),
                          fr.effective.has_value() ? (*fr.effective ? "1" : "0") : "-", fr.box.x,
                          fr.box.y, fr.box.w, fr.box.h);
            f << buf;
        }
        if (!f) throw DataFormatError("write failed: " + (tmp / "labels.txt").string());
    }
    fs::remove_all(fin);
    fs::rename(tmp, fin);
}

inline void write_manifest(const std::filesystem::path& root,
                           const std::vector<ManifestEntry>& entries) {
    std::ofstream f(root / "manifest.txt");
    for (const auto& e : entries) f << e.id << " " << e.split << "\n";
    if (!f) throw DataFormatError("write failed: " + (root / "manifest.txt").string());
}

inline std::vector<ManifestEntry> write_dataset(const std::vector<SyntheticProcedure>& procs,
                                                const std::filesystem::path& root) {
    std::filesystem::create_directories(root);
    std::vector<std::string> ids;
    for (const auto& p : procs) {
        write_procedure(root, p);
        ids.push_back(p.id);
    }
    auto entries = make_split(ids);
    write_manifest(root, entries);
    return entries;
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& root) {
    const auto path = root / "manifest.txt";
    std::ifstream f(path);
    if (!f) throw DataFormatError("missing manifest: " + path.string());
    std::vector<ManifestEntry> entries;
    std::string id, split;
    while (f >> id >> split) entries.push_back({id, split});
    return entries;
}

inline SyntheticProcedure read_procedure(const std::filesystem::path& root,
                                         const std::string& id) {
    namespace fs = std::filesystem;
    SyntheticProcedure proc;
    proc.id = id;
    const fs::path bin_path = root / id / "frames.bin";
    const fs::path lbl_path = root / id / "labels.txt";

    std::ifstream lbl(lbl_path);
    if (!lbl) throw DataFormatError("missing label file: " + lbl_path.string());
    std::string key;
    int eff_case = 1;
    lbl >> key >> eff_case;
    if (key != "effective_case")
        throw DataFormatError("bad label header in " + lbl_path.string());
    proc.effective_case = eff_case != 0;

    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw DataFormatError("missing tensor file: " + bin_path.string());
    std::uint32_t magic = 0, n = 0;
    std::uint16_t h = 0, w = 0, c = 0, zero = 0;
    bin.read(reinterpret_cast<char*>(&magic), 4);
    bin.read(reinterpret_cast<char*>(&h), 2);
    bin.read(reinterpret_cast<char*>(&w), 2);
    bin.read(reinterpret_cast<char*>(&c), 2);
    bin.read(reinterpret_cast<char*>(&zero), 2);
    bin.read(reinterpret_cast<char*>(&n), 4);
    if (!bin || magic != kFramesMagic || c != 3)
        throw DataFormatError("bad tensor header: " + bin_path.string());

    proc.frames.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::size_t idx;
        double t;
        int phase;
        std::string eff;
        Box box;
        if (!(lbl >> idx >> t >> phase >> eff >> box.x >> box.y >> box.w >> box.h))
            throw DataFormatError("truncated label file: " + lbl_path.string());
        FrameRecord& fr = proc.frames[i];
        fr.h = h;
        fr.w = w;
        fr.t_seconds = t;
        fr.phase = static_cast<Phase>(phase);
        if (eff != "-") fr.effective = eff == "1";
        fr.box = box;
        fr.image.resize(static_cast<std::size_t>(h) * w * 3);
        bin.read(reinterpret_cast<char*>(fr.image.data()),
                 static_cast<std::streamsize>(fr.image.size() * sizeof(float)));
        if (!bin)
            throw DataFormatError("tensor length mismatch: " + bin_path.string());
    }
    // trailing bytes mean the header undercounts
    char probe;
    if (bin.read(&probe, 1))
        throw DataFormatError("tensor length mismatch: " + bin_path.string());
    return proc;
}

inline std::vector<SyntheticProcedure> read_dataset(const std::filesystem::path& root) {
    std::vector<SyntheticProcedure> procs;
    for (const auto& e : read_manifest(root)) procs.push_back(read_procedure(root, e.id));
    return procs;
}

}  // namespace pmnet

#endif  // PMNET_SYNTHGEN_HPP
