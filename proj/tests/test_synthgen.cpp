#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pmnet/synthgen.hpp"

using namespace pmnet;
namespace fs = std::filesystem;

namespace {

GeneratorParams small_params() {
    GeneratorParams p;
    p.n_procedures = 4;
    p.frames_min = 60;
    p.frames_max = 90;
    p.frames_mean = 75;
    p.seed = 7;
    return p;
}

fs::path temp_dir(const char* tag) {
    auto d = fs::temp_directory_path() / (std::string("pmnet_test_") + tag);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("default params, index 0: frame count bounds and fixed phase order") {
    GeneratorParams p;
    p.seed = 7;
    auto proc = generate_procedure(p, 0);
    CHECK(proc.frames.size() >= 313);
    CHECK(proc.frames.size() <= 726);
    int prev = 0;
    for (const auto& fr : proc.frames) {
        const int ph = static_cast<int>(fr.phase);
        CHECK(ph >= prev);
        prev = ph;
    }
    CHECK(static_cast<int>(proc.frames.front().phase) == 0);
    CHECK(static_cast<int>(proc.frames.back().phase) == 4);
}

TEST_CASE("generation is a pure function of (seed, index)") {
    auto p = small_params();
    auto a = generate_procedure(p, 2);
    auto b = generate_procedure(p, 2);
    REQUIRE(a.frames.size() == b.frames.size());
    for (std::size_t i = 0; i < a.frames.size(); ++i) {
        CHECK(a.frames[i].image == b.frames[i].image);
        CHECK(a.frames[i].t_seconds == b.frames[i].t_seconds);
        CHECK(a.frames[i].phase == b.frames[i].phase);
    }
}

TEST_CASE("ineffective_fraction 0 makes every case effective") {
    auto p = small_params();
    p.ineffective_fraction = 0.0;
    for (int i = 0; i < p.n_procedures; ++i) CHECK(generate_procedure(p, i).effective_case);
}

TEST_CASE("50 procedures at 10 percent: exactly 5 ineffective, deterministic") {
    GeneratorParams p;
    int count = 0;
    for (int i = 0; i < 50; ++i)
        if (synth_detail::is_ineffective_index(p, i)) ++count;
    CHECK(count == 5);
}

TEST_CASE("frame invariants: box inside image, effective iff Knotting, timestamps") {
    auto p = small_params();
    auto proc = generate_procedure(p, 1);
    double prev_t = -1.0;
    for (const auto& fr : proc.frames) {
        CHECK(fr.box.x >= 0);
        CHECK(fr.box.y >= 0);
        CHECK(fr.box.x + fr.box.w <= fr.w);
        CHECK(fr.box.y + fr.box.h <= fr.h);
        CHECK(fr.effective.has_value() == (fr.phase == Phase::Knotting));
        CHECK(fr.t_seconds > prev_t);
        prev_t = fr.t_seconds;
        for (float v : fr.image) {
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
        }
    }
}

TEST_CASE("dual-rate timestamps: 1/3 s inside Knotting, ~3 s elsewhere") {
    GeneratorParams p;
    p.seed = 7;
    auto proc = generate_procedure(p, 0);
    for (std::size_t i = 1; i < proc.frames.size(); ++i) {
        const double dt = proc.frames[i].t_seconds - proc.frames[i - 1].t_seconds;
        const Phase prev = proc.frames[i - 1].phase;
        if (blocking_relevant(prev))
            CHECK(dt == Catch::Approx(1.0 / 3.0).margin(1e-9));
        else
            CHECK(dt == Catch::Approx(1.0 / 0.33).margin(1e-9));
    }
}

TEST_CASE("phase fractions match within 3 points over 50 procedure plans") {
    GeneratorParams p;
    p.seed = 7;
    std::array<long, kNumPhases> counts{};
    long total = 0;
    for (int i = 0; i < 50; ++i) {
        Rng rng(mix_seed(p.seed, static_cast<std::uint64_t>(i)));
        const int fc = static_cast<int>(rng.uniform_int(p.frames_min, p.frames_max));
        auto seg = synth_detail::plan_segments(p, rng, fc);
        for (int j = 0; j < kNumPhases; ++j) counts[j] += seg[j];
        total += fc;
        CHECK(seg[static_cast<int>(Phase::Knotting)] + seg[static_cast<int>(Phase::Releasing)] >=
              30);
    }
    for (int j = 0; j < kNumPhases; ++j) {
        const double frac = static_cast<double>(counts[j]) / total;
        INFO("phase " << kPhaseNames[j] << " frac " << frac);
        CHECK(std::abs(frac - p.phase_fractions[j]) <= 0.03);
    }
}

TEST_CASE("ineffective cases never darken in-box, effective cases do") {
    auto p = small_params();
    p.n_procedures = 10;  // index 0 becomes the ineffective one
    auto mean_red = [](const FrameRecord& fr) {
        double s = 0;
        int n = 0;
        for (int y = fr.box.y; y < fr.box.y + fr.box.h; ++y)
            for (int x = fr.box.x; x < fr.box.x + fr.box.w; ++x) {
                s += fr.image[(static_cast<std::size_t>(y) * fr.w + x) * 3];
                ++n;
            }
        return s / n;
    };
    // occluded frames hide the patch entirely, so compare the first and last
    // clean frames
    auto first_clean = [](const SyntheticProcedure& pr) -> const FrameRecord& {
        for (const auto& fr : pr.frames)
            if (!fr.occluded) return fr;
        return pr.frames.front();
    };
    auto last_clean = [](const SyntheticProcedure& pr) -> const FrameRecord& {
        for (auto it = pr.frames.rbegin(); it != pr.frames.rend(); ++it)
            if (!it->occluded) return *it;
        return pr.frames.back();
    };
    auto ineff = generate_procedure(p, 0);
    REQUIRE_FALSE(ineff.effective_case);
    CHECK(mean_red(first_clean(ineff)) == Catch::Approx(mean_red(last_clean(ineff))).margin(0.02));

    auto eff = generate_procedure(p, 1);
    REQUIRE(eff.effective_case);
    CHECK(mean_red(first_clean(eff)) - mean_red(last_clean(eff)) > 0.4);
}

TEST_CASE("occlusion bursts: coverage near target, zero when disabled") {
    auto p = small_params();
    p.frames_min = 200;
    p.frames_max = 300;
    p.frames_mean = 250;
    auto proc = generate_procedure(p, 2);
    int occluded = 0;
    for (const auto& fr : proc.frames)
        if (fr.occluded) ++occluded;
    const double frac = static_cast<double>(occluded) / proc.frames.size();
    CHECK(frac >= p.occlusion_fraction - 0.005);
    CHECK(frac <= p.occlusion_fraction + 0.05);  // last burst may overshoot

    p.occlusion_fraction = 0.0;
    auto clean = generate_procedure(p, 2);
    for (const auto& fr : clean.frames) CHECK_FALSE(fr.occluded);
}

TEST_CASE("occluded frames carry no glyph or patch signal") {
    auto p = small_params();
    p.frames_min = 200;
    p.frames_max = 300;
    p.frames_mean = 250;
    p.occlusion_fraction = 0.3;
    auto proc = generate_procedure(p, 1);
    for (const auto& fr : proc.frames) {
        if (!fr.occluded) continue;
        // no pixel reaches the glyph's near-white level and the patch area is
        // not saturated red
        for (int y = fr.box.y; y < fr.box.y + fr.box.h; ++y)
            for (int x = fr.box.x; x < fr.box.x + fr.box.w; ++x) {
                const float* px = fr.image.data() + (static_cast<std::size_t>(y) * fr.w + x) * 3;
                REQUIRE(px[0] < 0.8f);
            }
    }
}

TEST_CASE("round trip: read(write(P)) == P bit-exactly") {
    auto p = small_params();
    auto dir = temp_dir("roundtrip");
    std::vector<SyntheticProcedure> procs;
    for (int i = 0; i < p.n_procedures; ++i) procs.push_back(generate_procedure(p, i));
    write_dataset(procs, dir);
    for (const auto& orig : procs) {
        auto back = read_procedure(dir, orig.id);
        REQUIRE(back.frames.size() == orig.frames.size());
        CHECK(back.effective_case == orig.effective_case);
        for (std::size_t i = 0; i < orig.frames.size(); ++i) {
            const auto& a = orig.frames[i];
            const auto& b = back.frames[i];
            CHECK(a.image == b.image);
            CHECK(a.t_seconds == b.t_seconds);
            CHECK(a.phase == b.phase);
            CHECK(a.effective == b.effective);
            CHECK(a.box.x == b.box.x);
            CHECK(a.box.w == b.box.w);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("manifest split sizes are 35/5/10 for 50 ids") {
    std::vector<std::string> ids;
    for (int i = 0; i < 50; ++i) ids.push_back("p" + std::to_string(i));
    auto entries = make_split(ids);
    int tr = 0, va = 0, te = 0;
    for (const auto& e : entries) {
        if (e.split == "train") ++tr;
        if (e.split == "val") ++va;
        if (e.split == "test") ++te;
    }
    CHECK(tr == 35);
    CHECK(va == 5);
    CHECK(te == 10);
}

TEST_CASE("empty procedure list still writes a valid manifest") {
    auto dir = temp_dir("empty");
    auto entries = write_dataset({}, dir);
    CHECK(entries.empty());
    CHECK(read_manifest(dir).empty());
    fs::remove_all(dir);
}

TEST_CASE("dataset format errors name the offending file") {
    auto dir = temp_dir("corrupt");
    auto p = small_params();
    write_dataset({generate_procedure(p, 0)}, dir);

    SECTION("missing manifest") {
        fs::remove(dir / "manifest.txt");
        try {
            read_manifest(dir);
            FAIL("expected DataFormatError");
        } catch (const DataFormatError& e) {
            CHECK(std::string(e.what()).find("manifest.txt") != std::string::npos);
        }
    }
    SECTION("truncated tensor file") {
        const auto bin = dir / "proc_0000" / "frames.bin";
        fs::resize_file(bin, fs::file_size(bin) - 128);
        try {
            read_procedure(dir, "proc_0000");
            FAIL("expected DataFormatError");
        } catch (const DataFormatError& e) {
            CHECK(std::string(e.what()).find("frames.bin") != std::string::npos);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("invalid generator params raise configuration errors") {
    GeneratorParams p;
    p.phase_fractions[0] += 0.01;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    GeneratorParams q;
    q.frames_min = 800;
    CHECK_THROWS_AS(q.validate(), ConfigError);
}
