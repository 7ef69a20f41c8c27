// Acceptance battery: one pass/fail line per criterion, nonzero exit if any
// fail. Training-based criteria cache their artifacts (dataset, checkpoints)
// in a work directory so reruns skip the expensive runs when an existing
// checkpoint was produced by the exact same config; set PMNET_ACCEPT_DIR to
// relocate the cache (default: ./accept_work).
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pmnet/checkpoint.hpp"
#include "pmnet/config.hpp"
#include "pmnet/engine.hpp"
#include "pmnet/metrics.hpp"
#include "pmnet/model.hpp"
#include "pmnet/prototypes.hpp"
#include "pmnet/rng.hpp"
#include "pmnet/scan.hpp"
#include "pmnet/synthgen.hpp"

namespace fs = std::filesystem;
using namespace pmnet;

namespace {

int g_failures = 0;

void report(int idx, const std::string& name, bool ok, const std::string& detail = "") {
    std::printf("[%s] criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", idx, name.c_str(),
                detail.empty() ? "" : " — ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

// ---------------------------------------------------------------- criterion 1

void criterion_scan() {
    Rng rng(101);
    const int t_lens[4] = {1, 7, 64, 1000};
    double worst = 0;
    for (int inst = 0; inst < 100; ++inst) {
        const int t_len = t_lens[inst % 4];
        const int c = 2 + static_cast<int>(rng.uniform_int(0, 5));
        const int s = 1 + static_cast<int>(rng.uniform_int(0, 4));
        ScanParams<double> p;
        p.channels = c;
        p.state_dim = s;
        auto fill = [&](std::vector<double>& v, std::size_t n, double sd) {
            v.resize(n);
            for (auto& x : v) x = sd * rng.normal();
        };
        fill(p.a_log, static_cast<std::size_t>(c) * s, 0.5);
        fill(p.w_delta, static_cast<std::size_t>(c) * c, 0.3);
        fill(p.b_delta, c, 0.3);
        fill(p.w_b, static_cast<std::size_t>(c) * s, 0.5);
        fill(p.w_c, static_cast<std::size_t>(c) * s, 0.5);
        fill(p.d_skip, c, 0.5);
        std::vector<double> x;
        fill(x, static_cast<std::size_t>(t_len) * c, 1.0);
        const int chunk = 1 + static_cast<int>(rng.uniform_int(0, 30));
        const auto ys = selective_scan_seq(x, t_len, p);
        const auto yc = selective_scan_chunked(x, t_len, p, chunk);
        for (std::size_t i = 0; i < ys.size(); ++i)
            worst = std::max(worst, std::abs(ys[i] - yc[i]));
    }
    std::ostringstream d;
    d << "max |seq - chunked| = " << worst << " over 100 instances, T in {1,7,64,1000}";
    report(1, "chunked scan matches sequential oracle within 1e-10", worst <= 1e-10, d.str());
}

// ---------------------------------------------------------------- criterion 2

// Finite-difference probe of named parameters through a full double-precision
// feature-level forward (covers intra-clip attention, the state-space blocks
// and retrieval in composition).
double fd_probe_model(Model<double>& model, const std::vector<double>& f_in,
                      const std::vector<double>& fr_in, const std::vector<int>& labels) {
    const RunConfig& cfg = model.config();
    ad::Tape<double> tp(false);
    ParamBinder<double> pb(tp, model.params());
    auto f = tp.constant(cfg.window, cfg.channels, f_in.data());
    auto fr = tp.constant(cfg.window, cfg.channels, fr_in.data());
    std::vector<std::uint8_t> pad(cfg.window, 0);
    auto out = model.forward_from_features(pb, f, fr, pad, cfg.window);
    std::vector<std::uint8_t> inc(cfg.window, 1);
    auto ce = ad::softmax_ce(tp, out.phase_logits, labels, inc);
    auto ce_eff = ad::softmax_ce(tp, out.eff_logits, {1}, std::vector<std::uint8_t>{1});
    return static_cast<double>(ad::add(tp, ce, ce_eff).item());
}

void criterion_gradients() {
    RunConfig cfg;
    cfg.channels = 16;
    cfg.heads = 2;
    cfg.state_dim = 4;
    cfg.n_blocks = 1;
    cfg.window = 8;
    cfg.clip_w = 4;
    cfg.n_swaps = 2;
    cfg.seed = 11;
    Model<double> model(cfg);
    Rng rng(23);
    std::vector<double> f_in(static_cast<std::size_t>(cfg.window) * cfg.channels);
    std::vector<double> fr_in(f_in.size());
    for (auto& x : f_in) x = rng.normal();
    for (auto& x : fr_in) x = rng.normal();
    std::vector<int> labels;
    for (int i = 0; i < cfg.window; ++i) labels.push_back(static_cast<int>(rng.uniform_int(0, 4)));

    // analytic gradients from one taped pass
    model.params().zero_grad();
    {
        ad::Tape<double> tp(true);
        ParamBinder<double> pb(tp, model.params());
        auto f = tp.constant(cfg.window, cfg.channels, f_in.data());
        auto fr = tp.constant(cfg.window, cfg.channels, fr_in.data());
        std::vector<std::uint8_t> pad(cfg.window, 0);
        auto out = model.forward_from_features(pb, f, fr, pad, cfg.window);
        std::vector<std::uint8_t> inc(cfg.window, 1);
        auto loss = ad::add(tp, ad::softmax_ce(tp, out.phase_logits, labels, inc),
                            ad::softmax_ce(tp, out.eff_logits, {1}, std::vector<std::uint8_t>{1}));
        tp.backward(loss);
        pb.harvest_grads();
    }

    const std::vector<std::string> probed = {
        "mte.wq.w", "mte.wk.w", "mte.wv.w",  "mte.wo.w",      "mte.tokens",   "mte.ffn.w1",
        "mte.ln1.g", "csm0.lna.w", "csm0.lng.w", "csm0.sa.a_log", "csm0.sa.w_delta",
        "csm0.sa.w_b", "csm0.sa.w_c", "csm0.sa.d_skip", "csm0.sb.w_b", "csm0.out.w",
        "eff.w1", "ph.w1"};
    double worst = 0;
    std::string worst_name = "-";
    Rng pick(31);
    for (const auto& name : probed) {
        auto& e = model.params().at(name);
        for (int probe = 0; probe < 4; ++probe) {
            const int i = static_cast<int>(pick.uniform_int(0, static_cast<int>(e.value.size()) - 1));
            const double orig = e.value[i];
            const double h = 1e-5 * std::max(1.0, std::abs(orig));
            e.value[i] = orig + h;
            const double fp = fd_probe_model(model, f_in, fr_in, labels);
            e.value[i] = orig - h;
            const double fm = fd_probe_model(model, f_in, fr_in, labels);
            e.value[i] = orig;
            const double fd = (fp - fm) / (2 * h);
            const double an = e.grad[i];
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            if (rel > worst) {
                worst = rel;
                worst_name = name;
            }
        }
    }

    // retrieval: gradients w.r.t. both inputs
    {
        Rng r2(5);
        const int w = 4, m = 3, c = 6;
        std::vector<double> fwd(static_cast<std::size_t>(w) * c), mem(static_cast<std::size_t>(m) * c);
        for (auto& x : fwd) x = r2.normal();
        for (auto& x : mem) x = r2.normal();
        auto loss_of = [&](const std::vector<double>& fv, const std::vector<double>& mv) {
            ad::Tape<double> tp(false);
            auto f = tp.constant(w, c, fv.data());
            auto mb = tp.constant(m, c, mv.data());
            auto y = retrieve(tp, f, mb);
            return static_cast<double>(ad::sum_all(tp, ad::mul(tp, y, y)).item());
        };
        ad::Tape<double> tp(true);
        auto f = tp.leaf(w, c, fwd.data(), true);
        auto mb = tp.leaf(m, c, mem.data(), true);
        auto y = retrieve(tp, f, mb);
        tp.backward(ad::sum_all(tp, ad::mul(tp, y, y)));
        auto check_input = [&](std::vector<double>& v, const std::vector<double>& grad,
                               const std::vector<double>& other, bool first) {
            for (std::size_t i = 0; i < v.size(); ++i) {
                const double orig = v[i];
                v[i] = orig + 1e-5;
                const double fp = first ? loss_of(v, other) : loss_of(other, v);
                v[i] = orig - 1e-5;
                const double fm = first ? loss_of(v, other) : loss_of(other, v);
                v[i] = orig;
                const double fd = (fp - fm) / 2e-5;
                const double rel =
                    std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
                if (rel > worst) {
                    worst = rel;
                    worst_name = "retrieve.input";
                }
            }
        };
        check_input(fwd, f.n->grad, mem, true);
        check_input(mem, mb.n->grad, fwd, false);
    }

    // contrastive loss, evaluated away from the hinge (|dist to p_yhat - 1| >= 0.1)
    double worst_cl = 0;
    {
        Rng r3(7);
        const int c = 5;
        int done = 0;
        while (done < 50) {
            std::vector<double> fv(c), py(c), pyh(c);
            for (auto& x : fv) x = r3.normal();
            for (auto& x : py) x = r3.normal();
            for (auto& x : pyh) x = r3.normal();
            if (std::abs(euclid(fv, pyh) - 1.0) < 0.1) continue;
            ++done;
            ad::Tape<double> tp(true);
            auto f = tp.leaf(1, c, fv.data(), true);
            auto loss = contrastive_loss_op(tp, f, py, pyh);
            tp.backward(loss);
            for (int i = 0; i < c; ++i) {
                const double orig = fv[i];
                auto eval = [&](double x) {
                    std::vector<double> fx = fv;
                    fx[i] = x;
                    return contrastive_loss(fx, py, pyh);
                };
                const double fd = (eval(orig + 1e-6) - eval(orig - 1e-6)) / 2e-6;
                const double an = f.n->grad[i];
                worst_cl = std::max(worst_cl, std::abs(fd - an) /
                                                  std::max({std::abs(fd), std::abs(an), 1e-6}));
            }
        }
    }

    std::ostringstream d;
    d << "model/retrieve max rel err " << worst << " (worst: " << worst_name
      << "), contrastive max rel err " << worst_cl;
    report(2, "finite-difference gradient suite (attention, state-space, retrieval, loss)",
           worst <= 1e-3 && worst_cl <= 1e-4, d.str());
}

// ---------------------------------------------------------------- criterion 3

void criterion_closed_form() {
    bool ok = true;
    std::ostringstream d;

    // uniform 5-class cross entropy = ln 5
    {
        ad::Tape<double> tp(false);
        std::vector<double> zeros(5, 0.0);
        auto logits = tp.constant(1, 5, zeros.data());
        const double ce = ad::softmax_ce(tp, logits, {2}, std::vector<std::uint8_t>{1}).item();
        const double err = std::abs(ce - std::log(5.0));
        ok = ok && err <= 1e-9;
        d << "uniform CE err " << err;
    }
    // contrastive trivial cases
    {
        std::vector<double> f = {1, 2, 3};
        std::vector<double> far = {40, 2, 3};
        const double zero_case = contrastive_loss(f, f, far);  // on prototype, hinge inactive
        std::vector<double> py = {1, 2, 3 + 0.7};              // delta = 0.7
        const double delta_case = contrastive_loss(f, py, f);  // p_yhat == f -> hinge = 1
        const double expect = 0.5 * 0.7 * 0.7 + 0.5;
        ok = ok && std::abs(zero_case) <= 1e-10 && std::abs(delta_case - expect) <= 1e-10;
        d << ", trivial cases errs " << std::abs(zero_case) << " / "
          << std::abs(delta_case - expect);
    }
    // composite objective at lambda = 0.1
    {
        const auto r = total_loss(1.0, 0.5, 2.0, 0.1);
        ok = ok && r.total == 1.0 + 0.5 + 0.1 * 2.0;
        d << ", composition total " << r.total;
    }
    report(3, "closed-form loss values (ln 5 CE, separation loss cases, weighted sum)", ok,
           d.str());
}

// ---------------------------------------------------------------- criterion 4

void criterion_swap_algebra() {
    bool ok = true;
    std::ostringstream d;
    Rng rng(404);
    ad::Tape<double> tp(false);
    for (int trial = 0; trial < 1000 && ok; ++trial) {
        const int n_clips = 1 + static_cast<int>(rng.uniform_int(0, 39));
        const int n_swaps = static_cast<int>(rng.uniform_int(0, 10));
        const auto sched = build_swap_schedule(n_clips, n_swaps);
        // tag each clip's token tensor with its origin index
        std::vector<ClipState<double>> clips(n_clips);
        for (int k = 0; k < n_clips; ++k) {
            std::vector<double> tag(2, static_cast<double>(k));
            clips[k].features = tp.constant(1, 2, tag.data());
            clips[k].tokens = tp.constant(1, 2, tag.data());
            clips[k].token_mask.assign(1, true);
            clips[k].clip_index = k;
        }
        std::vector<int> owner(n_clips);
        for (int k = 0; k < n_clips; ++k) owner[k] = k;
        for (int s = 0; s < n_swaps; ++s) {
            auto before = clips;
            apply_swap(clips, sched, s);
            // conservation: the multiset of token tags is a permutation of 0..n-1
            std::vector<int> seen(n_clips, 0);
            for (const auto& c : clips) seen[static_cast<int>(c.tokens.val()[0])] += 1;
            for (int k = 0; k < n_clips; ++k) ok = ok && seen[k] == 1;
            // double application restores the assignment
            auto twice = clips;
            apply_swap(twice, sched, s);
            for (int k = 0; k < n_clips; ++k)
                ok = ok && twice[k].tokens.val()[0] == before[k].tokens.val()[0];
        }
        if (!ok) d << "failed at n_clips=" << n_clips << " n_swaps=" << n_swaps;
    }
    const int helper = swap_count_for_window(20);
    ok = ok && helper == 6;
    d << "1000 random schedules checked; swap-count helper(20) = " << helper;
    report(4, "swap schedules compose to permutations; double application is identity", ok,
           d.str());
}

// ---------------------------------------------------------------- criterion 5

// Brute-force confusion-matrix metrics, written independently of metrics.hpp.
struct BruteReport {
    double macro_p = 0, macro_r = 0, macro_j = 0, acc = 0;
    bool eff_defined = false;
    double eff_acc = 0;
};

BruteReport brute_metrics(const std::vector<ProcedureTrace>& traces) {
    long long conf[kNumPhases][kNumPhases] = {};
    long long total = 0, correct = 0;
    long long e_tp = 0, e_fp = 0, e_fn = 0, e_tn = 0;
    for (const auto& tr : traces) {
        for (std::size_t i = 0; i < tr.labels.size(); ++i) {
            conf[tr.labels[i]][tr.preds[i]] += 1;
            total += 1;
            if (tr.labels[i] == tr.preds[i]) correct += 1;
        }
        for (std::size_t i = 0; i < tr.eff_labels.size(); ++i) {
            const bool lab = tr.eff_labels[i] == 1, pr = tr.eff_preds[i] == 1;
            if (lab && pr) e_tp++;
            else if (!lab && pr) e_fp++;
            else if (lab && !pr) e_fn++;
            else e_tn++;
        }
    }
    BruteReport r;
    double sp = 0, sr = 0, sj = 0;
    int np = 0, nr = 0, nj = 0;
    for (int k = 0; k < kNumPhases; ++k) {
        long long tp = conf[k][k], fp = 0, fn = 0;
        for (int j = 0; j < kNumPhases; ++j)
            if (j != k) {
                fp += conf[j][k];
                fn += conf[k][j];
            }
        if (tp + fp > 0) { sp += 100.0 * tp / (tp + fp); np++; }
        if (tp + fn > 0) { sr += 100.0 * tp / (tp + fn); nr++; }
        if (tp + fp + fn > 0) { sj += 100.0 * tp / (tp + fp + fn); nj++; }
    }
    r.macro_p = np ? sp / np : 0;
    r.macro_r = nr ? sr / nr : 0;
    r.macro_j = nj ? sj / nj : 0;
    r.acc = total ? 100.0 * correct / total : 0;
    const long long etot = e_tp + e_fp + e_fn + e_tn;
    r.eff_defined = etot > 0;
    r.eff_acc = etot ? 100.0 * (e_tp + e_tn) / etot : 0;
    return r;
}

void criterion_metric_oracle() {
    Rng rng(505);
    bool ok = true;
    for (int trial = 0; trial < 1000 && ok; ++trial) {
        ProcedureTrace tr;
        const int n = 1 + static_cast<int>(rng.uniform_int(0, 49));
        for (int i = 0; i < n; ++i) {
            const int lab = static_cast<int>(rng.uniform_int(0, 4));
            tr.labels.push_back(lab);
            tr.preds.push_back(static_cast<int>(rng.uniform_int(0, 4)));
            if (lab == static_cast<int>(Phase::Knotting)) {
                tr.eff_labels.push_back(static_cast<int>(rng.uniform_int(0, 1)));
                tr.eff_preds.push_back(static_cast<int>(rng.uniform_int(0, 1)));
            }
        }
        const auto got = metrics_from_traces({tr});
        const auto want = brute_metrics({tr});
        ok = ok && got.macro_precision == want.macro_p && got.macro_recall == want.macro_r &&
             got.macro_jaccard == want.macro_j && got.accuracy == want.acc &&
             got.eff_defined == want.eff_defined &&
             (!want.eff_defined || got.eff_accuracy == want.eff_acc);
    }
    report(5, "evaluation matches independent brute-force confusion metrics exactly", ok,
           "1000 random label/prediction sequences, Knotting-only effectiveness included");
}

// ---------------------------------------------------------------- criterion 6

void criterion_causality() {
    RunConfig cfg;  // default model shape, untrained parameters
    cfg.seed = 606;
    Model<float> model(cfg);
    GeneratorParams gp;
    gp.seed = 66;
    gp.frames_min = 90;
    gp.frames_mean = 110;
    gp.frames_max = 140;
    gp.n_procedures = 5;
    bool ok = true;
    Rng rng(67);
    for (int i = 0; i < 5 && ok; ++i) {
        const auto proc = cache_procedure(generate_procedure(gp, i));
        const auto full = run_procedure(model, proc);
        for (int t = 0; t < 10 && ok; ++t) {
            const int trunc = 1 + static_cast<int>(rng.uniform_int(0, proc.n_frames - 1));
            const auto part = run_procedure(model, proc, trunc);
            ok = ok && static_cast<int>(part.preds.size()) == trunc;
            for (int u = 0; u < trunc && ok; ++u) ok = ok && part.preds[u] == full.preds[u];
        }
    }
    report(6, "streaming predictions are bit-identical under truncation", ok,
           "5 procedures x 10 random truncation points, default model shape");
}

// ------------------------------------------------------- criteria 7 and 8

fs::path work_dir() {
    if (const char* env = std::getenv("PMNET_ACCEPT_DIR")) return fs::path(env);
    return fs::path("accept_work");
}

// Train (or reuse a cached checkpoint trained with the identical config) and
// return the best-validation checkpoint.
Checkpoint run_or_load(const fs::path& ckpt_path, const RunConfig& cfg,
                       const std::vector<LoadedProcedure>& train_procs,
                       const std::vector<LoadedProcedure>& val_procs, const char* tag) {
    if (fs::exists(ckpt_path)) {
        try {
            auto ck = load_checkpoint(ckpt_path);
            if (ck.config_text == config_to_text(cfg)) {
                std::printf("  [%s] reusing cached checkpoint %s (best val jaccard %.2f)\n", tag,
                            ckpt_path.string().c_str(), ck.best_val_jaccard);
                return ck;
            }
            std::printf("  [%s] cached checkpoint config differs; retraining\n", tag);
        } catch (const std::exception&) {
            std::printf("  [%s] cached checkpoint unreadable; retraining\n", tag);
        }
    }
    std::printf("  [%s] training %d epochs x %d steps...\n", tag, cfg.epochs,
                cfg.steps_per_epoch);
    std::fflush(stdout);
    Model<float> model(cfg);
    train_model(model, train_procs, val_procs, ckpt_path, &std::cout);
    return load_checkpoint(ckpt_path);
}

void criteria_learnability_and_ablation() {
    const fs::path work = work_dir();
    fs::create_directories(work);
    const fs::path ds = work / "ds";

    // seed-7 dataset of 50 procedures (cached after the first generation)
    GeneratorParams gp;  // defaults: 50 procedures, seed 7
    bool have_ds = false;
    try {
        have_ds = read_manifest(ds).size() == 50;
    } catch (const std::exception&) {}
    if (!have_ds) {
        std::printf("  generating %d-procedure dataset at %s...\n", gp.n_procedures,
                    ds.string().c_str());
        std::fflush(stdout);
        std::vector<SyntheticProcedure> procs;
        for (int i = 0; i < gp.n_procedures; ++i) procs.push_back(generate_procedure(gp, i));
        write_dataset(procs, ds);
    }
    const auto train_procs = load_split(ds, "train");
    const auto val_procs = load_split(ds, "val");
    const auto test_procs = load_split(ds, "test");

    RunConfig cfg;  // defaults, reduced to 15 epochs
    cfg.epochs = 15;

    const auto full = run_or_load(work / "full.ckpt", cfg, train_procs, val_procs, "full");
    auto model = model_from_checkpoint<float>(full);
    const auto test = evaluate_model(model, test_procs);

    {
        std::ostringstream d;
        d << "test macro jaccard " << test.macro_jaccard << " (>= 60), accuracy " << test.accuracy
          << " (>= 80), effectiveness accuracy "
          << (test.eff_defined ? test.eff_accuracy : -1.0) << " (>= 85)";
        report(7, "synthetic benchmark learnability at default config, 15 epochs",
               test.macro_jaccard >= 60.0 && test.accuracy >= 80.0 && test.eff_defined &&
                   test.eff_accuracy >= 85.0,
               d.str());
    }

    RunConfig cfg_a = cfg;
    cfg_a.n_swaps = 0;
    cfg_a.masking = false;
    RunConfig cfg_b = cfg;
    cfg_b.ssm_identity = true;
    RunConfig cfg_c = cfg;
    cfg_c.lambda_cl = 0.0;
    const auto abl_a = run_or_load(work / "abl_a.ckpt", cfg_a, train_procs, val_procs, "abl_a");
    const auto abl_b = run_or_load(work / "abl_b.ckpt", cfg_b, train_procs, val_procs, "abl_b");
    const auto abl_c = run_or_load(work / "abl_c.ckpt", cfg_c, train_procs, val_procs, "abl_c");

    const double vf = full.best_val_jaccard;
    const double va = abl_a.best_val_jaccard;
    const double vb = abl_b.best_val_jaccard;
    const double vc = abl_c.best_val_jaccard;
    std::ostringstream d;
    d << "val macro jaccard: full " << vf << ", no-swap/no-mask " << va << ", identity-ssm " << vb
      << ", no-separation-loss " << vc;
    const bool ok = va <= vf && vb <= vf && vc <= vf && va <= vb && va <= vc;
    report(8, "seed-matched ablations do not beat the full model; temporal encoding "
              "ablation drops most",
           ok, d.str());
}

// ---------------------------------------------------------------- criterion 9

bool reports_identical(const MetricReport& a, const MetricReport& b) {
    bool ok = a.macro_precision == b.macro_precision && a.macro_recall == b.macro_recall &&
              a.macro_jaccard == b.macro_jaccard && a.accuracy == b.accuracy &&
              a.eff_defined == b.eff_defined && a.eff_precision == b.eff_precision &&
              a.eff_recall == b.eff_recall && a.eff_accuracy == b.eff_accuracy &&
              a.eff_jaccard == b.eff_jaccard;
    for (int k = 0; k < kNumPhases; ++k) {
        ok = ok && a.per_phase[k].precision == b.per_phase[k].precision &&
             a.per_phase[k].recall == b.per_phase[k].recall &&
             a.per_phase[k].jaccard == b.per_phase[k].jaccard;
    }
    return ok;
}

void criterion_determinism() {
    RunConfig cfg;
    cfg.channels = 16;
    cfg.heads = 2;
    cfg.state_dim = 4;
    cfg.n_blocks = 1;
    cfg.window = 8;
    cfg.clip_w = 4;
    cfg.n_swaps = 2;
    cfg.batch_size = 2;
    cfg.steps_per_epoch = 2;
    GeneratorParams gp;
    gp.seed = 99;
    gp.n_procedures = 2;
    gp.frames_min = 40;
    gp.frames_mean = 50;
    gp.frames_max = 60;
    gp.image_size = 32;
    std::vector<LoadedProcedure> procs;
    for (int i = 0; i < 2; ++i) procs.push_back(cache_procedure(generate_procedure(gp, i)));

    auto epoch0 = [&]() {
        Model<float> m(cfg);
        return train_model(m, procs, {}, fs::path{}, nullptr, 1).epochs.at(0).loss;
    };
    const double l1 = epoch0();
    const double l2 = epoch0();

    const fs::path work = work_dir();
    fs::create_directories(work);
    const fs::path ck_path = work / "determinism.ckpt";
    Model<float> m(cfg);
    const auto before = evaluate_model(m, procs);
    save_checkpoint(ck_path, m, 7, 0, 0.0);
    auto restored = model_from_checkpoint<float>(load_checkpoint(ck_path));
    const auto after = evaluate_model(restored, procs);

    std::ostringstream d;
    d << "epoch-0 losses " << l1 << " vs " << l2 << "; round-trip metrics "
      << (reports_identical(before, after) ? "identical" : "DIFFER");
    report(9, "fixed-seed determinism and checkpoint round-trip", l1 == l2 &&
                                                                      reports_identical(before, after),
           d.str());
}

}  // namespace

int main() {
    try {
        criterion_scan();
        criterion_gradients();
        criterion_closed_form();
        criterion_swap_algebra();
        criterion_metric_oracle();
        criterion_causality();
        criterion_determinism();  // cheap; runs before the training-based criteria
        criteria_learnability_and_ablation();
    } catch (const std::exception& e) {
        std::printf("[FAIL] acceptance aborted: %s\n", e.what());
        return 1;
    }
    std::printf("%s\n", g_failures == 0 ? "acceptance: all criteria passed"
                                        : "acceptance: FAILURES present");
    return g_failures == 0 ? 0 : 1;
}
