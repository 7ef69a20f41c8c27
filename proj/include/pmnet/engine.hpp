#ifndef PMNET_ENGINE_HPP
#define PMNET_ENGINE_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "pmnet/checkpoint.hpp"
#include "pmnet/metrics.hpp"
#include "pmnet/model.hpp"
#include "pmnet/optimizer.hpp"
#include "pmnet/ribbon.hpp"
#include "pmnet/synthgen.hpp"

namespace pmnet {

// Training loop, evaluation, and causal streaming inference.

// Window for target frame t: indices {t-19R, ..., t-R, t}, clamped at 0.
// Strictly causal: no index exceeds t.
inline std::vector<int> make_window_indices(int t, int window, int stride) {
    std::vector<int> idx(static_cast<std::size_t>(window));
    for (int k = 0; k < window; ++k) idx[k] = std::max(0, t - (window - 1 - k) * stride);
    return idx;
}

// ---- dataset cache (frames quantized to 8 bits to fit in memory) ----

struct LoadedProcedure {
    std::string id;
    bool effective_case = true;
    int h = 0, w = 0, n_frames = 0;
    std::vector<std::uint8_t> pixels;     // n * h * w * 3
    std::vector<int> phase;               // per frame
    std::vector<std::uint8_t> effective;  // 1 effective, 0 ineffective, 2 not-Knotting
    std::vector<Box> boxes;
    std::vector<double> t_seconds;

    void frame_floats(int i, std::vector<float>& buf) const {
        const std::size_t plane = static_cast<std::size_t>(h) * w * 3;
        buf.resize(plane);
        const std::uint8_t* src = pixels.data() + static_cast<std::size_t>(i) * plane;
        for (std::size_t k = 0; k < plane; ++k) buf[k] = static_cast<float>(src[k]) / 255.0f;
    }
};

inline LoadedProcedure cache_procedure(const SyntheticProcedure& proc) {
    LoadedProcedure lp;
    lp.id = proc.id;
    lp.effective_case = proc.effective_case;
    lp.n_frames = static_cast<int>(proc.frames.size());
    lp.h = proc.frames.at(0).h;
    lp.w = proc.frames.at(0).w;
    const std::size_t plane = static_cast<std::size_t>(lp.h) * lp.w * 3;
    lp.pixels.resize(plane * lp.n_frames);
    for (int i = 0; i < lp.n_frames; ++i) {
        const auto& fr = proc.frames[i];
        for (std::size_t k = 0; k < plane; ++k)
            lp.pixels[i * plane + k] =
                static_cast<std::uint8_t>(std::lround(std::clamp(fr.image[k], 0.0f, 1.0f) * 255));
        lp.phase.push_back(static_cast<int>(fr.phase));
        lp.effective.push_back(fr.effective ? (*fr.effective ? 1 : 0) : 2);
        lp.boxes.push_back(fr.box);
        lp.t_seconds.push_back(fr.t_seconds);
    }
    return lp;
}

inline std::vector<LoadedProcedure> load_split(const std::filesystem::path& root,
                                               const std::string& split) {
    std::vector<LoadedProcedure> out;
    for (const auto& e : read_manifest(root))
        if (e.split == split) out.push_back(cache_procedure(read_procedure(root, e.id)));
    return out;
}

// ---- streaming inference ----

struct FramePrediction {
    int phase = 0;
    std::array<double, kNumPhases> probs{};
    std::array<double, 2> eff_logits{};  // {ineffective, effective}
    int eff_pred_positive = 0;           // 1 = predicted ineffective
};

// Causal per-frame runner: each fed frame is encoded exactly once and its
// feature rows cached; the window forward runs on cached rows only, so a
// prediction for frame t can never observe frames after t.
template <class T>
class OnlineRunner {
public:
    explicit OnlineRunner(const Model<T>& model) : model_(model) {}

    FramePrediction push_frame(const FrameView& frame, const Box& box) {
        const auto t0 = std::chrono::steady_clock::now();
        const int c = model_.config().channels;
        {
            ad::Tape<T> tp(false);
            ParamBinder<T> pb(tp, const_cast<ParamStore<T>&>(model_.params()));
            auto f = encode_frames(pb, {frame}, "fe");
            auto fr = model_.encode_region_features(pb, {frame}, {box});
            feat_rows_.emplace_back(f.val().begin(), f.val().end());
            region_rows_.emplace_back(fr.val().begin(), fr.val().end());
        }
        const auto t1 = std::chrono::steady_clock::now();

        const RunConfig& cfg = model_.config();
        const int t = static_cast<int>(feat_rows_.size()) - 1;
        const auto idx = make_window_indices(t, cfg.window, cfg.frame_stride);
        std::vector<T> fbuf, rbuf;
        fbuf.reserve(idx.size() * c);
        rbuf.reserve(idx.size() * c);
        for (int i : idx) {
            fbuf.insert(fbuf.end(), feat_rows_[i].begin(), feat_rows_[i].end());
            rbuf.insert(rbuf.end(), region_rows_[i].begin(), region_rows_[i].end());
        }
        ad::Tape<T> tp(false);
        ParamBinder<T> pb(tp, const_cast<ParamStore<T>&>(model_.params()));
        auto f = tp.constant(cfg.window, c, fbuf.data());
        auto fr = tp.constant(cfg.window, c, rbuf.data());
        std::vector<std::uint8_t> pad(static_cast<std::size_t>(cfg.window), 0);
        int n_real = cfg.window;
        auto fpad = f, rpad = fr;
        if (cfg.window % cfg.clip_w != 0) {
            const int extra = cfg.clip_w - cfg.window % cfg.clip_w;
            auto last_f = ad::slice_rows(tp, f, cfg.window - 1, 1);
            auto last_r = ad::slice_rows(tp, fr, cfg.window - 1, 1);
            std::vector<ad::Var<T>> fparts{f}, rparts{fr};
            for (int e = 0; e < extra; ++e) {
                fparts.push_back(last_f);
                rparts.push_back(last_r);
                pad.push_back(1);
            }
            fpad = ad::concat_rows(tp, fparts);
            rpad = ad::concat_rows(tp, rparts);
        }
        auto out = model_.forward_from_features(pb, fpad, rpad, pad, n_real);
        const auto t2 = std::chrono::steady_clock::now();
        encode_seconds_ += std::chrono::duration<double>(t1 - t0).count();
        model_seconds_ += std::chrono::duration<double>(t2 - t1).count();

        // the prediction for frame t is the last non-padding row
        FramePrediction p;
        const int row = cfg.window - 1;
        const auto& logits = out.phase_logits.val();
        double mx = logits[row * kNumPhases];
        for (int j = 1; j < kNumPhases; ++j)
            mx = std::max(mx, static_cast<double>(logits[row * kNumPhases + j]));
        double z = 0;
        for (int j = 0; j < kNumPhases; ++j) {
            p.probs[j] = std::exp(static_cast<double>(logits[row * kNumPhases + j]) - mx);
            z += p.probs[j];
        }
        int best = 0;
        for (int j = 0; j < kNumPhases; ++j) {
            p.probs[j] /= z;
            if (p.probs[j] > p.probs[best]) best = j;
        }
        p.phase = best;
        p.eff_logits = {static_cast<double>(out.eff_logits.val()[0]),
                        static_cast<double>(out.eff_logits.val()[1])};
        p.eff_pred_positive = p.eff_logits[0] > p.eff_logits[1] ? 1 : 0;
        return p;
    }

    int frames_seen() const { return static_cast<int>(feat_rows_.size()); }
    double encode_seconds() const { return encode_seconds_; }
    double model_seconds() const { return model_seconds_; }

private:
    const Model<T>& model_;
    std::vector<std::vector<T>> feat_rows_, region_rows_;
    double encode_seconds_ = 0, model_seconds_ = 0;
};

// ---- evaluation ----

struct ProcedureTrace {
    std::string id;
    std::vector<int> labels, preds;
    std::vector<int> eff_labels, eff_preds;  // Knotting frames only, 1 = ineffective
};

template <class T>
ProcedureTrace run_procedure(const Model<T>& model, const LoadedProcedure& proc,
                             int truncate = -1, double* encode_sec = nullptr,
                             double* model_sec = nullptr) {
    OnlineRunner<T> runner(model);
    ProcedureTrace tr;
    tr.id = proc.id;
    const int n = truncate >= 0 ? std::min(truncate, proc.n_frames) : proc.n_frames;
    std::vector<float> buf;
    for (int t = 0; t < n; ++t) {
        proc.frame_floats(t, buf);
        const auto p = runner.push_frame(FrameView{buf.data(), proc.h, proc.w}, proc.boxes[t]);
        tr.labels.push_back(proc.phase[t]);
        tr.preds.push_back(p.phase);
        if (proc.phase[t] == static_cast<int>(Phase::Knotting)) {
            tr.eff_labels.push_back(proc.effective[t] == 0 ? 1 : 0);
            tr.eff_preds.push_back(p.eff_pred_positive);
        }
    }
    if (encode_sec) *encode_sec = runner.encode_seconds();
    if (model_sec) *model_sec = runner.model_seconds();
    return tr;
}

inline MetricReport metrics_from_traces(const std::vector<ProcedureTrace>& traces) {
    std::vector<int> labels, preds, eff_labels, eff_preds;
    for (const auto& tr : traces) {
        labels.insert(labels.end(), tr.labels.begin(), tr.labels.end());
        preds.insert(preds.end(), tr.preds.begin(), tr.preds.end());
        eff_labels.insert(eff_labels.end(), tr.eff_labels.begin(), tr.eff_labels.end());
        eff_preds.insert(eff_preds.end(), tr.eff_preds.begin(), tr.eff_preds.end());
    }
    auto r = compute_phase_metrics(labels, preds);
    compute_effectiveness_metrics(eff_labels, eff_preds, r);
    return r;
}

template <class T>
MetricReport evaluate_model(const Model<T>& model, const std::vector<LoadedProcedure>& procs,
                            std::vector<ProcedureTrace>* traces_out = nullptr) {
    std::vector<ProcedureTrace> traces;
    for (const auto& p : procs) traces.push_back(run_procedure(model, p));
    auto r = metrics_from_traces(traces);
    if (traces_out) *traces_out = std::move(traces);
    return r;
}

// ---- training ----

struct EpochLog {
    double loss = 0;  // mean per-step composite loss
    double ce_phase = 0, ce_effect = 0, contrastive = 0;
    MetricReport val;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
    double best_val_jaccard = -1;
    int best_epoch = -1;
};

namespace engine_detail {

struct WindowSample {
    int proc = 0;
    int frame = 0;
};

// Majority phase among non-padding frames of one clip (ties -> lower id).
inline int clip_majority_label(const std::vector<int>& frame_labels,
                               const std::vector<std::uint8_t>& pad, int k, int w) {
    std::array<int, kNumPhases> votes{};
    for (int i = k * w; i < (k + 1) * w; ++i)
        if (!pad[i]) votes[frame_labels[i]] += 1;
    int best = 0;
    for (int j = 1; j < kNumPhases; ++j)
        if (votes[j] > votes[best]) best = j;
    return best;
}

// Clip prediction: argmax of the mean softmax over the clip's non-padding rows.
template <class T>
int clip_prediction(const std::vector<T>& logits, const std::vector<std::uint8_t>& pad, int k,
                    int w) {
    std::array<double, kNumPhases> acc{};
    for (int i = k * w; i < (k + 1) * w; ++i) {
        if (pad[i]) continue;
        double mx = logits[i * kNumPhases];
        for (int j = 1; j < kNumPhases; ++j)
            mx = std::max(mx, static_cast<double>(logits[i * kNumPhases + j]));
        double z = 0;
        std::array<double, kNumPhases> p{};
        for (int j = 0; j < kNumPhases; ++j) {
            p[j] = std::exp(static_cast<double>(logits[i * kNumPhases + j]) - mx);
            z += p[j];
        }
        for (int j = 0; j < kNumPhases; ++j) acc[j] += p[j] / z;
    }
    int best = 0;
    for (int j = 1; j < kNumPhases; ++j)
        if (acc[j] > acc[best]) best = j;
    return best;
}

}  // namespace engine_detail

// One optimization step over a sampled batch. Returns the composite loss
// (Eq.-10 style: mean phase CE + mean effectiveness CE + lambda * mean FP
// contrastive). Exposed separately so tests can drive single steps.
template <class T>
LossReport train_step(Model<T>& model, AdamW<T>& opt,
                      const std::vector<LoadedProcedure>& procs,
                      const std::vector<engine_detail::WindowSample>& batch, Rng& aug_rng) {
    const RunConfig& cfg = model.config();
    struct WindowWork {
        std::unique_ptr<ad::Tape<T>> tape;
        std::unique_ptr<ParamBinder<T>> binder;
        ad::Var<T> ce_phase;
        ad::Var<T> ce_eff;  // invalid if no Knotting frame in window
        std::vector<ad::Var<T>> contrastive;
    };
    std::vector<WindowWork> work;
    int eff_count = 0, fp_count = 0;
    auto& bank = model.bank();

    std::vector<float> buf;
    for (const auto& sample : batch) {
        const auto& proc = procs[sample.proc];
        const auto idx = make_window_indices(sample.frame, cfg.window, cfg.frame_stride);

        // per-window augmentation draws (consumed deterministically even if
        // a toggle is off would change the stream; so draw only when enabled)
        double jr = 1, jg = 1, jb = 1;
        bool flip = false;
        if (cfg.aug_color_jitter) {
            jr = 1.0 + 0.2 * (2 * aug_rng.uniform() - 1);
            jg = 1.0 + 0.2 * (2 * aug_rng.uniform() - 1);
            jb = 1.0 + 0.2 * (2 * aug_rng.uniform() - 1);
        }
        if (cfg.aug_hflip) flip = aug_rng.uniform() < 0.5;

        std::vector<std::vector<float>> images(idx.size());
        std::vector<FrameView> frames;
        std::vector<Box> boxes;
        std::vector<int> frame_labels;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            proc.frame_floats(idx[k], images[k]);
            Box box = proc.boxes[idx[k]];
            if (cfg.aug_color_jitter || flip) {
                auto& img = images[k];
                if (cfg.aug_color_jitter)
                    for (std::size_t p = 0; p < img.size(); p += 3) {
                        img[p] = std::min(1.0f, static_cast<float>(img[p] * jr));
                        img[p + 1] = std::min(1.0f, static_cast<float>(img[p + 1] * jg));
                        img[p + 2] = std::min(1.0f, static_cast<float>(img[p + 2] * jb));
                    }
                if (flip) {
                    for (int y = 0; y < proc.h; ++y)
                        for (int x = 0; x < proc.w / 2; ++x)
                            for (int ch = 0; ch < 3; ++ch)
                                std::swap(img[(static_cast<std::size_t>(y) * proc.w + x) * 3 + ch],
                                          img[(static_cast<std::size_t>(y) * proc.w + proc.w - 1 -
                                               x) * 3 + ch]);
                    box.x = proc.w - box.x - box.w;
                }
            }
            frames.push_back(FrameView{images[k].data(), proc.h, proc.w});
            boxes.push_back(box);
            frame_labels.push_back(proc.phase[idx[k]]);
        }

        WindowWork wk;
        wk.tape = std::make_unique<ad::Tape<T>>();
        wk.binder = std::make_unique<ParamBinder<T>>(*wk.tape, model.params());
        auto out = model.forward_window(*wk.binder, frames, boxes);
        auto& tp = *wk.tape;

        // padded rows (from clip-width padding) are excluded from the CE
        std::vector<int> padded_labels = frame_labels;
        padded_labels.resize(out.pad_flags.size(), 0);
        std::vector<std::uint8_t> include(out.pad_flags.size());
        for (std::size_t i = 0; i < include.size(); ++i) include[i] = out.pad_flags[i] ? 0 : 1;
        wk.ce_phase = ad::softmax_ce(tp, out.phase_logits, padded_labels, include);

        // window effectiveness label: majority effective flag over Knotting frames
        int n_eff = 0, n_ineff = 0;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (frame_labels[k] != static_cast<int>(Phase::Knotting)) continue;
            if (proc.effective[idx[k]] == 1)
                ++n_eff;
            else if (proc.effective[idx[k]] == 0)
                ++n_ineff;
        }
        if (n_eff + n_ineff > 0) {
            const int label = n_eff >= n_ineff ? 1 : 0;  // head order {ineffective, effective}
            wk.ce_eff = ad::softmax_ce(tp, out.eff_logits, {label}, {1});
            ++eff_count;
        }

        // clip-level TP/FP bookkeeping on pooled retrieved features
        const int n_clips = static_cast<int>(out.clip_pooled.size());
        for (int k = 0; k < n_clips; ++k) {
            bool all_pad = true;
            for (int i = k * cfg.clip_w; i < (k + 1) * cfg.clip_w; ++i)
                if (!out.pad_flags[i]) all_pad = false;
            if (all_pad) continue;
            const int label =
                engine_detail::clip_majority_label(padded_labels, out.pad_flags, k, cfg.clip_w);
            const int pred = engine_detail::clip_prediction(out.phase_logits.val(),
                                                            out.pad_flags, k, cfg.clip_w);
            const auto& pooled = out.clip_pooled[k].val();
            if (pred == label) {
                std::vector<double> v(pooled.begin(), pooled.end());
                bank.accumulate_tp(v, static_cast<Phase>(label));
            } else if (cfg.lambda_cl != 0.0 && bank.initialized(static_cast<Phase>(label)) &&
                       bank.initialized(static_cast<Phase>(pred))) {
                // Unit-normalize both sides: the margin-1 hinge in the
                // separation loss assumes unit-scale inputs; raw pooled
                // features would let the pull term dwarf the other losses.
                const double* py = bank.prototype(static_cast<Phase>(label));
                const double* pyh = bank.prototype(static_cast<Phase>(pred));
                auto unit = [&](const double* p) {
                    double n2 = 0;
                    for (int i = 0; i < cfg.channels; ++i) n2 += p[i] * p[i];
                    const double inv = 1.0 / std::max(std::sqrt(n2), 1e-12);
                    std::vector<T> v(cfg.channels);
                    for (int i = 0; i < cfg.channels; ++i) v[i] = static_cast<T>(p[i] * inv);
                    return v;
                };
                wk.contrastive.push_back(contrastive_loss_op(
                    tp, ad::normalize_rows(tp, out.clip_pooled[k]), unit(py), unit(pyh)));
                ++fp_count;
            }
        }
        work.push_back(std::move(wk));
    }

    // compose each window's final scalar now that batch-level counts exist
    const int B = static_cast<int>(work.size());
    double ce_phase_sum = 0, ce_eff_sum = 0, ccl_sum = 0;
    model.params().zero_grad();
    for (auto& wk : work) {
        auto& tp = *wk.tape;
        ce_phase_sum += static_cast<double>(wk.ce_phase.item());
        ad::Var<T> total = ad::scale(tp, wk.ce_phase, static_cast<T>(1.0 / B));
        if (wk.ce_eff.valid()) {
            ce_eff_sum += static_cast<double>(wk.ce_eff.item());
            total = ad::add(tp, total, ad::scale(tp, wk.ce_eff, static_cast<T>(1.0 / eff_count)));
        }
        for (auto& cl : wk.contrastive) {
            ccl_sum += static_cast<double>(cl.item());
            total = ad::add(
                tp, total,
                ad::scale(tp, cl, static_cast<T>(cfg.lambda_cl / fp_count)));
        }
        tp.backward(total);
        wk.binder->harvest_grads();
    }
    const LossReport report =
        total_loss(ce_phase_sum / B, eff_count ? ce_eff_sum / eff_count : 0.0,
                   fp_count ? ccl_sum / fp_count : 0.0, cfg.lambda_cl);
    opt.step();
    return report;
}

template <class T>
TrainResult train_model(Model<T>& model, const std::vector<LoadedProcedure>& train_procs,
                        const std::vector<LoadedProcedure>& val_procs,
                        const std::filesystem::path& ckpt_out, std::ostream* log,
                        int epochs_override = -1) {
    const RunConfig& cfg = model.config();
    if (train_procs.empty()) throw InputError("train: empty training split");
    const int epochs = epochs_override > 0 ? epochs_override : cfg.epochs;

    std::vector<engine_detail::WindowSample> all_samples;
    for (int p = 0; p < static_cast<int>(train_procs.size()); ++p)
        for (int t = 0; t < train_procs[p].n_frames; ++t)
            all_samples.push_back({p, t});

    Rng rng(mix_seed(cfg.seed, 0x747261696eULL));  // sampling + augmentation stream
    AdamW<T> opt(model.params(), cfg.learning_rate, cfg.weight_decay);

    TrainResult result;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        EpochLog elog;
        for (int step = 0; step < cfg.steps_per_epoch; ++step) {
            std::vector<engine_detail::WindowSample> batch;
            for (int b = 0; b < cfg.batch_size; ++b)
                batch.push_back(all_samples[rng.uniform_int(
                    0, static_cast<int>(all_samples.size()) - 1)]);
            const auto report = train_step(model, opt, train_procs, batch, rng);
            elog.loss += report.total;
            elog.ce_phase += report.ce_phase;
            elog.ce_effect += report.ce_effect;
            elog.contrastive += report.contrastive;
        }
        elog.loss /= cfg.steps_per_epoch;
        elog.ce_phase /= cfg.steps_per_epoch;
        elog.ce_effect /= cfg.steps_per_epoch;
        elog.contrastive /= cfg.steps_per_epoch;

        model.bank().flush_ema();
        if (!val_procs.empty()) elog.val = evaluate_model(model, val_procs);

        if (!ckpt_out.empty()) {
            save_checkpoint(ckpt_out.string() + ".last", model, rng.state(), epoch,
                            result.best_val_jaccard);
            if (val_procs.empty() || elog.val.macro_jaccard > result.best_val_jaccard) {
                result.best_val_jaccard = val_procs.empty() ? 0 : elog.val.macro_jaccard;
                result.best_epoch = epoch;
                save_checkpoint(ckpt_out, model, rng.state(), epoch, result.best_val_jaccard);
            }
        } else if (val_procs.empty() || elog.val.macro_jaccard > result.best_val_jaccard) {
            result.best_val_jaccard = val_procs.empty() ? 0 : elog.val.macro_jaccard;
            result.best_epoch = epoch;
        }

        if (log) {
            char line[256];
            std::snprintf(line, sizeof(line),
                          "epoch %3d  loss %.6f  (phase %.6f  effect %.6f  contrastive %.6f)  "
                          "val macro-jaccard %.2f  val acc %.2f\n",
                          epoch, elog.loss, elog.ce_phase, elog.ce_effect, elog.contrastive,
                          val_procs.empty() ? 0.0 : elog.val.macro_jaccard,
                          val_procs.empty() ? 0.0 : elog.val.accuracy);
            (*log) << line << std::flush;
        }
        result.epochs.push_back(std::move(elog));
    }
    return result;
}

// ---- streaming entry point ----

struct StreamStats {
    ProcedureTrace trace;
    double fps = 0;
    double encode_seconds = 0;
    double model_seconds = 0;
    double total_seconds = 0;
};

template <class T>
StreamStats stream_procedure(const Model<T>& model, const LoadedProcedure& proc,
                             int truncate = -1) {
    StreamStats st;
    const auto t0 = std::chrono::steady_clock::now();
    st.trace = run_procedure(model, proc, truncate, &st.encode_seconds, &st.model_seconds);
    st.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    st.fps = st.trace.labels.empty() ? 0 : st.trace.labels.size() / st.total_seconds;
    return st;
}

}  // namespace pmnet

#endif  // PMNET_ENGINE_HPP
