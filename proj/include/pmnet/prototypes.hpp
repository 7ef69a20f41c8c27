#ifndef PMNET_PROTOTYPES_HPP
#define PMNET_PROTOTYPES_HPP

#include <array>
#include <cmath>
#include <vector>

#include "pmnet/autodiff.hpp"
#include "pmnet/errors.hpp"
#include "pmnet/synthgen.hpp"

namespace pmnet {

// Per-phase feature prototypes with EMA updates:
//   p_j <- (1 - alpha) * mean(TP pooled features) + alpha * p_j
// TP features accumulate into a buffer during the epoch; flush_ema applies
// the update once per epoch. Prototypes are constants w.r.t. gradients.
class PrototypeBank {
public:
    PrototypeBank() = default;
    PrototypeBank(int channels, double alpha) : channels_(channels), alpha_(alpha) {
        prototypes_.assign(static_cast<std::size_t>(kNumPhases) * channels, 0.0);
        tp_sum_.assign(prototypes_.size(), 0.0);
        tp_count_.fill(0);
        initialized_.fill(false);
    }

    int channels() const { return channels_; }
    double alpha() const { return alpha_; }
    void set_alpha(double a) { alpha_ = a; }

    bool initialized(Phase p) const { return initialized_[static_cast<int>(p)]; }
    bool all_initialized() const {
        for (bool b : initialized_)
            if (!b) return false;
        return true;
    }

    const double* prototype(Phase p) const {
        return prototypes_.data() + static_cast<std::size_t>(static_cast<int>(p)) * channels_;
    }

    long tp_count(Phase p) const { return tp_count_[static_cast<int>(p)]; }

    template <class T>
    void accumulate_tp(const std::vector<T>& pooled_feature, Phase phase) {
        if (static_cast<int>(pooled_feature.size()) != channels_)
            throw InputError("prototype bank: feature width mismatch");
        double* s = tp_sum_.data() + static_cast<std::size_t>(static_cast<int>(phase)) * channels_;
        for (int i = 0; i < channels_; ++i) s[i] += static_cast<double>(pooled_feature[i]);
        tp_count_[static_cast<int>(phase)] += 1;
    }

    // Once per epoch. Phases with no TPs keep their prototype untouched.
    void flush_ema() {
        for (int j = 0; j < kNumPhases; ++j) {
            if (tp_count_[j] == 0) continue;
            double* p = prototypes_.data() + static_cast<std::size_t>(j) * channels_;
            const double* s = tp_sum_.data() + static_cast<std::size_t>(j) * channels_;
            const double inv_n = 1.0 / static_cast<double>(tp_count_[j]);
            // first update initializes the prototype directly from the mean
            const double a = initialized_[j] ? alpha_ : 0.0;
            for (int i = 0; i < channels_; ++i) p[i] = (1.0 - a) * (s[i] * inv_n) + a * p[i];
            initialized_[j] = true;
        }
        std::fill(tp_sum_.begin(), tp_sum_.end(), 0.0);
        tp_count_.fill(0);
    }

    // Cosine similarity of a pooled clip feature against every prototype.
    // Zero-norm feature or prototype yields relevance 0 for that pair.
    template <class T>
    std::array<double, kNumPhases> relevance(const std::vector<T>& pooled) const {
        std::array<double, kNumPhases> r{};
        double qn = 0;
        for (int i = 0; i < channels_; ++i) {
            const double v = static_cast<double>(pooled[i]);
            qn += v * v;
        }
        qn = std::sqrt(qn);
        for (int j = 0; j < kNumPhases; ++j) {
            if (!initialized_[j]) {
                r[j] = 0.0;
                continue;
            }
            const double* p = prototypes_.data() + static_cast<std::size_t>(j) * channels_;
            double pn = 0, dot = 0;
            for (int i = 0; i < channels_; ++i) {
                pn += p[i] * p[i];
                dot += p[i] * static_cast<double>(pooled[i]);
            }
            pn = std::sqrt(pn);
            r[j] = (qn < 1e-12 || pn < 1e-12) ? 0.0 : dot / (qn * pn);
        }
        return r;
    }

    // checkpoint serialization hooks
    std::vector<double>& raw_prototypes() { return prototypes_; }
    const std::vector<double>& raw_prototypes() const { return prototypes_; }
    std::array<bool, kNumPhases>& raw_initialized() { return initialized_; }
    const std::array<bool, kNumPhases>& raw_initialized() const { return initialized_; }

private:
    int channels_ = 0;
    double alpha_ = 0.99;
    std::vector<double> prototypes_;  // [5, c]
    std::vector<double> tp_sum_;      // [5, c]
    std::array<long, kNumPhases> tp_count_{};
    std::array<bool, kNumPhases> initialized_{};
};

// ---- objectives ----

inline double euclid(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size()) throw InputError("euclid: dimension mismatch");
    double s = 0;
    for (std::size_t i = 0; i < u.size(); ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
    return std::sqrt(s);
}

// L_CL = 1/2 |f - p_y|^2 + 1/2 max(0, 1 - |f - p_yhat|)^2
inline double contrastive_loss(const std::vector<double>& f, const std::vector<double>& p_y,
                               const std::vector<double>& p_yhat) {
    double d2 = 0;
    for (std::size_t i = 0; i < f.size(); ++i) d2 += (f[i] - p_y[i]) * (f[i] - p_y[i]);
    const double hinge = std::max(0.0, 1.0 - euclid(f, p_yhat));
    return 0.5 * d2 + 0.5 * hinge * hinge;
}

// Autodiff route used in training; prototypes enter as constants.
template <class T>
ad::Var<T> contrastive_loss_op(ad::Tape<T>& tp, ad::Var<T> f, const std::vector<T>& p_y,
                               const std::vector<T>& p_yhat) {
    const int c = f.cols();
    auto py = tp.constant(1, c, p_y.data());
    auto pyh = tp.constant(1, c, p_yhat.data());
    auto dy = ad::sub(tp, f, py);
    auto pull = ad::scale(tp, ad::sum_all(tp, ad::mul(tp, dy, dy)), T(0.5));
    auto dh = ad::sub(tp, f, pyh);
    auto dist = ad::sqrt_ew(tp, ad::sum_all(tp, ad::mul(tp, dh, dh)));
    auto hinge = ad::relu(tp, ad::sub(tp, tp.scalar(T(1)), dist));
    auto push = ad::scale(tp, ad::mul(tp, hinge, hinge), T(0.5));
    return ad::add(tp, pull, push);
}

// Cross entropy over explicit probability rows (already softmax-normalized),
// log clamped at 1e-12.
inline double cross_entropy(const std::vector<double>& probs, int n_classes,
                            const std::vector<int>& labels) {
    const int n = static_cast<int>(labels.size());
    if (static_cast<int>(probs.size()) != n * n_classes)
        throw InputError("cross_entropy: shape mismatch");
    double loss = 0;
    for (int i = 0; i < n; ++i) {
        double p = probs[static_cast<std::size_t>(i) * n_classes + labels[i]];
        if (p < 1e-12) p = 1e-12;
        loss -= std::log(p);
    }
    return loss / n;
}

struct LossReport {
    double ce_phase = 0;     // L^s_CE
    double ce_effect = 0;    // L^e_CE
    double contrastive = 0;  // L_CL
    double lambda_cl = 0.1;
    double total = 0;
};

inline LossReport total_loss(double ce_phase, double ce_effect, double contrastive,
                             double lambda_cl = 0.1) {
    for (double v : {ce_phase, ce_effect, contrastive})
        if (!std::isfinite(v))
            throw NumericError(std::string("total_loss: non-finite ") +
                               (!std::isfinite(ce_phase)
                                    ? "ce_phase"
                                    : (!std::isfinite(ce_effect) ? "ce_effect" : "contrastive")));
    LossReport r;
    r.ce_phase = ce_phase;
    r.ce_effect = ce_effect;
    r.contrastive = contrastive;
    r.lambda_cl = lambda_cl;
    r.total = ce_phase + ce_effect + lambda_cl * contrastive;
    return r;
}

}  // namespace pmnet

#endif  // PMNET_PROTOTYPES_HPP
