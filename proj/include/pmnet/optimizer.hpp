#ifndef PMNET_OPTIMIZER_HPP
#define PMNET_OPTIMIZER_HPP

#include <cmath>
#include <vector>

#include "pmnet/params.hpp"

namespace pmnet {

// AdamW with decoupled weight decay. Moment buffers are kept in double so the
// update is reproducible regardless of the model scalar type.
template <class T>
class AdamW {
public:
    AdamW(ParamStore<T>& store, double lr, double weight_decay, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8)
        : store_(store), lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.assign(store.total_size(), 0.0);
        v_.assign(store.total_size(), 0.0);
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        std::size_t off = 0;
        for (auto& e : store_.entries()) {
            for (std::size_t i = 0; i < e.value.size(); ++i, ++off) {
                const double g = static_cast<double>(e.grad[i]);
                m_[off] = beta1_ * m_[off] + (1.0 - beta1_) * g;
                v_[off] = beta2_ * v_[off] + (1.0 - beta2_) * g * g;
                const double mhat = m_[off] / bc1;
                const double vhat = v_[off] / bc2;
                double x = static_cast<double>(e.value[i]);
                x -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * x);
                e.value[i] = static_cast<T>(x);
            }
        }
    }

    long step_count() const { return t_; }

private:
    ParamStore<T>& store_;
    double lr_, wd_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<double> m_, v_;
};

}  // namespace pmnet

#endif  // PMNET_OPTIMIZER_HPP
