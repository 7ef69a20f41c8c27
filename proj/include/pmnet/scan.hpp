#ifndef PMNET_SCAN_HPP
#define PMNET_SCAN_HPP

#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "pmnet/autodiff.hpp"
#include "pmnet/errors.hpp"

namespace pmnet {

// Selective state-space recurrence, per channel ch and state s:
//   h_t[ch,s] = exp(delta_t[ch] * A[ch,s]) * h_{t-1}[ch,s] + delta_t[ch] * B_t[s] * x_t[ch]
//   y_t[ch]   = sum_s C_t[s] * h_t[ch,s] + D[ch] * x_t[ch]
// A is kept negative (A = -exp(A_log)) and delta positive (softplus), so the
// discretized decay exp(delta*A) stays in (0,1).

// Input-dependent parameterization. Projections produce per-timestep
// delta (c), B (state_dim), C (state_dim); A_log and D are static.
template <class T>
struct ScanParams {
    int channels = 0;
    int state_dim = 0;
    std::vector<T> a_log;    // [c, s]
    std::vector<T> w_delta;  // [c, c]
    std::vector<T> b_delta;  // [c]
    std::vector<T> w_b;      // [c, s]
    std::vector<T> w_c;      // [c, s]
    std::vector<T> d_skip;   // [c]

    void validate() const {
        for (int ch = 0; ch < channels; ++ch) {
            for (int s = 0; s < state_dim; ++s)
                if (!std::isfinite(static_cast<double>(a_log[ch * state_dim + s])))
                    throw NumericError("scan: non-finite A_log at channel " + std::to_string(ch));
            if (!std::isfinite(static_cast<double>(d_skip[ch])))
                throw NumericError("scan: non-finite D at channel " + std::to_string(ch));
        }
    }
};

namespace detail {

// Raw recurrence with precomputed per-timestep tensors. h is the carry
// state [c, s], updated in place; y is [T, c].
template <class T>
void scan_core_seq(int t_len, int c, int s, const T* x, const T* delta, const T* bm, const T* cm,
                   const T* a, const T* d, T* h, T* y) {
    for (int t = 0; t < t_len; ++t) {
        const T* xt = x + static_cast<std::size_t>(t) * c;
        const T* dt = delta + static_cast<std::size_t>(t) * c;
        const T* bt = bm + static_cast<std::size_t>(t) * s;
        const T* ct = cm + static_cast<std::size_t>(t) * s;
        T* yt = y + static_cast<std::size_t>(t) * c;
        for (int ch = 0; ch < c; ++ch) {
            T* hc = h + static_cast<std::size_t>(ch) * s;
            const T* ac = a + static_cast<std::size_t>(ch) * s;
            const T dx = dt[ch] * xt[ch];
            T acc = T(0);
            for (int k = 0; k < s; ++k) {
                const T abar = std::exp(dt[ch] * ac[k]);
                hc[k] = abar * hc[k] + bt[k] * dx;
                acc += ct[k] * hc[k];
            }
            yt[ch] = acc + d[ch] * xt[ch];
        }
    }
}

// Chunked variant: inside a chunk the recurrence is run from a zero local
// state while the running product of decays is tracked, and the incoming
// carry is folded in via  h_t = local_t + prod(abar_{1..t}) * h_carry.
template <class T>
void scan_core_chunked(int t_len, int c, int s, const T* x, const T* delta, const T* bm,
                       const T* cm, const T* a, const T* d, T* h, T* y, int chunk) {
    if (chunk < 1) throw InputError("scan: chunk must be >= 1");
    std::vector<T> local(static_cast<std::size_t>(c) * s);
    std::vector<T> prod(static_cast<std::size_t>(c) * s);
    std::vector<T> hfull(static_cast<std::size_t>(c) * s);
    for (int t0 = 0; t0 < t_len; t0 += chunk) {
        const int t1 = std::min(t0 + chunk, t_len);
        std::fill(local.begin(), local.end(), T(0));
        std::fill(prod.begin(), prod.end(), T(1));
        for (int t = t0; t < t1; ++t) {
            const T* xt = x + static_cast<std::size_t>(t) * c;
            const T* dt = delta + static_cast<std::size_t>(t) * c;
            const T* bt = bm + static_cast<std::size_t>(t) * s;
            const T* ct = cm + static_cast<std::size_t>(t) * s;
            T* yt = y + static_cast<std::size_t>(t) * c;
            for (int ch = 0; ch < c; ++ch) {
                T* lc = local.data() + static_cast<std::size_t>(ch) * s;
                T* pc = prod.data() + static_cast<std::size_t>(ch) * s;
                T* fc = hfull.data() + static_cast<std::size_t>(ch) * s;
                const T* hc = h + static_cast<std::size_t>(ch) * s;
                const T* ac = a + static_cast<std::size_t>(ch) * s;
                const T dx = dt[ch] * xt[ch];
                T acc = T(0);
                for (int k = 0; k < s; ++k) {
                    const T abar = std::exp(dt[ch] * ac[k]);
                    lc[k] = abar * lc[k] + bt[k] * dx;
                    pc[k] *= abar;
                    fc[k] = pc[k] * hc[k] + lc[k];
                    acc += ct[k] * fc[k];
                }
                yt[ch] = acc + d[ch] * xt[ch];
            }
        }
        std::memcpy(h, hfull.data(), sizeof(T) * hfull.size());
    }
}

template <class T>
void project_inputs(int t_len, const ScanParams<T>& p, const T* x, std::vector<T>& delta,
                    std::vector<T>& bm, std::vector<T>& cm, std::vector<T>& a) {
    const int c = p.channels, s = p.state_dim;
    delta.assign(static_cast<std::size_t>(t_len) * c, T(0));
    bm.assign(static_cast<std::size_t>(t_len) * s, T(0));
    cm.assign(static_cast<std::size_t>(t_len) * s, T(0));
    a.resize(static_cast<std::size_t>(c) * s);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(p.a_log[i]);
    for (int t = 0; t < t_len; ++t) {
        const T* xt = x + static_cast<std::size_t>(t) * c;
        T* dt = delta.data() + static_cast<std::size_t>(t) * c;
        T* bt = bm.data() + static_cast<std::size_t>(t) * s;
        T* ct = cm.data() + static_cast<std::size_t>(t) * s;
        for (int j = 0; j < c; ++j) {
            T acc = p.b_delta[j];
            for (int k = 0; k < c; ++k) acc += xt[k] * p.w_delta[k * c + j];
            dt[j] = acc > T(20) ? acc : std::log1p(std::exp(acc));
        }
        for (int j = 0; j < s; ++j) {
            T accb = T(0), accc = T(0);
            for (int k = 0; k < c; ++k) {
                accb += xt[k] * p.w_b[k * s + j];
                accc += xt[k] * p.w_c[k * s + j];
            }
            bt[j] = accb;
            ct[j] = accc;
        }
    }
}

}  // namespace detail

// Reference path: strictly sequential. x and the returned y are [T, c]
// row-major; h0 (optional) is the incoming carry [c, s] and is updated.
template <class T>
std::vector<T> selective_scan_seq(const std::vector<T>& x, int t_len, const ScanParams<T>& p,
                                  std::vector<T>* carry = nullptr) {
    p.validate();
    const int c = p.channels, s = p.state_dim;
    std::vector<T> delta, bm, cm, a;
    detail::project_inputs(t_len, p, x.data(), delta, bm, cm, a);
    std::vector<T> h(static_cast<std::size_t>(c) * s, T(0));
    if (carry && !carry->empty()) h = *carry;
    std::vector<T> y(static_cast<std::size_t>(t_len) * c);
    detail::scan_core_seq(t_len, c, s, x.data(), delta.data(), bm.data(), cm.data(), a.data(),
                          p.d_skip.data(), h.data(), y.data());
    if (carry) *carry = h;
    return y;
}

template <class T>
std::vector<T> selective_scan_chunked(const std::vector<T>& x, int t_len, const ScanParams<T>& p,
                                      int chunk, std::vector<T>* carry = nullptr) {
    p.validate();
    const int c = p.channels, s = p.state_dim;
    std::vector<T> delta, bm, cm, a;
    detail::project_inputs(t_len, p, x.data(), delta, bm, cm, a);
    std::vector<T> h(static_cast<std::size_t>(c) * s, T(0));
    if (carry && !carry->empty()) h = *carry;
    std::vector<T> y(static_cast<std::size_t>(t_len) * c);
    detail::scan_core_chunked(t_len, c, s, x.data(), delta.data(), bm.data(), cm.data(), a.data(),
                              p.d_skip.data(), h.data(), y.data(), chunk);
    if (carry) *carry = h;
    return y;
}

namespace ad {

// Autodiff scan node. Inputs are the already-projected per-timestep tensors;
// the delta/B/C projections and the A = -exp(A_log) map live on the tape as
// ordinary ops. Backward is BPTT with stored state history.
template <class T>
Var<T> scan_op(Tape<T>& tp, Var<T> x, Var<T> delta, Var<T> bmat, Var<T> cmat, Var<T> a, Var<T> d) {
    const int t_len = x.rows(), c = x.cols();
    const int s = a.cols();
    assert(delta.rows() == t_len && delta.cols() == c);
    assert(bmat.rows() == t_len && bmat.cols() == s);
    assert(cmat.rows() == t_len && cmat.cols() == s);
    assert(a.rows() == c && d.n->numel() == c);
    Var<T> out = tp.make(t_len, c, detail::any_grad<T>({&x, &delta, &bmat, &cmat, &a, &d}));

    // h_hist[t] holds h after step t; index 0 is the initial zero state.
    auto h_hist = std::make_shared<std::vector<T>>(
        static_cast<std::size_t>(t_len + 1) * c * s, T(0));
    for (int t = 0; t < t_len; ++t) {
        const T* hp = h_hist->data() + static_cast<std::size_t>(t) * c * s;
        T* hn = h_hist->data() + static_cast<std::size_t>(t + 1) * c * s;
        for (int ch = 0; ch < c; ++ch) {
            const T dt = delta.n->val[t * c + ch];
            const T dx = dt * x.n->val[t * c + ch];
            T acc = T(0);
            for (int k = 0; k < s; ++k) {
                const T abar = std::exp(dt * a.n->val[ch * s + k]);
                const T h = abar * hp[ch * s + k] + bmat.n->val[t * s + k] * dx;
                hn[ch * s + k] = h;
                acc += cmat.n->val[t * s + k] * h;
            }
            out.n->val[t * c + ch] = acc + d.n->val[ch] * x.n->val[t * c + ch];
        }
    }
    if (out.n->needs_grad)
        out.n->back = [x, delta, bmat, cmat, a, d, out, h_hist, t_len, c, s]() {
            std::vector<T> g(static_cast<std::size_t>(c) * s, T(0));  // dL/dh_t
            for (int t = t_len - 1; t >= 0; --t) {
                const T* hp = h_hist->data() + static_cast<std::size_t>(t) * c * s;
                const T* hn = h_hist->data() + static_cast<std::size_t>(t + 1) * c * s;
                for (int ch = 0; ch < c; ++ch) {
                    const T gy = out.n->grad[t * c + ch];
                    const T dt = delta.n->val[t * c + ch];
                    const T xt = x.n->val[t * c + ch];
                    T gdelta = T(0), gx = T(0);
                    for (int k = 0; k < s; ++k) {
                        const T av = a.n->val[ch * s + k];
                        const T abar = std::exp(dt * av);
                        const T bt = bmat.n->val[t * s + k];
                        // total grad wrt h_t[ch,k]
                        const T gh = g[ch * s + k] + gy * cmat.n->val[t * s + k];
                        if (cmat.n->needs_grad) cmat.n->grad[t * s + k] += gy * hn[ch * s + k];
                        if (a.n->needs_grad) a.n->grad[ch * s + k] += gh * dt * abar * hp[ch * s + k];
                        if (bmat.n->needs_grad) bmat.n->grad[t * s + k] += gh * dt * xt;
                        gdelta += gh * (av * abar * hp[ch * s + k] + bt * xt);
                        gx += gh * dt * bt;
                        g[ch * s + k] = gh * abar;  // propagate to h_{t-1}
                    }
                    if (delta.n->needs_grad) delta.n->grad[t * c + ch] += gdelta;
                    if (x.n->needs_grad) x.n->grad[t * c + ch] += gx + gy * d.n->val[ch];
                    if (d.n->needs_grad) d.n->grad[ch] += gy * xt;
                }
            }
        };
    return out;
}

}  // namespace ad

}  // namespace pmnet

#endif  // PMNET_SCAN_HPP
