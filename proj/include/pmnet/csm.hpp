#ifndef PMNET_CSM_HPP
#define PMNET_CSM_HPP

#include <cmath>
#include <string>
#include <vector>

#include "pmnet/autodiff.hpp"
#include "pmnet/params.hpp"
#include "pmnet/scan.hpp"

namespace pmnet {

// Compressed Sequence Modeling: overlapping temporal pooling, gated SSM
// blocks with a region branch, cosine-attention retrieval, and the
// blocking-effectiveness head.

// Mean pooling with window 2w and stride w, edges truncated. M = N/w - 1 for
// N a multiple of w; sequences shorter than one full window pool to one row.
template <class T>
ad::Var<T> overlap_pool(ad::Tape<T>& tp, ad::Var<T> x, int w) {
    const int n = x.rows();
    if (n < 2) throw InputError("overlap_pool: need at least 2 rows");
    const int win = std::min(2 * w, n);
    std::vector<ad::Var<T>> rows;
    for (int start = 0; start + win <= n; start += w)
        rows.push_back(ad::mean_rows(tp, ad::slice_rows(tp, x, start, win)));
    return ad::concat_rows(tp, rows);
}

struct CsmConfig {
    int channels = 96;
    int state_dim = 16;
    int n_blocks = 2;
    bool region_in_all_blocks = true;
    bool ssm_identity = false;  // ablation: S(x) = x
};

template <class T>
void register_scan_params(ParamStore<T>& store, Rng& rng, int c, int s,
                          const std::string& prefix) {
    auto& alog = store.add(prefix + ".a_log", c, s);
    for (int ch = 0; ch < c; ++ch)
        for (int k = 0; k < s; ++k) alog.value[ch * s + k] = static_cast<T>(std::log(1.0 + k));
    auto& wd = store.add(prefix + ".w_delta", c, c);
    init::linear_weight(wd.value, rng, c);
    store.add(prefix + ".b_delta", 1, c);
    auto& wb = store.add(prefix + ".w_b", c, s);
    init::linear_weight(wb.value, rng, c);
    // Zero-init the output projection so the scan starts as an exact
    // pass-through (y = D*x with D = 1) and the state path is learned;
    // a random C makes the block inject noise at init and slows training.
    store.add(prefix + ".w_c", c, s);
    auto& d = store.add(prefix + ".d_skip", 1, c);
    init::constant(d.value, 1.0);
}

template <class T>
void register_csm_params(ParamStore<T>& store, Rng& rng, const CsmConfig& cfg) {
    const int c = cfg.channels;
    for (int b = 0; b < cfg.n_blocks; ++b) {
        const std::string p = "csm" + std::to_string(b);
        for (const char* n : {"lng", "lna", "lnb", "out"}) {
            auto& w = store.add(p + "." + n + ".w", c, c);
            init::linear_weight(w.value, rng, c);
            store.add(p + "." + n + ".b", 1, c);
        }
        register_scan_params(store, rng, c, cfg.state_dim, p + ".sa");
        register_scan_params(store, rng, c, cfg.state_dim, p + ".sb");
    }
    // effectiveness head
    auto& w1 = store.add("eff.w1", c, 2 * c);
    init::linear_weight(w1.value, rng, c);
    store.add("eff.b1", 1, 2 * c);
    auto& w2 = store.add("eff.w2", 2 * c, 2);
    init::linear_weight(w2.value, rng, 2 * c);
    store.add("eff.b2", 1, 2);
}

namespace csm_detail {

// Input-dependent selective scan on the tape: delta = softplus(x W + b),
// B = x W_B, C = x W_C, A = -exp(A_log).
template <class T>
ad::Var<T> scan_branch(ParamBinder<T>& pb, ad::Var<T> x, const std::string& prefix,
                       bool identity) {
    if (identity) return x;
    auto& tp = pb.tape();
    auto delta = ad::softplus(tp, ad::linear(tp, x, pb(prefix + ".w_delta"), pb(prefix + ".b_delta")));
    auto bm = ad::matmul(tp, x, pb(prefix + ".w_b"));
    auto cm = ad::matmul(tp, x, pb(prefix + ".w_c"));
    auto a = ad::neg(tp, ad::exp_ew(tp, pb(prefix + ".a_log")));
    return ad::scan_op(tp, x, delta, bm, cm, a, pb(prefix + ".d_skip"));
}

}  // namespace csm_detail

// One CSM block:  out = proj(SiLU(Ln_g(Fc)) * (S(Ln_a(Fc)) + S(Ln_b(Fr)))) + Fc.
// Pass an invalid region Var to drop the region branch.
template <class T>
ad::Var<T> csm_block(ParamBinder<T>& pb, ad::Var<T> f_c, ad::Var<T> f_r_pooled,
                     const std::string& prefix, bool ssm_identity) {
    auto& tp = pb.tape();
    if (f_r_pooled.valid() &&
        (f_r_pooled.rows() != f_c.rows() || f_r_pooled.cols() != f_c.cols()))
        throw InputError("csm_block: region/feature shape mismatch");
    auto gate = ad::silu(tp, ad::linear(tp, f_c, pb(prefix + ".lng.w"), pb(prefix + ".lng.b")));
    auto sa = csm_detail::scan_branch(
        pb, ad::linear(tp, f_c, pb(prefix + ".lna.w"), pb(prefix + ".lna.b")), prefix + ".sa",
        ssm_identity);
    ad::Var<T> mix = sa;
    if (f_r_pooled.valid()) {
        auto sb = csm_detail::scan_branch(
            pb, ad::linear(tp, f_r_pooled, pb(prefix + ".lnb.w"), pb(prefix + ".lnb.b")),
            prefix + ".sb", ssm_identity);
        mix = ad::add(tp, sa, sb);
    }
    auto gated = ad::mul(tp, gate, mix);
    auto out = ad::linear(tp, gated, pb(prefix + ".out.w"), pb(prefix + ".out.b"));
    return ad::add(tp, out, f_c);
}

// Stacked blocks producing the long-term memory F_ssm.
template <class T>
ad::Var<T> csm_forward(ParamBinder<T>& pb, ad::Var<T> f_c, ad::Var<T> f_r_pooled,
                       const CsmConfig& cfg) {
    ad::Var<T> x = f_c;
    for (int b = 0; b < cfg.n_blocks; ++b) {
        const bool with_region = b == 0 || cfg.region_in_all_blocks;
        x = csm_block(pb, x, with_region ? f_r_pooled : ad::Var<T>{}, "csm" + std::to_string(b),
                      cfg.ssm_identity);
    }
    return x;
}

// Contextual retrieval (cosine attention into memory, residual mandatory):
//   f'' = softmax(cos(f', F_ssm)) F_ssm + f'.
// Zero-norm query rows fall back to uniform attention via the norm clamp.
template <class T>
ad::Var<T> retrieve(ad::Tape<T>& tp, ad::Var<T> f_prime, ad::Var<T> memory) {
    if (!memory.valid() || memory.rows() < 1) throw InputError("retrieve: empty memory");
    auto qn = ad::normalize_rows(tp, f_prime);
    auto mn = ad::normalize_rows(tp, memory);
    auto attn = ad::softmax_rows(tp, ad::matmul_nt(tp, qn, mn));
    return ad::add(tp, ad::matmul(tp, attn, memory), f_prime);
}

// Blocking-effectiveness head: temporal mean of memory -> 2-layer MLP ->
// logits for {ineffective, effective}.
template <class T>
ad::Var<T> effectiveness_head(ParamBinder<T>& pb, ad::Var<T> memory) {
    auto& tp = pb.tape();
    if (memory.rows() < 1) throw InputError("effectiveness_head: empty memory");
    auto pooled = ad::mean_rows(tp, memory);
    auto h = ad::silu(tp, ad::linear(tp, pooled, pb("eff.w1"), pb("eff.b1")));
    return ad::linear(tp, h, pb("eff.w2"), pb("eff.b2"));
}

}  // namespace pmnet

#endif  // PMNET_CSM_HPP
