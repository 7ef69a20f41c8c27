#ifndef PMNET_MTE_HPP
#define PMNET_MTE_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "pmnet/autodiff.hpp"
#include "pmnet/params.hpp"
#include "pmnet/prototypes.hpp"

namespace pmnet {

// Masked Temporal Encoding: intra-clip self-attention over clip features plus
// message tokens, inter-clip token swapping, and prototype-driven masking of
// blocking-irrelevant tokens.

template <class T>
struct ClipState {
    ad::Var<T> features;                   // [w, c]
    ad::Var<T> tokens;                     // [d, c]
    std::vector<std::uint8_t> token_mask;  // d entries, 1 = active
    std::vector<std::uint8_t> pad_flags;   // w entries, 1 = padding frame
    int clip_index = 0;
};

struct SwapSchedule {
    std::vector<int> steps;  // step i carries offset i (1-based)
    int n_clips = 0;
};

// Paper-default helper: ceil((sqrt(8N-7)-1)/2) swaps for an N-frame window.
inline int swap_count_for_window(int n_frames) {
    return static_cast<int>(std::ceil((std::sqrt(8.0 * n_frames - 7.0) - 1.0) / 2.0));
}

inline SwapSchedule build_swap_schedule(int n_clips, int n_swaps) {
    if (n_clips < 1 || n_swaps < 0) throw InputError("build_swap_schedule: bad arguments");
    SwapSchedule s;
    s.n_clips = n_clips;
    for (int i = 1; i <= n_swaps; ++i) s.steps.push_back(i);
    return s;
}

// Permutation for one swap step: pair clip k with clip (k - offset) mod n,
// greedy left-to-right over clips not yet paired. Always an involution.
inline std::vector<int> swap_step_permutation(int n_clips, int offset) {
    std::vector<int> perm(n_clips);
    for (int k = 0; k < n_clips; ++k) perm[k] = k;
    std::vector<std::uint8_t> used(n_clips, 0);
    for (int k = 0; k < n_clips; ++k) {
        if (used[k]) continue;
        const int j = ((k - offset) % n_clips + n_clips) % n_clips;
        if (j == k || used[j]) continue;
        perm[k] = j;
        perm[j] = k;
        used[k] = used[j] = 1;
    }
    return perm;
}

template <class T>
void apply_swap(std::vector<ClipState<T>>& clips, const SwapSchedule& schedule, int step_index) {
    if (schedule.n_clips != static_cast<int>(clips.size()))
        throw InputError("apply_swap: schedule/clip-count mismatch");
    const auto perm = swap_step_permutation(schedule.n_clips, schedule.steps[step_index]);
    for (int k = 0; k < schedule.n_clips; ++k) {
        const int j = perm[k];
        if (j > k) {
            std::swap(clips[k].tokens, clips[j].tokens);
            std::swap(clips[k].token_mask, clips[j].token_mask);
        }
    }
}

template <class T>
void register_mte_params(ParamStore<T>& store, Rng& rng, int c, int d_tokens) {
    auto& tok = store.add("mte.tokens", std::max(d_tokens, 1), c);
    init::normal(tok.value, rng, 0.02);
    for (const char* n : {"wq", "wk", "wv", "wo"}) {
        auto& w = store.add(std::string("mte.") + n + ".w", c, c);
        init::linear_weight(w.value, rng, c);
        store.add(std::string("mte.") + n + ".b", 1, c);
    }
    auto& g1 = store.add("mte.ln1.g", 1, c);
    init::constant(g1.value, 1.0);
    store.add("mte.ln1.b", 1, c);
    auto& g2 = store.add("mte.ln2.g", 1, c);
    init::constant(g2.value, 1.0);
    store.add("mte.ln2.b", 1, c);
    auto& f1 = store.add("mte.ffn.w1", c, 4 * c);
    init::linear_weight(f1.value, rng, c);
    store.add("mte.ffn.b1", 1, 4 * c);
    auto& f2 = store.add("mte.ffn.w2", 4 * c, c);
    init::linear_weight(f2.value, rng, 4 * c);
    store.add("mte.ffn.b2", 1, c);
}

// Split an N x c feature sequence (N divisible by w) into clips, each with a
// fresh copy of the learned message-token parameter.
template <class T>
std::vector<ClipState<T>> partition_clips(ParamBinder<T>& pb, ad::Var<T> features, int w,
                                          int d_tokens,
                                          const std::vector<std::uint8_t>& pad_flags) {
    const int n = features.rows();
    if (w < 1 || w > n) throw ConfigError("partition_clips: clip width exceeds window");
    if (n % w != 0) throw InputError("partition_clips: N must be a multiple of w (pad first)");
    auto& tp = pb.tape();
    std::vector<ClipState<T>> clips;
    const int n_clips = n / w;
    for (int k = 0; k < n_clips; ++k) {
        ClipState<T> cs;
        cs.clip_index = k;
        cs.features = ad::slice_rows(tp, features, k * w, w);
        if (d_tokens > 0)
            cs.tokens = ad::copy(tp, pb("mte.tokens"));
        cs.token_mask.assign(static_cast<std::size_t>(d_tokens), 1);
        cs.pad_flags.assign(pad_flags.begin() + static_cast<std::ptrdiff_t>(k) * w,
                            pad_flags.begin() + static_cast<std::ptrdiff_t>(k + 1) * w);
        clips.push_back(cs);
    }
    return clips;
}

// One intra-clip attention pass. Masked tokens are excluded as keys/values
// (attention weight exactly 0) but keep attending as queries.
template <class T>
ClipState<T> attend_clip(ParamBinder<T>& pb, const ClipState<T>& clip, int heads) {
    auto& tp = pb.tape();
    const int w = clip.features.rows();
    const int d = clip.tokens.valid() ? clip.tokens.rows() : 0;
    const int c = clip.features.cols();
    if (c % heads != 0) throw ConfigError("attend_clip: channels must divide heads");
    const int dh = c / heads;

    ad::Var<T> x = d > 0
                       ? ad::concat_rows(tp, std::vector<ad::Var<T>>{clip.features, clip.tokens})
                       : clip.features;
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(w + d), 1);
    for (int j = 0; j < d; ++j) keep[w + j] = clip.token_mask[j];

    auto q = ad::linear(tp, x, pb("mte.wq.w"), pb("mte.wq.b"));
    auto k = ad::linear(tp, x, pb("mte.wk.w"), pb("mte.wk.b"));
    auto v = ad::linear(tp, x, pb("mte.wv.w"), pb("mte.wv.b"));

    std::vector<ad::Var<T>> head_outs;
    for (int h = 0; h < heads; ++h) {
        auto qh = ad::slice_cols(tp, q, h * dh, dh);
        auto kh = ad::slice_cols(tp, k, h * dh, dh);
        auto vh = ad::slice_cols(tp, v, h * dh, dh);
        auto scores = ad::scale(tp, ad::matmul_nt(tp, qh, kh),
                                static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
        auto attn = ad::softmax_rows(tp, scores, &keep);
        head_outs.push_back(ad::matmul(tp, attn, vh));
    }
    auto mha = ad::linear(tp, ad::concat_cols(tp, head_outs), pb("mte.wo.w"), pb("mte.wo.b"));
    auto y = ad::layer_norm_rows(tp, ad::add(tp, x, mha), pb("mte.ln1.g"), pb("mte.ln1.b"));
    auto ffn = ad::linear(tp, ad::silu(tp, ad::linear(tp, y, pb("mte.ffn.w1"), pb("mte.ffn.b1"))),
                          pb("mte.ffn.w2"), pb("mte.ffn.b2"));
    auto z = ad::layer_norm_rows(tp, ad::add(tp, y, ffn), pb("mte.ln2.g"), pb("mte.ln2.b"));

    ClipState<T> out = clip;
    out.features = ad::slice_rows(tp, z, 0, w);
    if (d > 0) out.tokens = ad::slice_rows(tp, z, w, d);
    return out;
}

// Operation relevance of a pooled clip feature against the prototype bank
// (cosine per prototype).
template <class T>
std::array<double, kNumPhases> compute_relevance(const std::vector<T>& pooled,
                                                 const PrototypeBank& bank) {
    return bank.relevance(pooled);
}

// Mask the message tokens of clips whose most-relevant prototype is not a
// blocking-relevant phase. No-op during cold start (any prototype
// uninitialized). Feature tensors are never modified.
template <class T>
void mask_tokens(std::vector<ClipState<T>>& clips, const PrototypeBank& bank) {
    if (!bank.all_initialized()) return;
    for (auto& clip : clips) {
        const int w = clip.features.rows(), c = clip.features.cols();
        std::vector<double> pooled(c, 0.0);
        for (int i = 0; i < w; ++i)
            for (int j = 0; j < c; ++j) pooled[j] += static_cast<double>(clip.features.val()[i * c + j]);
        for (double& v : pooled) v /= w;
        const auto r = bank.relevance(pooled);
        int best = 0;
        for (int j = 1; j < kNumPhases; ++j)
            if (r[j] > r[best]) best = j;
        if (!blocking_relevant(static_cast<Phase>(best)))
            std::fill(clip.token_mask.begin(), clip.token_mask.end(), 0);
    }
}

struct MteConfig {
    int clip_w = 4;
    int d_tokens = 2;
    int n_swaps = 4;
    int heads = 4;
    bool masking = true;
};

// Full MTE pass: n_swaps rounds of (attend, swap), then masking, then one
// final attention pass. Output clip features are f'_k.
template <class T>
std::vector<ClipState<T>> mte_forward(ParamBinder<T>& pb, ad::Var<T> features,
                                      const std::vector<std::uint8_t>& pad_flags,
                                      const PrototypeBank& bank, const MteConfig& cfg) {
    auto clips = partition_clips(pb, features, cfg.clip_w, cfg.d_tokens, pad_flags);
    const auto schedule = build_swap_schedule(static_cast<int>(clips.size()), cfg.n_swaps);
    for (int i = 0; i < cfg.n_swaps; ++i) {
        for (auto& clip : clips) clip = attend_clip(pb, clip, cfg.heads);
        apply_swap(clips, schedule, i);
    }
    if (cfg.masking) mask_tokens(clips, bank);
    for (auto& clip : clips) clip = attend_clip(pb, clip, cfg.heads);
    return clips;
}

}  // namespace pmnet

#endif  // PMNET_MTE_HPP
