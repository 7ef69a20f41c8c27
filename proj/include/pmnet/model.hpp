#ifndef PMNET_MODEL_HPP
#define PMNET_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "pmnet/config.hpp"
#include "pmnet/csm.hpp"
#include "pmnet/encoder.hpp"
#include "pmnet/mte.hpp"
#include "pmnet/prototypes.hpp"

namespace pmnet {

// Full per-window forward pass:
//   frames -> F, F_r  (encoders)
//   F -> clips -> MTE (swaps + masking) -> f'_k
//   F', F_r -> overlap pooling -> CSM blocks -> memory F_ssm
//   memory -> effectiveness logits
//   f'_k + memory -> retrieval -> f''_k -> per-frame phase logits
template <class T>
struct WindowOutput {
    ad::Var<T> phase_logits;                // [N_padded, 5]
    ad::Var<T> eff_logits;                  // [1, 2] {ineffective, effective}
    std::vector<ad::Var<T>> clip_pooled;    // per clip [1, c], mean of f''_k
    std::vector<std::uint8_t> pad_flags;    // N_padded, 1 = padding frame
    int n_real = 0;                         // frames before padding
};

template <class T>
class Model {
public:
    explicit Model(const RunConfig& cfg) : cfg_(cfg), bank_(cfg.channels, cfg.alpha) {
        cfg_.validate();
        Rng rng(mix_seed(cfg.seed, 0x70617261));  // parameter-init stream
        register_frame_encoder(params_, rng, cfg.channels, "fe");
        if (!cfg.share_region_encoder) register_region_encoder(params_, rng, cfg.channels, "re");
        register_mte_params(params_, rng, cfg.channels, cfg.d_tokens);
        register_csm_params(params_, rng, csm_config());
        auto& w1 = params_.add("ph.w1", cfg.channels, 2 * cfg.channels);
        init::linear_weight(w1.value, rng, cfg.channels);
        params_.add("ph.b1", 1, 2 * cfg.channels);
        auto& w2 = params_.add("ph.w2", 2 * cfg.channels, kNumPhases);
        init::linear_weight(w2.value, rng, 2 * cfg.channels);
        params_.add("ph.b2", 1, kNumPhases);
    }

    const RunConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    PrototypeBank& bank() { return bank_; }
    const PrototypeBank& bank() const { return bank_; }

    MteConfig mte_config() const {
        return MteConfig{cfg_.clip_w, cfg_.d_tokens, cfg_.n_swaps, cfg_.heads, cfg_.masking};
    }
    CsmConfig csm_config() const {
        return CsmConfig{cfg_.channels, cfg_.state_dim, cfg_.n_blocks, cfg_.region_in_all_blocks,
                         cfg_.ssm_identity};
    }

    // Region features, honoring the shared-backbone option.
    ad::Var<T> encode_region_features(ParamBinder<T>& pb, const std::vector<FrameView>& frames,
                                      const std::vector<Box>& boxes) const {
        if (!cfg_.share_region_encoder) return encode_region(pb, frames, boxes, "re");
        if (frames.size() != boxes.size() || frames.empty())
            throw InputError("encode_region: boxes/frames mismatch");
        auto& tp = pb.tape();
        std::vector<ad::Var<T>> rows;
        rows.reserve(frames.size());
        for (std::size_t i = 0; i < frames.size(); ++i) {
            auto x = enc_detail::region_leaf(tp, frames[i], boxes[i]);
            rows.push_back(enc_detail::conv_stack(pb, x, kRegionPatch, kRegionPatch, 4, "fe"));
        }
        return ad::concat_rows(tp, rows);
    }

    WindowOutput<T> forward_window(ParamBinder<T>& pb, std::vector<FrameView> frames,
                                   std::vector<Box> boxes) const {
        if (frames.size() != boxes.size() || frames.empty())
            throw InputError("forward_window: boxes/frames mismatch");
        const int n_real = static_cast<int>(frames.size());
        std::vector<std::uint8_t> pad(frames.size(), 0);
        while (static_cast<int>(frames.size()) % cfg_.clip_w != 0) {
            frames.push_back(frames.back());
            boxes.push_back(boxes.back());
            pad.push_back(1);
        }
        auto f = encode_frames(pb, frames, "fe");
        auto fr = encode_region_features(pb, frames, boxes);
        return forward_from_features(pb, f, fr, pad, n_real);
    }

    // Shared tail, also used by the streaming runner on cached feature rows.
    WindowOutput<T> forward_from_features(ParamBinder<T>& pb, ad::Var<T> f, ad::Var<T> f_r,
                                          const std::vector<std::uint8_t>& pad_flags,
                                          int n_real) const {
        auto& tp = pb.tape();
        if (f.rows() != f_r.rows() || f.rows() != static_cast<int>(pad_flags.size()))
            throw InputError("forward_from_features: shape mismatch");
        auto clips = mte_forward(pb, f, pad_flags, bank_, mte_config());
        std::vector<ad::Var<T>> fprime_rows;
        fprime_rows.reserve(clips.size());
        for (auto& c : clips) fprime_rows.push_back(c.features);
        auto fprime = ad::concat_rows(tp, fprime_rows);

        auto fc = overlap_pool(tp, fprime, cfg_.clip_w);
        auto frp = overlap_pool(tp, f_r, cfg_.clip_w);
        auto memory = csm_forward(pb, fc, frp, csm_config());

        WindowOutput<T> out;
        out.eff_logits = effectiveness_head(pb, memory);
        std::vector<ad::Var<T>> f2_rows;
        f2_rows.reserve(clips.size());
        for (auto& c : clips) {
            auto f2 = retrieve(tp, c.features, memory);
            f2_rows.push_back(f2);
            out.clip_pooled.push_back(ad::mean_rows(tp, f2));
        }
        auto f2all = ad::concat_rows(tp, f2_rows);
        auto h = ad::silu(tp, ad::linear(tp, f2all, pb("ph.w1"), pb("ph.b1")));
        out.phase_logits = ad::linear(tp, h, pb("ph.w2"), pb("ph.b2"));
        out.pad_flags = pad_flags;
        out.n_real = n_real;
        return out;
    }

private:
    RunConfig cfg_;
    ParamStore<T> params_;
    PrototypeBank bank_;
};

}  // namespace pmnet

#endif  // PMNET_MODEL_HPP
