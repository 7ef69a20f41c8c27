#ifndef PMNET_ENCODER_HPP
#define PMNET_ENCODER_HPP

#include <cmath>
#include <vector>

#include "pmnet/autodiff.hpp"
#include "pmnet/params.hpp"
#include "pmnet/synthgen.hpp"

namespace pmnet {

// Raw frame view: interleaved HWC float data in [0,1].
struct FrameView {
    const float* data = nullptr;
    int h = 0, w = 0;
};

inline constexpr int kRegionPatch = 32;

// Frame encoder: 4 conv stages (stride 2 each) + global average + FC to c.
// Region encoder: bilinear 32x32 crop + 2 conv stages + global average + FC.
inline constexpr int kFrameEncChannels[4] = {8, 16, 32, 64};
inline constexpr int kRegionEncChannels[2] = {16, 32};

template <class T>
void register_frame_encoder(ParamStore<T>& store, Rng& rng, int c, const std::string& prefix) {
    int cin = 3;
    for (int s = 0; s < 4; ++s) {
        const int cout = kFrameEncChannels[s];
        auto& w = store.add(prefix + ".conv" + std::to_string(s) + ".w", cout, cin * 9);
        init::linear_weight(w.value, rng, cin * 9);
        store.add(prefix + ".conv" + std::to_string(s) + ".b", 1, cout);
        cin = cout;
    }
    auto& fw = store.add(prefix + ".fc.w", cin, c);
    init::linear_weight(fw.value, rng, cin);
    store.add(prefix + ".fc.b", 1, c);
}

template <class T>
void register_region_encoder(ParamStore<T>& store, Rng& rng, int c, const std::string& prefix) {
    int cin = 3;
    for (int s = 0; s < 2; ++s) {
        const int cout = kRegionEncChannels[s];
        auto& w = store.add(prefix + ".conv" + std::to_string(s) + ".w", cout, cin * 9);
        init::linear_weight(w.value, rng, cin * 9);
        store.add(prefix + ".conv" + std::to_string(s) + ".b", 1, cout);
        cin = cout;
    }
    auto& fw = store.add(prefix + ".fc.w", cin, c);
    init::linear_weight(fw.value, rng, cin);
    store.add(prefix + ".fc.b", 1, c);
}

namespace enc_detail {

// HWC -> channel-major [3, H*W], as a constant leaf.
template <class T>
ad::Var<T> image_leaf(ad::Tape<T>& tp, const FrameView& f) {
    std::vector<T> chw(static_cast<std::size_t>(3) * f.h * f.w);
    const std::size_t plane = static_cast<std::size_t>(f.h) * f.w;
    for (std::size_t i = 0; i < plane; ++i)
        for (int ch = 0; ch < 3; ++ch) chw[ch * plane + i] = static_cast<T>(f.data[i * 3 + ch]);
    return tp.constant(3, static_cast<int>(plane), chw.data());
}

// Bilinear crop of `box` resized to kRegionPatch^2, channel-major.
template <class T>
ad::Var<T> region_leaf(ad::Tape<T>& tp, const FrameView& f, const Box& box) {
    if (box.w < 2 || box.h < 2)
        throw InputError("encode_region: degenerate box (w or h < 2 px)");
    if (box.x < 0 || box.y < 0 || box.x + box.w > f.w || box.y + box.h > f.h)
        throw InputError("encode_region: box outside frame");
    constexpr int P = kRegionPatch;
    std::vector<T> chw(static_cast<std::size_t>(3) * P * P);
    for (int oy = 0; oy < P; ++oy)
        for (int ox = 0; ox < P; ++ox) {
            const double sy = box.y + (oy + 0.5) * box.h / P - 0.5;
            const double sx = box.x + (ox + 0.5) * box.w / P - 0.5;
            const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, f.h - 1);
            const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, f.w - 1);
            const int y1 = std::min(y0 + 1, f.h - 1);
            const int x1 = std::min(x0 + 1, f.w - 1);
            const double fy = std::clamp(sy - y0, 0.0, 1.0);
            const double fx = std::clamp(sx - x0, 0.0, 1.0);
            for (int ch = 0; ch < 3; ++ch) {
                const auto px = [&](int y, int x) {
                    return static_cast<double>(f.data[(static_cast<std::size_t>(y) * f.w + x) * 3 + ch]);
                };
                const double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) +
                                 fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
                chw[static_cast<std::size_t>(ch) * P * P + oy * P + ox] = static_cast<T>(v);
            }
        }
    return tp.constant(3, P * P, chw.data());
}

template <class T>
ad::Var<T> conv_stack(ParamBinder<T>& pb, ad::Var<T> x, int h, int w, int stages,
                      const std::string& prefix) {
    auto& tp = pb.tape();
    for (int s = 0; s < stages; ++s) {
        x = ad::conv3x3_s2(tp, x, h, w, pb(prefix + ".conv" + std::to_string(s) + ".w"),
                           pb(prefix + ".conv" + std::to_string(s) + ".b"));
        h = (h + 1) / 2;
        w = (w + 1) / 2;
        x = ad::silu(tp, x);
    }
    auto pooled = ad::global_avg(tp, x);
    return ad::linear(tp, pooled, pb(prefix + ".fc.w"), pb(prefix + ".fc.b"));
}

}  // namespace enc_detail

// Frames -> feature sequence F in R^{N x c}.
template <class T>
ad::Var<T> encode_frames(ParamBinder<T>& pb, const std::vector<FrameView>& frames,
                         const std::string& prefix = "fe") {
    if (frames.empty()) throw InputError("encode_frames: empty input");
    for (const auto& f : frames)
        if (f.h != frames[0].h || f.w != frames[0].w)
            throw InputError("encode_frames: frame shape mismatch");
    auto& tp = pb.tape();
    std::vector<ad::Var<T>> rows;
    rows.reserve(frames.size());
    for (const auto& f : frames) {
        auto x = enc_detail::image_leaf(tp, f);
        rows.push_back(enc_detail::conv_stack(pb, x, f.h, f.w, 4, prefix));
    }
    return ad::concat_rows(tp, rows);
}

// Frames + per-frame boxes -> region feature sequence F_r in R^{N x c}.
template <class T>
ad::Var<T> encode_region(ParamBinder<T>& pb, const std::vector<FrameView>& frames,
                         const std::vector<Box>& boxes, const std::string& prefix = "re") {
    if (frames.size() != boxes.size()) throw InputError("encode_region: boxes/frames mismatch");
    if (frames.empty()) throw InputError("encode_region: empty input");
    auto& tp = pb.tape();
    std::vector<ad::Var<T>> rows;
    rows.reserve(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        auto x = enc_detail::region_leaf(tp, frames[i], boxes[i]);
        rows.push_back(enc_detail::conv_stack(pb, x, kRegionPatch, kRegionPatch, 2, prefix));
    }
    return ad::concat_rows(tp, rows);
}

}  // namespace pmnet

#endif  // PMNET_ENCODER_HPP
