#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dpn/data.hpp"
#include "dpn/error.hpp"
#include "dpn/model.hpp"
#include "dpn/tensor.hpp"

namespace dpn {

inline std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

/// Smallest halo that makes tiled inference exact: the receptive-field
/// radius rounded up to the pyramid stride, so tile reads stay on the
/// downsampling grid.
template <typename T>
std::size_t required_halo(const DpnModel<T>& model) {
    return round_up(static_cast<std::size_t>(model.receptive_field().radius()), pyramid_stride);
}

/// Reflect-extends the bottom/right edges so both extents are multiples of 16.
template <typename T>
Tensor<T> pad_to_stride(const Tensor<T>& scene) {
    const auto& s = scene.shape();
    const std::size_t h = round_up(s.h(), pyramid_stride), w = round_up(s.w(), pyramid_stride);
    if (h == s.h() && w == s.w()) return scene;
    return reflect_window(scene, 0, 0, h, w);
}

/// Whole-image prediction. The scene is padded to the stride grid and given
/// a reflected border of `required_halo` pixels so that edge pixels see the
/// same context as under tiled inference; argmax ties go to surface.
template <typename T>
BinaryMask predict_mask(const DpnModel<T>& model, const Tensor<T>& image) {
    require_rank4(image.shape(), "predict_mask");
    if (image.shape().n() != 1) throw ShapeError("predict_mask: expects a single image, got " + image.shape().str());
    const auto padded = pad_to_stride(image);
    const auto halo = static_cast<long long>(required_halo(model));
    const std::size_t ph = padded.shape().h(), pw = padded.shape().w();
    const auto input = reflect_window(padded, -halo, -halo, ph + 2 * halo, pw + 2 * halo);
    const auto probs = crop(model.predict(input), halo, halo, image.shape().h(), image.shape().w());
    return argmax_mask(probs);
}

struct Rect {
    long long y = 0, x = 0;
    std::size_t h = 0, w = 0;
};

/// Tiling of a stride-padded scene into disjoint cores, each read with a
/// surrounding halo from the reflect-extended scene.
struct TilePlan {
    struct Tile {
        Rect core;
        Rect read;
    };
    std::size_t scene_h = 0, scene_w = 0;   // original extents
    std::size_t padded_h = 0, padded_w = 0; // multiples of 16
    std::size_t tile = 0;
    std::size_t halo = 0;
    std::vector<Tile> tiles;
};

inline TilePlan make_tile_plan(std::size_t scene_h, std::size_t scene_w, std::size_t tile, std::size_t halo) {
    if (tile == 0 || tile % pyramid_stride) throw ValueError("tile extent must be a positive multiple of 16");
    if (scene_h == 0 || scene_w == 0) throw ValueError("scene extents must be positive");
    TilePlan plan{scene_h, scene_w, round_up(scene_h, pyramid_stride), round_up(scene_w, pyramid_stride), tile, halo, {}};
    const auto H = static_cast<long long>(halo);
    for (std::size_t y = 0; y < plan.padded_h; y += tile)
        for (std::size_t x = 0; x < plan.padded_w; x += tile) {
            Rect core{static_cast<long long>(y), static_cast<long long>(x), std::min(tile, plan.padded_h - y),
                      std::min(tile, plan.padded_w - x)};
            // Read extents are stretched at the far edge to stay divisible by 16.
            Rect read{core.y - H, core.x - H, round_up(core.h + 2 * halo, pyramid_stride),
                      round_up(core.w + 2 * halo, pyramid_stride)};
            plan.tiles.push_back({core, read});
        }
    return plan;
}

/// Tiled prediction; with `check_halo` the plan's halo must be a multiple of
/// 16 no smaller than required_halo(model), which guarantees agreement with
/// predict_mask on every pixel.
template <typename T>
BinaryMask predict_tiled(const DpnModel<T>& model, const Tensor<T>& scene, const TilePlan& plan,
                         bool check_halo = true) {
    require_rank4(scene.shape(), "predict_tiled");
    if (scene.shape().h() != plan.scene_h || scene.shape().w() != plan.scene_w)
        throw ShapeError("predict_tiled: plan was made for " + std::to_string(plan.scene_h) + "x" +
                         std::to_string(plan.scene_w) + " but scene is " + scene.shape().str());
    if (check_halo) {
        const std::size_t need = required_halo(model);
        if (plan.halo < need || plan.halo % pyramid_stride)
            throw ValueError("predict_tiled: halo " + std::to_string(plan.halo) +
                             " is too small or off-grid; the model needs a halo of at least " + std::to_string(need) +
                             " pixels (receptive-field radius " + std::to_string(model.receptive_field().radius()) +
                             ", rounded up to a multiple of 16)");
    }
    const auto padded = pad_to_stride(scene);
    BinaryMask full(plan.padded_h, plan.padded_w);
    for (const auto& t : plan.tiles) {
        const auto input = reflect_window(padded, t.read.y, t.read.x, t.read.h, t.read.w);
        const auto probs = model.predict(input);
        const auto core = argmax_mask(
            crop(probs, static_cast<std::size_t>(t.core.y - t.read.y), static_cast<std::size_t>(t.core.x - t.read.x),
                 t.core.h, t.core.w));
        for (std::size_t y = 0; y < t.core.h; ++y)
            std::copy_n(&core.cloud[y * t.core.w], t.core.w,
                        &full.cloud[(static_cast<std::size_t>(t.core.y) + y) * full.width + static_cast<std::size_t>(t.core.x)]);
    }
    if (plan.padded_h == plan.scene_h && plan.padded_w == plan.scene_w) return full;
    BinaryMask out(plan.scene_h, plan.scene_w);
    for (std::size_t y = 0; y < out.height; ++y) std::copy_n(&full.cloud[y * full.width], out.width, &out.cloud[y * out.width]);
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Pixel tallies with cloud as the positive class.
struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::uint64_t total() const { return tp + fp + tn + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
        return *this;
    }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw ShapeError("confusion: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                         " vs ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.cloud[i] != 0, g = gt.cloud[i] != 0;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

inline double accuracy(const ConfusionCounts& c) {
    if (c.total() == 0) throw ValueError("accuracy: no pixels evaluated");
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

/// Empty when no pixel was predicted cloud (precision undefined).
inline std::optional<double> precision(const ConfusionCounts& c) {
    if (c.total() == 0) throw ValueError("precision: no pixels evaluated");
    if (c.tp + c.fp == 0) return std::nullopt;
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

struct LatencyStats {
    std::vector<double> seconds;
    double median = 0, min = 0, max = 0;
    BinaryMask mask; // result of the last repetition
};

/// Times end-to-end tiled inference on an in-memory scene (no disk I/O).
template <typename T>
LatencyStats measure_latency(const DpnModel<T>& model, const Tensor<T>& scene, std::size_t tile, std::size_t halo,
                             std::size_t repetitions) {
    if (repetitions < 3) throw ValueError("measure_latency: need at least 3 repetitions");
    const auto plan = make_tile_plan(scene.shape().h(), scene.shape().w(), tile, halo);
    LatencyStats st;
    for (std::size_t r = 0; r < repetitions; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        st.mask = predict_tiled(model, scene, plan);
        st.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    auto sorted = st.seconds;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    st.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    st.min = sorted.front();
    st.max = sorted.back();
    return st;
}

} // namespace dpn
