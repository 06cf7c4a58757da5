#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dpn/error.hpp"
#include "dpn/image_io.hpp"
#include "dpn/model.hpp"
#include "dpn/rng.hpp"
#include "dpn/tensor.hpp"

namespace dpn {

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-channel mean subtraction in stored (R, G, B) order, then scaling.
struct NormalizationSpec {
    std::array<double, 3> mean{123.68, 116.779, 103.939};
    double scale = 1.0;
};

template <typename T>
Tensor<T> normalize(const Tensor<T>& img, const NormalizationSpec& spec) {
    require_rank4(img.shape(), "normalize");
    if (img.shape().c() != 3) throw ShapeError("normalize: expected 3 channels, got " + img.shape().str());
    Tensor<T> out(img.shape());
    const std::size_t plane = img.shape().h() * img.shape().w();
    for (std::size_t n = 0; n < img.shape().n(); ++n)
        for (std::size_t c = 0; c < 3; ++c) {
            const std::size_t o = img.offset(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i)
                out[o + i] = static_cast<T>((static_cast<double>(img[o + i]) - spec.mean[c]) * spec.scale);
        }
    return out;
}

template <typename T>
Tensor<T> denormalize(const Tensor<T>& img, const NormalizationSpec& spec) {
    require_rank4(img.shape(), "denormalize");
    Tensor<T> out(img.shape());
    const std::size_t plane = img.shape().h() * img.shape().w();
    for (std::size_t n = 0; n < img.shape().n(); ++n)
        for (std::size_t c = 0; c < 3; ++c) {
            const std::size_t o = img.offset(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i)
                out[o + i] = static_cast<T>(static_cast<double>(img[o + i]) / spec.scale + spec.mean[c]);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

/// Per-pixel class decision, 1 = cloud, 0 = surface, row-major.
struct BinaryMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> cloud;

    BinaryMask() = default;
    BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), cloud(h * w, 0) {}

    std::uint8_t& at(std::size_t y, std::size_t x) { return cloud[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return cloud[y * width + x]; }
    std::size_t size() const { return cloud.size(); }
    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

inline constexpr std::uint8_t mask_cloud_value = 255;

/// {0, 255} grayscale mask image (1, 1, H, W) -> one-hot (1, 2, H, W);
/// channel 0 = surface, channel 1 = cloud. Other gray levels are rejected.
template <typename T>
Tensor<T> encode_mask(const Tensor<T>& mask_img) {
    require_rank4(mask_img.shape(), "encode_mask");
    const auto& s = mask_img.shape();
    if (s.c() != 1) throw ShapeError("encode_mask: expected a single-channel mask, got " + s.str());
    Tensor<T> out = Tensor<T>::nchw(s.n(), 2, s.h(), s.w());
    const std::size_t plane = s.h() * s.w();
    for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t i = 0; i < plane; ++i) {
            const T v = mask_img[n * plane + i];
            if (v != T(0) && v != T(mask_cloud_value))
                throw ValueError("encode_mask: pixel " + std::to_string(i) + " has value " +
                                 std::to_string(static_cast<double>(v)) + "; masks must contain only 0 and 255");
            const bool cloud = v == T(mask_cloud_value);
            out[out.offset(n, 0, 0, 0) + i] = cloud ? T(0) : T(1);
            out[out.offset(n, 1, 0, 0) + i] = cloud ? T(1) : T(0);
        }
    return out;
}

/// Argmax over two channels of item `n`; cloud only if strictly greater.
template <typename T>
BinaryMask argmax_mask(const Tensor<T>& p, std::size_t n = 0) {
    require_rank4(p.shape(), "argmax_mask");
    if (p.shape().c() != num_classes) throw ShapeError("argmax_mask: expected 2 channels, got " + p.shape().str());
    BinaryMask m(p.shape().h(), p.shape().w());
    const T* surface = &p.at(n, 0, 0, 0);
    const T* cloud = &p.at(n, 1, 0, 0);
    for (std::size_t i = 0; i < m.size(); ++i) m.cloud[i] = cloud[i] > surface[i] ? 1 : 0;
    return m;
}

inline Image8 mask_to_image(const BinaryMask& m) {
    Image8 im{m.width, m.height, 1, std::vector<std::uint8_t>(m.size())};
    for (std::size_t i = 0; i < m.size(); ++i) im.pixels[i] = m.cloud[i] ? mask_cloud_value : 0;
    return im;
}

inline BinaryMask mask_from_image(const Image8& im, const std::string& source = "mask") {
    if (im.channels != 1) throw IoError(source + ": mask must be single-channel grayscale");
    BinaryMask m(im.height, im.width);
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (im.pixels[i] != 0 && im.pixels[i] != mask_cloud_value)
            throw ValueError(source + ": mask pixel value " + std::to_string(im.pixels[i]) +
                             " is neither 0 nor 255");
        m.cloud[i] = im.pixels[i] ? 1 : 0;
    }
    return m;
}

template <typename T>
Tensor<T> mask_tensor(const BinaryMask& m) {
    Tensor<T> t = Tensor<T>::nchw(1, 1, m.height, m.width);
    for (std::size_t i = 0; i < m.size(); ++i) t[i] = m.cloud[i] ? T(mask_cloud_value) : T(0);
    return t;
}

// ---------------------------------------------------------------------------
// Image I/O
// ---------------------------------------------------------------------------

/// 8-bit RGB PNG -> (1, 3, H, W) tensor with raw byte values.
inline Tensor<float> load_image(const std::filesystem::path& path) {
    const Image8 im = read_png(path);
    if (im.channels != 3) throw IoError(path.string() + ": expected a 3-channel RGB image, found grayscale");
    Tensor<float> t = Tensor<float>::nchw(1, 3, im.height, im.width);
    const std::size_t plane = im.width * im.height;
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c) t[c * plane + i] = im.pixels[3 * i + c];
    return t;
}

/// Grayscale PNG -> (1, 1, H, W) tensor with raw byte values.
inline Tensor<float> load_mask_image(const std::filesystem::path& path) {
    const Image8 im = read_png(path);
    if (im.channels != 1) throw IoError(path.string() + ": mask must be a single-channel grayscale PNG");
    Tensor<float> t = Tensor<float>::nchw(1, 1, im.height, im.width);
    for (std::size_t i = 0; i < im.pixels.size(); ++i) t[i] = im.pixels[i];
    return t;
}

template <typename T>
Image8 image_from_tensor(const Tensor<T>& t) {
    require_rank4(t.shape(), "image_from_tensor");
    const auto& s = t.shape();
    if (s.c() != 3 && s.c() != 1) throw ShapeError("image_from_tensor: expected 1 or 3 channels");
    Image8 im{s.w(), s.h(), s.c(), std::vector<std::uint8_t>(s.h() * s.w() * s.c())};
    const std::size_t plane = s.h() * s.w();
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < s.c(); ++c) {
            const double v = std::clamp(std::round(static_cast<double>(t[c * plane + i])), 0.0, 255.0);
            im.pixels[s.c() * i + c] = static_cast<std::uint8_t>(v);
        }
    return im;
}

inline void write_mask(const std::filesystem::path& path, const BinaryMask& m) { write_png(path, mask_to_image(m)); }

inline BinaryMask read_mask(const std::filesystem::path& path) { return mask_from_image(read_png(path), path.string()); }

// ---------------------------------------------------------------------------
// Datasets and batching
// ---------------------------------------------------------------------------

enum class Split { train, test };

/// `<root>/images/<stem>.png` paired with `<root>/masks/<stem>.png`.
struct DatasetIndex {
    struct Pair {
        std::string stem;
        std::filesystem::path image;
        std::filesystem::path mask;
    };
    std::filesystem::path root;
    std::vector<Pair> pairs;
    Split split = Split::train;
};

inline DatasetIndex index_dataset(const std::filesystem::path& root, Split split = Split::train) {
    namespace fs = std::filesystem;
    const fs::path images = root / "images", masks = root / "masks";
    if (!fs::is_directory(images) || !fs::is_directory(masks))
        throw IoError(root.string() + ": dataset root must contain images/ and masks/ directories");
    DatasetIndex idx{root, {}, split};
    for (const auto& e : fs::directory_iterator(images)) {
        if (!e.is_regular_file() || e.path().extension() != ".png") continue;
        const std::string stem = e.path().stem().string();
        const fs::path m = masks / (stem + ".png");
        if (!fs::is_regular_file(m)) throw IoError(e.path().string() + ": no matching mask " + m.string());
        idx.pairs.push_back({stem, e.path(), m});
    }
    for (const auto& e : fs::directory_iterator(masks)) {
        if (e.path().extension() != ".png") continue;
        if (!fs::is_regular_file(images / e.path().filename()))
            throw IoError(e.path().string() + ": mask has no matching image");
    }
    std::sort(idx.pairs.begin(), idx.pairs.end(), [](const auto& a, const auto& b) { return a.stem < b.stem; });
    return idx;
}

/// Normalized image (1, 3, H, W) and one-hot target (1, 2, H, W).
struct Scene {
    std::string stem;
    Tensor<float> image;
    Tensor<float> target;
};

inline Scene make_scene(std::string stem, const Tensor<float>& raw_image, const Tensor<float>& mask_img,
                        const NormalizationSpec& norm) {
    if (raw_image.shape().h() != mask_img.shape().h() || raw_image.shape().w() != mask_img.shape().w())
        throw ShapeError(stem + ": image extents " + raw_image.shape().str() + " differ from mask extents " +
                         mask_img.shape().str());
    return {std::move(stem), normalize(raw_image, norm), encode_mask(mask_img)};
}

inline std::vector<Scene> load_dataset(const DatasetIndex& idx, const NormalizationSpec& norm) {
    std::vector<Scene> out;
    for (const auto& p : idx.pairs) out.push_back(make_scene(p.stem, load_image(p.image), load_mask_image(p.mask), norm));
    return out;
}

struct CropOrigin {
    std::size_t scene = 0;
    std::size_t y = 0;
    std::size_t x = 0;
    friend bool operator==(const CropOrigin&, const CropOrigin&) = default;
};

struct SampleBatch {
    Tensor<float> images;  // (N, 3, h, w)
    Tensor<float> targets; // (N, 2, h, w)
    std::vector<CropOrigin> provenance;
};

/// Uniform random crops with replacement across scenes; no augmentation.
inline SampleBatch sample_batch(const std::vector<Scene>& scenes, std::size_t n, std::size_t patch_h,
                                std::size_t patch_w, Rng& rng) {
    if (scenes.empty()) throw ValueError("sample_batch: no scenes to sample from");
    if (n == 0) throw ValueError("sample_batch: batch size must be positive");
    if (patch_h % pyramid_stride || patch_w % pyramid_stride || patch_h == 0 || patch_w == 0)
        throw ValueError("sample_batch: patch extents must be positive multiples of 16");
    for (const auto& s : scenes)
        if (s.image.shape().h() < patch_h || s.image.shape().w() < patch_w)
            throw ValueError("sample_batch: patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                             " exceeds scene '" + s.stem + "' extents " + s.image.shape().str());
    SampleBatch b{Tensor<float>::nchw(n, 3, patch_h, patch_w), Tensor<float>::nchw(n, num_classes, patch_h, patch_w), {}};
    for (std::size_t i = 0; i < n; ++i) {
        CropOrigin o;
        o.scene = uniform_index(rng, scenes.size());
        const auto& s = scenes[o.scene];
        o.y = uniform_index(rng, s.image.shape().h() - patch_h + 1);
        o.x = uniform_index(rng, s.image.shape().w() - patch_w + 1);
        const auto img = crop(s.image, o.y, o.x, patch_h, patch_w);
        const auto tgt = crop(s.target, o.y, o.x, patch_h, patch_w);
        std::copy(img.data().begin(), img.data().end(), &b.images.at(i, 0, 0, 0));
        std::copy(tgt.data().begin(), tgt.data().end(), &b.targets.at(i, 0, 0, 0));
        b.provenance.push_back(o);
    }
    return b;
}

// ---------------------------------------------------------------------------
// Synthetic cloud scenes
// ---------------------------------------------------------------------------

enum class Terrain { flat, textured, snowy };

inline const char* to_string(Terrain t) {
    switch (t) {
    case Terrain::flat: return "flat";
    case Terrain::textured: return "textured";
    case Terrain::snowy: return "snowy";
    }
    return "?";
}

inline Terrain parse_terrain(const std::string& s) {
    if (s == "flat") return Terrain::flat;
    if (s == "textured") return Terrain::textured;
    if (s == "snowy") return Terrain::snowy;
    throw ConfigError("unknown terrain mode '" + s + "' (expected flat, textured or snowy)");
}

struct SynthSpec {
    std::uint64_t seed = 0;
    std::size_t height = 64;
    std::size_t width = 64;
    double coverage = 0.3;
    Terrain terrain = Terrain::textured;
};

struct SynthScene {
    Tensor<float> image; // (1, 3, H, W), integer values in [0, 255]
    Tensor<float> mask;  // (1, 1, H, W), values {0, 255}
};

namespace noise {

inline double fade(double t) { return t * t * (3.0 - 2.0 * t); }

/// Bilinear value noise on an integer-hash lattice with spacing `cell`.
inline double value(std::uint64_t seed, double x, double y, double cell) {
    const double fx = x / cell, fy = y / cell;
    const auto ix = static_cast<std::int64_t>(std::floor(fx)), iy = static_cast<std::int64_t>(std::floor(fy));
    const double tx = fade(fx - static_cast<double>(ix)), ty = fade(fy - static_cast<double>(iy));
    const double a = hash01(seed, ix, iy), b = hash01(seed, ix + 1, iy);
    const double c = hash01(seed, ix, iy + 1), d = hash01(seed, ix + 1, iy + 1);
    return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

/// Multi-octave sum normalized to [0, 1].
inline double fbm(std::uint64_t seed, double x, double y, double cell, int octaves) {
    double sum = 0, amp = 1, norm = 0;
    for (int o = 0; o < octaves; ++o) {
        sum += amp * value(mix64(seed + static_cast<std::uint64_t>(o)), x, y, cell);
        norm += amp;
        amp *= 0.5;
        cell *= 0.5;
    }
    return sum / norm;
}

} // namespace noise

/// Procedural terrain with bright, smooth-edged cloud blobs. The cloud region
/// is the top `coverage` quantile of a low-frequency noise field, so the mask
/// is known exactly. Deterministic in `spec.seed`.
inline SynthScene synth_scene(const SynthSpec& spec) {
    if (spec.height % pyramid_stride || spec.width % pyramid_stride || spec.height == 0 || spec.width == 0)
        throw ValueError("synth_scene: extents must be positive multiples of 16");
    if (!(spec.coverage >= 0.0 && spec.coverage <= 1.0)) throw ValueError("synth_scene: coverage must lie in [0, 1]");
    const std::size_t H = spec.height, W = spec.width, P = H * W;
    const std::uint64_t s = mix64(spec.seed);
    const std::uint64_t s_cloud = s ^ 0x1111, s_terrain = s ^ 0x2222, s_snow = s ^ 0x3333, s_grain = s ^ 0x4444,
                        s_puff = s ^ 0x5555;

    std::vector<double> density(P);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            density[y * W + x] = noise::fbm(s_cloud, static_cast<double>(x), static_cast<double>(y), 40.0, 3);

    // Threshold at the coverage quantile.
    const auto k = static_cast<std::size_t>(std::llround(spec.coverage * static_cast<double>(P)));
    double thr = 2.0, top = 0.0;
    if (k > 0) {
        std::vector<double> sorted = density;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        thr = sorted[k - 1];
        top = sorted.front();
    }
    const double ramp = std::max(1e-6, (top - thr) * 0.5);

    SynthScene out{Tensor<float>::nchw(1, 3, H, W), Tensor<float>::nchw(1, 1, H, W)};
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const double fx = static_cast<double>(x), fy = static_cast<double>(y);
            const std::size_t i = y * W + x;
            std::array<double, 3> rgb{};
            const double grain = hash01(s_grain, static_cast<std::int64_t>(x), static_cast<std::int64_t>(y)) - 0.5;
            switch (spec.terrain) {
            case Terrain::flat:
                rgb = {95 + 8 * grain, 110 + 8 * grain, 75 + 8 * grain};
                break;
            case Terrain::textured:
            case Terrain::snowy: {
                const double t = noise::fbm(s_terrain, fx, fy, 16.0, 3);
                const std::array<double, 3> veg{55, 85, 45}, soil{150, 125, 95};
                for (int c = 0; c < 3; ++c) rgb[c] = veg[c] + (soil[c] - veg[c]) * t + 30 * grain;
                if (spec.terrain == Terrain::snowy && noise::fbm(s_snow, fx, fy, 24.0, 2) > 0.55) {
                    const double flat = 3 * grain;
                    rgb = {224 + flat, 228 + flat, 233 + flat};
                }
                break;
            }
            }
            const bool cloud = k > 0 && density[i] >= thr;
            if (cloud) {
                const double d = std::clamp((density[i] - thr) / ramp, 0.0, 1.0);
                const double alpha = 0.7 + 0.28 * noise::fade(d);
                const double puff = 242 - 28 * noise::fbm(s_puff, fx, fy, 6.0, 2);
                for (auto& v : rgb) v = (1 - alpha) * v + alpha * puff;
            }
            for (int c = 0; c < 3; ++c)
                out.image[c * P + i] = static_cast<float>(std::clamp(std::round(rgb[c]), 0.0, 255.0));
            out.mask[i] = cloud ? static_cast<float>(mask_cloud_value) : 0.0f;
        }
    return out;
}

} // namespace dpn
