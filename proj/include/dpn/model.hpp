#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dpn/error.hpp"
#include "dpn/kernels.hpp"
#include "dpn/param_store.hpp"
#include "dpn/rng.hpp"
#include "dpn/tensor.hpp"

namespace dpn {

inline constexpr std::size_t pyramid_levels = 5;
inline constexpr std::size_t num_classes = 2;
/// Total downsampling factor between the input and the deepest pyramid level.
inline constexpr std::size_t pyramid_stride = 16;
inline constexpr double log_clamp = 1e-12;

enum class EncoderVariant { random5, pretrained_frozen };

inline const char* to_string(EncoderVariant v) {
    return v == EncoderVariant::random5 ? "random5" : "pretrained_frozen";
}

inline EncoderVariant parse_encoder_variant(const std::string& s) {
    if (s == "random5") return EncoderVariant::random5;
    if (s == "pretrained_frozen") return EncoderVariant::pretrained_frozen;
    throw ConfigError("unknown encoder variant '" + s + "' (expected random5 or pretrained_frozen)");
}

/// Channel widths of the five VGG-19 taps conv1_2 ... conv5_2.
inline constexpr std::array<std::size_t, pyramid_levels> vgg19_tap_channels{64, 128, 256, 512, 512};

struct EncoderConfig {
    EncoderVariant variant = EncoderVariant::random5;
    std::array<std::size_t, pyramid_levels> channels{8, 16, 32, 64, 64};
    std::size_t kernel = 3;
    /// Freezes a random5 encoder (stand-in for the pretrained one). The
    /// pretrained variant is always frozen.
    bool freeze = false;

    bool frozen() const { return freeze || variant == EncoderVariant::pretrained_frozen; }
};

struct GeneratorConfig {
    std::size_t fusion_width = 32;
};

struct ModelConfig {
    EncoderConfig encoder;
    GeneratorConfig generator;
    double bn_momentum = 0.9;
    double bn_epsilon = 1e-5;
};

/// One convolution, optionally followed by batch norm and ReLU. Parameters
/// live in the ParamStore under `<name>/kernel`, `<name>/bias` and
/// `<name>/bn/{gamma,beta,running_mean,running_var}`.
struct ConvLayer {
    std::string name;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 3;
    int stride = 1;
    int padding = 1;
    bool batch_norm = true;
    bool relu = true;
};

/// Layer sequence step of an encoder: a conv block or a 2x2 max pool. A tap
/// marks the step output as a pyramid level.
struct EncoderStep {
    enum class Kind { conv, pool } kind = Kind::conv;
    ConvLayer conv;
    bool tap = false;
};

/// Activations at scales 1, 1/2, 1/4, 1/8, 1/16 of the input.
template <typename T>
struct FeaturePyramid {
    std::array<Tensor<T>, pyramid_levels> levels;
};

namespace detail {

template <typename T>
struct BlockCache {
    Tensor<T> input;
    Tensor<T> activation_input; // value fed to the ReLU
    std::optional<BatchNormCache<T>> bn;
};

inline std::vector<std::string> layer_param_names(const ConvLayer& l) {
    std::vector<std::string> n{l.name + "/kernel", l.name + "/bias"};
    if (l.batch_norm)
        for (const char* s : {"/bn/gamma", "/bn/beta", "/bn/running_mean", "/bn/running_var"}) n.push_back(l.name + s);
    return n;
}

inline Shape layer_param_shape(const ConvLayer& l, const std::string& suffix) {
    if (suffix == "/kernel") return Shape{l.out_channels, l.in_channels, l.kernel, l.kernel};
    return Shape{l.out_channels};
}

/// He-uniform kernels, zero bias, identity batch norm.
template <typename T>
void register_layer(ParamStore<T>& ps, const ConvLayer& l, bool trainable, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.in_channels * l.kernel * l.kernel));
    Tensor<T> k(Shape{l.out_channels, l.in_channels, l.kernel, l.kernel});
    for (auto& v : k.data()) v = static_cast<T>(uniform(rng, -limit, limit));
    ps.add(l.name + "/kernel", std::move(k), trainable);
    ps.add(l.name + "/bias", Tensor<T>(Shape{l.out_channels}), trainable);
    if (!l.batch_norm) return;
    ps.add(l.name + "/bn/gamma", Tensor<T>(Shape{l.out_channels}, T(1)), trainable);
    ps.add(l.name + "/bn/beta", Tensor<T>(Shape{l.out_channels}), trainable);
    ps.add(l.name + "/bn/running_mean", Tensor<T>(Shape{l.out_channels}), false);
    ps.add(l.name + "/bn/running_var", Tensor<T>(Shape{l.out_channels}, T(1)), false);
}

template <typename T>
Tensor<T> block_forward(ParamStore<T>& ps, const ConvLayer& l, const Tensor<T>& x, Mode mode, T momentum,
                        T epsilon, BlockCache<T>* cache) {
    const ConvSpec<T> spec{ps.value(l.name + "/kernel"), ps.value(l.name + "/bias"), l.stride, l.padding};
    Tensor<T> y = conv2d(x, spec);
    if (cache) cache->input = x;
    if (l.batch_norm) {
        BatchNormState<T> st{ps.value(l.name + "/bn/gamma"), ps.value(l.name + "/bn/beta"),
                             ps.value(l.name + "/bn/running_mean"), ps.value(l.name + "/bn/running_var"),
                             momentum, epsilon, mode};
        auto bn = batchnorm(y, st);
        y = std::move(bn.output);
        if (cache) cache->bn = std::move(bn.cache);
    }
    if (!l.relu) return y;
    if (cache) cache->activation_input = y;
    return relu(y);
}

template <typename T>
std::optional<Tensor<T>> block_backward(ParamStore<T>& ps, const ConvLayer& l, const BlockCache<T>& cache,
                                        Tensor<T> grad, bool need_input_grad) {
    if (l.relu) grad = relu_backward(cache.activation_input, grad);
    if (l.batch_norm) {
        auto g = batchnorm_backward(*cache.bn, ps.value(l.name + "/bn/gamma"), grad);
        ps.accumulate_grad(l.name + "/bn/gamma", g.gamma);
        ps.accumulate_grad(l.name + "/bn/beta", g.beta);
        grad = std::move(g.input);
    }
    const ConvSpec<T> spec{ps.value(l.name + "/kernel"), ps.value(l.name + "/bias"), l.stride, l.padding};
    auto g = conv2d_backward(cache.input, spec, grad, need_input_grad);
    ps.accumulate_grad(l.name + "/kernel", g.kernel);
    ps.accumulate_grad(l.name + "/bias", g.bias);
    if (!need_input_grad) return std::nullopt;
    return std::move(g.input);
}

} // namespace detail

/// Conv stack producing the five-level feature pyramid.
class Encoder {
public:
    Encoder(EncoderConfig cfg, std::vector<EncoderStep> steps) : cfg_(cfg), steps_(std::move(steps)) {}

    const EncoderConfig& config() const noexcept { return cfg_; }
    const std::vector<EncoderStep>& steps() const noexcept { return steps_; }
    bool frozen() const noexcept { return cfg_.frozen(); }

    std::array<std::size_t, pyramid_levels> tap_channels() const {
        std::array<std::size_t, pyramid_levels> out{};
        std::size_t i = 0, ch = 3;
        for (const auto& s : steps_) {
            if (s.kind == EncoderStep::Kind::conv) ch = s.conv.out_channels;
            if (s.tap) out[i++] = ch;
        }
        return out;
    }

    std::vector<std::string> param_names() const {
        std::vector<std::string> out;
        for (const auto& s : steps_)
            if (s.kind == EncoderStep::Kind::conv)
                for (auto& n : detail::layer_param_names(s.conv)) out.push_back(n);
        return out;
    }

private:
    EncoderConfig cfg_;
    std::vector<EncoderStep> steps_;
};

/// Layer plan of the custom five-block encoder: block 1 keeps full
/// resolution, blocks 2-5 apply their conv with stride 2.
inline std::vector<EncoderStep> random5_steps(const EncoderConfig& cfg) {
    if (cfg.kernel % 2 == 0) throw ConfigError("encoder kernel size must be odd");
    std::vector<EncoderStep> steps;
    std::size_t in = 3;
    for (std::size_t i = 0; i < pyramid_levels; ++i) {
        if (cfg.channels[i] == 0) throw ConfigError("encoder channel plan entries must be positive");
        ConvLayer l{"encoder/block" + std::to_string(i + 1), in, cfg.channels[i], cfg.kernel,
                    i == 0 ? 1 : 2, static_cast<int>((cfg.kernel - 1) / 2), true, true};
        steps.push_back({EncoderStep::Kind::conv, l, true});
        in = cfg.channels[i];
    }
    return steps;
}

/// VGG-19 convolution stack up to conv5_2 with taps at conv{1..5}_2
/// (post-ReLU) and 2x2 max pools between stages.
inline std::vector<EncoderStep> vgg19_steps() {
    const std::array<std::pair<std::size_t, std::size_t>, 5> stage{{{64, 2}, {128, 2}, {256, 4}, {512, 4}, {512, 2}}};
    std::vector<EncoderStep> steps;
    std::size_t in = 3;
    for (std::size_t s = 0; s < stage.size(); ++s) {
        if (s > 0) steps.push_back({EncoderStep::Kind::pool, {}, false});
        for (std::size_t j = 1; j <= stage[s].second; ++j) {
            ConvLayer l{"encoder/conv" + std::to_string(s + 1) + "_" + std::to_string(j), in, stage[s].first, 3, 1, 1,
                        false, true};
            steps.push_back({EncoderStep::Kind::conv, l, j == 2});
            in = stage[s].first;
        }
    }
    return steps;
}

/// Names every pretrained tensor the frozen encoder needs, in file order.
inline std::vector<std::string> vgg19_param_names() {
    std::vector<std::string> names;
    for (const auto& s : vgg19_steps())
        if (s.kind == EncoderStep::Kind::conv) {
            names.push_back(s.conv.name + "/kernel");
            names.push_back(s.conv.name + "/bias");
        }
    std::sort(names.begin(), names.end());
    return names;
}

/// Registers (random5) or validates (pretrained_frozen) encoder parameters.
/// A pretrained store must already hold every conv tensor with VGG-19 dims.
template <typename T>
Encoder build_encoder(const EncoderConfig& cfg, ParamStore<T>& ps, Rng& rng) {
    if (cfg.variant == EncoderVariant::random5) {
        Encoder enc(cfg, random5_steps(cfg));
        for (const auto& s : enc.steps()) detail::register_layer(ps, s.conv, !cfg.frozen(), rng);
        return enc;
    }
    Encoder enc(cfg, vgg19_steps());
    std::vector<std::string> missing;
    for (const auto& s : enc.steps()) {
        if (s.kind != EncoderStep::Kind::conv) continue;
        for (const char* suffix : {"/kernel", "/bias"}) {
            const std::string name = s.conv.name + suffix;
            const Shape want = detail::layer_param_shape(s.conv, suffix);
            if (!ps.contains(name)) {
                missing.push_back(name);
            } else if (!(ps.value(name).shape() == want)) {
                missing.push_back(name + " (dims " + ps.value(name).shape().str() + ", expected " + want.str() + ")");
            }
        }
    }
    if (!missing.empty()) {
        std::string msg = "pretrained encoder checkpoint lacks tensors:";
        for (auto& m : missing) msg += " " + m;
        throw MismatchError(msg);
    }
    ps.set_trainable_prefix("encoder/", false);
    return enc;
}

/// Top-down fusion decoder: 1x1 skip projections to a common width, then
/// upsample / add / 3x3 conv per level, then a 1x1 head to two logits.
class Generator {
public:
    Generator(GeneratorConfig cfg, const std::array<std::size_t, pyramid_levels>& tap_channels) : cfg_(cfg) {
        if (cfg.fusion_width < num_classes) throw ConfigError("fusion width must be at least the class count");
        const std::size_t cg = cfg.fusion_width;
        for (std::size_t i = 0; i < pyramid_levels; ++i)
            proj_[i] = ConvLayer{"generator/proj" + std::to_string(i + 1), tap_channels[i], cg, 1, 1, 0, true, true};
        for (std::size_t i = 0; i + 1 < pyramid_levels; ++i)
            fuse_[i] = ConvLayer{"generator/fuse" + std::to_string(i + 1), cg, cg, 3, 1, 1, true, true};
        head_ = ConvLayer{"generator/head", cg, num_classes, 1, 1, 0, false, false};
    }

    const GeneratorConfig& config() const noexcept { return cfg_; }
    const std::array<ConvLayer, pyramid_levels>& projections() const noexcept { return proj_; }
    const std::array<ConvLayer, pyramid_levels - 1>& fusions() const noexcept { return fuse_; }
    const ConvLayer& head() const noexcept { return head_; }

    std::vector<ConvLayer> layers() const {
        std::vector<ConvLayer> out(proj_.begin(), proj_.end());
        out.insert(out.end(), fuse_.begin(), fuse_.end());
        out.push_back(head_);
        return out;
    }

private:
    GeneratorConfig cfg_;
    std::array<ConvLayer, pyramid_levels> proj_;
    std::array<ConvLayer, pyramid_levels - 1> fuse_;
    ConvLayer head_;
};

template <typename T>
Generator build_generator(const GeneratorConfig& cfg, const std::array<std::size_t, pyramid_levels>& taps,
                          ParamStore<T>& ps, Rng& rng) {
    Generator gen(cfg, taps);
    for (const auto& l : gen.layers()) detail::register_layer(ps, l, true, rng);
    return gen;
}

/// Dependency interval of an output pixel: output x reads inputs in
/// [x + lo, x + hi]. `radius` is max(-lo, hi).
struct ReceptiveField {
    long long lo = 0;
    long long hi = 0;
    long long radius() const { return std::max(-lo, hi); }
};

namespace detail {
// Input footprint of index i of a tensor at cumulative stride `jump`:
// [jump*i + lo, jump*i + hi].
struct Footprint {
    long long jump = 1, lo = 0, hi = 0;
    Footprint conv(std::size_t k, int stride, int pad) const {
        return {jump * stride, lo - jump * pad, hi + jump * (static_cast<long long>(k) - 1 - pad)};
    }
    // Nearest 2x upsampling: output o reads source o/2, i.e. up to one
    // fine-scale step to the left of o.
    Footprint upsample() const { return {jump / 2, lo - jump / 2, hi}; }
    static Footprint merge(const Footprint& a, const Footprint& b) {
        return {a.jump, std::min(a.lo, b.lo), std::max(a.hi, b.hi)};
    }
};
} // namespace detail

/// Analytic receptive field of the full network (encoder + generator),
/// derived from layer hyperparameters alone.
inline ReceptiveField receptive_field(const Encoder& enc, const Generator& gen) {
    using detail::Footprint;
    std::vector<Footprint> taps;
    Footprint f;
    for (const auto& s : enc.steps()) {
        f = s.kind == EncoderStep::Kind::pool ? f.conv(2, 2, 0) : f.conv(s.conv.kernel, s.conv.stride, s.conv.padding);
        if (s.tap) taps.push_back(f);
    }
    auto apply = [](Footprint x, const ConvLayer& l) { return x.conv(l.kernel, l.stride, l.padding); };
    Footprint g = apply(taps[pyramid_levels - 1], gen.projections()[pyramid_levels - 1]);
    for (std::size_t i = pyramid_levels - 1; i-- > 0;) {
        g = Footprint::merge(g.upsample(), apply(taps[i], gen.projections()[i]));
        g = apply(g, gen.fusions()[i]);
    }
    g = apply(g, gen.head());
    return {g.lo, g.hi};
}

/// Mean softmax cross-entropy over batch and pixels; `y` must be one-hot.
template <typename T>
T loss_eval(const Tensor<T>& p, const Tensor<T>& y) {
    require_rank4(p.shape(), "loss_eval prediction");
    require_same_shape(p.shape(), y.shape(), "loss_eval");
    const auto& s = p.shape();
    const std::size_t plane = s.h() * s.w();
    double total = 0;
    for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t i = 0; i < plane; ++i) {
            double ysum = 0;
            for (std::size_t c = 0; c < s.c(); ++c) {
                const std::size_t k = p.offset(n, c, 0, 0) + i;
                const T yv = y[k];
                if (yv != T(0) && yv != T(1)) throw ValueError("loss_eval: target is not one-hot (value outside {0,1})");
                ysum += yv;
                if (yv == T(1)) total -= std::log(std::max(static_cast<double>(p[k]), log_clamp));
            }
            if (ysum != 1.0) throw ValueError("loss_eval: target is not one-hot (channel sum != 1)");
        }
    return static_cast<T>(total / static_cast<double>(s.n() * plane));
}

/// Gradient of loss_eval(softmax(z), y) w.r.t. the logits z.
template <typename T>
Tensor<T> softmax_cross_entropy_grad(const Tensor<T>& p, const Tensor<T>& y) {
    require_same_shape(p.shape(), y.shape(), "softmax_cross_entropy_grad");
    const T scale = T(1) / static_cast<T>(p.shape().n() * p.shape().h() * p.shape().w());
    Tensor<T> g(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) g[i] = (p[i] - y[i]) * scale;
    return g;
}

/// Encoder + generator + softmax, owning its parameters.
template <typename T>
class DpnModel {
public:
    /// Builds a model. `params` must already hold the pretrained encoder
    /// tensors for the pretrained variant; everything else is initialized
    /// from `seed`.
    DpnModel(ModelConfig cfg, std::uint64_t seed, ParamStore<T> params = {})
        : cfg_(cfg), params_(std::move(params)), encoder_(init_encoder(seed)),
          generator_(build_generator(cfg_.generator, encoder_.tap_channels(), params_, rng_)) {}

    const ModelConfig& config() const noexcept { return cfg_; }
    const Encoder& encoder() const noexcept { return encoder_; }
    const Generator& generator() const noexcept { return generator_; }
    ParamStore<T>& params() noexcept { return params_; }
    const ParamStore<T>& params() const noexcept { return params_; }

    ReceptiveField receptive_field() const { return dpn::receptive_field(encoder_, generator_); }

    FeaturePyramid<T> encode(const Tensor<T>& x, Mode mode) { return encode_impl(x, mode, nullptr); }

    Tensor<T> generate(const FeaturePyramid<T>& pyr, Mode mode) { return generate_impl(pyr, mode, nullptr); }

    /// Probability field (N, 2, H, W). Caches activations for backward().
    Tensor<T> forward(const Tensor<T>& x, Mode mode) {
        tape_.emplace();
        auto pyr = encode_impl(x, mode, &*tape_);
        Tensor<T> p = softmax_channels(generate_impl(pyr, mode, &*tape_));
        tape_->probs = p;
        return p;
    }

    /// Forward pass without caching; safe for repeated inference calls.
    Tensor<T> predict(const Tensor<T>& x) const {
        DpnModel& self = const_cast<DpnModel&>(*this);
        // Inference mode reads but never mutates parameters or statistics.
        auto pyr = self.encode_impl(x, Mode::inference, nullptr);
        return softmax_channels(self.generate_impl(pyr, Mode::inference, nullptr));
    }

    /// Fills gradient slots of trainable entries for loss_eval(forward(x), y).
    void backward(const Tensor<T>& y) {
        if (!tape_) throw StateError("backward() called without a preceding forward()");
        Tape tape = std::move(*tape_);
        tape_.reset();
        auto dlevels = generator_backward(tape, softmax_cross_entropy_grad(tape.probs, y));
        if (!encoder_.frozen()) encoder_backward(tape, std::move(dlevels));
    }

private:
    struct Tape {
        std::vector<detail::BlockCache<T>> encoder_blocks;
        std::vector<std::pair<Shape, std::vector<std::size_t>>> pools;
        std::array<detail::BlockCache<T>, pyramid_levels> proj;
        std::array<detail::BlockCache<T>, pyramid_levels - 1> fuse;
        detail::BlockCache<T> head;
        Tensor<T> probs;
    };

    Encoder init_encoder(std::uint64_t seed) {
        rng_.seed(seed);
        return build_encoder(cfg_.encoder, params_, rng_);
    }

    T momentum() const { return static_cast<T>(cfg_.bn_momentum); }
    T epsilon() const { return static_cast<T>(cfg_.bn_epsilon); }

    FeaturePyramid<T> encode_impl(const Tensor<T>& x, Mode mode, Tape* tape) {
        require_rank4(x.shape(), "encoder input");
        if (x.shape().c() != 3) throw ShapeError("encoder input must have 3 channels, got " + x.shape().str());
        if (x.shape().h() % pyramid_stride || x.shape().w() % pyramid_stride)
            throw ShapeError("encoder input extents " + x.shape().str() +
                             " must be divisible by 16; reflect-pad the image upstream");
        // A frozen encoder always runs on its stored statistics and keeps no tape.
        const bool frozen = encoder_.frozen();
        const Mode m = frozen ? Mode::inference : mode;
        Tape* t = frozen ? nullptr : tape;
        FeaturePyramid<T> pyr;
        std::size_t level = 0;
        Tensor<T> cur = x;
        for (const auto& s : encoder_.steps()) {
            if (s.kind == EncoderStep::Kind::pool) {
                auto r = maxpool2(cur);
                if (t) t->pools.emplace_back(cur.shape(), std::move(r.argmax));
                cur = std::move(r.output);
            } else {
                detail::BlockCache<T>* c = nullptr;
                if (t) c = &t->encoder_blocks.emplace_back();
                cur = detail::block_forward(params_, s.conv, cur, m, momentum(), epsilon(), c);
            }
            if (s.tap) pyr.levels[level++] = cur;
        }
        return pyr;
    }

    Tensor<T> generate_impl(const FeaturePyramid<T>& pyr, Mode mode, Tape* tape) {
        const auto& proj = generator_.projections();
        const auto& fuse = generator_.fusions();
        for (std::size_t i = 0; i + 1 < pyramid_levels; ++i) {
            const auto& a = pyr.levels[i].shape();
            const auto& b = pyr.levels[i + 1].shape();
            if (a.rank() != 4 || b.rank() != 4 || a.h() != 2 * b.h() || a.w() != 2 * b.w() || a.n() != b.n())
                throw ShapeError("feature pyramid level " + std::to_string(i + 1) + " " + a.str() +
                                 " is not twice the extent of level " + std::to_string(i + 2) + " " + b.str());
        }
        const std::size_t last = pyramid_levels - 1;
        Tensor<T> g = detail::block_forward(params_, proj[last], pyr.levels[last], mode, momentum(), epsilon(),
                                            tape ? &tape->proj[last] : nullptr);
        for (std::size_t i = last; i-- > 0;) {
            g = upsample2_nearest(g);
            add_inplace(g, detail::block_forward(params_, proj[i], pyr.levels[i], mode, momentum(), epsilon(),
                                                 tape ? &tape->proj[i] : nullptr));
            g = detail::block_forward(params_, fuse[i], g, mode, momentum(), epsilon(),
                                      tape ? &tape->fuse[i] : nullptr);
        }
        return detail::block_forward(params_, generator_.head(), g, mode, momentum(), epsilon(),
                                     tape ? &tape->head : nullptr);
    }

    std::array<Tensor<T>, pyramid_levels> generator_backward(const Tape& tape, Tensor<T> dlogits) {
        const bool need_levels = !encoder_.frozen();
        const auto& proj = generator_.projections();
        const auto& fuse = generator_.fusions();
        std::array<Tensor<T>, pyramid_levels> dlevels;
        Tensor<T> g = *detail::block_backward(params_, generator_.head(), tape.head, std::move(dlogits), true);
        for (std::size_t i = 0; i + 1 < pyramid_levels; ++i) {
            g = *detail::block_backward(params_, fuse[i], tape.fuse[i], std::move(g), true);
            auto dl = detail::block_backward(params_, proj[i], tape.proj[i], g, need_levels);
            if (dl) dlevels[i] = std::move(*dl);
            g = upsample2_nearest_backward(g);
        }
        auto dl = detail::block_backward(params_, proj[pyramid_levels - 1], tape.proj[pyramid_levels - 1],
                                         std::move(g), need_levels);
        if (dl) dlevels[pyramid_levels - 1] = std::move(*dl);
        return dlevels;
    }

    void encoder_backward(const Tape& tape, std::array<Tensor<T>, pyramid_levels> dlevels) {
        const auto& steps = encoder_.steps();
        std::size_t level = pyramid_levels, block = tape.encoder_blocks.size(), pool = tape.pools.size();
        Tensor<T> g;
        for (std::size_t k = steps.size(); k-- > 0;) {
            const auto& s = steps[k];
            if (s.tap) {
                --level;
                if (g.empty()) g = std::move(dlevels[level]);
                else add_inplace(g, dlevels[level]);
            }
            if (g.empty()) continue;
            if (s.kind == EncoderStep::Kind::pool) {
                const auto& [shape, argmax] = tape.pools[--pool];
                g = maxpool2_backward(shape, argmax, g);
            } else {
                auto dx = detail::block_backward(params_, s.conv, tape.encoder_blocks[--block], std::move(g), k > 0);
                g = dx ? std::move(*dx) : Tensor<T>();
            }
        }
    }

    ModelConfig cfg_;
    Rng rng_;
    ParamStore<T> params_;
    Encoder encoder_;
    Generator generator_;
    std::optional<Tape> tape_;
};

} // namespace dpn
