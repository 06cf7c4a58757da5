#pragma once

// Finite-difference checks shared by the unit tests and the acceptance gate.
// Each returns the maximum relative error between analytic and central
// difference gradients.

#include <algorithm>
#include <random>
#include <string>

#include "dpn/kernels.hpp"
#include "dpn/model.hpp"
#include "oracles.hpp"

namespace gradcheck {

using dpn::Mode;
using dpn::Shape;
using dpn::Tensor;

struct ConvCase {
    Shape input;
    std::size_t out_channels, kernel;
    int stride, pad;
};

inline double conv(const ConvCase& c, std::uint64_t seed) {
    auto x = oracle::random_tensor<double>(c.input, seed);
    auto k = oracle::random_tensor<double>(Shape{c.out_channels, c.input.c(), c.kernel, c.kernel}, seed + 1);
    auto b = oracle::random_tensor<double>(Shape{c.out_channels}, seed + 2);
    auto f = [&] { return dpn::conv2d(x, dpn::ConvSpec<double>{k, b, c.stride, c.pad}); };
    auto w = oracle::random_tensor<double>(f().shape(), seed + 3);
    auto loss = [&] { return oracle::probe(f(), w); };
    auto g = dpn::conv2d_backward(x, dpn::ConvSpec<double>{k, b, c.stride, c.pad}, w);
    return std::max({oracle::max_rel_error(g.input, oracle::numeric_grad(x, loss)),
                     oracle::max_rel_error(g.kernel, oracle::numeric_grad(k, loss)),
                     oracle::max_rel_error(g.bias, oracle::numeric_grad(b, loss))});
}

inline double batchnorm(Shape s, Mode mode, std::uint64_t seed) {
    auto x = oracle::random_tensor<double>(s, seed, -2, 3);
    auto gamma = oracle::random_tensor<double>(Shape{s.c()}, seed + 1, 0.5, 1.5);
    auto beta = oracle::random_tensor<double>(Shape{s.c()}, seed + 2);
    auto rm = oracle::random_tensor<double>(Shape{s.c()}, seed + 3);
    auto rv = oracle::random_tensor<double>(Shape{s.c()}, seed + 4, 0.5, 2);
    auto f = [&] {
        auto rm_copy = rm, rv_copy = rv;
        return dpn::batchnorm(x, dpn::BatchNormState<double>{gamma, beta, rm_copy, rv_copy, 0.9, 1e-5, mode});
    };
    auto w = oracle::random_tensor<double>(s, seed + 5);
    auto loss = [&] { return oracle::probe(f().output, w); };
    auto g = dpn::batchnorm_backward(f().cache, gamma, w);
    return std::max({oracle::max_rel_error(g.input, oracle::numeric_grad(x, loss)),
                     oracle::max_rel_error(g.gamma, oracle::numeric_grad(gamma, loss)),
                     oracle::max_rel_error(g.beta, oracle::numeric_grad(beta, loss))});
}

/// ReLU, 2x2 max pool and nearest upsampling; inputs are kept away from
/// the kinks so the finite difference never straddles one.
inline double pointwise(std::uint64_t seed) {
    auto x = oracle::random_tensor<double>(Shape::nchw(2, 3, 6, 6), seed);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] >= 0 ? x[i] + 0.05 : x[i] - 0.05;
    // Distinct values inside each pool window by at least 1e-3.
    auto xp = x;
    for (std::size_t i = 0; i < xp.size(); ++i) xp[i] = static_cast<double>(i % 97) * 1e-2 + x[i] * 1e-4;
    double worst = 0;

    auto wr = oracle::random_tensor<double>(x.shape(), seed + 1);
    auto lr = [&] { return oracle::probe(dpn::relu(x), wr); };
    worst = std::max(worst, oracle::max_rel_error(dpn::relu_backward(x, wr), oracle::numeric_grad(x, lr)));

    auto pooled = dpn::maxpool2(xp);
    auto wp = oracle::random_tensor<double>(pooled.output.shape(), seed + 2);
    auto lp = [&] { return oracle::probe(dpn::maxpool2(xp).output, wp); };
    worst = std::max(worst, oracle::max_rel_error(dpn::maxpool2_backward(xp.shape(), pooled.argmax, wp),
                                                  oracle::numeric_grad(xp, lp)));

    auto wu = oracle::random_tensor<double>(Shape::nchw(2, 3, 12, 12), seed + 3);
    auto lu = [&] { return oracle::probe(dpn::upsample2_nearest(x), wu); };
    worst = std::max(worst, oracle::max_rel_error(dpn::upsample2_nearest_backward(wu), oracle::numeric_grad(x, lu)));
    return worst;
}

struct ModelCheck {
    double max_rel_error = 0;
    std::size_t checked = 0;
    std::size_t skipped = 0; // coordinates whose difference quotient straddles a ReLU kink
    // Biases feeding a training-mode batch norm cancel in the mean
    // subtraction: both gradients must be zero up to roundoff.
    std::size_t cancelled_bias_violations = 0;
};

/// Whole-model check of loss_eval against the gradients left by backward().
/// Samples up to `per_tensor` coordinates of every trainable entry. With
/// `kink_guard`, a coordinate counts only when the loss is smooth across the
/// stencil: the central quotients at h and h/4 agree to `tol` and the two
/// one-sided quotients at h agree to `sided_tol`. Otherwise a ReLU kink lies
/// inside the stencil (or exactly at its centre) and the coordinate is
/// skipped and counted. The guard inspects only the loss, never the
/// analytic gradient.
/// In training mode every conv bias sits in front of a batch norm and is
/// checked against the cancellation property instead.
inline ModelCheck model(const dpn::ModelConfig& cfg, Shape input, Mode mode, std::uint64_t seed,
                        std::size_t per_tensor, double h = 1e-5, bool kink_guard = false, double tol = 1e-4,
                        double sided_tol = 1e-3) {
    dpn::DpnModel<double> m(cfg, seed);
    auto x = oracle::random_tensor<double>(input, seed + 1, -2, 2);
    // Random one-hot target.
    auto y = Tensor<double>::nchw(input.n(), 2, input.h(), input.w());
    std::mt19937_64 rng(seed + 2);
    for (std::size_t n = 0; n < input.n(); ++n)
        for (std::size_t i = 0; i < input.h() * input.w(); ++i) y[y.offset(n, rng() & 1, 0, 0) + i] = 1.0;

    // Training mode updates running statistics on every pass; they never
    // feed back into training-mode outputs, but restore them anyway so every
    // evaluation sees an identical model.
    const auto snapshot = m.params();
    auto loss = [&] {
        auto p = m.forward(x, mode);
        for (const auto& [name, e] : snapshot.entries())
            if (!e.trainable) m.params().value(name) = e.value;
        return dpn::loss_eval(p, y);
    };
    m.params().zero_grads();
    loss();
    m.backward(y);

    struct Quotients {
        double forward, backward, central;
    };
    auto quotients = [&](double& v, double step, double f0) {
        const double keep = v;
        v = keep + step;
        const double fp = loss();
        v = keep - step;
        const double fm = loss();
        v = keep;
        return Quotients{(fp - f0) / step, (f0 - fm) / step, (fp - fm) / (2 * step)};
    };
    const double f0 = loss();

    ModelCheck out;
    for (const auto& name : m.params().names()) {
        auto& e = m.params().entry(name);
        if (!e.trainable) continue;
        const Tensor<double> analytic = e.grad;
        std::vector<std::size_t> idx(e.value.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min(per_tensor, idx.size()));
        const bool cancelled = mode == Mode::training && name.size() > 5 && name.ends_with("/bias") &&
                               m.params().contains(name.substr(0, name.size() - 5) + "/bn/gamma");
        for (std::size_t i : idx) {
            const Quotients q = quotients(e.value[i], h, f0);
            if (cancelled) {
                if (std::abs(analytic[i]) > 1e-12 || std::abs(q.central) > 1e-8) ++out.cancelled_bias_violations;
                continue;
            }
            if (kink_guard && (oracle::rel_error(q.forward, q.backward) > sided_tol ||
                               oracle::rel_error(q.central, quotients(e.value[i], h / 4, f0).central) > tol)) {
                ++out.skipped;
                continue;
            }
            ++out.checked;
            out.max_rel_error = std::max(out.max_rel_error, oracle::rel_error(analytic[i], q.central));
        }
    }
    return out;
}

/// The desk-scale random5 configuration.
inline dpn::ModelConfig desk_config() { return dpn::ModelConfig{}; }

} // namespace gradcheck
