#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "dpn/error.hpp"
#include "dpn/tensor.hpp"

namespace dpn {

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Non-owning bundle of convolution parameters. Kernel is (Cout, Cin, kH, kW),
/// bias has Cout elements; padding is symmetric zero padding.
template <typename T>
struct ConvSpec {
    const Tensor<T>& kernel;
    const Tensor<T>& bias;
    int stride = 1;
    int padding = 0;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, int stride, int padding) {
    const long long span = static_cast<long long>(in) + 2LL * padding - static_cast<long long>(k);
    if (span < 0) return 0;
    return static_cast<std::size_t>(span / stride) + 1;
}

template <typename T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> kernel;
    Tensor<T> bias;
};

namespace detail {

struct ConvGeometry {
    std::size_t n, cin, h, w, cout, kh, kw, hout, wout;
    int stride, pad;
    std::size_t rows() const { return cin * kh * kw; }
    std::size_t cols() const { return hout * wout; }
};

template <typename T>
ConvGeometry conv_geometry(const Shape& in, const ConvSpec<T>& spec) {
    require_rank4(in, "conv2d input");
    const Shape& k = spec.kernel.shape();
    if (k.rank() != 4) throw ShapeError("conv2d: kernel must be (Cout,Cin,kH,kW), got " + k.str());
    if (in.c() != k[1])
        throw ShapeError("conv2d: input channels " + std::to_string(in.c()) + " of input " + in.str() +
                         " do not match kernel input channels " + std::to_string(k[1]) + " of kernel " +
                         k.str());
    if (spec.bias.size() != k[0])
        throw ShapeError("conv2d: bias length " + std::to_string(spec.bias.size()) +
                         " does not match kernel output channels " + std::to_string(k[0]));
    if (spec.stride < 1 || spec.padding < 0) throw ValueError("conv2d: stride must be >= 1 and padding >= 0");
    ConvGeometry g{in.n(), in.c(), in.h(), in.w(), k[0], k[2], k[3], 0, 0, spec.stride, spec.padding};
    g.hout = conv_out_extent(g.h, g.kh, g.stride, g.pad);
    g.wout = conv_out_extent(g.w, g.kw, g.stride, g.pad);
    if (g.hout == 0 || g.wout == 0)
        throw ShapeError("conv2d: kernel " + k.str() + " with padding " + std::to_string(g.pad) +
                         " does not fit input " + in.str());
    return g;
}

// Unfolds one image (Cin, H, W) into a (Cin*kH*kW, Hout*Wout) matrix.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
    const std::size_t cols = g.cols();
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                T* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
                for (std::size_t oy = 0; oy < g.hout; ++oy) {
                    const long long iy = static_cast<long long>(oy) * g.stride - g.pad + static_cast<long long>(ky);
                    T* dst = row + oy * g.wout;
                    if (iy < 0 || iy >= static_cast<long long>(g.h)) {
                        std::fill_n(dst, g.wout, T(0));
                        continue;
                    }
                    const T* src = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wout; ++ox) {
                        const long long ix = static_cast<long long>(ox) * g.stride - g.pad + static_cast<long long>(kx);
                        dst[ox] = (ix < 0 || ix >= static_cast<long long>(g.w)) ? T(0) : src[ix];
                    }
                }
            }
}

// Adjoint of im2col: accumulates the column matrix back into image space.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
    const std::size_t cols = g.cols();
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const T* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
                for (std::size_t oy = 0; oy < g.hout; ++oy) {
                    const long long iy = static_cast<long long>(oy) * g.stride - g.pad + static_cast<long long>(ky);
                    if (iy < 0 || iy >= static_cast<long long>(g.h)) continue;
                    T* dst = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const T* src = row + oy * g.wout;
                    for (std::size_t ox = 0; ox < g.wout; ++ox) {
                        const long long ix = static_cast<long long>(ox) * g.stride - g.pad + static_cast<long long>(kx);
                        if (ix >= 0 && ix < static_cast<long long>(g.w)) dst[ix] += src[ox];
                    }
                }
            }
}

} // namespace detail

/// 2-D cross-correlation over (N, C, H, W) input, lowered to im2col + GEMM.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec<T>& spec) {
    const auto g = detail::conv_geometry(input.shape(), spec);
    const std::size_t rows = g.rows(), cols = g.cols();
    Tensor<T> out = Tensor<T>::nchw(g.n, g.cout, g.hout, g.wout);
    std::vector<T> col(rows * cols);
    const T* K = spec.kernel.raw();
    for (std::size_t n = 0; n < g.n; ++n) {
        detail::im2col(&input.at(n, 0, 0, 0), g, col.data());
        T* o = &out.at(n, 0, 0, 0);
        for (std::size_t co = 0; co < g.cout; ++co) {
            T* orow = o + co * cols;
            std::fill_n(orow, cols, spec.bias[co]);
            for (std::size_t r = 0; r < rows; ++r) {
                const T kv = K[co * rows + r];
                if (kv == T(0)) continue;
                const T* crow = col.data() + r * cols;
                for (std::size_t p = 0; p < cols; ++p) orow[p] += kv * crow[p];
            }
        }
    }
    return out;
}

/// Gradients of a scalar loss w.r.t. input, kernel and bias given the
/// upstream gradient of the conv2d output.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvSpec<T>& spec, const Tensor<T>& upstream,
                             bool need_input_grad = true) {
    const auto g = detail::conv_geometry(input.shape(), spec);
    const Shape expected = Shape::nchw(g.n, g.cout, g.hout, g.wout);
    require_same_shape(upstream.shape(), expected, "conv2d_backward upstream gradient");
    const std::size_t rows = g.rows(), cols = g.cols();

    ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(spec.kernel.shape()), Tensor<T>(spec.bias.shape())};
    std::vector<T> col(rows * cols);
    std::vector<T> dcol(need_input_grad ? rows * cols : 0);
    const T* K = spec.kernel.raw();
    T* dK = grads.kernel.raw();
    for (std::size_t n = 0; n < g.n; ++n) {
        detail::im2col(&input.at(n, 0, 0, 0), g, col.data());
        const T* up = &upstream.at(n, 0, 0, 0);
        for (std::size_t co = 0; co < g.cout; ++co) {
            const T* urow = up + co * cols;
            T bsum = 0;
            for (std::size_t p = 0; p < cols; ++p) bsum += urow[p];
            grads.bias[co] += bsum;
            for (std::size_t r = 0; r < rows; ++r) {
                const T* crow = col.data() + r * cols;
                T acc = 0;
                for (std::size_t p = 0; p < cols; ++p) acc += urow[p] * crow[p];
                dK[co * rows + r] += acc;
            }
        }
        if (!need_input_grad) continue;
        std::fill(dcol.begin(), dcol.end(), T(0));
        for (std::size_t co = 0; co < g.cout; ++co) {
            const T* urow = up + co * cols;
            for (std::size_t r = 0; r < rows; ++r) {
                const T kv = K[co * rows + r];
                if (kv == T(0)) continue;
                T* drow = dcol.data() + r * cols;
                for (std::size_t p = 0; p < cols; ++p) drow[p] += kv * urow[p];
            }
        }
        detail::col2im(dcol.data(), g, &grads.input.at(n, 0, 0, 0));
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

enum class Mode { training, inference };

/// Non-owning view over one batch-norm layer's parameters and statistics.
/// Training mode normalizes with biased batch variance and folds the
/// unbiased variance into the running estimate:
///   running = momentum * running + (1 - momentum) * batch.
template <typename T>
struct BatchNormState {
    const Tensor<T>& gamma;
    const Tensor<T>& beta;
    Tensor<T>& running_mean;
    Tensor<T>& running_var;
    T momentum = T(0.9);
    T epsilon = T(1e-5);
    Mode mode = Mode::training;
};

template <typename T>
struct BatchNormCache {
    Tensor<T> normalized;     // x-hat, same dims as input
    std::vector<T> inv_std;   // per channel
    Mode mode = Mode::training;
};

template <typename T>
struct BatchNormResult {
    Tensor<T> output;
    BatchNormCache<T> cache;
};

template <typename T>
struct BatchNormGrads {
    Tensor<T> input;
    Tensor<T> gamma;
    Tensor<T> beta;
};

template <typename T>
BatchNormResult<T> batchnorm(const Tensor<T>& input, BatchNormState<T> state) {
    require_rank4(input.shape(), "batchnorm input");
    const auto& s = input.shape();
    const std::size_t C = s.c(), plane = s.h() * s.w(), count = s.n() * plane;
    for (const Tensor<T>* v : {&state.gamma, &state.beta})
        if (v->size() != C)
            throw ShapeError("batchnorm: parameter length " + std::to_string(v->size()) +
                             " does not match input channels " + std::to_string(C));
    if (state.running_mean.size() != C || state.running_var.size() != C)
        throw ShapeError("batchnorm: running statistics length does not match input channels " + std::to_string(C));
    if (!(state.epsilon > T(0))) throw ValueError("batchnorm: epsilon must be positive");
    if (state.mode == Mode::training && count < 2)
        throw ValueError("batchnorm: batch variance over " + std::to_string(count) +
                         " element(s) per channel; training mode needs at least 2");

    BatchNormResult<T> res{Tensor<T>(s), {Tensor<T>(s), std::vector<T>(C), state.mode}};
    for (std::size_t c = 0; c < C; ++c) {
        T mean, var;
        if (state.mode == Mode::training) {
            T sum = 0;
            for (std::size_t n = 0; n < s.n(); ++n) {
                const T* x = &input.at(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) sum += x[i];
            }
            mean = sum / static_cast<T>(count);
            T sq = 0;
            for (std::size_t n = 0; n < s.n(); ++n) {
                const T* x = &input.at(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) {
                    const T d = x[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / static_cast<T>(count);
            const T unbiased = sq / static_cast<T>(count - 1);
            state.running_mean[c] = state.momentum * state.running_mean[c] + (T(1) - state.momentum) * mean;
            state.running_var[c] = state.momentum * state.running_var[c] + (T(1) - state.momentum) * unbiased;
        } else {
            mean = state.running_mean[c];
            var = state.running_var[c];
        }
        const T inv = T(1) / std::sqrt(var + state.epsilon);
        res.cache.inv_std[c] = inv;
        const T g = state.gamma[c], b = state.beta[c];
        for (std::size_t n = 0; n < s.n(); ++n) {
            const T* x = &input.at(n, c, 0, 0);
            T* xh = &res.cache.normalized.at(n, c, 0, 0);
            T* y = &res.output.at(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (x[i] - mean) * inv;
                y[i] = g * xh[i] + b;
            }
        }
    }
    return res;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma,
                                     const Tensor<T>& upstream) {
    const auto& s = cache.normalized.shape();
    require_same_shape(upstream.shape(), s, "batchnorm_backward upstream gradient");
    const std::size_t C = s.c(), plane = s.h() * s.w();
    const T m = static_cast<T>(s.n() * plane);
    BatchNormGrads<T> gr{Tensor<T>(s), Tensor<T>(gamma.shape()), Tensor<T>(gamma.shape())};
    for (std::size_t c = 0; c < C; ++c) {
        T sum_g = 0, sum_gx = 0;
        for (std::size_t n = 0; n < s.n(); ++n) {
            const T* g = &upstream.at(n, c, 0, 0);
            const T* xh = &cache.normalized.at(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                sum_g += g[i];
                sum_gx += g[i] * xh[i];
            }
        }
        gr.beta[c] = sum_g;
        gr.gamma[c] = sum_gx;
        const T scale = gamma[c] * cache.inv_std[c];
        for (std::size_t n = 0; n < s.n(); ++n) {
            const T* g = &upstream.at(n, c, 0, 0);
            const T* xh = &cache.normalized.at(n, c, 0, 0);
            T* dx = &gr.input.at(n, c, 0, 0);
            if (cache.mode == Mode::training) {
                for (std::size_t i = 0; i < plane; ++i)
                    dx[i] = scale * (g[i] - sum_g / m - xh[i] * sum_gx / m);
            } else {
                for (std::size_t i = 0; i < plane; ++i) dx[i] = scale * g[i];
            }
        }
    }
    return gr;
}

// ---------------------------------------------------------------------------
// Pointwise, pooling and resampling
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
    return out;
}

/// Passes the upstream gradient where the forward input was strictly positive.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& upstream) {
    require_same_shape(input.shape(), upstream.shape(), "relu_backward");
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? upstream[i] : T(0);
    return out;
}

template <typename T>
struct MaxPoolResult {
    Tensor<T> output;
    std::vector<std::size_t> argmax; // flat input offset per output element
};

/// 2x2 window, stride 2. Ties resolve to the first element in row-major scan order.
template <typename T>
MaxPoolResult<T> maxpool2(const Tensor<T>& input) {
    require_rank4(input.shape(), "maxpool2 input");
    const auto& s = input.shape();
    if (s.h() % 2 || s.w() % 2)
        throw ShapeError("maxpool2: extents " + s.str() + " must be even; pad the input to even height and width");
    const std::size_t ho = s.h() / 2, wo = s.w() / 2;
    MaxPoolResult<T> r{Tensor<T>::nchw(s.n(), s.c(), ho, wo), std::vector<std::size_t>(s.n() * s.c() * ho * wo)};
    std::size_t o = 0;
    for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t c = 0; c < s.c(); ++c)
            for (std::size_t y = 0; y < ho; ++y)
                for (std::size_t x = 0; x < wo; ++x, ++o) {
                    std::size_t best = input.offset(n, c, 2 * y, 2 * x);
                    const std::size_t cand[3] = {input.offset(n, c, 2 * y, 2 * x + 1),
                                                 input.offset(n, c, 2 * y + 1, 2 * x),
                                                 input.offset(n, c, 2 * y + 1, 2 * x + 1)};
                    for (auto k : cand)
                        if (input[k] > input[best]) best = k;
                    r.output[o] = input[best];
                    r.argmax[o] = best;
                }
    return r;
}

template <typename T>
Tensor<T> maxpool2_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                            const Tensor<T>& upstream) {
    if (upstream.size() != argmax.size()) throw ShapeError("maxpool2_backward: upstream gradient size mismatch");
    Tensor<T> out(input_shape);
    for (std::size_t o = 0; o < argmax.size(); ++o) out[argmax[o]] += upstream[o];
    return out;
}

/// Nearest-neighbour 2x upsampling: every output 2x2 block copies its source pixel.
template <typename T>
Tensor<T> upsample2_nearest(const Tensor<T>& input) {
    require_rank4(input.shape(), "upsample2_nearest input");
    const auto& s = input.shape();
    Tensor<T> out = Tensor<T>::nchw(s.n(), s.c(), 2 * s.h(), 2 * s.w());
    for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t c = 0; c < s.c(); ++c)
            for (std::size_t y = 0; y < 2 * s.h(); ++y) {
                const T* src = &input.at(n, c, y / 2, 0);
                T* dst = &out.at(n, c, y, 0);
                for (std::size_t x = 0; x < 2 * s.w(); ++x) dst[x] = src[x / 2];
            }
    return out;
}

template <typename T>
Tensor<T> upsample2_nearest_backward(const Tensor<T>& upstream) {
    require_rank4(upstream.shape(), "upsample2_nearest_backward");
    const auto& s = upstream.shape();
    if (s.h() % 2 || s.w() % 2) throw ShapeError("upsample2_nearest_backward: odd upstream extents " + s.str());
    Tensor<T> out = Tensor<T>::nchw(s.n(), s.c(), s.h() / 2, s.w() / 2);
    for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t c = 0; c < s.c(); ++c)
            for (std::size_t y = 0; y < s.h(); ++y) {
                const T* src = &upstream.at(n, c, y, 0);
                T* dst = &out.at(n, c, y / 2, 0);
                for (std::size_t x = 0; x < s.w(); ++x) dst[x / 2] += src[x];
            }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add_inplace");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

/// Per-pixel softmax across the channel axis, max-subtracted.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& input) {
    require_rank4(input.shape(), "softmax_channels input");
    const auto& s = input.shape();
    if (s.c() < 2) throw ShapeError("softmax_channels: need at least 2 channels, got " + s.str());
    Tensor<T> out(s);
    const std::size_t plane = s.h() * s.w();
    for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t i = 0; i < plane; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t c = 0; c < s.c(); ++c) mx = std::max(mx, input[input.offset(n, c, 0, 0) + i]);
            T z = 0;
            for (std::size_t c = 0; c < s.c(); ++c) {
                const std::size_t k = input.offset(n, c, 0, 0) + i;
                out[k] = std::exp(input[k] - mx);
                z += out[k];
            }
            for (std::size_t c = 0; c < s.c(); ++c) out[out.offset(n, c, 0, 0) + i] /= z;
        }
    return out;
}

} // namespace dpn
