#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dpn/error.hpp"

namespace dpn {

/// Extents of a tensor of rank 0..4. Activations are always rank 4 in
/// (N, C, H, W) order; parameters may use lower ranks (bias vectors).
class Shape {
public:
    static constexpr std::size_t max_rank = 4;

    Shape() = default;
    Shape(std::initializer_list<std::size_t> dims) {
        if (dims.size() > max_rank) throw ShapeError("shape rank exceeds 4");
        for (auto d : dims) dims_[rank_++] = d;
    }
    static Shape nchw(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return Shape{n, c, h, w};
    }
    static Shape from(std::span<const std::size_t> dims) {
        if (dims.size() > max_rank) throw ShapeError("shape rank exceeds 4");
        Shape s;
        for (auto d : dims) s.dims_[s.rank_++] = d;
        return s;
    }

    std::size_t rank() const noexcept { return rank_; }
    std::size_t operator[](std::size_t i) const { return dims_.at(i); }
    std::span<const std::size_t> dims() const noexcept { return {dims_.data(), rank_}; }

    std::size_t numel() const noexcept {
        std::size_t n = 1;
        for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
        return n;
    }

    // NCHW accessors; only meaningful for rank-4 shapes.
    std::size_t n() const { return dims_[0]; }
    std::size_t c() const { return dims_[1]; }
    std::size_t h() const { return dims_[2]; }
    std::size_t w() const { return dims_[3]; }

    std::string str() const {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
        os << ')';
        return os.str();
    }

    friend bool operator==(const Shape& a, const Shape& b) {
        if (a.rank_ != b.rank_) return false;
        for (std::size_t i = 0; i < a.rank_; ++i)
            if (a.dims_[i] != b.dims_[i]) return false;
        return true;
    }

private:
    std::array<std::size_t, max_rank> dims_{};
    std::size_t rank_ = 0;
};

/// Dense row-major tensor. Value type; copies are deep.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.numel())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_.str());
    }

    static Tensor nchw(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0)) {
        return Tensor(Shape::nchw(n, c, h, w), fill);
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() & noexcept { return data_; }
    std::span<const T> data() const& noexcept { return data_; }
    // A span into a temporary would dangle.
    void data() && = delete;
    T* raw() noexcept { return data_.data(); }
    const T* raw() const noexcept { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[offset(n, c, h, w)];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[offset(n, c, h, w)];
    }

    std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

inline void require_rank4(const Shape& s, const char* what) {
    if (s.rank() != 4)
        throw ShapeError(std::string(what) + ": expected rank-4 (N,C,H,W) tensor, got " + s.str());
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (!(a == b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "max_abs_diff");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Copies a rectangular window [y0, y0+h) x [x0, x0+w) of every (n, c) plane.
template <typename T>
Tensor<T> crop(const Tensor<T>& in, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    require_rank4(in.shape(), "crop");
    const auto& s = in.shape();
    if (y0 + h > s.h() || x0 + w > s.w())
        throw ShapeError("crop window exceeds tensor extents " + s.str());
    Tensor<T> out = Tensor<T>::nchw(s.n(), s.c(), h, w);
    for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t c = 0; c < s.c(); ++c)
            for (std::size_t y = 0; y < h; ++y)
                std::copy_n(&in.at(n, c, y0 + y, x0), w, &out.at(n, c, y, 0));
    return out;
}

/// Index into [0, n) under whole-sample symmetric reflection (edge pixel not
/// repeated), folding repeatedly so any offset is valid.
inline std::size_t reflect_index(long long i, std::size_t n) {
    if (n == 1) return 0;
    const long long period = 2 * (static_cast<long long>(n) - 1);
    long long m = i % period;
    if (m < 0) m += period;
    if (m >= static_cast<long long>(n)) m = period - m;
    return static_cast<std::size_t>(m);
}

/// Reads window [y0, y0+h) x [x0, x0+w) of `in` where coordinates may fall
/// outside the tensor; out-of-range samples are reflected back inside.
template <typename T>
Tensor<T> reflect_window(const Tensor<T>& in, long long y0, long long x0, std::size_t h, std::size_t w) {
    require_rank4(in.shape(), "reflect_window");
    const auto& s = in.shape();
    Tensor<T> out = Tensor<T>::nchw(s.n(), s.c(), h, w);
    std::vector<std::size_t> xs(w);
    for (std::size_t x = 0; x < w; ++x) xs[x] = reflect_index(x0 + static_cast<long long>(x), s.w());
    for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t c = 0; c < s.c(); ++c)
            for (std::size_t y = 0; y < h; ++y) {
                const std::size_t sy = reflect_index(y0 + static_cast<long long>(y), s.h());
                const T* src = &in.at(n, c, sy, 0);
                T* dst = &out.at(n, c, y, 0);
                for (std::size_t x = 0; x < w; ++x) dst[x] = src[xs[x]];
            }
    return out;
}

} // namespace dpn
