#pragma once

// Dense tensor substrate shared by every layer.
//
// Layout: activations are [batch, channels, time] with time contiguous, so
// element (b, c, t) lives at (b * C + c) * T + t. Flat tensors are
// [batch, features]. Parameters are [out, in, kernel] for convolutions and
// [out, in] for fully connected heads.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace wsmt {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename Scalar>
class BasicTensor {
public:
    using value_type = Scalar;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

    BasicTensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_size(shape_) != data_.size()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_string(shape_));
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }
    std::span<Scalar> values() { return data_; }
    std::span<const Scalar> values() const { return data_; }

    Scalar& operator[](std::size_t i) { return data_[i]; }
    const Scalar& operator[](std::size_t i) const { return data_[i]; }

    // Row view of a rank-2 tensor, or the (b, c) time series of a rank-3 one.
    std::span<Scalar> row(std::size_t r) {
        const std::size_t width = data_.size() / shape_.at(0);
        return std::span<Scalar>(data_).subspan(r * width, width);
    }
    std::span<const Scalar> row(std::size_t r) const {
        const std::size_t width = data_.size() / shape_.at(0);
        return std::span<const Scalar>(data_).subspan(r * width, width);
    }
    std::span<Scalar> series(std::size_t b, std::size_t c) {
        const std::size_t t = shape_.at(2);
        return std::span<Scalar>(data_).subspan((b * shape_[1] + c) * t, t);
    }
    std::span<const Scalar> series(std::size_t b, std::size_t c) const {
        const std::size_t t = shape_.at(2);
        return std::span<const Scalar>(data_).subspan((b * shape_[1] + c) * t, t);
    }

    void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
    }

    BasicTensor reshaped(Shape shape) const {
        return BasicTensor(std::move(shape), data_);
    }

    template <typename Other>
    BasicTensor<Other> cast() const {
        std::vector<Other> out(data_.begin(), data_.end());
        return BasicTensor<Other>(shape_, std::move(out));
    }

    friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<Scalar> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// A trainable value with a gradient buffer of identical shape.
template <typename Scalar>
struct BasicParam {
    BasicTensor<Scalar> value;
    BasicTensor<Scalar> grad;

    BasicParam() = default;
    explicit BasicParam(BasicTensor<Scalar> v) : value(std::move(v)), grad(value.shape()) {}

    const Shape& shape() const { return value.shape(); }
    void zero_grad() { grad.fill(Scalar(0)); }

    void accumulate(const BasicTensor<Scalar>& g) {
        if (g.shape() != grad.shape()) {
            throw ShapeError("gradient shape " + shape_string(g.shape()) + " does not match parameter " +
                             shape_string(grad.shape()));
        }
        for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }

    template <typename Other>
    BasicParam<Other> cast() const {
        BasicParam<Other> out(value.template cast<Other>());
        out.grad = grad.template cast<Other>();
        return out;
    }
};

using Param = BasicParam<float>;

template <typename Scalar>
void require_finite(const BasicTensor<Scalar>& t, const char* what) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

enum class ElementwiseOp { add, sub, mul, max };

namespace detail {

template <typename Scalar>
Scalar apply(ElementwiseOp op, Scalar x, Scalar y) {
    switch (op) {
    case ElementwiseOp::add: return x + y;
    case ElementwiseOp::sub: return x - y;
    case ElementwiseOp::mul: return x * y;
    case ElementwiseOp::max: return std::max(x, y);
    }
    return x;
}

// True when `vec` is a per-channel vector for `full` (rank 1, extent equal to axis 1).
template <typename Scalar>
bool is_channel_vector(const BasicTensor<Scalar>& vec, const BasicTensor<Scalar>& full) {
    return vec.rank() == 1 && full.rank() >= 2 && vec.dim(0) == full.dim(1);
}

}  // namespace detail

// Pointwise binary op. Equal shapes combine directly; a rank-1 operand whose
// length matches axis 1 of the other is broadcast across batch and time.
template <typename Scalar>
BasicTensor<Scalar> elementwise(ElementwiseOp op, const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
    if (a.shape() == b.shape()) {
        BasicTensor<Scalar> out(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply(op, a[i], b[i]);
        return out;
    }
    const bool b_is_vec = detail::is_channel_vector(b, a);
    const bool a_is_vec = !b_is_vec && detail::is_channel_vector(a, b);
    if (!a_is_vec && !b_is_vec) {
        throw ShapeError("cannot broadcast " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
    }
    const BasicTensor<Scalar>& full = b_is_vec ? a : b;
    const BasicTensor<Scalar>& vec = b_is_vec ? b : a;
    const std::size_t channels = full.dim(1);
    const std::size_t inner = full.size() / (full.dim(0) * channels);
    BasicTensor<Scalar> out(full.shape());
    for (std::size_t i = 0; i < full.size(); ++i) {
        const Scalar v = vec[(i / inner) % channels];
        out[i] = b_is_vec ? detail::apply(op, full[i], v) : detail::apply(op, v, full[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fully connected affine map: y[b] = W x[b] + bias
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicTensor<Scalar> linear_forward(const BasicParam<Scalar>& weight, const BasicTensor<Scalar>& x,
                                   const BasicParam<Scalar>& bias) {
    if (weight.value.rank() != 2 || x.rank() != 2 || bias.value.rank() != 1) {
        throw ShapeError("linear expects W [out,in], x [batch,in], bias [out]");
    }
    const std::size_t out_dim = weight.value.dim(0);
    const std::size_t in_dim = weight.value.dim(1);
    if (x.dim(1) != in_dim || bias.value.dim(0) != out_dim) {
        throw ShapeError("linear dimension mismatch: W " + shape_string(weight.value.shape()) + ", x " +
                         shape_string(x.shape()) + ", bias " + shape_string(bias.value.shape()));
    }
    const std::size_t batch = x.dim(0);
    BasicTensor<Scalar> y({batch, out_dim});
    for (std::size_t b = 0; b < batch; ++b) {
        const Scalar* xr = x.data() + b * in_dim;
        for (std::size_t o = 0; o < out_dim; ++o) {
            const Scalar* wr = weight.value.data() + o * in_dim;
            Scalar acc = bias.value[o];
            for (std::size_t i = 0; i < in_dim; ++i) acc += wr[i] * xr[i];
            y[b * out_dim + o] = acc;
        }
    }
    return y;
}

// Accumulates dW and dbias into the parameter grads and returns dx.
template <typename Scalar>
BasicTensor<Scalar> linear_backward(BasicParam<Scalar>& weight, const BasicTensor<Scalar>& x,
                                    BasicParam<Scalar>& bias, const BasicTensor<Scalar>& grad_out) {
    const std::size_t out_dim = weight.value.dim(0);
    const std::size_t in_dim = weight.value.dim(1);
    const std::size_t batch = x.dim(0);
    if (grad_out.shape() != Shape{batch, out_dim}) {
        throw ShapeError("linear backward: grad_out " + shape_string(grad_out.shape()));
    }
    BasicTensor<Scalar> grad_x({batch, in_dim});
    for (std::size_t b = 0; b < batch; ++b) {
        const Scalar* xr = x.data() + b * in_dim;
        Scalar* gx = grad_x.data() + b * in_dim;
        for (std::size_t o = 0; o < out_dim; ++o) {
            const Scalar g = grad_out[b * out_dim + o];
            if (g == Scalar(0)) continue;
            const Scalar* wr = weight.value.data() + o * in_dim;
            Scalar* gw = weight.grad.data() + o * in_dim;
            for (std::size_t i = 0; i < in_dim; ++i) {
                gw[i] += g * xr[i];
                gx[i] += g * wr[i];
            }
            bias.grad[o] += g;
        }
    }
    return grad_x;
}

// ---------------------------------------------------------------------------
// Gradient utilities
// ---------------------------------------------------------------------------

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps), coordinate by coordinate.
inline Tensor64 finite_diff_grad(const std::function<double(const Tensor64&)>& f, const Tensor64& x,
                                 double eps) {
    if (!(eps > 0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    Tensor64 probe = x;
    Tensor64 grad(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = f(probe);
        probe[i] = orig - eps;
        const double down = f(probe);
        probe[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("finite_diff_grad: non-finite function value at coordinate " + std::to_string(i));
        }
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

// max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|). When both sides are
// below `floor` the gradient is identically zero up to round-off and the
// absolute difference over `floor` is returned instead.
template <typename Scalar>
double max_relative_error(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, double floor = 1e-5) {
    if (a.shape() != b.shape()) throw ShapeError("max_relative_error: shape mismatch");
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(double(a[i]) - double(b[i])));
        scale = std::max({scale, std::abs(double(a[i])), std::abs(double(b[i]))});
    }
    return diff / std::max(scale, floor);
}

template <typename Scalar>
void zero_grads(std::span<BasicParam<Scalar>* const> params) {
    for (auto* p : params) p->zero_grad();
}

}  // namespace wsmt
