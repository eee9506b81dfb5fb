#include "uvq/tensor.hpp"

#include <cmath>
#include <utility>

namespace uvq {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> s)
    : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape)) {
        throw DataError("tensor data length does not match shape");
    }
}

Tensor Tensor::full(std::vector<std::size_t> s, double v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor Tensor::reshaped(std::vector<std::size_t> s) const {
    if (shape_numel(s) != numel()) {
        throw DataError("reshape changes element count");
    }
    return Tensor(std::move(s), data);
}

void Tensor::add_scaled(const Tensor& o, double scale) {
    if (!same_shape(o)) throw DataError("add_scaled shape mismatch");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += scale * o.data[i];
}

void Tensor::fill(double v) {
    for (double& x : data) x = v;
}

void Tensor::snap_to_fp32() {
    for (double& x : data) x = static_cast<double>(static_cast<float>(x));
}

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::size_t batch = x.shape[0];
    const std::size_t in = x.shape[1];
    const std::size_t out = w.shape[0];
    if (w.shape[1] != in) throw DataError("dense weight/input extent mismatch");
    Tensor y({batch, out});
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b.numel() ? b[o] : 0.0;
            const double* wr = &w.data[o * in];
            const double* xr = &x.data[n * in];
            for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
            y.at(n, o) = acc;
        }
    }
    return y;
}

double mse(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw DataError("mse shape mismatch");
    if (a.numel() == 0) return 0.0;
    return sum_sq_diff(a, b) / static_cast<double>(a.numel());
}

double sum_sq_diff(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) throw DataError("sum_sq_diff size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace uvq
