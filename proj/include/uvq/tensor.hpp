#ifndef UVQ_TENSOR_HPP
#define UVQ_TENSOR_HPP

#include <cstddef>
#include <vector>

#include "uvq/errors.hpp"

namespace uvq {

// Dense row-major fp64 tensor. fp64 everywhere internally; fp32 only at
// serialization boundaries.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s);
    Tensor(std::vector<std::size_t> s, std::vector<double> d);

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<std::size_t> s, double v);

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t extent(std::size_t dim) const { return shape.at(dim); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;

    Tensor reshaped(std::vector<std::size_t> s) const;

    void add_scaled(const Tensor& o, double scale);  // *this += scale * o
    void fill(double v);

    // Round every element through fp32 and back. Applied to values that cross
    // a serialization boundary so file round-trips stay bit-identical.
    void snap_to_fp32();
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);

// y[B,o] = x[B,i] * W[o,i]^T + b[o]
Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b);

double mse(const Tensor& a, const Tensor& b);     // mean over all elements
double sum_sq_diff(const Tensor& a, const Tensor& b);

}  // namespace uvq

#endif
