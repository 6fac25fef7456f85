#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "xpol/common.hpp"

namespace xpol {

// Dense row-major f64 tensor. Everything in this project is rank 2
// ([rows, cols]); scalars are [1, 1] and vectors are [1, n] rows.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor full(std::size_t rows, std::size_t cols, double value);
  static Tensor scalar(double value);
  static Tensor row(std::span<const double> values);
  static Tensor row(std::initializer_list<double> values);
  static Tensor from_rows(std::size_t rows, std::size_t cols,
                          std::span<const double> values);

  std::size_t size() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  double item() const;  // value of a [1,1] tensor

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
};

// Kernels. Forward numerics live here so the autodiff graph and the
// forward-only inference path share one implementation.
Tensor k_matmul(const Tensor& a, const Tensor& b);
Tensor k_transpose(const Tensor& a);
Tensor k_add(const Tensor& a, const Tensor& b);
Tensor k_sub(const Tensor& a, const Tensor& b);
Tensor k_mul(const Tensor& a, const Tensor& b);
Tensor k_scale(const Tensor& a, double c);
// Adds a [1, n] bias row to every row of a.
Tensor k_add_rowvec(const Tensor& a, const Tensor& bias);
Tensor k_relu(const Tensor& a);
Tensor k_gelu(const Tensor& a);
// Row-wise softmax with max-subtraction.
Tensor k_softmax(const Tensor& a);
// Row-wise normalization to zero mean / unit variance (no affine part).
Tensor k_layer_norm(const Tensor& a, double eps = 1e-5);
Tensor k_concat_cols(std::span<const Tensor* const> parts);
Tensor k_mean_rows(const Tensor& a);
double k_reduce_mean(const Tensor& a);
double k_reduce_sum(const Tensor& a);

}  // namespace xpol
