#include "xpol/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace xpol {

namespace {

void require_2d(const Tensor& t, const char* who) {
  if (t.ndim() != 2) throw ShapeMismatch(std::string(who) + ": tensor must be rank 2");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  require_2d(a, who);
  if (!a.same_shape(b)) throw ShapeMismatch(std::string(who) + ": shape mismatch");
}

}  // namespace

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
  Tensor t;
  t.shape = {rows, cols};
  t.data.assign(rows * cols, 0.0);
  return t;
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value) {
  Tensor t = zeros(rows, cols);
  std::fill(t.data.begin(), t.data.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return full(1, 1, value); }

Tensor Tensor::row(std::span<const double> values) {
  Tensor t;
  t.shape = {1, values.size()};
  t.data.assign(values.begin(), values.end());
  return t;
}

Tensor Tensor::row(std::initializer_list<double> values) {
  return row(std::span<const double>(values.begin(), values.size()));
}

Tensor Tensor::from_rows(std::size_t rows, std::size_t cols,
                         std::span<const double> values) {
  if (values.size() != rows * cols) {
    throw ShapeMismatch("Tensor::from_rows: value count does not match shape");
  }
  Tensor t;
  t.shape = {rows, cols};
  t.data.assign(values.begin(), values.end());
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeMismatch("Tensor::item: tensor is not a scalar");
  return data[0];
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor k_matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dims differ");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c = Tensor::zeros(m, n);
  // i-k-j order: unit-stride inner loop over both b and c.
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data.data() + i * k;
    double* crow = c.data.data() + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b.data.data() + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor k_transpose(const Tensor& a) {
  require_2d(a, "transpose");
  Tensor t = Tensor::zeros(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor k_add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
  return c;
}

Tensor k_sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

Tensor k_mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data[i] *= b.data[i];
  return c;
}

Tensor k_scale(const Tensor& a, double c) {
  Tensor out = a;
  for (double& v : out.data) v *= c;
  return out;
}

Tensor k_add_rowvec(const Tensor& a, const Tensor& bias) {
  require_2d(a, "add_rowvec");
  if (bias.ndim() != 2 || bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeMismatch("add_rowvec: bias must be [1, cols]");
  }
  Tensor c = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) c.at(i, j) += bias.data[j];
  return c;
}

Tensor k_relu(const Tensor& a) {
  Tensor c = a;
  for (double& v : c.data) v = v > 0.0 ? v : 0.0;
  return c;
}

Tensor k_gelu(const Tensor& a) {
  Tensor c = a;
  for (double& v : c.data) v = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  return c;
}

Tensor k_softmax(const Tensor& a) {
  require_2d(a, "softmax");
  Tensor c = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* row = c.data.data() + i * a.cols();
    const double mx = *std::max_element(row, row + a.cols());
    double sum = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < a.cols(); ++j) row[j] /= sum;
  }
  return c;
}

Tensor k_layer_norm(const Tensor& a, double eps) {
  require_2d(a, "layer_norm");
  Tensor c = a;
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* row = c.data.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) row[j] = (row[j] - mean) * inv;
  }
  return c;
}

Tensor k_concat_cols(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw ShapeMismatch("concat: no inputs");
  const std::size_t rows = parts[0]->rows();
  std::size_t cols = 0;
  for (const Tensor* p : parts) {
    require_2d(*p, "concat");
    if (p->rows() != rows) throw ShapeMismatch("concat: row counts differ");
    cols += p->cols();
  }
  Tensor out = Tensor::zeros(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t off = 0;
    for (const Tensor* p : parts) {
      const double* src = p->data.data() + i * p->cols();
      std::copy(src, src + p->cols(), out.data.data() + i * cols + off);
      off += p->cols();
    }
  }
  return out;
}

Tensor k_mean_rows(const Tensor& a) {
  require_2d(a, "mean_rows");
  Tensor out = Tensor::zeros(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.data[j] += a.at(i, j);
  const double inv = 1.0 / static_cast<double>(a.rows());
  for (double& v : out.data) v *= inv;
  return out;
}

double k_reduce_mean(const Tensor& a) {
  return k_reduce_sum(a) / static_cast<double>(a.size());
}

double k_reduce_sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data) s += v;
  return s;
}

}  // namespace xpol
