#pragma once

// Small differentiable kernels used by the MoE trainer. Every forward kernel
// has a hand-written backward; grad_check() verifies them against central
// differences. All arithmetic is double precision.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace sael::nn {

using Vector = std::vector<double>;

inline constexpr double kMasked = -std::numeric_limits<double>::infinity();
inline constexpr double kProbFloor = 1e-12;

// Row-major dense matrix.
class Tensor2 {
public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2(std::size_t rows, std::size_t cols, Vector data);

  static Tensor2 identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Vector& data() noexcept { return data_; }
  const Vector& data() const noexcept { return data_; }

  void fill(double v);
  bool same_shape(const Tensor2& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Tensor2&) const = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

// A trainable tensor with its gradient accumulator.
struct Param {
  Tensor2 value;
  Tensor2 grad;

  Param() = default;
  Param(std::size_t rows, std::size_t cols) : value(rows, cols), grad(rows, cols) {}
  explicit Param(Tensor2 v) : value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }
};

// Stabilized softmax. -inf entries map to exactly 0. Throws AllMasked.
Vector softmax(std::span<const double> v);
// dL/dlogits given probs p = softmax(logits) and dL/dp.
Vector softmax_backward(std::span<const double> probs, std::span<const double> dprobs);

// Keeps the k largest entries (ties to the lower index) and sets the rest to -inf.
Vector topk_mask(std::span<const double> v, std::size_t k);

// y = W x + b, W is (m x n), b is (m x 1).
Vector linear(std::span<const double> x, const Param& W, const Param& b);
// Accumulates into W.grad and b.grad; returns dL/dx.
Vector linear_backward(std::span<const double> x, Param& W, Param& b, std::span<const double> dy);

Vector relu(std::span<const double> v);
Vector relu_backward(std::span<const double> pre, std::span<const double> dy);

struct AttentionResult {
  Tensor2 output;   // t x d_h
  Tensor2 weights;  // t x t, rows on the simplex
};

// softmax_rows(Q K^T / sqrt(d_h)) V
AttentionResult attention(const Tensor2& Q, const Tensor2& K, const Tensor2& V);

struct AttentionGrads {
  Tensor2 dQ, dK, dV;
};

AttentionGrads attention_backward(const Tensor2& Q, const Tensor2& K, const Tensor2& V,
                                  const Tensor2& weights, const Tensor2& doutput);

// -ln(max(probs[target], 1e-12)). Throws NotASimplex / TargetOutOfRange.
double cross_entropy(std::span<const double> probs, std::size_t target);
// d/dprobs of cross_entropy; nonzero only at target.
Vector cross_entropy_backward(std::span<const double> probs, std::size_t target);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<param index>[<flat index>]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

// Compares each Param's .grad (filled by the caller) against central
// differences of loss(), perturbing value entries in place. Relative error
// uses max(|analytic|, |numeric|, 1e-8) as the denominator.
GradCheckReport grad_check(const std::function<double()>& loss, std::span<Param* const> params,
                           double step, double tol);

bool all_finite(std::span<const double> v);

}  // namespace sael::nn
