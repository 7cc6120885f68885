#include "sael/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sael/errors.hpp"

namespace sael::nn {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, Vector data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeMismatch("tensor data length " + std::to_string(data_.size()) + " != " +
                        std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Tensor2 Tensor2::identity(std::size_t n) {
  Tensor2 t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

void Tensor2::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Vector softmax(std::span<const double> v) {
  double mx = kMasked;
  for (double x : v) {
    if (x > mx) mx = x;
  }
  if (mx == kMasked) throw AllMasked();

  Vector out(v.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == kMasked) continue;
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

Vector softmax_backward(std::span<const double> probs, std::span<const double> dprobs) {
  if (probs.size() != dprobs.size()) throw ShapeMismatch("softmax_backward");
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] != 0.0) dot += probs[i] * dprobs[i];
  }
  Vector out(probs.size(), 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] != 0.0) out[i] = probs[i] * (dprobs[i] - dot);
  }
  return out;
}

Vector topk_mask(std::span<const double> v, std::size_t k) {
  if (k == 0 || k > v.size()) throw KTooLarge(k, v.size());
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  Vector out(v.size(), kMasked);
  for (std::size_t i = 0; i < k; ++i) out[order[i]] = v[order[i]];
  return out;
}

Vector linear(std::span<const double> x, const Param& W, const Param& b) {
  const std::size_t m = W.value.rows();
  const std::size_t n = W.value.cols();
  if (x.size() != n || b.value.rows() != m || b.value.cols() != 1) {
    throw ShapeMismatch("linear: W " + std::to_string(m) + "x" + std::to_string(n) + ", x " +
                        std::to_string(x.size()) + ", b " + std::to_string(b.value.rows()) + "x" +
                        std::to_string(b.value.cols()));
  }
  Vector y(m);
  for (std::size_t i = 0; i < m; ++i) {
    double acc = b.value(i, 0);
    const auto w = W.value.row(i);
    for (std::size_t j = 0; j < n; ++j) acc += w[j] * x[j];
    y[i] = acc;
  }
  return y;
}

Vector linear_backward(std::span<const double> x, Param& W, Param& b, std::span<const double> dy) {
  const std::size_t m = W.value.rows();
  const std::size_t n = W.value.cols();
  if (x.size() != n || dy.size() != m) throw ShapeMismatch("linear_backward");
  Vector dx(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double g = dy[i];
    if (g == 0.0) continue;
    b.grad(i, 0) += g;
    auto gw = W.grad.row(i);
    const auto w = W.value.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      gw[j] += g * x[j];
      dx[j] += g * w[j];
    }
  }
  return dx;
}

Vector relu(std::span<const double> v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  return out;
}

Vector relu_backward(std::span<const double> pre, std::span<const double> dy) {
  Vector out(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) out[i] = pre[i] > 0.0 ? dy[i] : 0.0;
  return out;
}

AttentionResult attention(const Tensor2& Q, const Tensor2& K, const Tensor2& V) {
  if (!Q.same_shape(K) || !Q.same_shape(V) || Q.cols() == 0) {
    throw ShapeMismatch("attention: Q/K/V must share a t x d_h shape with d_h >= 1");
  }
  const std::size_t t = Q.rows();
  const std::size_t dh = Q.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  AttentionResult r{Tensor2(t, dh), Tensor2(t, t)};
  Vector logits(t);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < dh; ++c) s += Q(i, c) * K(j, c);
      logits[j] = s * scale;
    }
    const Vector a = softmax(logits);
    std::copy(a.begin(), a.end(), r.weights.row(i).begin());
    for (std::size_t j = 0; j < t; ++j) {
      for (std::size_t c = 0; c < dh; ++c) r.output(i, c) += a[j] * V(j, c);
    }
  }
  return r;
}

AttentionGrads attention_backward(const Tensor2& Q, const Tensor2& K, const Tensor2& V,
                                  const Tensor2& weights, const Tensor2& doutput) {
  const std::size_t t = Q.rows();
  const std::size_t dh = Q.cols();
  if (!doutput.same_shape(Q) || weights.rows() != t || weights.cols() != t) {
    throw ShapeMismatch("attention_backward");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  AttentionGrads g{Tensor2(t, dh), Tensor2(t, dh), Tensor2(t, dh)};

  Vector dA(t);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < dh; ++c) {
        s += doutput(i, c) * V(j, c);
        g.dV(j, c) += weights(i, j) * doutput(i, c);
      }
      dA[j] = s;
    }
    const Vector dS = softmax_backward(weights.row(i), dA);
    for (std::size_t j = 0; j < t; ++j) {
      const double ds = dS[j] * scale;
      if (ds == 0.0) continue;
      for (std::size_t c = 0; c < dh; ++c) {
        g.dQ(i, c) += ds * K(j, c);
        g.dK(j, c) += ds * Q(i, c);
      }
    }
  }
  return g;
}

double cross_entropy(std::span<const double> probs, std::size_t target) {
  if (target >= probs.size()) throw TargetOutOfRange(target, probs.size());
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= -1e-9) || !std::isfinite(p)) throw NotASimplex("negative or non-finite entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw NotASimplex("entries sum to " + std::to_string(sum));
  return -std::log(std::max(probs[target], kProbFloor));
}

Vector cross_entropy_backward(std::span<const double> probs, std::size_t target) {
  if (target >= probs.size()) throw TargetOutOfRange(target, probs.size());
  Vector d(probs.size(), 0.0);
  if (probs[target] > kProbFloor) d[target] = -1.0 / probs[target];
  return d;
}

GradCheckReport grad_check(const std::function<double()>& loss, std::span<Param* const> params,
                           double step, double tol) {
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Param& param = *params[p];
    auto& values = param.value.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double plus = loss();
      values[i] = saved - step;
      const double minus = loss();
      values[i] = saved;

      const double numeric = (plus - minus) / (2.0 * step);
      const double analytic = param.grad.data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.checked;
      if (rel > report.max_relative_error || !std::isfinite(rel)) {
        report.max_relative_error = rel;
        report.worst = std::to_string(p) + "[" + std::to_string(i) + "]";
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = std::isfinite(report.max_relative_error) && report.max_relative_error < tol;
  return report;
}

}  // namespace sael::nn
