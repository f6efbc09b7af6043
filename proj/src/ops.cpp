// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "siit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "siit/error.hpp"

namespace siit::ops {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

Tensor make_out(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

void check_finite(const char* op, const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw DomainError(std::string(op) + ": produced a non-finite value");
  }
}

bool is_suffix(const Shape& whole, const Shape& part) {
  if (part.size() > whole.size()) return false;
  return std::equal(part.rbegin(), part.rend(), whole.rbegin());
}

// C[M,N] (+)= op(A) op(B); A is [M,K] (or [K,M] when ta), B is [K,N] (or [N,K] when tb).
void gemm(const double* A, const double* B, double* C, std::size_t M, std::size_t K,
          std::size_t N, bool ta, bool tb) {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  Eigen::Map<Mat> c(C, static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(N));
  const auto m = static_cast<Eigen::Index>(M), k = static_cast<Eigen::Index>(K),
             n = static_cast<Eigen::Index>(N);
  if (!ta && !tb) {
    c.noalias() += CMap(A, m, k) * CMap(B, k, n);
  } else if (!ta && tb) {
    c.noalias() += CMap(A, m, k) * CMap(B, n, k).transpose();
  } else if (ta && !tb) {
    c.noalias() += CMap(A, k, m).transpose() * CMap(B, k, n);
  } else {
    c.noalias() += CMap(A, k, m).transpose() * CMap(B, n, k).transpose();
  }
}

enum class Binary { add, sub, mul, div };

const char* binary_name(Binary op) {
  switch (op) {
    case Binary::add: return "add";
    case Binary::sub: return "sub";
    case Binary::mul: return "mul";
    case Binary::div: return "div";
  }
  return "?";
}

Tensor binary(Binary op, const Tensor& a, const Tensor& b) {
  if (!is_suffix(a.shape(), b.shape())) {
    throw ShapeError(std::string(binary_name(op)) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not conform");
  }
  const std::size_t n = a.numel();
  const std::size_t m = b.numel();
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(n);
  switch (op) {
    case Binary::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] + bd[i % m];
      break;
    case Binary::sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] - bd[i % m];
      break;
    case Binary::mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] * bd[i % m];
      break;
    case Binary::div:
      for (std::size_t j = 0; j < m; ++j) {
        if (bd[j] == 0.0) throw DomainError("div: division by zero");
      }
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] / bd[i % m];
      break;
  }
  Tensor result = make_out(a.shape(), std::move(out));
  if (op == Binary::div || op == Binary::mul) check_finite(binary_name(op), result);
  if (Tape::should_record({&a, &b})) {
    ImplPtr ai = a.impl(), bi = b.impl(), oi = result.impl();
    Tape::current()->record(binary_name(op), {ai, bi}, oi, [op, ai, bi, oi, n, m](const std::vector<double>& g) {
      const auto& ad = ai->data;
      const auto& bd = bi->data;
      if (ai->requires_grad) {
        auto& ga = grad_buffer(*ai);
        switch (op) {
          case Binary::add:
          case Binary::sub:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            break;
          case Binary::mul:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bd[i % m];
            break;
          case Binary::div:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / bd[i % m];
            break;
        }
      }
      if (bi->requires_grad) {
        auto& gb = grad_buffer(*bi);
        switch (op) {
          case Binary::add:
            for (std::size_t i = 0; i < n; ++i) gb[i % m] += g[i];
            break;
          case Binary::sub:
            for (std::size_t i = 0; i < n; ++i) gb[i % m] -= g[i];
            break;
          case Binary::mul:
            for (std::size_t i = 0; i < n; ++i) gb[i % m] += g[i] * ad[i];
            break;
          case Binary::div:
            for (std::size_t i = 0; i < n; ++i) {
              const double bv = bd[i % m];
              gb[i % m] -= g[i] * ad[i] / (bv * bv);
            }
            break;
        }
      }
    });
  }
  return result;
}

// Elementwise op with derivative expressed through input x and output y.
template <class Fwd, class Deriv>
Tensor unary(const char* kind, const Tensor& a, Fwd fwd, Deriv deriv, bool check = false) {
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i]);
  Tensor result = make_out(a.shape(), std::move(out));
  if (check) check_finite(kind, result);
  if (Tape::should_record({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    Tape::current()->record(kind, {ai}, oi, [ai, oi, deriv](const std::vector<double>& g) {
      auto& ga = grad_buffer(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(ai->data[i], oi->data[i]);
    });
  }
  return result;
}

std::size_t last_dim(const Tensor& a, const char* op) {
  if (a.rank() == 0) throw ShapeError(std::string(op) + ": needs rank >= 1, got a scalar");
  return a.shape().back();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  auto fail = [&] {
    throw ShapeError("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " do not conform");
  };
  if (a.rank() < 2 || b.rank() < 2) fail();
  const std::size_t M = a.shape()[a.rank() - 2];
  const std::size_t K = a.shape().back();
  const std::size_t N = b.shape().back();
  if (b.shape()[b.rank() - 2] != K) fail();
  std::size_t batches = 1;
  bool batched = false;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(N);
  std::size_t rows = a.numel() / K;
  if (b.rank() > 2) {
    if (b.rank() != a.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      fail();
    }
    batched = true;
    batches = a.numel() / (M * K);
    rows = M;
  }
  std::vector<double> out(batches * rows * N, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  if (batched) {
    for (std::size_t t = 0; t < batches; ++t) {
      gemm(A + t * rows * K, B + t * K * N, out.data() + t * rows * N, rows, K, N, false, false);
    }
  } else {
    // One call per leading index keeps each row's rounding independent of the batch size.
    for (std::size_t r = 0; r < rows; r += M) gemm(A + r * K, B, out.data() + r * N, M, K, N, false, false);
  }
  Tensor result = make_out(std::move(out_shape), std::move(out));
  if (Tape::should_record({&a, &b})) {
    ImplPtr ai = a.impl(), bi = b.impl();
    Tape::current()->record(
        "matmul", {ai, bi}, result.impl(),
        [ai, bi, batches, rows, K, N, batched](const std::vector<double>& g) {
          for (std::size_t t = 0; t < batches; ++t) {
            const double* G = g.data() + t * rows * N;
            const double* Bp = bi->data.data() + (batched ? t * K * N : 0);
            const double* Ap = ai->data.data() + t * rows * K;
            if (ai->requires_grad) {
              gemm(G, Bp, grad_buffer(*ai).data() + t * rows * K, rows, N, K, false, true);
            }
            if (bi->requires_grad) {
              gemm(Ap, G, grad_buffer(*bi).data() + (batched ? t * K * N : 0), K, rows, N, true,
                   false);
            }
          }
        });
  }
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(Binary::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(Binary::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(Binary::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(Binary::div, a, b); }

Tensor add_scalar(const Tensor& a, double c) {
  return unary(
      "add", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary(
      "mul", a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, true);
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  }
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor abs(const Tensor& a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor gelu(const Tensor& a) {
  // tanh approximation
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return unary(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x))); },
      [](double x, double) {
        const double u = kC * (x + kA * x * x * x);
        const double t = std::tanh(u);
        const double du = kC * (1.0 + 3.0 * kA * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax(const Tensor& a) {
  const std::size_t d = last_dim(a, "softmax");
  const std::size_t rows = a.numel() / d;
  const auto ad = a.data();
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = ad.data() + r * d;
    double* y = out.data() + r * d;
    const double mx = *std::max_element(x, x + d);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < d; ++j) y[j] /= s;
  }
  Tensor result = make_out(a.shape(), std::move(out));
  if (Tape::should_record({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    Tape::current()->record("softmax", {ai}, oi, [ai, oi, rows, d](const std::vector<double>& g) {
      auto& ga = grad_buffer(*ai);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = oi->data.data() + r * d;
        const double* gy = g.data() + r * d;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += y[j] * (gy[j] - dot);
      }
    });
  }
  return result;
}

Tensor log_softmax(const Tensor& a) {
  const std::size_t d = last_dim(a, "log_softmax");
  const std::size_t rows = a.numel() / d;
  const auto ad = a.data();
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = ad.data() + r * d;
    double* y = out.data() + r * d;
    const double mx = *std::max_element(x, x + d);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < d; ++j) y[j] = x[j] - lse;
  }
  Tensor result = make_out(a.shape(), std::move(out));
  if (Tape::should_record({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    Tape::current()->record("softmax", {ai}, oi, [ai, oi, rows, d](const std::vector<double>& g) {
      auto& ga = grad_buffer(*ai);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = oi->data.data() + r * d;
        const double* gy = g.data() + r * d;
        double gs = 0.0;
        for (std::size_t j = 0; j < d; ++j) gs += gy[j];
        for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += gy[j] - std::exp(y[j]) * gs;
      }
    });
  }
  return result;
}

Tensor layer_stats(const Tensor& a, double eps) {
  const std::size_t d = last_dim(a, "layer_stats");
  const std::size_t rows = a.numel() / d;
  const auto ad = a.data();
  std::vector<double> out(a.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = ad.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (x[j] - mu) * is;
  }
  Tensor result = make_out(a.shape(), std::move(out));
  if (Tape::should_record({&a})) {
    ImplPtr ai = a.impl(), oi = result.impl();
    Tape::current()->record(
        "layer_stats", {ai}, oi, [ai, oi, rows, d, inv_std = std::move(inv_std)](const std::vector<double>& g) {
          auto& ga = grad_buffer(*ai);
          const double dd = static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            const double* y = oi->data.data() + r * d;
            const double* gy = g.data() + r * d;
            double gsum = 0.0, gysum = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              gsum += gy[j];
              gysum += gy[j] * y[j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              ga[r * d + j] += inv_std[r] * (gy[j] - gsum / dd - y[j] * gysum / dd);
            }
          }
        });
  }
  return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> data(a.data().begin(), a.data().end());
  Tensor result = make_out(std::move(shape), std::move(data));
  if (Tape::should_record({&a})) {
    ImplPtr ai = a.impl();
    Tape::current()->record("reshape", {ai}, result.impl(), [ai](const std::vector<double>& g) {
      accumulate_grad(*ai, g);
    });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("transpose: needs rank >= 2, got " + shape_str(a.shape()));
  const std::size_t R = a.shape()[a.rank() - 2];
  const std::size_t C = a.shape().back();
  const std::size_t batches = a.numel() / (R * C);
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  const auto ad = a.data();
  std::vector<double> out(a.numel());
  for (std::size_t t = 0; t < batches; ++t) {
    for (std::size_t i = 0; i < R; ++i) {
      for (std::size_t j = 0; j < C; ++j) out[t * R * C + j * R + i] = ad[t * R * C + i * C + j];
    }
  }
  Tensor result = make_out(std::move(shape), std::move(out));
  if (Tape::should_record({&a})) {
    ImplPtr ai = a.impl();
    Tape::current()->record("transpose", {ai}, result.impl(),
                            [ai, batches, R, C](const std::vector<double>& g) {
                              auto& ga = grad_buffer(*ai);
                              for (std::size_t t = 0; t < batches; ++t) {
                                for (std::size_t i = 0; i < R; ++i) {
                                  for (std::size_t j = 0; j < C; ++j) {
                                    ga[t * R * C + i * C + j] += g[t * R * C + j * R + i];
                                  }
                                }
                              }
                            });
  }
  return result;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t stop) {
  if (axis >= a.rank() || start >= stop || stop > a.shape()[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(stop) +
                     ") on axis " + std::to_string(axis) + " invalid for " + shape_str(a.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
  const std::size_t full = a.shape()[axis];
  const std::size_t len = stop - start;
  Shape shape = a.shape();
  shape[axis] = len;
  const auto ad = a.data();
  std::vector<double> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(ad.data() + (o * full + start) * inner, len * inner, out.data() + o * len * inner);
  }
  Tensor result = make_out(std::move(shape), std::move(out));
  if (Tape::should_record({&a})) {
    ImplPtr ai = a.impl();
    Tape::current()->record("slice", {ai}, result.impl(),
                            [ai, outer, inner, full, start, len](const std::vector<double>& g) {
                              auto& ga = grad_buffer(*ai);
                              for (std::size_t o = 0; o < outer; ++o) {
                                for (std::size_t k = 0; k < len * inner; ++k) {
                                  ga[(o * full + start) * inner + k] += g[o * len * inner + k];
                                }
                              }
                            });
  }
  return result;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: shapes " + shape_str(first) + " and " + shape_str(s) +
                       " do not conform on axis " + std::to_string(axis));
    }
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape shape = first;
  shape[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t len = p.shape()[axis];
    offsets.push_back(off);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * len * inner, len * inner,
                  out.data() + (o * total + off) * inner);
    }
    off += len;
  }
  Tensor result = make_out(std::move(shape), std::move(out));
  if (Tape::should_record(parts)) {
    std::vector<ImplPtr> ins;
    for (const Tensor& p : parts) ins.push_back(p.impl());
    Tape::current()->record("concat", ins, result.impl(),
                            [ins, offsets, outer, inner, total, axis](const std::vector<double>& g) {
                              for (std::size_t k = 0; k < ins.size(); ++k) {
                                if (!ins[k]->requires_grad) continue;
                                auto& gp = grad_buffer(*ins[k]);
                                const std::size_t len = ins[k]->shape[axis];
                                for (std::size_t o = 0; o < outer; ++o) {
                                  for (std::size_t q = 0; q < len * inner; ++q) {
                                    gp[o * len * inner + q] += g[(o * total + offsets[k]) * inner + q];
                                  }
                                }
                              }
                            });
  }
  return result;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor result = make_out({}, {s});
  if (Tape::should_record({&a})) {
    ImplPtr ai = a.impl();
    Tape::current()->record("sum", {ai}, result.impl(), [ai](const std::vector<double>& g) {
      auto& ga = grad_buffer(*ai);
      for (double& v : ga) v += g[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_last(const Tensor& a) {
  const std::size_t d = last_dim(a, "sum");
  const std::size_t rows = a.numel() / d;
  std::vector<double> out(rows, 0.0);
  const auto ad = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[r] += ad[r * d + j];
  }
  Tensor result = make_out(Shape(a.shape().begin(), a.shape().end() - 1), std::move(out));
  if (Tape::should_record({&a})) {
    ImplPtr ai = a.impl();
    Tape::current()->record("sum", {ai}, result.impl(), [ai, rows, d](const std::vector<double>& g) {
      auto& ga = grad_buffer(*ai);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += g[r];
      }
    });
  }
  return result;
}

Tensor gather_last(const Tensor& a, std::span<const int> index) {
  const std::size_t d = last_dim(a, "gather");
  const std::size_t rows = a.numel() / d;
  if (index.size() != rows) {
    throw ShapeError("gather: " + std::to_string(index.size()) + " indices for " +
                     std::to_string(rows) + " rows of " + shape_str(a.shape()));
  }
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= d) {
      throw ShapeError("gather: index " + std::to_string(index[r]) + " out of range for " +
                       shape_str(a.shape()));
    }
    out[r] = a.data()[r * d + index[r]];
  }
  Tensor result = make_out(Shape(a.shape().begin(), a.shape().end() - 1), std::move(out));
  if (Tape::should_record({&a})) {
    ImplPtr ai = a.impl();
    std::vector<int> idx(index.begin(), index.end());
    Tape::current()->record("gather", {ai}, result.impl(),
                            [ai, d, idx = std::move(idx)](const std::vector<double>& g) {
                              auto& ga = grad_buffer(*ai);
                              for (std::size_t r = 0; r < idx.size(); ++r) ga[r * d + idx[r]] += g[r];
                            });
  }
  return result;
}

Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& prefix) {
  if (table.rank() != 2) throw ShapeError("gather: embedding table must be 2-D, got " + shape_str(table.shape()));
  if (shape_numel(prefix) != ids.size()) {
    throw ShapeError("gather: " + std::to_string(ids.size()) + " ids for prefix " + shape_str(prefix));
  }
  const std::size_t V = table.dim(0), D = table.dim(1);
  std::vector<double> out(ids.size() * D);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= V) {
      throw ShapeError("gather: token id " + std::to_string(ids[r]) + " out of range for vocabulary of " +
                       std::to_string(V));
    }
    std::copy_n(table.data().data() + ids[r] * D, D, out.data() + r * D);
  }
  Shape shape = prefix;
  shape.push_back(D);
  Tensor result = make_out(std::move(shape), std::move(out));
  if (Tape::should_record({&table})) {
    ImplPtr ti = table.impl();
    std::vector<int> idx(ids.begin(), ids.end());
    Tape::current()->record("gather", {ti}, result.impl(),
                            [ti, D, idx = std::move(idx)](const std::vector<double>& g) {
                              auto& gt = grad_buffer(*ti);
                              for (std::size_t r = 0; r < idx.size(); ++r) {
                                for (std::size_t j = 0; j < D; ++j) gt[idx[r] * D + j] += g[r * D + j];
                              }
                            });
  }
  return result;
}

Tensor mask_fill(const Tensor& a, const Shape& mask_shape, std::span<const std::uint8_t> mask,
                 double value) {
  if (!is_suffix(a.shape(), mask_shape) || shape_numel(mask_shape) != mask.size()) {
    throw ShapeError("mask_fill: mask shape " + shape_str(mask_shape) + " does not conform to " +
                     shape_str(a.shape()));
  }
  const std::size_t m = mask.size();
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i % m]) out[i] = value;
  }
  Tensor result = make_out(a.shape(), std::move(out));
  if (Tape::should_record({&a})) {
    ImplPtr ai = a.impl();
    std::vector<std::uint8_t> mk(mask.begin(), mask.end());
    Tape::current()->record("mask_fill", {ai}, result.impl(),
                            [ai, mk = std::move(mk)](const std::vector<double>& g) {
                              auto& ga = grad_buffer(*ai);
                              const std::size_t m = mk.size();
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                if (!mk[i % m]) ga[i] += g[i];
                              }
                            });
  }
  return result;
}

Tensor identity(const Tensor& a) {
  std::vector<double> data(a.data().begin(), a.data().end());
  Tensor result = make_out(a.shape(), std::move(data));
  if (Tape::should_record({&a})) {
    ImplPtr ai = a.impl();
    Tape::current()->record("identity", {ai}, result.impl(), [ai](const std::vector<double>& g) {
      accumulate_grad(*ai, g);
    });
  }
  return result;
}

}  // namespace siit::ops
