#include "dualslu/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace dualslu {

namespace {

std::atomic<std::int64_t> g_node_counter{0};

#ifndef NDEBUG
std::atomic<bool> g_finite_checks{true};
#else
std::atomic<bool> g_finite_checks{false};
#endif

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

void check_finite(const char* op, const TensorNode& t) {
  for (double v : t.values) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value produced by op '") +
                         op + "'");
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a->shape != b->shape)
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a->shape) + " vs " + shape_str(b->shape));
}

void require_matrix(const char* op, const Tensor& x) {
  if (x->shape.size() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_str(x->shape));
}

void require_vector(const char* op, const Tensor& x) {
  if (x->shape.size() != 1)
    throw DimensionError(std::string(op) + ": expected a vector, got shape " +
                         shape_str(x->shape));
}

// Elementwise helper: y_i = fwd(x_i), dx_i += dfd(x_i, y_i) * g_i.
Tensor unary_elementwise(Tape& t, const char* name, const Tensor& x,
                         double (*fwd)(double),
                         double (*dydx)(double, double)) {
  auto out = std::make_shared<TensorNode>();
  out->shape = x->shape;
  out->values.resize(x->numel());
  for (std::size_t i = 0; i < x->numel(); ++i)
    out->values[i] = fwd(x->values[i]);
  out->requires_grad = x->requires_grad;
  return t.record(name, {x}, out, [dydx](const Tape::Record& r) {
    const auto& x = r.inputs[0];
    const auto& y = r.output;
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < x->numel(); ++i)
      x->grad[i] += dydx(x->values[i], y->values[i]) * y->grad[i];
  });
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

bool finite_checks_enabled() { return g_finite_checks.load(); }
void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }

Tensor make_tensor(Shape shape, std::vector<double> values,
                   bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw DimensionError("make_tensor: shape " + shape_str(shape) +
                         " does not hold " + std::to_string(values.size()) +
                         " values");
  auto t = std::make_shared<TensorNode>();
  t->shape = std::move(shape);
  t->values = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

Tensor zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), 0.0);
  return make_tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor scalar_tensor(double v, bool requires_grad) {
  return make_tensor({1}, {v}, requires_grad);
}

Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng,
                      bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return make_tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tape::record(const char* name, std::vector<Tensor> inputs,
                    Tensor output,
                    std::function<void(const Record&)> backward) {
  for (auto& in : inputs)
    if (in->node_id < 0) in->node_id = g_node_counter++;
  output->node_id = g_node_counter++;
  if (finite_checks_enabled()) check_finite(name, *output);
  records_.push_back(
      Record{name, std::move(inputs), std::move(output), std::move(backward)});
  return records_.back().output;
}

void Tape::backward(const Tensor& loss) {
  if (!loss->is_scalar())
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_str(loss->shape));
  bool on_tape = false;
  for (const auto& r : records_)
    if (r.output == loss) {
      on_tape = true;
      break;
    }
  if (!on_tape)
    throw ContractError("backward: loss was not produced on this tape");

  loss->ensure_grad();
  loss->grad[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // nothing flowed here
    it->backward(*it);
  }
}

// --- linear algebra ---------------------------------------------------------

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a->shape[0], k = a->shape[1];
  const std::size_t k2 = b->shape[0], n = b->shape[1];
  if (k != k2)
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_str(a->shape) + " vs " + shape_str(b->shape));
  auto out = zeros({m, n});
  const double* av = a->values.data();
  const double* bv = b->values.data();
  double* cv = out->values.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv + p * n;
      double* crow = cv + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  out->requires_grad = a->requires_grad || b->requires_grad;
  return t.record("matmul", {a, b}, out, [](const Tape::Record& r) {
    const auto& a = r.inputs[0];
    const auto& b = r.inputs[1];
    const auto& y = r.output;
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    if (a->requires_grad) {
      a->ensure_grad();  // dA += G · Bᵀ
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = y->grad.data() + i * n;
          const double* brow = b->values.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          a->grad[i * k + p] += acc;
        }
    }
    if (b->requires_grad) {
      b->ensure_grad();  // dB += Aᵀ · G
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = a->values[i * k + p];
          const double* grow = y->grad.data() + i * n;
          double* brow = b->grad.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
        }
    }
  });
}

Tensor matmul_nt(Tape& t, const Tensor& a, const Tensor& b) {
  require_matrix("matmul_nt", a);
  require_matrix("matmul_nt", b);
  const std::size_t m = a->shape[0], k = a->shape[1];
  const std::size_t n = b->shape[0], k2 = b->shape[1];
  if (k != k2)
    throw DimensionError("matmul_nt: inner dimensions differ, " +
                         shape_str(a->shape) + " vs " + shape_str(b->shape) +
                         "ᵀ");
  auto out = zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a->values.data() + i * k;
    double* crow = out->values.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b->values.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = acc;
    }
  }
  out->requires_grad = a->requires_grad || b->requires_grad;
  return t.record("matmul_nt", {a, b}, out, [](const Tape::Record& r) {
    const auto& a = r.inputs[0];
    const auto& b = r.inputs[1];
    const auto& y = r.output;
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[0];
    if (a->requires_grad) {
      a->ensure_grad();  // dA += G · B
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = y->grad[i * n + j];
          if (g == 0.0) continue;
          const double* brow = b->values.data() + j * k;
          double* arow = a->grad.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) arow[p] += g * brow[p];
        }
    }
    if (b->requires_grad) {
      b->ensure_grad();  // dB += Gᵀ · A
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = y->grad[i * n + j];
          if (g == 0.0) continue;
          const double* arow = a->values.data() + i * k;
          double* brow = b->grad.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) brow[p] += g * arow[p];
        }
    }
  });
}

Tensor matvec(Tape& t, const Tensor& w, const Tensor& x) {
  require_matrix("matvec", w);
  require_vector("matvec", x);
  const std::size_t m = w->shape[0], n = w->shape[1];
  if (n != x->shape[0])
    throw DimensionError("matvec: inner dimensions differ, " +
                         shape_str(w->shape) + " vs " + shape_str(x->shape));
  auto out = zeros({m});
  for (std::size_t i = 0; i < m; ++i) {
    const double* wrow = w->values.data() + i * n;
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += wrow[j] * x->values[j];
    out->values[i] = acc;
  }
  out->requires_grad = w->requires_grad || x->requires_grad;
  return t.record("matvec", {w, x}, out, [](const Tape::Record& r) {
    const auto& w = r.inputs[0];
    const auto& x = r.inputs[1];
    const auto& y = r.output;
    const std::size_t m = w->shape[0], n = w->shape[1];
    if (w->requires_grad) {
      w->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double g = y->grad[i];
        if (g == 0.0) continue;
        double* wrow = w->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) wrow[j] += g * x->values[j];
      }
    }
    if (x->requires_grad) {
      x->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double g = y->grad[i];
        if (g == 0.0) continue;
        const double* wrow = w->values.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) x->grad[j] += g * wrow[j];
      }
    }
  });
}

// --- elementwise ------------------------------------------------------------

Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto out = std::make_shared<TensorNode>();
  out->shape = a->shape;
  out->values.resize(a->numel());
  for (std::size_t i = 0; i < a->numel(); ++i)
    out->values[i] = a->values[i] + b->values[i];
  out->requires_grad = a->requires_grad || b->requires_grad;
  return t.record("add", {a, b}, out, [](const Tape::Record& r) {
    for (int s = 0; s < 2; ++s) {
      const auto& in = r.inputs[s];
      if (!in->requires_grad) continue;
      in->ensure_grad();
      for (std::size_t i = 0; i < in->numel(); ++i)
        in->grad[i] += r.output->grad[i];
    }
  });
}

Tensor sub(Tape& t, const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto out = std::make_shared<TensorNode>();
  out->shape = a->shape;
  out->values.resize(a->numel());
  for (std::size_t i = 0; i < a->numel(); ++i)
    out->values[i] = a->values[i] - b->values[i];
  out->requires_grad = a->requires_grad || b->requires_grad;
  return t.record("sub", {a, b}, out, [](const Tape::Record& r) {
    const auto& a = r.inputs[0];
    const auto& b = r.inputs[1];
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < a->numel(); ++i)
        a->grad[i] += r.output->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < b->numel(); ++i)
        b->grad[i] -= r.output->grad[i];
    }
  });
}

Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto out = std::make_shared<TensorNode>();
  out->shape = a->shape;
  out->values.resize(a->numel());
  for (std::size_t i = 0; i < a->numel(); ++i)
    out->values[i] = a->values[i] * b->values[i];
  out->requires_grad = a->requires_grad || b->requires_grad;
  return t.record("mul", {a, b}, out, [](const Tape::Record& r) {
    const auto& a = r.inputs[0];
    const auto& b = r.inputs[1];
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < a->numel(); ++i)
        a->grad[i] += b->values[i] * r.output->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < b->numel(); ++i)
        b->grad[i] += a->values[i] * r.output->grad[i];
    }
  });
}

Tensor scalar_mul(Tape& t, const Tensor& x, double c) {
  auto out = std::make_shared<TensorNode>();
  out->shape = x->shape;
  out->values.resize(x->numel());
  for (std::size_t i = 0; i < x->numel(); ++i)
    out->values[i] = c * x->values[i];
  out->requires_grad = x->requires_grad;
  return t.record("scalar_mul", {x}, out, [c](const Tape::Record& r) {
    const auto& x = r.inputs[0];
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < x->numel(); ++i)
      x->grad[i] += c * r.output->grad[i];
  });
}

Tensor add_rows(Tape& t, const Tensor& x, const Tensor& bias) {
  require_matrix("add_rows", x);
  require_vector("add_rows", bias);
  const std::size_t T = x->shape[0], D = x->shape[1];
  if (bias->shape[0] != D)
    throw DimensionError("add_rows: bias " + shape_str(bias->shape) +
                         " does not match row width of " +
                         shape_str(x->shape));
  auto out = std::make_shared<TensorNode>();
  out->shape = x->shape;
  out->values.resize(x->numel());
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < D; ++j)
      out->values[i * D + j] = x->values[i * D + j] + bias->values[j];
  out->requires_grad = x->requires_grad || bias->requires_grad;
  return t.record("add_rows", {x, bias}, out, [](const Tape::Record& r) {
    const auto& x = r.inputs[0];
    const auto& bias = r.inputs[1];
    const std::size_t T = x->shape[0], D = x->shape[1];
    if (x->requires_grad) {
      x->ensure_grad();
      for (std::size_t i = 0; i < x->numel(); ++i)
        x->grad[i] += r.output->grad[i];
    }
    if (bias->requires_grad) {
      bias->ensure_grad();
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < D; ++j)
          bias->grad[j] += r.output->grad[i * D + j];
    }
  });
}

Tensor tanh(Tape& t, const Tensor& x) {
  return unary_elementwise(
      t, "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(Tape& t, const Tensor& x) {
  return unary_elementwise(
      t, "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(Tape& t, const Tensor& x) {
  return unary_elementwise(
      t, "exp", x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log(Tape& t, const Tensor& x) {
  return unary_elementwise(
      t, "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor leaky_relu(Tape& t, const Tensor& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0))
    throw ContractError("leaky_relu: slope must lie in (0,1)");
  auto out = std::make_shared<TensorNode>();
  out->shape = x->shape;
  out->values.resize(x->numel());
  for (std::size_t i = 0; i < x->numel(); ++i) {
    const double v = x->values[i];
    out->values[i] = v >= 0.0 ? v : slope * v;
  }
  out->requires_grad = x->requires_grad;
  return t.record("leaky_relu", {x}, out, [slope](const Tape::Record& r) {
    const auto& x = r.inputs[0];
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < x->numel(); ++i)
      x->grad[i] +=
          (x->values[i] >= 0.0 ? 1.0 : slope) * r.output->grad[i];
  });
}

// --- reductions and structure ops -------------------------------------------

Tensor log_softmax(Tape& t, const Tensor& x) {
  if (x->shape.empty())
    throw DimensionError("log_softmax: rank-0 tensor");
  const std::size_t C = x->shape.back();
  if (C < 1) throw DimensionError("log_softmax: empty last axis");
  const std::size_t rows = x->numel() / C;
  auto out = std::make_shared<TensorNode>();
  out->shape = x->shape;
  out->values.resize(x->numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x->values.data() + r * C;
    double* o = out->values.data() + r * C;
    double mx = in[0];
    for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < C; ++j) sum += std::exp(in[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < C; ++j) o[j] = in[j] - lse;
  }
  out->requires_grad = x->requires_grad;
  return t.record("log_softmax", {x}, out, [C](const Tape::Record& r) {
    const auto& x = r.inputs[0];
    if (!x->requires_grad) return;
    x->ensure_grad();
    const std::size_t rows = x->numel() / C;
    for (std::size_t row = 0; row < rows; ++row) {
      const double* g = r.output->grad.data() + row * C;
      const double* y = r.output->values.data() + row * C;
      double gsum = 0.0;
      for (std::size_t j = 0; j < C; ++j) gsum += g[j];
      double* dx = x->grad.data() + row * C;
      for (std::size_t j = 0; j < C; ++j)
        dx[j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

Tensor mean_pool(Tape& t, const Tensor& x) {
  require_matrix("mean_pool", x);
  const std::size_t T = x->shape[0], D = x->shape[1];
  if (T == 0) throw EmptySequenceError("mean_pool: empty sequence");
  auto out = zeros({D});
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < D; ++j)
      out->values[j] += x->values[i * D + j];
  for (std::size_t j = 0; j < D; ++j) out->values[j] /= double(T);
  out->requires_grad = x->requires_grad;
  return t.record("mean_pool", {x}, out, [](const Tape::Record& r) {
    const auto& x = r.inputs[0];
    if (!x->requires_grad) return;
    x->ensure_grad();
    const std::size_t T = x->shape[0], D = x->shape[1];
    const double inv = 1.0 / double(T);
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t j = 0; j < D; ++j)
        x->grad[i * D + j] += inv * r.output->grad[j];
  });
}

Tensor l2_normalize(Tape& t, const Tensor& x, double eps) {
  require_vector("l2_normalize", x);
  double sq = 0.0;
  for (double v : x->values) sq += v * v;
  const double norm = std::sqrt(sq);
  const double denom = std::max(norm, eps);
  auto out = std::make_shared<TensorNode>();
  out->shape = x->shape;
  out->values.resize(x->numel());
  for (std::size_t i = 0; i < x->numel(); ++i)
    out->values[i] = x->values[i] / denom;
  out->requires_grad = x->requires_grad;
  const bool guarded = norm < eps;
  return t.record(
      "l2_normalize", {x}, out, [denom, guarded](const Tape::Record& r) {
        const auto& x = r.inputs[0];
        const auto& y = r.output;
        if (!x->requires_grad) return;
        x->ensure_grad();
        if (guarded) {
          // Below the guard the map is linear: y = x / eps.
          for (std::size_t i = 0; i < x->numel(); ++i)
            x->grad[i] += y->grad[i] / denom;
          return;
        }
        double dot = 0.0;
        for (std::size_t i = 0; i < x->numel(); ++i)
          dot += y->values[i] * y->grad[i];
        for (std::size_t i = 0; i < x->numel(); ++i)
          x->grad[i] += (y->grad[i] - y->values[i] * dot) / denom;
      });
}

Tensor concat(Tape& t, const Tensor& a, const Tensor& b) {
  require_vector("concat", a);
  require_vector("concat", b);
  auto out = std::make_shared<TensorNode>();
  out->shape = {a->numel() + b->numel()};
  out->values.reserve(out->shape[0]);
  out->values.insert(out->values.end(), a->values.begin(), a->values.end());
  out->values.insert(out->values.end(), b->values.begin(), b->values.end());
  out->requires_grad = a->requires_grad || b->requires_grad;
  return t.record("concat", {a, b}, out, [](const Tape::Record& r) {
    const auto& a = r.inputs[0];
    const auto& b = r.inputs[1];
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < a->numel(); ++i)
        a->grad[i] += r.output->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      const std::size_t off = a->numel();
      for (std::size_t i = 0; i < b->numel(); ++i)
        b->grad[i] += r.output->grad[off + i];
    }
  });
}

Tensor slice(Tape& t, const Tensor& x, std::size_t start, std::size_t len) {
  if (x->shape.empty()) throw DimensionError("slice: rank-0 tensor");
  const std::size_t first = x->shape[0];
  if (start + len > first)
    throw DimensionError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") exceeds extent " +
                         std::to_string(first));
  const std::size_t inner = x->numel() / first;
  auto out = std::make_shared<TensorNode>();
  out->shape = x->shape;
  out->shape[0] = len;
  out->values.assign(x->values.begin() + start * inner,
                     x->values.begin() + (start + len) * inner);
  out->requires_grad = x->requires_grad;
  return t.record("slice", {x}, out, [start, inner](const Tape::Record& r) {
    const auto& x = r.inputs[0];
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < r.output->numel(); ++i)
      x->grad[start * inner + i] += r.output->grad[i];
  });
}

Tensor row(Tape& t, const Tensor& x, std::size_t idx) {
  require_matrix("row", x);
  const std::size_t T = x->shape[0], D = x->shape[1];
  if (idx >= T)
    throw DimensionError("row: index " + std::to_string(idx) +
                         " out of range for " + shape_str(x->shape));
  auto out = std::make_shared<TensorNode>();
  out->shape = {D};
  out->values.assign(x->values.begin() + idx * D,
                     x->values.begin() + (idx + 1) * D);
  out->requires_grad = x->requires_grad;
  return t.record("row", {x}, out, [idx, D](const Tape::Record& r) {
    const auto& x = r.inputs[0];
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t j = 0; j < D; ++j)
      x->grad[idx * D + j] += r.output->grad[j];
  });
}

Tensor stack_rows(Tape& t, const std::vector<Tensor>& rows) {
  if (rows.empty()) throw EmptySequenceError("stack_rows: no rows");
  const std::size_t D = rows[0]->numel();
  auto out = std::make_shared<TensorNode>();
  out->shape = {rows.size(), D};
  out->values.reserve(rows.size() * D);
  bool rg = false;
  for (const auto& r : rows) {
    require_vector("stack_rows", r);
    if (r->numel() != D)
      throw DimensionError("stack_rows: inconsistent row widths");
    out->values.insert(out->values.end(), r->values.begin(), r->values.end());
    rg = rg || r->requires_grad;
  }
  out->requires_grad = rg;
  return t.record("stack_rows", rows, out, [D](const Tape::Record& r) {
    for (std::size_t i = 0; i < r.inputs.size(); ++i) {
      const auto& in = r.inputs[i];
      if (!in->requires_grad) continue;
      in->ensure_grad();
      for (std::size_t j = 0; j < D; ++j)
        in->grad[j] += r.output->grad[i * D + j];
    }
  });
}

Tensor sum(Tape& t, const Tensor& x) {
  auto out = scalar_tensor(0.0);
  double acc = 0.0;
  for (double v : x->values) acc += v;
  out->values[0] = acc;
  out->requires_grad = x->requires_grad;
  return t.record("sum", {x}, out, [](const Tape::Record& r) {
    const auto& x = r.inputs[0];
    if (!x->requires_grad) return;
    x->ensure_grad();
    const double g = r.output->grad[0];
    for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += g;
  });
}

// --- gradient checking -------------------------------------------------------

GradCheckReport gradient_check(
    const std::function<Tensor(Tape&)>& f,
    const std::vector<std::pair<std::string, Tensor>>& params, double h,
    double tol, std::size_t max_coords, Rng& rng) {
  if (!(h > 0.0)) throw ContractError("gradient_check: h must be positive");

  auto eval = [&]() {
    Tape tape;
    Tensor loss = f(tape);
    return std::pair<double, Tensor>(loss->scalar(), loss);
  };

  for (auto& [name, p] : params) p->zero_grad();

  Tape tape;
  Tensor loss = f(tape);
  const double base = loss->scalar();
  tape.backward(loss);

  // Copy analytic gradients out before perturbing anything.
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) {
    p->ensure_grad();
    analytic.push_back(p->grad);
  }

  const double base2 = eval().first;
  if (base2 != base)
    throw OracleError(
        "gradient_check: function is not deterministic (two evaluations "
        "differ)");

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& [name, p] = params[pi];
    const std::size_t n = p->numel();
    std::vector<std::size_t> coords;
    if (n <= max_coords) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (std::size_t i = 0; i < max_coords; ++i)
        coords.push_back(static_cast<std::size_t>(rng.next_below(n)));
    }
    for (std::size_t ci : coords) {
      const double keep = p->values[ci];
      p->values[ci] = keep + h;
      const double fp = eval().first;
      p->values[ci] = keep - h;
      const double fm = eval().first;
      p->values[ci] = keep;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[pi][ci];
      const double denom =
          std::max({std::abs(a), std::abs(numeric), 1e-6});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = name;
        report.worst_index = ci;
        report.analytic = a;
        report.numeric = numeric;
      }
      ++report.coords_checked;
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace dualslu
