#include "dualslu/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dualslu {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logsumexp2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double logsumexp3(double a, double b, double c) {
  return logsumexp2(logsumexp2(a, b), c);
}

// blank, y1, blank, y2, ..., yU, blank
std::vector<std::size_t> expand_labels(const std::vector<std::size_t>& target,
                                       std::size_t blank) {
  std::vector<std::size_t> ex;
  ex.reserve(2 * target.size() + 1);
  ex.push_back(blank);
  for (std::size_t y : target) {
    ex.push_back(y);
    ex.push_back(blank);
  }
  return ex;
}

void validate_ctc_input(const Tensor& lp,
                        const std::vector<std::size_t>& target,
                        std::size_t blank) {
  if (lp->shape.size() != 2)
    throw DimensionError("ctc: expected [T,V] log-probs, got " +
                         shape_str(lp->shape));
  const std::size_t T = lp->shape[0], V = lp->shape[1];
  if (T == 0) throw EmptySequenceError("ctc: no frames");
  if (blank >= V)
    throw ContractError("ctc: blank id " + std::to_string(blank) +
                        " outside vocabulary of size " + std::to_string(V));
  for (std::size_t y : target) {
    if (y >= V)
      throw ContractError("ctc: target id " + std::to_string(y) +
                          " outside vocabulary of size " + std::to_string(V));
    if (y == blank)
      throw ContractError("ctc: target contains the blank id");
  }
  const std::size_t need = ctc_min_frames(target);
  if (T < need)
    throw InfeasibleAlignmentError(
        "ctc: target needs at least " + std::to_string(need) +
        " frames, got " + std::to_string(T));
}

}  // namespace

Tensor cosine_alignment_loss(Tape& t, const Tensor& student,
                             const Tensor& teacher) {
  if (student->shape.size() != 1 || teacher->shape != student->shape)
    throw DimensionError("cosine_alignment_loss: want two equal-length "
                         "vectors, got " + shape_str(student->shape) +
                         " and " + shape_str(teacher->shape));
  if (teacher->requires_grad)
    throw ContractError("cosine_alignment_loss: teacher must be frozen");

  double sq = 0.0;
  for (double v : student->values) sq += v * v;
  if (std::sqrt(sq) < 1e-12) {
    // Degenerate student: constant loss, nothing to differentiate.
    auto one = scalar_tensor(1.0);
    return t.record("cosine_zero_guard", {student}, one,
                    [](const Tape::Record&) {});
  }

  auto sn = l2_normalize(t, student, 1e-12);
  auto cos = sum(t, mul(t, sn, teacher));
  return sub(t, scalar_tensor(1.0), cos);
}

std::size_t ctc_min_frames(const std::vector<std::size_t>& target) {
  std::size_t need = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++need;
  return need;
}

Tensor ctc_loss(Tape& t, const Tensor& log_probs,
                const std::vector<std::size_t>& target, std::size_t blank) {
  validate_ctc_input(log_probs, target, blank);
  const std::size_t T = log_probs->shape[0], V = log_probs->shape[1];
  const auto ex = expand_labels(target, blank);
  const std::size_t S = ex.size();
  const double* lp = log_probs->values.data();

  // A diagonal skip s-2 -> s is legal when it does not jump over a
  // required blank: ex[s] must be a real label different from ex[s-2].
  auto can_skip = [&](std::size_t s) {
    return s >= 2 && ex[s] != blank && ex[s] != ex[s - 2];
  };

  std::vector<double> alpha(T * S, kNegInf);
  alpha[0] = lp[blank];
  if (S > 1) alpha[1] = lp[ex[1]];
  for (std::size_t ti = 1; ti < T; ++ti) {
    for (std::size_t s = 0; s < S; ++s) {
      double best = alpha[(ti - 1) * S + s];
      if (s >= 1) best = logsumexp2(best, alpha[(ti - 1) * S + s - 1]);
      if (can_skip(s)) best = logsumexp2(best, alpha[(ti - 1) * S + s - 2]);
      alpha[ti * S + s] =
          best == kNegInf ? kNegInf : best + lp[ti * V + ex[s]];
    }
  }

  double log_p = alpha[(T - 1) * S + S - 1];
  if (S > 1) log_p = logsumexp2(log_p, alpha[(T - 1) * S + S - 2]);
  if (log_p == kNegInf)
    throw InfeasibleAlignmentError("ctc: no alignment has mass");

  auto out = scalar_tensor(-log_p);
  out->requires_grad = log_probs->requires_grad;
  return t.record(
      "ctc_loss", {log_probs}, out,
      [alpha = std::move(alpha), ex, blank, log_p, T, S,
       V](const Tape::Record& r) {
        const auto& x = r.inputs[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        const double* lp = x->values.data();
        auto can_skip = [&ex, blank](std::size_t s) {
          return s >= 2 && ex[s] != blank && ex[s] != ex[s - 2];
        };

        // beta[t][s]: suffix mass from state s at time t, excluding the
        // emission at time t (so alpha + beta covers each path once).
        std::vector<double> beta(T * S, kNegInf);
        beta[(T - 1) * S + S - 1] = 0.0;
        if (S > 1) beta[(T - 1) * S + S - 2] = 0.0;
        for (std::size_t ti = T - 1; ti-- > 0;) {
          for (std::size_t s = 0; s < S; ++s) {
            double acc = beta[(ti + 1) * S + s] + lp[(ti + 1) * V + ex[s]];
            if (s + 1 < S)
              acc = logsumexp2(
                  acc, beta[(ti + 1) * S + s + 1] + lp[(ti + 1) * V + ex[s + 1]]);
            if (s + 2 < S && can_skip(s + 2))
              acc = logsumexp2(
                  acc, beta[(ti + 1) * S + s + 2] + lp[(ti + 1) * V + ex[s + 2]]);
            beta[ti * S + s] = acc;
          }
        }

        const double g = r.output->grad[0];  // d(total)/d(this loss)
        for (std::size_t ti = 0; ti < T; ++ti)
          for (std::size_t s = 0; s < S; ++s) {
            const double post = alpha[ti * S + s] + beta[ti * S + s] - log_p;
            if (post == kNegInf) continue;
            x->grad[ti * V + ex[s]] -= g * std::exp(post);
          }
      });
}

double ctc_brute_force(const Tensor& probs,
                       const std::vector<std::size_t>& target,
                       std::size_t blank) {
  validate_ctc_input(probs, target, blank);
  const std::size_t T = probs->shape[0], V = probs->shape[1];
  double paths = 1.0;
  for (std::size_t i = 0; i < T; ++i) {
    paths *= static_cast<double>(V);
    if (paths > 1e6)
      throw OracleError("ctc_brute_force: V^T exceeds 1e6, refusing");
  }

  std::vector<std::size_t> labeling(T, 0);
  std::vector<std::size_t> collapsed;
  double total = 0.0;
  while (true) {
    collapsed.clear();
    for (std::size_t i = 0; i < T; ++i) {
      if (i > 0 && labeling[i] == labeling[i - 1]) continue;  // repeat
      if (labeling[i] == blank) continue;
      collapsed.push_back(labeling[i]);
    }
    if (collapsed == target) {
      double p = 1.0;
      for (std::size_t i = 0; i < T; ++i)
        p *= probs->values[i * V + labeling[i]];
      total += p;
    }
    // odometer increment
    std::size_t pos = 0;
    while (pos < T && ++labeling[pos] == V) {
      labeling[pos] = 0;
      ++pos;
    }
    if (pos == T) break;
  }
  if (total <= 0.0)
    throw InfeasibleAlignmentError("ctc_brute_force: no alignment has mass");
  return -std::log(total);
}

LossBreakdown dual_loss(Tape& t, const DualLossConfig& cfg,
                        const Tensor& semantic, const Tensor& slu) {
  if (cfg.lambda < 0.0)
    throw ConfigError("dual_loss: lambda must be >= 0");
  if (!semantic->is_scalar() || !slu->is_scalar())
    throw ContractError("dual_loss: both losses must be scalars");
  LossBreakdown out;
  out.semantic_loss = semantic;
  out.slu_loss = slu;
  out.total = add(t, semantic, scalar_mul(t, slu, cfg.lambda));
  return out;
}

Tensor frame_ce_loss(Tape& t, const Tensor& log_probs,
                     const std::vector<std::size_t>& targets) {
  if (log_probs->shape.size() != 2)
    throw DimensionError("frame_ce_loss: expected [T,V], got " +
                         shape_str(log_probs->shape));
  const std::size_t T = log_probs->shape[0], V = log_probs->shape[1];
  if (targets.size() != T)
    throw ContractError("frame_ce_loss: " + std::to_string(targets.size()) +
                        " targets for " + std::to_string(T) + " frames");
  for (std::size_t y : targets)
    if (y >= V) throw ContractError("frame_ce_loss: target id out of range");

  double acc = 0.0;
  for (std::size_t i = 0; i < T; ++i)
    acc -= log_probs->values[i * V + targets[i]];
  auto out = scalar_tensor(acc / static_cast<double>(T));
  out->requires_grad = log_probs->requires_grad;
  return t.record("frame_ce_loss", {log_probs}, out,
                  [targets, T, V](const Tape::Record& r) {
                    const auto& x = r.inputs[0];
                    if (!x->requires_grad) return;
                    x->ensure_grad();
                    const double g =
                        r.output->grad[0] / static_cast<double>(T);
                    for (std::size_t i = 0; i < T; ++i)
                      x->grad[i * V + targets[i]] -= g;
                  });
}

std::vector<std::size_t> stretch_target(const std::vector<std::size_t>& target,
                                        std::size_t frames,
                                        std::size_t blank) {
  std::vector<std::size_t> out(frames, blank);
  if (target.empty()) return out;
  for (std::size_t i = 0; i < frames; ++i)
    out[i] = target[i * target.size() / frames];
  return out;
}

Tensor mean_of(Tape& t, const std::vector<Tensor>& scalars) {
  if (scalars.empty()) throw EmptySequenceError("mean_of: no losses");
  Tensor acc = scalars[0];
  for (std::size_t i = 1; i < scalars.size(); ++i)
    acc = add(t, acc, scalars[i]);
  return scalar_mul(t, acc, 1.0 / static_cast<double>(scalars.size()));
}

}  // namespace dualslu
