#pragma once

#include <cstddef>
#include <vector>

#include "dualslu/tensor.hpp"

namespace dualslu {

struct DualLossConfig {
  double lambda = 1.0;
  std::size_t ctc_blank_id = 0;
};

// Scalars live on the tape that produced them. A branch that did not run
// in a given step leaves its slot null.
struct LossBreakdown {
  Tensor semantic_loss;
  Tensor slu_loss;
  Tensor total;
};

// 1 − cos(student, teacher), student normalized inside. teacher must be
// frozen (requires_grad false); a zero-norm student yields the constant
// loss 1 with no gradient.
Tensor cosine_alignment_loss(Tape& t, const Tensor& student,
                             const Tensor& teacher);

// Fewest frames that can carry the target: length plus one separating
// blank per adjacent repeat.
std::size_t ctc_min_frames(const std::vector<std::size_t>& target);

// −log P(target | log_probs) summed over all alignments, log-space
// forward recursion over the blank-expanded labels. Differentiable
// through log_probs (alpha-beta posteriors).
Tensor ctc_loss(Tape& t, const Tensor& log_probs,
                const std::vector<std::size_t>& target, std::size_t blank);

// Verification oracle: enumerates all V^T frame labelings, sums the
// probabilities of those that collapse to the target. Guarded to desk
// scale (V^T ≤ 1e6).
double ctc_brute_force(const Tensor& probs,
                       const std::vector<std::size_t>& target,
                       std::size_t blank);

// total = semantic + λ·slu, all on one tape.
LossBreakdown dual_loss(Tape& t, const DualLossConfig& cfg,
                        const Tensor& semantic, const Tensor& slu);

// Per-frame cross-entropy alternative to CTC (config switch). targets
// must assign one vocabulary id per frame.
Tensor frame_ce_loss(Tape& t, const Tensor& log_probs,
                     const std::vector<std::size_t>& targets);

// Stretches a token target uniformly over T frames for frame_ce_loss.
std::vector<std::size_t> stretch_target(const std::vector<std::size_t>& target,
                                        std::size_t frames,
                                        std::size_t blank);

// Sequential-order batch mean of scalar losses.
Tensor mean_of(Tape& t, const std::vector<Tensor>& scalars);

}  // namespace dualslu
