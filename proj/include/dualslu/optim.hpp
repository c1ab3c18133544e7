#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dualslu/layers.hpp"

namespace dualslu {

// Moments and counter travel with the hyperparameters so a state is
// self-contained in checkpoints.
struct AdamState {
  double lr = 0.0001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

struct AdadeltaState {
  double lr = 1.0;
  double rho = 0.95;
  double eps = 1e-6;
  std::vector<double> eg2;  // running E[g²]
  std::vector<double> edx2; // running E[Δx²]
};

// One bias-corrected Adam update. grad may be empty (treated as zeros,
// the state still advances). The caller zeroes grads afterwards.
void adam_step(AdamState& state, const Tensor& param,
               const std::vector<double>& grad);

void adadelta_step(AdadeltaState& state, const Tensor& param,
                   const std::vector<double>& grad);

struct ParamGroups {
  std::vector<NamedParam> adam_group;      // encoder, bi-LSTMs, semantic head
  std::vector<NamedParam> adadelta_group;  // the SLU DNN layer only
};

// Splits the pipeline's trainable parameters between the two optimizers:
// the SLU DNN goes to Adadelta, everything else to Adam. Verifies the
// groups partition the trainable set.
ParamGroups build_param_groups(const DualModel& model, Pipeline pipeline);

// Scales all grads so their global L2 norm is at most max_norm
// (no-op when max_norm <= 0). Returns the pre-clip norm.
double clip_gradients(const std::vector<NamedParam>& params, double max_norm);

// Both optimizers over one parameter partition, stepped together.
class DualOptimizer {
 public:
  DualOptimizer() = default;
  DualOptimizer(ParamGroups groups, AdamState adam_template,
                AdadeltaState adadelta_template);

  void step();
  void zero_grad();

  const ParamGroups& groups() const { return groups_; }
  std::map<std::string, AdamState>& adam_states() { return adam_states_; }
  std::map<std::string, AdadeltaState>& adadelta_states() {
    return adadelta_states_;
  }

 private:
  ParamGroups groups_;
  std::map<std::string, AdamState> adam_states_;
  std::map<std::string, AdadeltaState> adadelta_states_;
};

}  // namespace dualslu
