#include "dualslu/optim.hpp"

#include <cmath>

namespace dualslu {

namespace {

void check_grad_shape(const char* op, const Tensor& param,
                      const std::vector<double>& grad) {
  if (!grad.empty() && grad.size() != param->numel())
    throw DimensionError(std::string(op) + ": grad has " +
                         std::to_string(grad.size()) + " entries, param " +
                         std::to_string(param->numel()));
}

}  // namespace

void adam_step(AdamState& state, const Tensor& param,
               const std::vector<double>& grad) {
  check_grad_shape("adam_step", param, grad);
  const std::size_t n = param->numel();
  if (state.m.size() != n) state.m.assign(n, 0.0);
  if (state.v.size() != n) state.v.assign(n, 0.0);
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.t));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    param->values[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

void adadelta_step(AdadeltaState& state, const Tensor& param,
                   const std::vector<double>& grad) {
  check_grad_shape("adadelta_step", param, grad);
  const std::size_t n = param->numel();
  if (state.eg2.size() != n) state.eg2.assign(n, 0.0);
  if (state.edx2.size() != n) state.edx2.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    state.eg2[i] = state.rho * state.eg2[i] + (1.0 - state.rho) * g * g;
    const double dx = -std::sqrt(state.edx2[i] + state.eps) /
                      std::sqrt(state.eg2[i] + state.eps) * g;
    param->values[i] += state.lr * dx;
    state.edx2[i] = state.rho * state.edx2[i] + (1.0 - state.rho) * dx * dx;
  }
}

ParamGroups build_param_groups(const DualModel& model, Pipeline pipeline) {
  ParamGroups groups;
  const auto trainable = model.trainable_params(pipeline);
  for (const auto& np : trainable) {
    if (np.first.rfind("slu.dnn.", 0) == 0)
      groups.adadelta_group.push_back(np);
    else
      groups.adam_group.push_back(np);
  }

  std::map<std::string, int> seen;
  for (const auto& [name, p] : groups.adam_group) seen[name]++;
  for (const auto& [name, p] : groups.adadelta_group) seen[name]++;
  if (seen.size() != trainable.size())
    throw ContractError("build_param_groups: groups do not cover the "
                        "trainable set");
  for (const auto& [name, count] : seen)
    if (count != 1)
      throw ContractError("build_param_groups: parameter '" + name +
                          "' routed to both groups");
  return groups;
}

double clip_gradients(const std::vector<NamedParam>& params,
                      double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params)
    for (double g : p->grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& [name, p] : params)
      for (double& g : p->grad) g *= scale;
  }
  return norm;
}

DualOptimizer::DualOptimizer(ParamGroups groups, AdamState adam_template,
                             AdadeltaState adadelta_template)
    : groups_(std::move(groups)) {
  for (const auto& [name, p] : groups_.adam_group)
    adam_states_[name] = adam_template;
  for (const auto& [name, p] : groups_.adadelta_group)
    adadelta_states_[name] = adadelta_template;
}

void DualOptimizer::step() {
  for (const auto& [name, p] : groups_.adam_group)
    adam_step(adam_states_[name], p, p->grad);
  for (const auto& [name, p] : groups_.adadelta_group)
    adadelta_step(adadelta_states_[name], p, p->grad);
}

void DualOptimizer::zero_grad() {
  for (const auto& [name, p] : groups_.adam_group) p->zero_grad();
  for (const auto& [name, p] : groups_.adadelta_group) p->zero_grad();
}

}  // namespace dualslu
