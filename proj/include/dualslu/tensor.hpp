#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dualslu/common.hpp"
#include "dualslu/rng.hpp"

namespace dualslu {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Dense row-major tensor of doubles with a lazily allocated gradient buffer.
// Scalars are rank-1 tensors of one element.
struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;
  std::int64_t node_id = -1;  // assigned when first recorded on a tape

  std::size_t numel() const { return values.size(); }
  bool is_scalar() const { return values.size() == 1; }

  double scalar() const {
    if (!is_scalar())
      throw ContractError("expected a scalar tensor, got shape " +
                          shape_str(shape));
    return values[0];
  }

  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 0 : shape[1]; }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }

  void zero_grad() {
    if (!grad.empty()) grad.assign(grad.size(), 0.0);
  }
};

using Tensor = std::shared_ptr<TensorNode>;

Tensor make_tensor(Shape shape, std::vector<double> values,
                   bool requires_grad = false);
Tensor zeros(Shape shape, bool requires_grad = false);
Tensor scalar_tensor(double v, bool requires_grad = false);
Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng,
                      bool requires_grad = true);

// Runtime switch for the per-op NaN/Inf scan. Defaults to on in debug
// builds, off in release; tests flip it explicitly.
bool finite_checks_enabled();
void set_finite_checks(bool enabled);

// Records the forward ops of one differentiable computation in execution
// order. backward() replays them in reverse, accumulating gradients (+=)
// into every requires_grad tensor, so fan-out adds up naturally.
class Tape {
 public:
  struct Record {
    const char* name;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void(const Record&)> backward;
  };

  Tensor record(const char* name, std::vector<Tensor> inputs, Tensor output,
                std::function<void(const Record&)> backward);

  // loss must be a scalar produced on this tape.
  void backward(const Tensor& loss);

  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

 private:
  std::vector<Record> records_;
};

// --- ops -------------------------------------------------------------------

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_nt(Tape& t, const Tensor& a, const Tensor& b);  // a · bᵀ
Tensor matvec(Tape& t, const Tensor& w, const Tensor& x);     // [m,n]·[n]

Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor sub(Tape& t, const Tensor& a, const Tensor& b);
Tensor mul(Tape& t, const Tensor& a, const Tensor& b);
Tensor scalar_mul(Tape& t, const Tensor& x, double c);
Tensor add_rows(Tape& t, const Tensor& x, const Tensor& bias);  // broadcast

Tensor tanh(Tape& t, const Tensor& x);
Tensor sigmoid(Tape& t, const Tensor& x);
Tensor exp(Tape& t, const Tensor& x);
Tensor log(Tape& t, const Tensor& x);
Tensor leaky_relu(Tape& t, const Tensor& x, double slope);

Tensor log_softmax(Tape& t, const Tensor& x);  // last axis
Tensor mean_pool(Tape& t, const Tensor& x);    // [T,D] -> [D]
Tensor l2_normalize(Tape& t, const Tensor& x, double eps);

Tensor concat(Tape& t, const Tensor& a, const Tensor& b);  // rank-1, last axis
Tensor slice(Tape& t, const Tensor& x, std::size_t start,
             std::size_t len);                          // first axis
Tensor row(Tape& t, const Tensor& x, std::size_t idx);  // [T,D] -> [D]
Tensor stack_rows(Tape& t, const std::vector<Tensor>& rows);
Tensor sum(Tape& t, const Tensor& x);  // -> scalar

// --- gradient checking -----------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  bool passed = false;
  // Coordinate of the worst disagreement, for diagnostics.
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// f builds a scalar loss on the given tape from the (captured) parameters.
// Checks up to max_coords sampled coordinates per parameter against central
// differences. Throws OracleError if two base evaluations disagree.
GradCheckReport gradient_check(
    const std::function<Tensor(Tape&)>& f,
    const std::vector<std::pair<std::string, Tensor>>& params, double h,
    double tol, std::size_t max_coords, Rng& rng);

}  // namespace dualslu
