#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "vct/tensor.hpp"

namespace vct {

class GradCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double autodiff = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// |ad - fd| / max(|ad|, |fd|, 1e-8)
double relative_error(double autodiff, double numeric);

// Compares the autodiff gradient of scalar f at x against a fourth-order
// central difference with step eps, element by element. f must be deterministic.
GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, double eps = 1e-4);

// Same comparison for a scalar loss that closes over `params`. Each
// parameter is perturbed in place and restored. `max_per_tensor` limits the
// number of checked elements per tensor (0 = all); selected elements are
// spread evenly over the tensor.
GradCheckResult grad_check_params(const std::function<Tensor<double>()>& loss,
                                  std::vector<Tensor<double>> params, double eps = 1e-4,
                                  std::size_t max_per_tensor = 0);

}  // namespace vct
