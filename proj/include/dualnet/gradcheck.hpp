#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dualnet/tape.hpp"

namespace dualnet {

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::string worst;

  void merge(const GradCheckReport& other);
};

struct GradCheckOptions {
  double tol = 1e-6;
  double step = 1e-4;
  // elements where both gradients are below this magnitude are compared
  // absolutely instead of relatively
  double zero_band = 1e-7;
};

// Central-difference check of d(loss)/d(x) for a scalar-valued function
// built from tape ops.
GradCheckReport gradient_check(
    const std::function<ValueId(Tape&, ValueId)>& f, const Tensor& x,
    const GradCheckOptions& opts = {});

// Multi-parameter form. `eval` must rebuild the computation from the current
// contents of `params`; when `grads` is non-null it must fill one gradient
// tensor per parameter, aligned with `params`.
GradCheckReport gradient_check_params(
    const std::function<double(std::vector<Tensor>* grads)>& eval,
    const std::vector<std::pair<std::string, Tensor*>>& params,
    const GradCheckOptions& opts = {});

}  // namespace dualnet
