#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dcnet/tensor.hpp"

namespace dcnet {

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-7;        // differences below this always pass
  std::int64_t max_probes = 48;   // per input; 0 probes every element
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;  // over probes whose gradient magnitude reaches abs_floor
  double max_abs_error = 0.0;
  std::int64_t probes = 0;
  bool passed = true;
};

using GradCheckFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares reverse-mode gradients of <r, f(inputs)> (r a fixed random
// projection) against central finite differences. Inputs are perturbed in
// place and restored, so they may alias model parameters.
GradCheckResult gradcheck(const std::string& name, const GradCheckFn& f, std::vector<Tensor> inputs,
                          const GradCheckOptions& opts = {});

}  // namespace dcnet
