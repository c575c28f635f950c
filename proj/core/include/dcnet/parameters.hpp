#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dcnet/tensor.hpp"

namespace dcnet {

using Rng = std::mt19937_64;

struct Parameter {
  std::string name;
  Tensor tensor;                        // requires_grad is always set
  std::vector<double> momentum_buffer;  // empty until the first momentum step
};

// Owns the learnable tensors of a model under unique names. Lookups return
// handles that share storage with the store.
class ParameterStore {
 public:
  // Fan-in scaled Gaussian (std = gain * sqrt(2 / fan_in)), where fan_in is
  // the product of all but the leading extent.
  Tensor add_he(const std::string& name, Shape shape, Rng& rng, double gain = 1.0);
  Tensor add_zeros(const std::string& name, Shape shape);
  Tensor add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const;
  Tensor get(const std::string& name) const;
  Parameter& at(const std::string& name);

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::int64_t total_size() const;

  // Parameters whose name starts with `prefix`.
  std::vector<Parameter*> with_prefix(const std::string& prefix);

  void zero_grad();

 private:
  std::vector<Parameter> params_;
};

struct SgdOptions {
  double lr = 0.005;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v; then g <- 0.
void sgd_step(std::span<Parameter> params, const SgdOptions& opts);
void sgd_step(std::vector<Parameter>& params, double lr, double momentum, double weight_decay);

// Global L2 norm of all parameter gradients.
double grad_norm(std::span<const Parameter> params);
// Rescales gradients so their global norm is at most max_norm.
void clip_grad_norm(std::span<Parameter> params, double max_norm);

}  // namespace dcnet
