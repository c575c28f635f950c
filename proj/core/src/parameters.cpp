#include "dcnet/parameters.hpp"

#include <algorithm>
#include <cmath>

namespace dcnet {

Tensor ParameterStore::add_he(const std::string& name, Shape shape, Rng& rng, double gain) {
  const std::int64_t fan_in = shape_numel(shape) / shape.front();
  std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
  for (double& v : values) v = dist(rng);
  return add(name, Tensor(std::move(shape), std::move(values)));
}

Tensor ParameterStore::add_zeros(const std::string& name, Shape shape) {
  return add(name, Tensor::zeros(std::move(shape)));
}

Tensor ParameterStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  params_.push_back(Parameter{name, value, {}});
  return value;
}

bool ParameterStore::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

Tensor ParameterStore::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  throw InvalidArgument("unknown parameter '" + name + "'");
}

Parameter& ParameterStore::at(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw InvalidArgument("unknown parameter '" + name + "'");
}

std::int64_t ParameterStore::total_size() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

std::vector<Parameter*> ParameterStore::with_prefix(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (p.name.rfind(prefix, 0) == 0) out.push_back(&p);
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void sgd_step(std::span<Parameter> params, const SgdOptions& opts) {
  for (auto& p : params) {
    auto w = p.tensor.mutable_data();
    auto g = p.tensor.mutable_grad();
    if (opts.momentum != 0.0 && p.momentum_buffer.size() != w.size()) p.momentum_buffer.assign(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      double d = g[i] + opts.weight_decay * w[i];
      if (opts.momentum != 0.0) {
        p.momentum_buffer[i] = opts.momentum * p.momentum_buffer[i] + d;
        d = p.momentum_buffer[i];
      }
      w[i] -= opts.lr * d;
    }
    std::fill(g.begin(), g.end(), 0.0);
  }
}

void sgd_step(std::vector<Parameter>& params, double lr, double momentum, double weight_decay) {
  sgd_step(std::span<Parameter>(params), SgdOptions{lr, momentum, weight_decay});
}

double grad_norm(std::span<const Parameter> params) {
  double acc = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) acc += g * g;
  return std::sqrt(acc);
}

void clip_grad_norm(std::span<Parameter> params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm <= max_norm || norm == 0.0) return;
  const double f = max_norm / norm;
  for (auto& p : params)
    if (p.tensor.has_grad())
      for (double& g : p.tensor.mutable_grad()) g *= f;
}

}  // namespace dcnet
