#include "dcnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dcnet/ops.hpp"
#include "dcnet/parameters.hpp"
#include "dcnet/tape.hpp"

namespace dcnet {

namespace {
double project(const Tensor& out, const std::vector<double>& r) {
  auto d = out.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) acc += d[i] * r[i];
  return acc;
}
}  // namespace

GradCheckResult gradcheck(const std::string& name, const GradCheckFn& f, std::vector<Tensor> inputs,
                          const GradCheckOptions& opts) {
  GradCheckResult result;
  result.name = name;
  Rng rng(opts.seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);

  std::vector<bool> had_flag;
  for (auto& t : inputs) {
    had_flag.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }

  std::vector<double> r;
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = f(inputs);
    r.resize(static_cast<std::size_t>(out.numel()));
    for (double& v : r) v = uni(rng);
    Tensor loss = sum(mul(out, Tensor(out.shape(), r)));
    tape.backward(loss);
  }
  for (auto& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(static_cast<std::size_t>(t.numel()), 0.0);
    t.zero_grad();
  }

  NoGradScope no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    if (opts.max_probes > 0 && static_cast<std::int64_t>(order.size()) > opts.max_probes) {
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(static_cast<std::size_t>(opts.max_probes));
    }
    for (std::size_t idx : order) {
      const double saved = data[idx];
      data[idx] = saved + opts.step;
      const double fp = project(f(inputs), r);
      data[idx] = saved - opts.step;
      const double fm = project(f(inputs), r);
      data[idx] = saved;
      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double a = analytic[k][idx];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max(std::abs(a), std::abs(numeric));
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      const double rel = denom > 0.0 ? abs_err / denom : 0.0;
      if (denom >= opts.abs_floor) result.max_rel_error = std::max(result.max_rel_error, rel);
      if (abs_err > opts.abs_floor && rel > opts.rel_tol) result.passed = false;
      ++result.probes;
    }
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) inputs[k].set_requires_grad(had_flag[k]);
  return result;
}

}  // namespace dcnet
