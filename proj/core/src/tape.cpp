#include "dcnet/tape.hpp"

#include <algorithm>

namespace dcnet {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void Tape::record(std::string op, std::vector<Tensor> inputs, Tensor output, BackwardFn fn) {
  entries_.push_back(Entry{std::move(op), std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw InvalidArgument("backward() needs a scalar loss, got shape " +
                          (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw InvalidArgument("backward() on a loss that does not require grad");

  for (auto& e : entries_) {
    auto g = e.output.mutable_grad();
    std::fill(g.begin(), g.end(), 0.0);
  }
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;

  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    BackwardContext ctx(it->output, it->inputs);
    it->backward(ctx);
  }
}

void backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (!tape) throw InvalidArgument("backward() called with no active tape");
  tape->backward(loss);
}

}  // namespace dcnet
