#include "o2na/tape.hpp"

#include "o2na/errors.hpp"

namespace o2na {

bool Tape::wants(std::initializer_list<const Tensor*> inputs) const {
  if (!recording()) return false;
  for (const Tensor* t : inputs) {
    if (t && t->requires_grad()) return true;
  }
  return false;
}

void Tape::record(Tensor output, std::function<void()> adjoint) {
  output.set_requires_grad(true);
  entries_.push_back({std::move(output), std::move(adjoint)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_string(loss.shape()));
  }
  for (auto& e : entries_) e.output.zero_grad();
  Tensor seed = loss;
  seed.grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->adjoint();
  }
}

}  // namespace o2na
