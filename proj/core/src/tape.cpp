#include "relmod/tape.hpp"

#include "relmod/errors.hpp"

namespace relmod {

void Tape::record(std::function<void()> step) {
  if (recording_) steps_.push_back(std::move(step));
}

void Tape::backward(const Tensor& loss) {
  if (!recording_) throw Error("tape: backward on a non-recording tape");
  if (consumed_) throw Error("tape: backward called twice without reset");
  if (loss.numel() != 1) {
    throw ShapeError("tape: backward root must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw Error("tape: backward root does not require grad (nothing on the tape reaches it)");
  }
  consumed_ = true;
  Tensor root = loss;
  root.grad()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

void Tape::reset() {
  steps_.clear();
  consumed_ = false;
}

}  // namespace relmod
