#pragma once

#include <string>
#include <vector>

#include "voltcast/tensor.hpp"

namespace voltcast {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive-moment optimizer state for one named parameter set. The step
// counter is shared across all parameters and strictly increases per step().
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step_count = 0;
};

class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg = {});

  // One bias-corrected update from the gradients currently stored on the
  // parameters. Throws NumericError naming the parameter on a NaN gradient.
  void step();
  void zero_grad();

  std::uint64_t step_count() const { return state_.step_count; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  AdamConfig cfg_;
  AdamState state_;
};

}  // namespace voltcast
