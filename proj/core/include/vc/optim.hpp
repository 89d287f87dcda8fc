#pragma once

#include <cstddef>
#include <vector>

#include "vc/layers.hpp"

namespace vc {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double eps = 1e-9;
};

// Adam over the trainable entries of a ParamList. Moment buffers are indexed
// in the order the list was given, so checkpoints must restore them against
// the same list.
class Adam {
 public:
  Adam(ParamList params, AdamOptions options);

  void step();
  void zero_grad();
  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  std::size_t steps() const { return steps_; }

  const ParamList& params() const { return params_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(std::size_t steps) { steps_ = steps; }

 private:
  ParamList params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
};

}  // namespace vc
