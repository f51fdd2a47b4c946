#pragma once

#include <vector>

#include "nsedit/autograd.hpp"
#include "nsedit/config.hpp"

namespace nsedit {

class Adam {
 public:
  Adam(std::vector<Var> params, OptimizerConfig config);

  // Applies one update from the accumulated gradients; parameters without a
  // gradient are left untouched.
  void step();
  void zero_grad();

  long long steps() const { return t_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void set_steps(long long t) { t_ = t; }

 private:
  std::vector<Var> params_;
  OptimizerConfig config_;
  std::vector<Tensor> m_, v_;
  long long t_ = 0;
};

}  // namespace nsedit
