#include "nsedit/optim.hpp"

#include <cmath>

namespace nsedit {

Adam::Adam(std::vector<Var> params, OptimizerConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.value().shape(), 0.0f);
    v_.emplace_back(p.value().shape(), 0.0f);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (!params_[k].has_grad()) continue;
    const Tensor& g = params_[k].grad();
    Tensor& w = params_[k].mutable_value();
    real* m = m_[k].ptr();
    real* v = v_[k].ptr();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      m[i] = static_cast<real>(b1 * m[i] + (1.0 - b1) * g[i]);
      v[i] = static_cast<real>(b2 * v[i] + (1.0 - b2) * static_cast<double>(g[i]) * g[i]);
      const double mh = m[i] / c1, vh = v[i] / c2;
      w[i] = static_cast<real>(w[i] - lr * mh / (std::sqrt(vh) + config_.epsilon));
    }
  }
}

}  // namespace nsedit
