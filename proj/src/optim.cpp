#include "voltcast/optim.hpp"

#include <cmath>

#include "voltcast/errors.hpp"

namespace voltcast {

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  state_.m.resize(params_.size());
  state_.v.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    state_.m[i].assign(params_[i].second.size(), 0.0);
    state_.v[i].assign(params_[i].second.size(), 0.0);
  }
}

void Adam::step() {
  ++state_.step_count;
  const double t = static_cast<double>(state_.step_count);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    const auto& g = p.grad();
    auto& vals = p.mutable_values();
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    for (std::size_t j = 0; j < vals.size(); ++j) {
      if (std::isnan(g[j])) {
        throw NumericError("adam: NaN gradient in parameter '" +
                           params_[i].first + "'");
      }
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      vals[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

}  // namespace voltcast
