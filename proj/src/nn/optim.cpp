#include "lungsynth/nn/optim.hpp"

#include <cmath>

#include "lungsynth/error.hpp"

namespace lungsynth::nn {

AdamW::AdamW(ParameterStore& params, AdamWOptions options) : params_(params), options_(options) {
  if (!(options_.lr > 0)) throw ConfigError("AdamW: learning rate must be positive");
  for (const auto& [_, v] : params_.items()) {
    m_.emplace_back(v->value.numel(), 0.0f);
    v_.emplace_back(v->value.numel(), 0.0f);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(options_.beta1);
  const auto b2 = static_cast<float>(options_.beta2);
  const auto step = static_cast<float>(options_.lr / bc1);
  const auto decay = static_cast<float>(1.0 - options_.lr * options_.weight_decay);
  const auto inv_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(options_.eps);
  const auto& items = params_.items();
  for (std::size_t p = 0; p < items.size(); ++p) {
    auto& node = *items[p].second;
    if (!node.has_grad()) continue;
    auto& m = m_[p];
    auto& v = v_[p];
    float* w = node.value.data();
    const float* g = node.grad.data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] *= decay;
      w[i] -= step * m[i] / (std::sqrt(v[i]) * inv_bc2 + eps);
    }
  }
}

}  // namespace lungsynth::nn
