#pragma once

#include <vector>

#include "lungsynth/nn/layers.hpp"

namespace lungsynth::nn {

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay: p -= lr * (m_hat / (sqrt(v_hat) + eps) +
// weight_decay * p).
class AdamW {
 public:
  AdamW(ParameterStore& params, AdamWOptions options);

  void step();
  void zero_grad() { params_.zero_grad(); }
  void set_lr(double lr) { options_.lr = lr; }
  const AdamWOptions& options() const { return options_; }
  long steps() const { return t_; }

 private:
  ParameterStore& params_;
  AdamWOptions options_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  long t_ = 0;
};

}  // namespace lungsynth::nn
