#pragma once

#include <vector>

#include "tvgan/layers.hpp"

namespace tvgan {

struct AdamConfig {
  double learning_rate = 0.0002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam over a fixed list of parameters. Moment buffers are allocated on the
// first step; parameters outside the list are never touched.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config);

  // Applies one update from the accumulated gradients (scaled by
  // `grad_scale`) and then clears them.
  void step(double grad_scale = 1.0);

  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<std::vector<Scalar>> m_, v_;
  AdamConfig config_;
  long t_ = 0;
};

}  // namespace tvgan
