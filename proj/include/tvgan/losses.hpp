#pragma once

#include <span>
#include <vector>

#include "json.hpp"
#include "tvgan/tensor.hpp"

namespace tvgan {

// Probabilities are clamped to [eps, 1 - eps] before every logarithm.
inline constexpr Scalar kProbEps = 1e-7;

struct LossWeights {
  double lambda1 = 100.0;  // L1 reconstruction
  double lambda2 = 100.0;  // identity
  // Discriminator-side identity loss also pushes generated pairs toward the
  // reserved "generated" class. Disable to learn identity from real pairs only.
  bool identity_fake_term = true;

  void validate() const;
};

struct LossReport {
  double d_adv = 0.0;
  double g_adv = 0.0;
  double l1 = 0.0;
  double d_id = 0.0;
  double g_id = 0.0;
  double total_g = 0.0;
  double total_d = 0.0;

  bool finite() const;
};

void to_json(nlohmann::json& j, const LossReport& r);

// A scalar loss together with its gradient with respect to the first
// tensor-valued argument(s).
struct LossGrad {
  Scalar value = 0.0;
  Tensor grad;
};

struct LogitLossGrad {
  Scalar value = 0.0;
  std::vector<Scalar> grad;
};

// -mean(log real) - mean(log(1 - fake)). Scores must lie in [0, 1].
Scalar discriminator_adv_loss(const Tensor& realness_real, const Tensor& realness_fake);
LossGrad discriminator_adv_loss_real_grad(const Tensor& realness_real);  // -mean(log real)
LossGrad discriminator_adv_loss_fake_grad(const Tensor& realness_fake);  // -mean(log(1 - fake))

// Non-saturating generator objective: -mean(log fake).
Scalar generator_adv_loss(const Tensor& realness_fake);
LossGrad generator_adv_loss_grad(const Tensor& realness_fake);

// mean |target - generated|; the gradient is with respect to `generated`.
Scalar l1_loss(const Tensor& target, const Tensor& generated);
LossGrad l1_loss_grad(const Tensor& target, const Tensor& generated);

// mean (target - predicted)^2; the gradient is with respect to `predicted`.
Scalar mse_loss(const Tensor& target, const Tensor& predicted);
LossGrad mse_loss_grad(const Tensor& target, const Tensor& predicted);

// Softmax cross-entropy of logits against a class index.
Scalar cross_entropy(std::span<const Scalar> logits, int target_class);
LogitLossGrad cross_entropy_grad(std::span<const Scalar> logits, int target_class);

// Index of the single 1 in a one-hot vector; throws if not one-hot.
int one_hot_index(std::span<const Scalar> one_hot);

// CE(real logits, true identity) + CE(fake logits, generated class). The
// true identity must index a real subject (< N).
Scalar identity_loss_discriminator(std::span<const Scalar> id_logits_real,
                                   std::span<const Scalar> true_id,
                                   std::span<const Scalar> id_logits_fake,
                                   bool include_fake_term = true);

// CE(fake logits, true identity): the generator is rewarded when its output
// is recognized as the true subject.
Scalar identity_loss_generator(std::span<const Scalar> id_logits_fake,
                               std::span<const Scalar> true_id);

double tvgan_generator_total(double g_adv, double l1, double g_id, const LossWeights& w);

}  // namespace tvgan
