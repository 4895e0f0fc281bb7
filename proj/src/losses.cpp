#include "tvgan/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tvgan/error.hpp"

namespace tvgan {

namespace {

void require_scores(const Tensor& scores, const char* who) {
  if (scores.empty()) throw InvalidArgument(std::string(who) + ": empty score map");
  for (Scalar v : scores.values()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw InvalidArgument(std::string(who) + ": score " + std::to_string(v) +
                            " outside [0, 1]");
    }
  }
}

Scalar clamp_prob(Scalar p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

bool clamped(Scalar p) { return p < kProbEps || p > 1.0 - kProbEps; }

// -mean(log p) or -mean(log(1 - p)) with gradient with respect to p.
LossGrad neg_mean_log(const Tensor& scores, bool complement, const char* who) {
  require_scores(scores, who);
  const auto n = static_cast<Scalar>(scores.size());
  LossGrad out{0.0, Tensor(scores.channels(), scores.height(), scores.width())};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const Scalar p = clamp_prob(scores[i]);
    const Scalar q = complement ? 1.0 - p : p;
    out.value -= std::log(q);
    if (!clamped(scores[i])) out.grad[i] = complement ? 1.0 / (n * q) : -1.0 / (n * q);
  }
  out.value /= n;
  return out;
}

void require_same(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(who) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
  if (a.empty()) throw ShapeError(std::string(who) + ": empty tensors");
}

Scalar log_sum_exp(std::span<const Scalar> logits) {
  const Scalar m = *std::max_element(logits.begin(), logits.end());
  Scalar s = 0.0;
  for (Scalar z : logits) s += std::exp(z - m);
  return m + std::log(s);
}

void require_class(std::span<const Scalar> logits, int target) {
  if (logits.empty()) throw InvalidArgument("cross-entropy: empty logits");
  if (target < 0 || target >= static_cast<int>(logits.size())) {
    throw InvalidArgument("cross-entropy: class " + std::to_string(target) + " out of range");
  }
}

int real_identity_index(std::span<const Scalar> logits, std::span<const Scalar> true_id) {
  if (true_id.size() != logits.size()) {
    throw InvalidArgument("identity loss: one-hot length " + std::to_string(true_id.size()) +
                          " does not match logits length " + std::to_string(logits.size()));
  }
  const int idx = one_hot_index(true_id);
  if (idx == static_cast<int>(true_id.size()) - 1) {
    throw InvalidArgument("identity loss: true identity indexes the reserved generated class");
  }
  return idx;
}

}  // namespace

void LossWeights::validate() const {
  if (!(std::isfinite(lambda1) && lambda1 >= 0.0 && std::isfinite(lambda2) && lambda2 >= 0.0)) {
    throw InvalidArgument("loss weights must be finite and non-negative");
  }
}

bool LossReport::finite() const {
  for (double v : {d_adv, g_adv, l1, d_id, g_id, total_g, total_d})
    if (!std::isfinite(v)) return false;
  return true;
}

void to_json(nlohmann::json& j, const LossReport& r) {
  j = {{"d_adv", r.d_adv}, {"g_adv", r.g_adv}, {"l1", r.l1}, {"d_id", r.d_id},
       {"g_id", r.g_id}, {"total_g", r.total_g}, {"total_d", r.total_d}};
}

Scalar discriminator_adv_loss(const Tensor& realness_real, const Tensor& realness_fake) {
  return discriminator_adv_loss_real_grad(realness_real).value +
         discriminator_adv_loss_fake_grad(realness_fake).value;
}

LossGrad discriminator_adv_loss_real_grad(const Tensor& realness_real) {
  return neg_mean_log(realness_real, false, "discriminator adversarial loss (real)");
}

LossGrad discriminator_adv_loss_fake_grad(const Tensor& realness_fake) {
  return neg_mean_log(realness_fake, true, "discriminator adversarial loss (fake)");
}

Scalar generator_adv_loss(const Tensor& realness_fake) {
  return generator_adv_loss_grad(realness_fake).value;
}

LossGrad generator_adv_loss_grad(const Tensor& realness_fake) {
  return neg_mean_log(realness_fake, false, "generator adversarial loss");
}

Scalar l1_loss(const Tensor& target, const Tensor& generated) {
  require_same(target, generated, "l1 loss");
  Scalar s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) s += std::abs(target[i] - generated[i]);
  return s / static_cast<Scalar>(target.size());
}

LossGrad l1_loss_grad(const Tensor& target, const Tensor& generated) {
  LossGrad out{l1_loss(target, generated),
               Tensor(generated.channels(), generated.height(), generated.width())};
  const Scalar inv = 1.0 / static_cast<Scalar>(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const Scalar d = generated[i] - target[i];
    out.grad[i] = d > 0 ? inv : (d < 0 ? -inv : 0.0);
  }
  return out;
}

Scalar mse_loss(const Tensor& target, const Tensor& predicted) {
  require_same(target, predicted, "mse loss");
  Scalar s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const Scalar d = target[i] - predicted[i];
    s += d * d;
  }
  return s / static_cast<Scalar>(target.size());
}

LossGrad mse_loss_grad(const Tensor& target, const Tensor& predicted) {
  LossGrad out{mse_loss(target, predicted),
               Tensor(predicted.channels(), predicted.height(), predicted.width())};
  const Scalar k = 2.0 / static_cast<Scalar>(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) out.grad[i] = k * (predicted[i] - target[i]);
  return out;
}

Scalar cross_entropy(std::span<const Scalar> logits, int target_class) {
  require_class(logits, target_class);
  return log_sum_exp(logits) - logits[target_class];
}

LogitLossGrad cross_entropy_grad(std::span<const Scalar> logits, int target_class) {
  require_class(logits, target_class);
  const Scalar lse = log_sum_exp(logits);
  LogitLossGrad out{lse - logits[target_class], std::vector<Scalar>(logits.size())};
  for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = std::exp(logits[i] - lse);
  out.grad[target_class] -= 1.0;
  return out;
}

int one_hot_index(std::span<const Scalar> one_hot) {
  int index = -1;
  for (std::size_t i = 0; i < one_hot.size(); ++i) {
    if (one_hot[i] == 1.0) {
      if (index >= 0) throw InvalidArgument("identity vector has more than one active entry");
      index = static_cast<int>(i);
    } else if (one_hot[i] != 0.0) {
      throw InvalidArgument("identity vector is not one-hot");
    }
  }
  if (index < 0) throw InvalidArgument("identity vector has no active entry");
  return index;
}

Scalar identity_loss_discriminator(std::span<const Scalar> id_logits_real,
                                   std::span<const Scalar> true_id,
                                   std::span<const Scalar> id_logits_fake,
                                   bool include_fake_term) {
  const int idx = real_identity_index(id_logits_real, true_id);
  Scalar loss = cross_entropy(id_logits_real, idx);
  if (include_fake_term) {
    if (id_logits_fake.size() != id_logits_real.size()) {
      throw InvalidArgument("identity loss: real/fake logit lengths differ");
    }
    loss += cross_entropy(id_logits_fake, static_cast<int>(id_logits_fake.size()) - 1);
  }
  return loss;
}

Scalar identity_loss_generator(std::span<const Scalar> id_logits_fake,
                               std::span<const Scalar> true_id) {
  return cross_entropy(id_logits_fake, real_identity_index(id_logits_fake, true_id));
}

double tvgan_generator_total(double g_adv, double l1, double g_id, const LossWeights& w) {
  if (!(std::isfinite(g_adv) && std::isfinite(l1) && std::isfinite(g_id))) {
    throw NumericalError("generator total: non-finite component");
  }
  return g_adv + w.lambda1 * l1 + w.lambda2 * g_id;
}

}  // namespace tvgan
