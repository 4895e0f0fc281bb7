#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tvgan/layers.hpp"
#include "tvgan/losses.hpp"
#include "tvgan/nets.hpp"
#include "tvgan/rng.hpp"

namespace tvgan::testing {

inline Tensor random_tensor(int c, int h, int w, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  Rng rng(seed);
  Tensor t(c, h, w);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Denominator floor: gradients below it are compared in absolute terms.
inline constexpr double kGradFloor = 1e-6;

struct GradCheckResult {
  int checked = 0;
  int failed = 0;
  int refined = 0;  // coordinates re-measured with a smaller step
  double max_rel_error = 0.0;
  std::string worst;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
}

// Compares accumulated analytic gradients against central differences on
// `count` randomly chosen scalars drawn from `params`.
//   loss():     forward only, returns the scalar loss
//   backprop(): clears and refills every Parameter::grad for that loss
// When the two one-sided quotients disagree the interval holds a kink of a
// rectifier or |x|, and the coordinate is measured again with steps shrunk by
// 10 down to `min_step`.
inline GradCheckResult grad_check(const std::vector<Parameter*>& params,
                                  const std::function<double()>& loss,
                                  const std::function<void()>& backprop, int count,
                                  std::uint64_t seed, double step = 1e-4, double tol = 1e-3,
                                  double min_step = 1e-7) {
  backprop();
  const double f0 = loss();
  std::vector<std::pair<Parameter*, std::size_t>> all;
  for (auto* p : params)
    for (std::size_t i = 0; i < p->size(); ++i) all.emplace_back(p, i);
  Rng rng(seed);
  GradCheckResult r;
  for (int n = 0; n < count && !all.empty(); ++n) {
    const auto [p, i] = all[rng.below(all.size())];
    const double saved = p->value[i];
    const double analytic = p->grad[i];
    double h = step, numeric = 0.0, rel = 0.0;
    for (;;) {
      p->value[i] = saved + h;
      const double up = loss();
      p->value[i] = saved - h;
      const double down = loss();
      p->value[i] = saved;
      numeric = (up - down) / (2 * h);
      rel = relative_error(analytic, numeric);
      const bool kink = relative_error((up - f0) / h, (f0 - down) / h) > tol;
      if (rel <= tol || !kink || h / 10 < min_step * 0.999) break;
      if (h == step) ++r.refined;
      h /= 10;
    }
    ++r.checked;
    if (rel > tol) ++r.failed;
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst = p->name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic) +
                " numeric " + std::to_string(numeric);
    }
  }
  return r;
}

// Redraws every parameter from N(0, stddev).
inline void spread_parameters(ParameterSet& set, double stddev, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& p : set)
    for (auto& v : p->value) v = rng.normal(0.0, stddev);
}

// Weights from N(0, gain^2 / fan_in), vectors from N(0, gain^2 / 4). The
// training initializer keeps pre-activations so close to zero that a 1e-4
// step straddles rectifier kinks; a flat wide draw saturates the sigmoid
// instead. This keeps pre-activations of order one.
inline void fan_in_parameters(ParameterSet& set, double gain, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& p : set) {
    std::size_t fan_in = 1;
    for (std::size_t k = 1; k < p->shape.size(); ++k) fan_in *= p->shape[k];
    const double stddev = p->shape.size() > 1 ? gain / std::sqrt(static_cast<double>(fan_in)) : gain / 2;
    for (auto& v : p->value) v = rng.normal(0.0, stddev);
  }
}

inline std::vector<Parameter*> all_params(ParameterSet& set) {
  std::vector<Parameter*> out;
  for (const auto& p : set) out.push_back(p.get());
  return out;
}

// Tiny networks and fixed inputs shared by every loss composition.
struct TinyGan {
  static constexpr int kResolution = 16;
  static constexpr int kSubjects = 3;
  static constexpr double kGain = 2.0;

  Generator g;
  Discriminator d;
  Tensor x, y;
  std::vector<Scalar> one_hot;
  int id = 1;
  GeneratorRun run{true, 99};

  static GeneratorSpec generator_spec() {
    GeneratorSpec s;
    s.resolution = kResolution;
    s.depth = 2;
    s.base_channels = 4;
    return s;
  }
  static DiscriminatorSpec discriminator_spec() {
    DiscriminatorSpec s;
    s.resolution = kResolution;
    s.trunk_layers = 3;
    s.base_channels = 4;
    s.num_subjects = kSubjects;
    return s;
  }

  explicit TinyGan(std::uint64_t seed)
      : g(generator_spec(), seed), d(discriminator_spec(), seed + 1),
        x(random_tensor(3, kResolution, kResolution, seed + 2)),
        y(random_tensor(3, kResolution, kResolution, seed + 3)),
        one_hot(kSubjects + 1, 0.0) {
    fan_in_parameters(g.params(), kGain, seed + 4);
    fan_in_parameters(d.params(), kGain, seed + 5);
    one_hot[id] = 1.0;
  }

  void zero() {
    g.params().zero_grad();
    d.params().zero_grad();
  }

  Tensor fake() const { return g.forward(x, run); }
};

struct LossCase {
  std::string name;
  std::function<std::vector<Parameter*>(TinyGan&)> params;
  std::function<double(TinyGan&)> loss;
  std::function<void(TinyGan&)> backprop;  // grads start zeroed
};

// Each loss composed with the tiny networks. Discriminator-side losses see
// the generator output as a constant input.
inline std::vector<LossCase> gan_loss_cases() {
  std::vector<LossCase> cases;
  const auto d_params = [](TinyGan& t) { return all_params(t.d.params()); };
  const auto g_params = [](TinyGan& t) { return all_params(t.g.params()); };

  cases.push_back({"discriminator_adv", d_params,
                   [](TinyGan& t) {
                     const Tensor f = t.fake();
                     return discriminator_adv_loss(t.d.forward(t.x, t.y).realness,
                                                   t.d.forward(t.x, f).realness);
                   },
                   [](TinyGan& t) {
                     const Tensor f = t.fake();
                     DiscriminatorTape a, b;
                     const auto real = t.d.forward(t.x, t.y, &a);
                     const auto fake = t.d.forward(t.x, f, &b);
                     t.d.backward(a, discriminator_adv_loss_real_grad(real.realness).grad, {});
                     t.d.backward(b, discriminator_adv_loss_fake_grad(fake.realness).grad, {});
                   }});

  cases.push_back({"discriminator_identity", d_params,
                   [](TinyGan& t) {
                     const Tensor f = t.fake();
                     return identity_loss_discriminator(t.d.forward(t.x, t.y).id_logits, t.one_hot,
                                                        t.d.forward(t.x, f).id_logits);
                   },
                   [](TinyGan& t) {
                     const Tensor f = t.fake();
                     DiscriminatorTape a, b;
                     const auto real = t.d.forward(t.x, t.y, &a);
                     const auto fake = t.d.forward(t.x, f, &b);
                     t.d.backward(a, {}, cross_entropy_grad(real.id_logits, t.id).grad);
                     t.d.backward(b, {}, cross_entropy_grad(fake.id_logits, TinyGan::kSubjects).grad);
                   }});

  cases.push_back({"generator_adv", g_params,
                   [](TinyGan& t) { return generator_adv_loss(t.d.forward(t.x, t.fake()).realness); },
                   [](TinyGan& t) {
                     GeneratorTape gt;
                     DiscriminatorTape dt;
                     const Tensor f = t.g.forward(t.x, t.run, &gt);
                     const auto out = t.d.forward(t.x, f, &dt);
                     t.g.backward(gt, t.d.backward(dt, generator_adv_loss_grad(out.realness).grad, {}));
                   }});

  cases.push_back({"l1", g_params, [](TinyGan& t) { return l1_loss(t.y, t.fake()); },
                   [](TinyGan& t) {
                     GeneratorTape gt;
                     const Tensor f = t.g.forward(t.x, t.run, &gt);
                     t.g.backward(gt, l1_loss_grad(t.y, f).grad);
                   }});

  cases.push_back({"generator_identity", g_params,
                   [](TinyGan& t) {
                     return identity_loss_generator(t.d.forward(t.x, t.fake()).id_logits, t.one_hot);
                   },
                   [](TinyGan& t) {
                     GeneratorTape gt;
                     DiscriminatorTape dt;
                     const Tensor f = t.g.forward(t.x, t.run, &gt);
                     const auto out = t.d.forward(t.x, f, &dt);
                     t.g.backward(gt, t.d.backward(dt, {}, cross_entropy_grad(out.id_logits, t.id).grad));
                   }});

  cases.push_back({"generator_total", g_params,
                   [](TinyGan& t) {
                     const Tensor f = t.fake();
                     const auto out = t.d.forward(t.x, f);
                     return tvgan_generator_total(generator_adv_loss(out.realness), l1_loss(t.y, f),
                                                  identity_loss_generator(out.id_logits, t.one_hot),
                                                  LossWeights{});
                   },
                   [](TinyGan& t) {
                     const LossWeights w;
                     GeneratorTape gt;
                     DiscriminatorTape dt;
                     const Tensor f = t.g.forward(t.x, t.run, &gt);
                     const auto out = t.d.forward(t.x, f, &dt);
                     auto dl = cross_entropy_grad(out.id_logits, t.id).grad;
                     for (auto& v : dl) v *= w.lambda2;
                     Tensor dy = t.d.backward(dt, generator_adv_loss_grad(out.realness).grad, dl);
                     Tensor d1 = l1_loss_grad(t.y, f).grad;
                     d1 *= w.lambda1;
                     dy += d1;
                     t.g.backward(gt, dy);
                   }});
  return cases;
}

inline GradCheckResult check_gan_case(const LossCase& c, std::uint64_t seed, int count) {
  TinyGan t(seed);
  return grad_check(c.params(t), [&] { return c.loss(t); },
                    [&] {
                      t.zero();
                      c.backprop(t);
                    },
                    count, seed ^ 0x5eedULL);
}

inline GradCheckResult check_patch_mse(std::uint64_t seed, int count) {
  PatchNetSpec spec;
  spec.patch_size = 9;
  spec.layers = 4;
  spec.width = 4;
  PatchTransformer net(spec, seed);
  fan_in_parameters(net.params(), TinyGan::kGain, seed + 3);
  const Tensor in = random_tensor(3, 9, 9, seed + 1);
  const Tensor target = random_tensor(3, 9, 9, seed + 2);
  return grad_check(all_params(net.params()), [&] { return mse_loss(target, net.forward(in)); },
                    [&] {
                      net.params().zero_grad();
                      PatchTape tape;
                      const Tensor out = net.forward(in, &tape);
                      net.backward(tape, mse_loss_grad(target, out).grad);
                    },
                    count, seed ^ 0x5eedULL);
}

}  // namespace tvgan::testing
