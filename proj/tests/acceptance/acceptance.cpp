// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "rank_oracle.hpp"
#include "toy_config.hpp"
#include "tvgan/cli.hpp"
#include "tvgan/losses.hpp"
#include "tvgan/nets.hpp"
#include "tvgan/pipeline.hpp"
#include "tvgan/train.hpp"

using namespace tvgan;
using namespace tvgan::testing;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kLossTol = 1e-5;
constexpr double kTotalTol = 1e-9;
constexpr double kGradTol = 1e-3;
constexpr int kGradParams = 60;
constexpr int kBoundDraws = 1000;
constexpr int kRankInstances = 1000;
constexpr int kScaleInstances = 100;
constexpr int kToyEpochs = 20;
constexpr double kLossReduction = 0.5;
constexpr int kPatchEpochs = 30;
constexpr double kPatchMse = 0.05;
const std::vector<std::uint64_t> kToySeeds = {1, 2, 3};

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "tvgan-acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Tensor filled(int n, double v) { return Tensor(1, 1, n, v); }

// ---------------------------------------------------------------------------

Outcome loss_oracles() {
  Outcome o;
  const double adv = discriminator_adv_loss(filled(16, 0.5), filled(16, 0.5));
  Tensor a(1, 1, 2), b(1, 1, 2, 0.0);
  a[0] = 1.0;
  a[1] = 0.5;
  const double l1 = l1_loss(a, b);
  const std::vector<Scalar> uniform(4, 0.0), target = {0, 1, 0, 0};
  const double ce = identity_loss_generator(uniform, target);
  const double total = tvgan_generator_total(0.7, 0.01, 0.02, LossWeights{});
  o.pass = std::abs(adv - 1.386294) <= kLossTol && l1 == 0.75 &&
           std::abs(ce - 1.386294) <= kLossTol && std::abs(total - 3.7) <= kTotalTol;
  o.detail = "d_adv " + fmt("%.6f", adv) + ", l1 " + fmt("%.17g", l1) + ", id_ce " +
             fmt("%.6f", ce) + ", total " + fmt("%.12f", total);
  return o;
}

Outcome gradient_checks() {
  Outcome o;
  std::ostringstream d;
  auto record = [&](const std::string& name, const GradCheckResult& r) {
    const bool ok = r.failed == 0 && r.checked >= 50;
    o.pass = o.pass && ok;
    d << name << " " << r.checked << " params (" << r.refined << " at a kink) max rel "
      << fmt("%.1e", r.max_rel_error)
      << (ok ? "" : " (failed)") << "; ";
  };
  std::uint64_t seed = 100;
  for (const auto& c : gan_loss_cases()) record(c.name, check_gan_case(c, seed++, kGradParams));
  record("patch_mse", check_patch_mse(seed, kGradParams));
  o.detail = d.str() + "tol " + fmt("%.0e", kGradTol);
  return o;
}

Outcome architecture() {
  Outcome o;
  std::ostringstream d;

  DiscriminatorSpec ds;
  ds.resolution = 64;
  ds.base_channels = 4;
  ds.num_subjects = 4;
  Discriminator disc(ds, 3);
  const Tensor x = random_tensor(3, 64, 64, 1), y = random_tensor(3, 64, 64, 2);
  const auto base = disc.forward(x, y);
  int trunk_ok = 0, id_ok = 0, trunk_n = 0, id_n = 0;
  for (auto* p : disc.trunk_parameters()) {
    const auto saved = p->value;
    for (auto& v : p->value) v += 0.05;
    const auto moved = disc.forward(x, y);
    trunk_ok += moved.realness != base.realness && moved.id_logits != base.id_logits;
    ++trunk_n;
    p->value = saved;
  }
  for (auto* p : disc.identity_parameters()) {
    const auto saved = p->value;
    for (auto& v : p->value) v += 0.05;
    const auto moved = disc.forward(x, y);
    id_ok += moved.realness == base.realness && moved.id_logits != base.id_logits;
    ++id_n;
    p->value = saved;
  }
  const bool sharing = trunk_n > 0 && id_n > 0 && trunk_ok == trunk_n && id_ok == id_n;
  d << "sharing " << trunk_ok << "/" << trunk_n << " trunk, " << id_ok << "/" << id_n << " id; ";

  GeneratorSpec gs;
  gs.resolution = 16;
  gs.depth = 2;
  gs.base_channels = 4;
  Generator g(gs, 1);
  Rng rng(17);
  int bounded = 0;
  for (int i = 0; i < kBoundDraws; ++i) {
    if (i % 10 == 0) spread_parameters(g.params(), rng.uniform(0.02, 3.0), rng.below(1u << 30));
    const double range = rng.uniform(1.0, 50.0);
    const Tensor in = random_tensor(3, 16, 16, rng.below(1u << 30), -range, range);
    const Tensor out = generator_forward(g, in, rng.bernoulli(0.5), i);
    bool inside = true;
    for (double v : out.values()) inside = inside && v >= -1.0 && v <= 1.0;
    bounded += inside;
  }
  d << "bounded " << bounded << "/" << kBoundDraws << "; ";

  GeneratorSpec big;
  big.resolution = 256;
  big.depth = 8;
  big.base_channels = 4;
  const auto shapes = Generator(big, 1).layer_shapes();
  const auto& bottleneck = shapes[big.depth - 1];
  d << "bottleneck " << bottleneck.height << "x" << bottleneck.width;

  o.pass = sharing && bounded == kBoundDraws && bottleneck.height == 1 && bottleneck.width == 1;
  o.detail = d.str();
  return o;
}

Outcome rank_oracle() {
  Outcome o;
  Rng rng(2024);
  int agree = 0, ties = 0;
  bool cmc_ok = true;
  for (int n = 0; n < kRankInstances; ++n) {
    const auto inst = random_rank_instance(rng);
    std::vector<double> dist;
    std::vector<std::string> subj;
    for (const auto& e : inst.gallery.entries) {
      dist.push_back(cosine_distance(inst.query, e.embedding));
      subj.push_back(e.subject);
    }
    for (std::size_t i = 0; i < dist.size(); ++i)
      for (std::size_t j = i + 1; j < dist.size(); ++j) ties += dist[i] == dist[j] && subj[i] != subj[j];
    agree += rank_of_query(inst.query, inst.truth, inst.gallery).rank == oracle_rank(dist, subj, inst.truth) &&
             rank_of_query(inst.query, inst.truth, inst.gallery, RankMode::per_subject_min).rank ==
                 oracle_rank_subject_min(dist, subj, inst.truth);

    std::vector<Query> queries = {{inst.query, inst.truth}};
    for (int k = 0; k < 4; ++k) {
      Embedding e(inst.gallery.dim);
      for (auto& v : e) v = rng.uniform(0.1, 1.0);
      queries.push_back({e, inst.gallery.entries[rng.below(inst.gallery.size())].subject});
    }
    const auto cmc = cmc_curve(queries, inst.gallery);
    for (std::size_t i = 1; i < cmc.size(); ++i) cmc_ok = cmc_ok && cmc[i] >= cmc[i - 1];
    cmc_ok = cmc_ok && cmc.back() == 1.0;
  }

  int invariant = 0;
  Rng srng(77);
  for (int n = 0; n < kScaleInstances; ++n) {
    const auto inst = random_rank_instance(srng);
    const auto before = rank_of_query(inst.query, inst.truth, inst.gallery);
    Gallery scaled = inst.gallery;
    for (auto& e : scaled.entries) {
      const double s = std::ldexp(1.0, static_cast<int>(srng.below(9)) - 4);
      for (auto& v : e.embedding) v *= s;
    }
    Embedding q = inst.query;
    for (auto& v : q) v *= 8.0;
    const auto after = rank_of_query(q, inst.truth, scaled);
    invariant += after.rank == before.rank && after.sorted_gallery_subjects == before.sorted_gallery_subjects;
  }
  o.pass = agree == kRankInstances && cmc_ok && invariant == kScaleInstances;
  o.detail = "oracle " + std::to_string(agree) + "/" + std::to_string(kRankInstances) + " (" +
             std::to_string(ties) + " ties), cmc " + (cmc_ok ? "monotone" : "broken") +
             ", scaling " + std::to_string(invariant) + "/" + std::to_string(kScaleInstances);
  return o;
}

// ---------------------------------------------------------------------------

struct ToyRun {
  double first_epoch = 0, last_epoch = 0;
  double test_rank1 = 0, train_rank1 = 0;
};

double rank1(const std::vector<PairedSample>& data, const DatasetSplit& split,
             const TransformModel& model, const std::string& method, QuerySet queries) {
  EvalOptions options;
  options.queries = queries;
  options.gallery_seed = split.seed;
  const auto embedder = toy_embedder(kToyResolution);
  return evaluate_split(data, split, "split", model, method, *embedder, options).accuracies.at(1);
}

ToyRun toy_run(const std::vector<PairedSample>& data, const DatasetSplit& split, TrainConfig cfg) {
  ToyRun r;
  const auto result = train(data, split, cfg);
  r.first_epoch = result.epoch_means.front().total_g;
  r.last_epoch = result.epoch_means.back().total_g;
  const std::string method = to_string(cfg.model_kind);
  r.test_rank1 = rank1(data, split, result.model, method, QuerySet::test);
  r.train_rank1 = rank1(data, split, result.model, method, QuerySet::train);
  return r;
}

std::vector<PairedSample> toy_data() { return synthesize_toy_dataset(8, 10, kToyResolution, 0); }

TrainConfig toy_tvgan(std::uint64_t seed, bool fake_term) {
  TrainConfig c = toy_train_config(ModelKind::tvgan, seed, kToyEpochs);
  c.weights.identity_fake_term = fake_term;
  return c;
}

struct ToySummary {
  double reduction_worst = 0;  // largest last/first epoch ratio over seeds
  double tvgan_test = 0, plain_test = 0, tvgan_train = 0, pix2pix_train = 0;
};

std::string describe(const ToySummary& s) {
  return "worst epoch ratio " + fmt("%.3f", s.reduction_worst) + ", test rank-1 tvgan " +
         fmt("%.3f", s.tvgan_test) + " vs plain " + fmt("%.3f", s.plain_test) +
         ", train rank-1 tvgan " + fmt("%.3f", s.tvgan_train) + " vs pix2pix " +
         fmt("%.3f", s.pix2pix_train);
}

Outcome toy_end_to_end(Outcome* info) {
  const auto data = toy_data();
  ToySummary real_only, with_fake;
  const double n = static_cast<double>(kToySeeds.size());
  for (auto seed : kToySeeds) {
    const auto split = make_subject_disjoint_split(data, 2, seed);
    const ToyRun tv = toy_run(data, split, toy_tvgan(seed, false));
    const ToyRun tv_fake = toy_run(data, split, toy_tvgan(seed, true));
    const ToyRun p2p = toy_run(data, split, toy_train_config(ModelKind::pix2pix, seed, kToyEpochs));
    const double plain_test = rank1(data, split, plain_model(), "plain", QuerySet::test);
    std::printf("  seed %llu: tvgan %.1f -> %.1f test %.3f train %.3f | fake-term %.1f -> %.1f test %.3f train %.3f"
                " | pix2pix train %.3f | plain test %.3f\n",
                static_cast<unsigned long long>(seed), tv.first_epoch, tv.last_epoch, tv.test_rank1,
                tv.train_rank1, tv_fake.first_epoch, tv_fake.last_epoch, tv_fake.test_rank1,
                tv_fake.train_rank1, p2p.train_rank1, plain_test);
    std::fflush(stdout);
    for (auto [s, r] : {std::pair{&real_only, tv}, std::pair{&with_fake, tv_fake}}) {
      s->reduction_worst = std::max(s->reduction_worst, r.last_epoch / r.first_epoch);
      s->tvgan_test += r.test_rank1 / n;
      s->tvgan_train += r.train_rank1 / n;
      s->plain_test += plain_test / n;
      s->pix2pix_train += p2p.train_rank1 / n;
    }
  }
  auto judge = [](const ToySummary& s) {
    return s.reduction_worst <= 1.0 - kLossReduction && s.tvgan_test > s.plain_test &&
           s.tvgan_train >= s.pix2pix_train;
  };
  info->pass = judge(with_fake);
  info->detail = "generated-class identity term: " + describe(with_fake);
  return {judge(real_only), "real-pair identity term: " + describe(real_only)};
}

// ---------------------------------------------------------------------------

Outcome patch_pipeline() {
  std::ostringstream d;
  bool exact = true;
  for (auto [size, patch, stride] : {std::tuple{64, 16, 16}, {64, 32, 32}, {75, 25, 25}}) {
    const Tensor img = random_tensor(3, size, size, static_cast<std::uint64_t>(size + patch));
    exact = exact && reassemble_patches(extract_patches(img, patch, stride), size, size) == img;
  }
  const auto count = extract_patches(random_tensor(3, 64, 64, 1), 25, 13).size();
  d << "round trip " << (exact ? "exact" : "inexact") << ", 64/13 patches " << count << ", ";

  const auto data = toy_data();
  DatasetSplit split;
  split.train_subjects = subjects_of(data);
  TrainConfig cfg = toy_train_config(ModelKind::patch, 1, kPatchEpochs);
  const auto result = train(data, split, cfg);
  double mse = 0;
  for (const auto& s : data) mse += mse_loss(s.visible, transform(result.model, s.thermal));
  mse /= static_cast<double>(data.size());
  d << "image mse " << fmt("%.4f", mse) << " (last epoch patch mse "
    << fmt("%.4f", result.epoch_means.back().total_g) << ")";
  return {exact && count == 16 && mse < kPatchMse, d.str()};
}

Outcome determinism() {
  std::vector<std::string> logs, metrics;
  for (int run = 0; run < 2; ++run) {
    const auto dir = fresh_dir("run" + std::to_string(run));
    std::ostringstream out, err;
    auto cli = [&](std::vector<std::string> args) {
      args.insert(args.begin(), "tvgan");
      std::vector<const char*> argv;
      for (const auto& a : args) argv.push_back(a.c_str());
      return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    };
    const std::string d = dir.string();
    if (cli({"prepare-data", "--synthesize-toy", "--resolution", "64", "--n-test", "2", "--seed", "5",
             "--out-dir", d}) != 0 ||
        cli({"train", "--model", "tvgan", "--manifest", d + "/toy/manifest.json", "--split",
             d + "/split.json", "--resolution", "64", "--epochs", "2", "--generator-depth", "6",
             "--generator-base", "8", "--disc-base", "8", "--seed", "5", "--out-dir", d + "/train"}) != 0 ||
        cli({"evaluate", "--model", "tvgan", "--manifest", d + "/toy/manifest.json", "--split",
             d + "/split.json", "--checkpoint", d + "/train/tvgan_epoch2.ckpt", "--resolution", "64",
             "--out-dir", d}) != 0) {
      return {false, "run " + std::to_string(run) + " failed: " + err.str()};
    }
    logs.push_back(slurp(dir / "train" / "loss_log.jsonl"));
    metrics.push_back(slurp(dir / "metrics_tvgan_split.json"));
  }
  const bool same = !logs[0].empty() && logs[0] == logs[1] && !metrics[0].empty() && metrics[0] == metrics[1];
  return {same, "loss log " + std::to_string(logs[0].size()) + " bytes, metrics " +
                    std::to_string(metrics[0].size()) + " bytes, " + (same ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int n) { return only.empty() || only.contains(n); };

  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
  };
  Outcome toy_info;
  const std::vector<Criterion> criteria = {
      {1, "loss oracles", 1, loss_oracles},
      {2, "gradient checks", 120, gradient_checks},
      {3, "architecture invariants", 60, architecture},
      {4, "rank and CMC oracle", 30, rank_oracle},
      {5, "toy end-to-end identity preservation", 3 * 3600, [&] { return toy_end_to_end(&toy_info); }},
      {6, "patch pipeline", 600, patch_pipeline},
      {7, "determinism", 3600, determinism},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!wanted(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    const bool in_time = secs < c.budget_seconds;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("criterion %d %s: %s (%s; %.1fs of %.0fs)\n", c.id, c.name, pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs, c.budget_seconds);
    if (c.id == 5) {
      std::printf("  info: %s, would %s\n", toy_info.detail.c_str(), toy_info.pass ? "pass" : "fail");
    }
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
