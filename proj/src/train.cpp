#include "tvgan/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "tvgan/error.hpp"
#include "tvgan/rng.hpp"

namespace tvgan {

namespace {

// Seed streams derived from the run seed.
enum SeedTag : std::uint64_t {
  kGeneratorInit = 1,
  kDiscriminatorInit = 2,
  kPatchInit = 3,
  kShuffle = 4,
  kAugment = 5,
  kStep = 6,
  kPatchShuffle = 7,
};

const char* const kModelKinds[] = {"tvgan", "pix2pix", "patch", "plain"};

// Overlays `patch` onto `base`, rejecting keys `base` does not have.
nlohmann::json overlay(nlohmann::json base, const nlohmann::json& patch, const std::string& where) {
  if (!patch.is_object()) throw InvalidArgument(where + ": expected an object");
  for (const auto& [key, value] : patch.items()) {
    if (!base.contains(key)) throw InvalidArgument("unknown config key '" + where + "." + key + "'");
    base[key] = value;
  }
  return base;
}

void check_grads(const ParameterSet& params, const char* net, long step) {
  for (const auto& p : params) {
    if (!all_finite(p->grad)) {
      throw NumericalError("step " + std::to_string(step) + ": non-finite gradient in " + net +
                           " parameter " + p->name);
    }
  }
}

void check_values(const ParameterSet& params, const char* net, long step) {
  for (const auto& p : params) {
    if (!all_finite(p->value)) {
      throw NumericalError("step " + std::to_string(step) + ": non-finite " + net +
                           " parameter " + p->name + " after update");
    }
  }
}

void check_report(const LossReport& r, long step) {
  const std::pair<const char*, double> terms[] = {
      {"d_adv", r.d_adv}, {"g_adv", r.g_adv},     {"l1", r.l1},          {"d_id", r.d_id},
      {"g_id", r.g_id},   {"total_g", r.total_g}, {"total_d", r.total_d}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw NumericalError("step " + std::to_string(step) + ": non-finite loss term " + name);
    }
  }
}

std::vector<Scalar> scaled(std::vector<Scalar> v, double s) {
  for (auto& x : v) x *= s;
  return v;
}

std::vector<int> positions(int extent, int patch, int stride, bool cover_edge) {
  std::vector<int> out;
  for (int p = 0; p + patch <= extent; p += stride) out.push_back(p);
  if (cover_edge && out.back() + patch < extent) out.push_back(extent - patch);
  return out;
}

std::vector<PatchAt> extract_at(const Tensor& image, int patch_size, const std::vector<int>& ys,
                                const std::vector<int>& xs) {
  std::vector<PatchAt> out;
  out.reserve(ys.size() * xs.size());
  for (int y : ys)
    for (int x : xs) {
      PatchAt p{Tensor(image.channels(), patch_size, patch_size), y, x};
      for (int c = 0; c < image.channels(); ++c)
        for (int r = 0; r < patch_size; ++r)
          std::copy_n(&image.channel(c)[(y + r) * image.width() + x], patch_size,
                      &p.patch.at(c, r, 0));
      out.push_back(std::move(p));
    }
  return out;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw LoadError("cannot write " + path.string());
    out << text;
    if (!out) throw LoadError("cannot write " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

LossReport mean_of(const std::vector<LossReport>& reports) {
  LossReport m;
  for (const auto& r : reports) {
    m.d_adv += r.d_adv;
    m.g_adv += r.g_adv;
    m.l1 += r.l1;
    m.d_id += r.d_id;
    m.g_id += r.g_id;
    m.total_g += r.total_g;
    m.total_d += r.total_d;
  }
  const double n = std::max<std::size_t>(1, reports.size());
  m.d_adv /= n;
  m.g_adv /= n;
  m.l1 /= n;
  m.d_id /= n;
  m.g_id /= n;
  m.total_g /= n;
  m.total_d /= n;
  return m;
}

}  // namespace

ModelKind parse_model_kind(const std::string& text) {
  for (int i = 0; i < 4; ++i)
    if (text == kModelKinds[i]) return static_cast<ModelKind>(i);
  throw InvalidArgument("unknown model kind '" + text + "' (tvgan, pix2pix, patch or plain)");
}

std::string to_string(ModelKind kind) { return kModelKinds[static_cast<int>(kind)]; }

int default_epochs(ModelKind kind) {
  switch (kind) {
    case ModelKind::tvgan: return 65;
    case ModelKind::pix2pix: return 85;
    case ModelKind::patch: return 108;
    case ModelKind::plain: break;
  }
  throw InvalidArgument("nothing to train: model kind plain has no parameters");
}

int TrainConfig::resolved_epochs() const {
  return epochs > 0 ? epochs : default_epochs(model_kind);
}

AdamConfig TrainConfig::adam() const { return {learning_rate, beta1, beta2, epsilon}; }

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning_rate must be > 0");
  }
  if (!(beta1 >= 0 && beta1 < 1)) throw InvalidArgument("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw InvalidArgument("beta2 must lie in [0, 1)");
  if (!(epsilon > 0)) throw InvalidArgument("epsilon must be > 0");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (epochs < 0) throw InvalidArgument("epochs must be >= 1");
  if (checkpoint_every < 0) throw InvalidArgument("checkpoint_every must be >= 0");
  if (patch_stride < 1) throw InvalidArgument("patch_stride must be >= 1");
  weights.validate();
  generator.validate();
  patch.validate();
  if (discriminator.resolution != generator.resolution) {
    throw InvalidArgument("generator and discriminator resolutions differ");
  }
  if (discriminator.in_channels != generator.in_channels + generator.out_channels) {
    throw InvalidArgument("discriminator in_channels must equal generator in + out channels");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  std::vector<std::string> aug;
  for (auto op : c.augmentation) aug.push_back(to_string(op));
  nlohmann::json disc = c.discriminator;
  disc.erase("num_subjects");
  j = {{"model_kind", to_string(c.model_kind)},
       {"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"epsilon", c.epsilon},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"lambda1", c.weights.lambda1},
       {"lambda2", c.weights.lambda2},
       {"identity_fake_term", c.weights.identity_fake_term},
       {"seed", c.seed},
       {"augmentation", aug},
       {"checkpoint_every", c.checkpoint_every},
       {"generator", c.generator},
       {"discriminator", disc},
       {"patch", c.patch},
       {"patch_stride", c.patch_stride},
       {"stochastic_inference", c.stochastic_inference}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig defaults = c;
  nlohmann::json base = defaults;
  const nlohmann::json merged = overlay(base, j, "train");
  try {
    c.model_kind = parse_model_kind(merged.at("model_kind").get<std::string>());
    c.learning_rate = merged.at("learning_rate").get<double>();
    c.beta1 = merged.at("beta1").get<double>();
    c.beta2 = merged.at("beta2").get<double>();
    c.epsilon = merged.at("epsilon").get<double>();
    c.batch_size = merged.at("batch_size").get<int>();
    c.epochs = merged.at("epochs").get<int>();
    c.weights.lambda1 = merged.at("lambda1").get<double>();
    c.weights.lambda2 = merged.at("lambda2").get<double>();
    c.weights.identity_fake_term = merged.at("identity_fake_term").get<bool>();
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.augmentation.clear();
    for (const auto& op : merged.at("augmentation")) c.augmentation.insert(parse_augment_op(op.get<std::string>()));
    c.checkpoint_every = merged.at("checkpoint_every").get<int>();
    c.generator = overlay(base["generator"], merged.at("generator"), "generator").get<GeneratorSpec>();
    nlohmann::json disc = overlay(base["discriminator"], merged.at("discriminator"), "discriminator");
    disc["num_subjects"] = defaults.discriminator.num_subjects;
    c.discriminator = disc.get<DiscriminatorSpec>();
    c.patch = overlay(base["patch"], merged.at("patch"), "patch").get<PatchNetSpec>();
    c.patch_stride = merged.at("patch_stride").get<int>();
    c.stochastic_inference = merged.at("stochastic_inference").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("invalid train config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

GanTrainer::GanTrainer(const TrainConfig& cfg, const IdentityEncoding& enc) : cfg_(cfg), enc_(enc) {
  if (cfg_.model_kind != ModelKind::tvgan && cfg_.model_kind != ModelKind::pix2pix) {
    throw InvalidArgument("GanTrainer needs model kind tvgan or pix2pix");
  }
  if (enc_.num_subjects < 1) throw InvalidArgument("identity encoding has no subjects");
  cfg_.discriminator.num_subjects = enc_.num_subjects;
  cfg_.validate();
  generator_ = std::make_shared<Generator>(cfg_.generator, derive_seed(cfg_.seed, kGeneratorInit));
  discriminator_ =
      std::make_shared<Discriminator>(cfg_.discriminator, derive_seed(cfg_.seed, kDiscriminatorInit));
  std::vector<Parameter*> g_params;
  for (const auto& p : generator_->params()) g_params.push_back(p.get());
  std::vector<Parameter*> d_params = discriminator_->trunk_parameters();
  for (auto* p : discriminator_->realness_parameters()) d_params.push_back(p);
  if (identity_enabled()) {
    for (auto* p : discriminator_->identity_parameters()) d_params.push_back(p);
  }
  opt_g_ = std::make_unique<Adam>(std::move(g_params), cfg_.adam());
  opt_d_ = std::make_unique<Adam>(std::move(d_params), cfg_.adam());
}

LossReport GanTrainer::train_step_gan(const PairedSample& sample, std::uint64_t step_seed) {
  const PairedSample* batch[] = {&sample};
  return train_step(batch, step_seed);
}

LossReport GanTrainer::train_step(std::span<const PairedSample* const> batch,
                                  std::uint64_t step_seed) {
  if (batch.empty()) throw InvalidArgument("empty training batch");
  const long step = steps_ + 1;
  const bool with_id = identity_enabled();
  const bool fake_term = cfg_.weights.identity_fake_term;
  const double lambda1 = cfg_.weights.lambda1;
  const double lambda2 = with_id ? cfg_.weights.lambda2 : 0.0;
  Generator& G = *generator_;
  Discriminator& D = *discriminator_;

  struct Work {
    Tensor x;
    GeneratorTape tape;
    Tensor fake;
    int id = -1;
  };
  std::vector<Work> work(batch.size());
  std::vector<LossReport> reports;

  // Discriminator step on the real pair and the detached fake pair.
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PairedSample& s = *batch[i];
    Work& w = work[i];
    w.x = to_three_channels(s.thermal);
    w.fake = G.forward(w.x, GeneratorRun{true, derive_seed(step_seed, i)}, &w.tape);
    DiscriminatorTape real_tape, fake_tape;
    const auto real = D.forward(w.x, s.visible, &real_tape);
    const auto fake = D.forward(w.x, w.fake, &fake_tape);

    LossReport r;
    r.d_adv = discriminator_adv_loss(real.realness, fake.realness);
    r.g_adv = generator_adv_loss(fake.realness);
    r.l1 = l1_loss(s.visible, w.fake);
    std::vector<Scalar> d_real_logits, d_fake_logits;
    if (with_id) {
      w.id = enc_.index_of(s.subject_id);
      const auto one_hot = encode_identity(s.subject_id, enc_);
      r.d_id = identity_loss_discriminator(real.id_logits, one_hot, fake.id_logits, fake_term);
      r.g_id = identity_loss_generator(fake.id_logits, one_hot);
      d_real_logits = cross_entropy_grad(real.id_logits, w.id).grad;
      if (fake_term) d_fake_logits = cross_entropy_grad(fake.id_logits, enc_.generated_class()).grad;
    }
    r.total_g = tvgan_generator_total(r.g_adv, r.l1, with_id ? r.g_id : 0.0,
                                      {lambda1, with_id ? cfg_.weights.lambda2 : 0.0});
    r.total_d = r.d_adv + r.d_id;
    check_report(r, step);
    reports.push_back(r);

    D.backward(real_tape, discriminator_adv_loss_real_grad(real.realness).grad, d_real_logits);
    D.backward(fake_tape, discriminator_adv_loss_fake_grad(fake.realness).grad, d_fake_logits);
  }
  check_grads(D.params(), "discriminator", step);
  opt_d_->step(1.0 / batch.size());
  D.params().zero_grad();
  if (phase_hook_) phase_hook_("discriminator");

  // Generator step through the updated discriminator.
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PairedSample& s = *batch[i];
    Work& w = work[i];
    DiscriminatorTape tape;
    const auto out = D.forward(w.x, w.fake, &tape);
    std::vector<Scalar> d_logits;
    if (with_id && lambda2 != 0.0) d_logits = scaled(cross_entropy_grad(out.id_logits, w.id).grad, lambda2);
    Tensor dy = D.backward(tape, generator_adv_loss_grad(out.realness).grad, d_logits);
    Tensor dl1 = l1_loss_grad(s.visible, w.fake).grad;
    dl1 *= lambda1;
    dy += dl1;
    G.backward(w.tape, dy);
  }
  D.params().zero_grad();
  check_grads(G.params(), "generator", step);
  opt_g_->step(1.0 / batch.size());
  if (phase_hook_) phase_hook_("generator");

  check_values(G.params(), "generator", step);
  check_values(D.params(), "discriminator", step);
  ++steps_;
  return mean_of(reports);
}

// ---------------------------------------------------------------------------

std::vector<PatchAt> extract_patches(const Tensor& image, int patch_size, int stride) {
  if (patch_size < 1) throw InvalidArgument("patch size must be >= 1");
  if (stride < 1) throw InvalidArgument("patch stride must be >= 1");
  if (patch_size > image.height() || patch_size > image.width()) {
    throw InvalidArgument("patch size " + std::to_string(patch_size) + " exceeds image " +
                          image.shape_string());
  }
  return extract_at(image, patch_size, positions(image.height(), patch_size, stride, false),
                    positions(image.width(), patch_size, stride, false));
}

Tensor reassemble_patches(const std::vector<PatchAt>& patches, int height, int width) {
  if (patches.empty()) throw InvalidArgument("no patches to reassemble");
  const int channels = patches.front().patch.channels();
  Tensor sum(channels, height, width);
  std::vector<int> cover(static_cast<std::size_t>(height) * width, 0);
  for (const auto& p : patches) {
    const int ph = p.patch.height(), pw = p.patch.width();
    if (p.patch.channels() != channels) throw ShapeError("patches differ in channel count");
    if (p.y < 0 || p.x < 0 || p.y + ph > height || p.x + pw > width) {
      throw InvalidArgument("patch at (" + std::to_string(p.y) + ", " + std::to_string(p.x) +
                            ") lies outside the " + std::to_string(height) + "x" +
                            std::to_string(width) + " canvas");
    }
    for (int r = 0; r < ph; ++r)
      for (int q = 0; q < pw; ++q) {
        ++cover[static_cast<std::size_t>(p.y + r) * width + p.x + q];
        for (int c = 0; c < channels; ++c) sum.at(c, p.y + r, p.x + q) += p.patch.at(c, r, q);
      }
  }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const int n = cover[static_cast<std::size_t>(y) * width + x];
      if (n == 0) {
        throw InvalidArgument("patch coverage gap at (" + std::to_string(y) + ", " +
                              std::to_string(x) + ")");
      }
      if (n > 1)
        for (int c = 0; c < channels; ++c) sum.at(c, y, x) /= n;
    }
  return sum;
}

PatchTrainer::PatchTrainer(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.patch.validate();
  net_ = std::make_shared<PatchTransformer>(cfg_.patch, derive_seed(cfg_.seed, kPatchInit));
  std::vector<Parameter*> params;
  for (const auto& p : net_->params()) params.push_back(p.get());
  opt_ = std::make_unique<Adam>(std::move(params), cfg_.adam());
}

double PatchTrainer::train_step(std::span<const std::pair<const Tensor*, const Tensor*>> batch) {
  if (batch.empty()) throw InvalidArgument("empty training batch");
  double total = 0.0;
  for (const auto& [input, target] : batch) {
    PatchTape& tape = tape_;
    const Tensor out = net_->forward(*input, &tape);
    auto loss = mse_loss_grad(*target, out);
    if (!std::isfinite(loss.value)) throw NumericalError("patch step: non-finite loss term mse");
    total += loss.value;
    net_->backward(tape, loss.grad);
  }
  check_grads(net_->params(), "patch network", opt_->steps() + 1);
  opt_->step(1.0 / batch.size());
  check_values(net_->params(), "patch network", opt_->steps());
  return total / batch.size();
}

// ---------------------------------------------------------------------------

TransformModel plain_model() { return TransformModel{}; }

TransformModel load_transform_model(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  TransformModel model;
  try {
    model.kind = parse_model_kind(ckpt.model_kind);
  } catch (const InvalidArgument&) {
    throw DecodeError("checkpoint " + path.string() + ": unknown model kind " + ckpt.model_kind);
  }
  try {
    model.stochastic = ckpt.metadata.value("stochastic_inference", false);
    model.seed = ckpt.metadata.value("seed", std::uint64_t{0});
    if (model.kind == ModelKind::tvgan || model.kind == ModelKind::pix2pix) {
      const auto* net = ckpt.network("generator");
      if (!net) throw DecodeError("checkpoint " + path.string() + ": no generator network");
      auto g = std::make_shared<Generator>(net->spec.get<GeneratorSpec>(), 0);
      ckpt.load_into("generator", g->params());
      model.generator = std::move(g);
    } else if (model.kind == ModelKind::patch) {
      const auto* net = ckpt.network("patch");
      if (!net) throw DecodeError("checkpoint " + path.string() + ": no patch network");
      auto p = std::make_shared<PatchTransformer>(net->spec.get<PatchNetSpec>(), 0);
      ckpt.load_into("patch", p->params());
      model.patch = std::move(p);
    } else {
      throw DecodeError("checkpoint " + path.string() + ": plain models have no checkpoint");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError("checkpoint " + path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw DecodeError("checkpoint " + path.string() + ": " + e.what());
  }
  return model;
}

ImageTensor transform(const TransformModel& model, const ImageTensor& thermal) {
  const Tensor x = to_three_channels(thermal);
  switch (model.kind) {
    case ModelKind::plain:
      if (model.generator || model.patch) throw InvalidArgument("plain model must not carry a network");
      return x;
    case ModelKind::tvgan:
    case ModelKind::pix2pix:
      if (!model.generator) throw InvalidArgument(to_string(model.kind) + " model has no generator");
      return generator_forward(*model.generator, x, model.stochastic, model.seed);
    case ModelKind::patch: {
      if (!model.patch) throw InvalidArgument("patch model has no patch network");
      const int p = model.patch->spec().patch_size;
      if (p > x.height() || p > x.width()) {
        throw ShapeError("image " + x.shape_string() + " is smaller than the patch size");
      }
      const int stride = std::max(1, p / 2);
      auto patches = extract_at(x, p, positions(x.height(), p, stride, true),
                                positions(x.width(), p, stride, true));
      for (auto& patch : patches) patch.patch = model.patch->forward(patch.patch);
      return reassemble_patches(patches, x.height(), x.width());
    }
  }
  throw InvalidArgument("unknown model kind");
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json to_json_record(const LossRecord& r, ModelKind kind) {
  const LossReport& l = r.losses;
  nlohmann::ordered_json j = {{"step", r.step},       {"epoch", r.epoch},     {"d_adv", l.d_adv},
                              {"g_adv", l.g_adv},     {"l1", l.l1},           {"d_id", l.d_id},
                              {"g_id", l.g_id},       {"total_g", l.total_g}, {"total_d", l.total_d}};
  if (kind == ModelKind::patch) j["mse"] = r.mse;
  return j;
}

std::string checkpoint_name(ModelKind kind, int epoch) {
  return to_string(kind) + "_epoch" + std::to_string(epoch) + ".ckpt";
}

TrainResult train(const std::vector<PairedSample>& dataset, const DatasetSplit& split,
                  const TrainConfig& cfg_in, const TrainOutputs& outputs,
                  const EpochCallback& on_epoch) {
  TrainConfig cfg = cfg_in;
  if (cfg.model_kind == ModelKind::plain) {
    throw InvalidArgument("nothing to train: model kind plain has no parameters");
  }
  const int epochs = cfg.resolved_epochs();
  cfg.validate();
  for (const auto& s : split.train_subjects) {
    if (split.test_subjects.count(s)) {
      throw InvalidArgument("split is not subject-disjoint: " + s + " is in train and test");
    }
  }
  std::vector<const PairedSample*> training;
  for (const auto& s : dataset)
    if (split.train_subjects.count(s.subject_id)) training.push_back(&s);
  if (training.empty()) throw InvalidArgument("training split is empty");
  const int resolution = cfg.model_kind == ModelKind::patch ? 0 : cfg.generator.resolution;
  for (const auto* s : training) {
    if (resolution && (s->thermal.height() != resolution || s->thermal.width() != resolution)) {
      throw ShapeError("training image of " + s->subject_id + " is " + s->thermal.shape_string() +
                       ", network resolution is " + std::to_string(resolution));
    }
  }

  const bool write = !outputs.out_dir.empty();
  std::ofstream log_file;
  nlohmann::json manifest;
  if (write) {
    std::filesystem::create_directories(outputs.out_dir);
    manifest = {{"model_kind", to_string(cfg.model_kind)},
                {"config", cfg},
                {"epochs", epochs},
                {"split_path", outputs.split_path},
                {"manifest_sha256", outputs.manifest_sha256},
                {"train_subjects", split.train_subjects},
                {"test_subjects", split.test_subjects},
                {"num_training_samples", training.size()},
                {"loss_log", "loss_log.jsonl"}};
    for (const auto& [k, v] : outputs.extra.items()) manifest[k] = v;
    write_text_atomic(outputs.out_dir / "run_manifest.json", manifest.dump(2) + "\n");
    log_file.open(outputs.out_dir / "loss_log.jsonl", std::ios::binary | std::ios::trunc);
    if (!log_file) throw LoadError("cannot write loss log under " + outputs.out_dir.string());
  }

  TrainResult result;
  std::unique_ptr<GanTrainer> gan;
  std::unique_ptr<PatchTrainer> patcher;
  IdentityEncoding enc;
  if (cfg.model_kind == ModelKind::patch) {
    patcher = std::make_unique<PatchTrainer>(cfg);
  } else {
    std::set<std::string> subjects;
    for (const auto* s : training) subjects.insert(s->subject_id);
    enc = IdentityEncoding::from_subjects(subjects);
    gan = std::make_unique<GanTrainer>(cfg, enc);
  }

  auto save = [&](int epoch) {
    Checkpoint ckpt;
    ckpt.model_kind = to_string(cfg.model_kind);
    ckpt.metadata = {{"epoch", epoch},
                     {"seed", cfg.seed},
                     {"stochastic_inference", cfg.stochastic_inference},
                     {"config", cfg}};
    if (gan) {
      ckpt.metadata["subjects"] = nlohmann::json::array();
      for (const auto& [subject, index] : enc.subject_to_index) ckpt.metadata["subjects"].push_back(subject);
      ckpt.add_network("generator", gan->generator().spec(), gan->generator().params());
      ckpt.add_network("discriminator", gan->discriminator().spec(), gan->discriminator().params());
    } else {
      ckpt.add_network("patch", patcher->net().spec(), patcher->net().params());
    }
    const auto path = outputs.out_dir / checkpoint_name(cfg.model_kind, epoch);
    write_checkpoint(path, ckpt);
    result.checkpoints.push_back(path);
  };

  long step = 0;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    for (const auto* s : training) {
      if (split.test_subjects.count(s->subject_id)) {
        throw InvalidArgument("test leakage: subject " + s->subject_id + " is in the training set");
      }
    }
    std::vector<std::size_t> order(training.size());
    std::iota(order.begin(), order.end(), 0);
    Rng(derive_seed(cfg.seed, kShuffle, epoch)).shuffle(std::span(order));

    std::vector<PairedSample> augmented(training.size());
    auto sample_at = [&](std::size_t k) -> const PairedSample& {
      const PairedSample& s = *training[order[k]];
      if (cfg.augmentation.empty()) return s;
      augmented[k] = augment(s, cfg.augmentation, derive_seed(cfg.seed, kAugment, epoch * 1000003ULL + k));
      return augmented[k];
    };

    std::vector<LossReport> epoch_reports;
    auto record = [&](const LossRecord& rec) {
      result.log.push_back(rec);
      if (write) log_file << to_json_record(rec, cfg.model_kind).dump() << "\n";
    };

    if (gan) {
      for (std::size_t k = 0; k < order.size(); k += cfg.batch_size) {
        std::vector<const PairedSample*> batch;
        for (std::size_t b = k; b < std::min(order.size(), k + cfg.batch_size); ++b) batch.push_back(&sample_at(b));
        ++step;
        LossRecord rec{step, epoch, gan->train_step(batch, derive_seed(cfg.seed, kStep, step)), 0.0};
        epoch_reports.push_back(rec.losses);
        record(rec);
      }
    } else {
      std::vector<Tensor> inputs, targets;
      const int p = cfg.patch.patch_size;
      for (std::size_t k = 0; k < order.size(); ++k) {
        const PairedSample& s = sample_at(k);
        for (auto& q : extract_patches(to_three_channels(s.thermal), p, cfg.patch_stride)) inputs.push_back(std::move(q.patch));
        for (auto& q : extract_patches(s.visible, p, cfg.patch_stride)) targets.push_back(std::move(q.patch));
      }
      std::vector<std::size_t> patch_order(inputs.size());
      std::iota(patch_order.begin(), patch_order.end(), 0);
      Rng(derive_seed(cfg.seed, kPatchShuffle, epoch)).shuffle(std::span(patch_order));
      for (std::size_t k = 0; k < patch_order.size(); k += cfg.batch_size) {
        std::vector<std::pair<const Tensor*, const Tensor*>> batch;
        for (std::size_t b = k; b < std::min(patch_order.size(), k + cfg.batch_size); ++b) {
          batch.emplace_back(&inputs[patch_order[b]], &targets[patch_order[b]]);
        }
        ++step;
        LossRecord rec;
        rec.step = step;
        rec.epoch = epoch;
        rec.mse = patcher->train_step(batch);
        rec.losses.total_g = rec.mse;
        epoch_reports.push_back(rec.losses);
        record(rec);
      }
    }
    if (write) log_file.flush();
    result.epoch_means.push_back(mean_of(epoch_reports));
    if (on_epoch) on_epoch(epoch, result.epoch_means.back());
    if (write && ((cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) || epoch == epochs)) {
      save(epoch);
    }
  }
  result.steps = step;

  result.model.kind = cfg.model_kind;
  result.model.stochastic = cfg.stochastic_inference;
  result.model.seed = cfg.seed;
  if (gan) {
    result.model.generator = gan->shared_generator();
  } else {
    result.model.patch = patcher->shared_net();
  }
  if (write) {
    if (!log_file) throw LoadError("failed writing loss log under " + outputs.out_dir.string());
    manifest["steps"] = step;
    manifest["checkpoints"] = nlohmann::json::array();
    for (const auto& c : result.checkpoints) manifest["checkpoints"].push_back(c.filename().string());
    write_text_atomic(outputs.out_dir / "run_manifest.json", manifest.dump(2) + "\n");
  }
  return result;
}

}  // namespace tvgan
