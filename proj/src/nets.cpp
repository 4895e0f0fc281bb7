#include "tvgan/nets.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "tvgan/error.hpp"

namespace tvgan {

namespace {

Tensor zeros_like(const Tensor& t) { return Tensor(t.channels(), t.height(), t.width()); }

void require_image(const Tensor& x, int channels, int resolution, const char* who) {
  if (x.channels() != channels || x.height() != resolution || x.width() != resolution) {
    throw ShapeError(std::string(who) + ": expected " + std::to_string(channels) + "x" +
                     std::to_string(resolution) + "x" + std::to_string(resolution) +
                     " input, got " + x.shape_string());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Generator

int GeneratorSpec::encoder_channels(int stage) const {
  long c = static_cast<long>(base_channels) << std::min(stage, 20);
  return static_cast<int>(std::min<long>(c, 8L * base_channels));
}

void GeneratorSpec::validate() const {
  if (resolution < 1 || in_channels < 1 || out_channels < 1 || base_channels < 1) {
    throw InvalidArgument("generator: sizes must be positive");
  }
  if (depth < 2) throw InvalidArgument("generator: depth must be at least 2");
  if (depth >= 31 || (1L << depth) > resolution) {
    throw InvalidArgument("generator: 2^depth = 2^" + std::to_string(depth) +
                          " exceeds resolution " + std::to_string(resolution));
  }
  if (resolution % (1 << depth) != 0) {
    throw InvalidArgument("generator: resolution must be divisible by 2^depth");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw InvalidArgument("generator: dropout rate must lie in [0, 1)");
  }
}

void to_json(nlohmann::json& j, const GeneratorSpec& s) {
  j = {{"resolution", s.resolution},         {"in_channels", s.in_channels},
       {"out_channels", s.out_channels},     {"depth", s.depth},
       {"base_channels", s.base_channels},   {"dropout_stages", s.dropout_stages},
       {"dropout_rate", s.dropout_rate},     {"leaky_slope", s.leaky_slope}};
}

void from_json(const nlohmann::json& j, GeneratorSpec& s) {
  s.resolution = j.at("resolution").get<int>();
  s.in_channels = j.at("in_channels").get<int>();
  s.out_channels = j.at("out_channels").get<int>();
  s.depth = j.at("depth").get<int>();
  s.base_channels = j.at("base_channels").get<int>();
  s.dropout_stages = j.at("dropout_stages").get<std::vector<int>>();
  s.dropout_rate = j.at("dropout_rate").get<double>();
  s.leaky_slope = j.at("leaky_slope").get<double>();
}

Generator::Generator(GeneratorSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  const int depth = spec_.depth;
  down_.resize(depth);
  down_norm_.resize(depth);
  up_.resize(depth);
  up_norm_.resize(depth);
  for (int i = 0; i < depth; ++i) {
    const int in = i == 0 ? spec_.in_channels : spec_.encoder_channels(i - 1);
    const bool norm = has_encoder_norm(i);
    down_[i] = Conv2d(params_, "down" + std::to_string(i), in, spec_.encoder_channels(i), 4, 2, 1,
                      !norm);
    if (norm) down_norm_[i] = InstanceNorm(params_, "down" + std::to_string(i) + "_norm",
                                           spec_.encoder_channels(i));
  }
  for (int j = depth - 1; j >= 0; --j) {
    const int in = j == depth - 1 ? spec_.encoder_channels(j) : 2 * spec_.encoder_channels(j);
    const int out = j == 0 ? spec_.out_channels : spec_.encoder_channels(j - 1);
    up_[j] = ConvTranspose2d(params_, "up" + std::to_string(j), in, out, 4, 2, 1, j == 0);
    if (j > 0) up_norm_[j] = InstanceNorm(params_, "up" + std::to_string(j) + "_norm", out);
  }
  init_gaussian(params_, kInitStddev, seed);
}

bool Generator::has_encoder_norm(int stage) const {
  return stage > 0 && stage < spec_.depth - 1;
}

bool Generator::has_dropout(int stage) const {
  if (stage == 0) return false;
  const int from_innermost = spec_.depth - 1 - stage;
  return std::find(spec_.dropout_stages.begin(), spec_.dropout_stages.end(), from_innermost) !=
         spec_.dropout_stages.end();
}

Tensor Generator::forward(const Tensor& x, const GeneratorRun& run, GeneratorTape* tape) const {
  require_image(x, spec_.in_channels, spec_.resolution, "generator");
  const int depth = spec_.depth;
  GeneratorTape local;
  GeneratorTape& t = tape ? *tape : local;
  t.encoders.assign(depth, {});
  t.decoders.assign(depth, {});
  t.severed_skips = run.sever_skips;
  t.zeroed_bottleneck = run.zero_bottleneck;
  const bool record = tape != nullptr;

  for (int i = 0; i < depth; ++i) {
    auto& enc = t.encoders[i];
    const Tensor& prev = i == 0 ? x : t.encoders[i - 1].output;
    Tensor conv = down_[i].forward(i == 0 ? prev : leaky_relu(prev, spec_.leaky_slope),
                                   record ? &enc.conv : nullptr);
    enc.output = has_encoder_norm(i) ? down_norm_[i].forward(conv, record ? &enc.norm : nullptr)
                                     : std::move(conv);
  }
  if (run.zero_bottleneck) t.encoders[depth - 1].output.fill(0.0);

  Tensor u;
  for (int j = depth - 1; j >= 0; --j) {
    auto& dec = t.decoders[j];
    if (j == depth - 1) {
      dec.input = t.encoders[j].output;
    } else {
      const Tensor& skip = t.encoders[j].output;
      dec.input = concat_channels(run.sever_skips ? zeros_like(skip) : skip, u);
    }
    Tensor y = up_[j].forward(relu(dec.input), record ? &dec.deconv : nullptr);
    if (j > 0) {
      y = up_norm_[j].forward(y, record ? &dec.norm : nullptr);
      if (run.stochastic && has_dropout(j) && spec_.dropout_rate > 0.0) {
        dec.mask = dropout_mask(y.channels(), y.height(), y.width(), spec_.dropout_rate,
                                derive_seed(run.seed, static_cast<std::uint64_t>(j)));
        y = multiply(y, dec.mask);
      }
      u = std::move(y);
    } else {
      t.output = tanh_forward(y);
    }
    if (!record) dec = {};
  }
  return t.output;
}

Tensor Generator::backward(const GeneratorTape& tape, const Tensor& d_output) {
  const int depth = spec_.depth;
  std::vector<Tensor> d_skip(depth);
  Tensor d = tanh_backward(tape.output, d_output);
  Tensor d_bottleneck;
  for (int j = 0; j < depth; ++j) {
    const auto& dec = tape.decoders[j];
    if (j > 0) {
      if (!dec.mask.empty()) d = multiply(d, dec.mask);
      d = up_norm_[j].backward(dec.norm, d);
    }
    d = up_[j].backward(dec.deconv, d);
    d = relu_backward(dec.input, d);
    if (j < depth - 1) {
      Tensor skip, rest;
      split_channels(d, spec_.encoder_channels(j), skip, rest);
      if (!tape.severed_skips) d_skip[j] = std::move(skip);
      d = std::move(rest);
    } else {
      d_bottleneck = std::move(d);
    }
  }

  Tensor g = std::move(d_bottleneck);
  if (tape.zeroed_bottleneck) g.fill(0.0);
  for (int i = depth - 1; i >= 0; --i) {
    const auto& enc = tape.encoders[i];
    if (has_encoder_norm(i)) g = down_norm_[i].backward(enc.norm, g);
    g = down_[i].backward(enc.conv, g);
    if (i == 0) break;
    g = leaky_relu_backward(tape.encoders[i - 1].output, g, spec_.leaky_slope);
    if (!d_skip[i - 1].empty()) g += d_skip[i - 1];
  }
  return g;
}

std::vector<LayerShape> Generator::layer_shapes() const {
  std::vector<LayerShape> shapes;
  int size = spec_.resolution;
  for (int i = 0; i < spec_.depth; ++i) {
    size /= 2;
    shapes.push_back({"down" + std::to_string(i), spec_.encoder_channels(i), size, size});
  }
  for (int j = spec_.depth - 1; j >= 0; --j) {
    size *= 2;
    const int out = j == 0 ? spec_.out_channels : spec_.encoder_channels(j - 1);
    shapes.push_back({"up" + std::to_string(j), out, size, size});
  }
  return shapes;
}

Tensor generator_forward(const Generator& g, const Tensor& x, bool stochastic,
                         std::uint64_t seed) {
  return g.forward(x, GeneratorRun{stochastic, seed, false, false});
}

// ---------------------------------------------------------------------------
// Discriminator

int DiscriminatorSpec::trunk_channels(int stage) const {
  long c = static_cast<long>(base_channels) << std::min(stage, 20);
  return static_cast<int>(std::min<long>(c, 8L * base_channels));
}

int DiscriminatorSpec::realness_size() const {
  return realness_head == RealnessHead::patch ? resolution >> trunk_layers : 1;
}

void DiscriminatorSpec::validate() const {
  if (num_subjects < 1) {
    throw InvalidArgument("discriminator: number of subjects must be at least 1, got " +
                          std::to_string(num_subjects));
  }
  if (trunk_layers < 1 || base_channels < 1 || in_channels < 1) {
    throw InvalidArgument("discriminator: sizes must be positive");
  }
  if (trunk_layers >= 31 || (1L << trunk_layers) > resolution ||
      resolution % (1 << trunk_layers) != 0) {
    throw InvalidArgument("discriminator: resolution must be divisible by 2^trunk_layers");
  }
}

void to_json(nlohmann::json& j, const DiscriminatorSpec& s) {
  j = {{"resolution", s.resolution},
       {"in_channels", s.in_channels},
       {"trunk_layers", s.trunk_layers},
       {"base_channels", s.base_channels},
       {"num_subjects", s.num_subjects},
       {"realness_head", s.realness_head == RealnessHead::patch ? "patch" : "scalar"},
       {"leaky_slope", s.leaky_slope},
       {"last_stage_norm", s.last_stage_norm}};
}

void from_json(const nlohmann::json& j, DiscriminatorSpec& s) {
  s.resolution = j.at("resolution").get<int>();
  s.in_channels = j.at("in_channels").get<int>();
  s.trunk_layers = j.at("trunk_layers").get<int>();
  s.base_channels = j.at("base_channels").get<int>();
  s.num_subjects = j.at("num_subjects").get<int>();
  const auto head = j.at("realness_head").get<std::string>();
  if (head != "patch" && head != "scalar") throw DecodeError("unknown realness head: " + head);
  s.realness_head = head == "patch" ? RealnessHead::patch : RealnessHead::scalar;
  s.leaky_slope = j.at("leaky_slope").get<double>();
  s.last_stage_norm = j.value("last_stage_norm", false);
}

bool Discriminator::has_trunk_norm(int stage) const {
  return stage > 0 && (stage < spec_.trunk_layers - 1 || spec_.last_stage_norm);
}

Discriminator::Discriminator(DiscriminatorSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  const int layers = spec_.trunk_layers;
  trunk_.resize(layers);
  trunk_norm_.resize(layers);
  for (int t = 0; t < layers; ++t) {
    const int in = t == 0 ? spec_.in_channels : spec_.trunk_channels(t - 1);
    trunk_[t] = Conv2d(params_, "trunk" + std::to_string(t), in, spec_.trunk_channels(t), 4, 2, 1,
                       t == 0);
    if (has_trunk_norm(t)) trunk_norm_[t] = InstanceNorm(params_, "trunk" + std::to_string(t) + "_norm",
                                             spec_.trunk_channels(t));
  }
  trunk_param_end_ = params_.tensors();
  const int features = spec_.trunk_channels(layers - 1);
  if (spec_.realness_head == RealnessHead::patch) {
    realness_conv_ = Conv2d(params_, "realness", features, 1, 3, 1, 1, true);
  } else {
    realness_linear_ = Linear(params_, "realness", features, 1);
  }
  realness_param_end_ = params_.tensors();
  identity_linear_ = Linear(params_, "identity", features, spec_.num_subjects + 1);
  init_gaussian(params_, kInitStddev, seed);
}

DiscriminatorOutput Discriminator::forward(const Tensor& x, const Tensor& y,
                                           DiscriminatorTape* tape) const {
  if (x.channels() + y.channels() != spec_.in_channels) {
    throw ShapeError("discriminator: expected " + std::to_string(spec_.in_channels) +
                     " input channels in total, got " + x.shape_string() + " + " +
                     y.shape_string());
  }
  require_image(x, x.channels(), spec_.resolution, "discriminator (condition)");
  require_image(y, y.channels(), spec_.resolution, "discriminator (judged image)");
  DiscriminatorTape local;
  DiscriminatorTape& t = tape ? *tape : local;
  const bool record = tape != nullptr;
  t.trunk.assign(spec_.trunk_layers, {});
  t.condition_channels = x.channels();

  Tensor a = concat_channels(x, y);
  for (int s = 0; s < spec_.trunk_layers; ++s) {
    auto& st = t.trunk[s];
    Tensor c = trunk_[s].forward(a, record ? &st.conv : nullptr);
    st.pre_activation = has_trunk_norm(s) ? trunk_norm_[s].forward(c, record ? &st.norm : nullptr) : std::move(c);
    a = leaky_relu(st.pre_activation, spec_.leaky_slope);
  }
  t.features = std::move(a);
  t.pooled = global_average_pool(t.features);

  DiscriminatorOutput out;
  if (spec_.realness_head == RealnessHead::patch) {
    out.realness = sigmoid_forward(realness_conv_.forward(t.features, record ? &t.head_conv : nullptr));
  } else {
    t.realness_logit = realness_linear_.forward(t.pooled);
    Tensor logit(1, 1, 1, t.realness_logit[0]);
    out.realness = sigmoid_forward(logit);
  }
  out.id_logits = identity_linear_.forward(t.pooled);
  t.realness = out.realness;
  return out;
}

Tensor Discriminator::backward(const DiscriminatorTape& tape, const Tensor& d_realness,
                               std::span<const Scalar> d_logits) {
  const Tensor& f = tape.features;
  Tensor df = zeros_like(f);
  if (!d_realness.empty()) {
    const Tensor d_logit = sigmoid_backward(tape.realness, d_realness);
    if (spec_.realness_head == RealnessHead::patch) {
      df += realness_conv_.backward(tape.head_conv, d_logit);
    } else {
      const auto dp = realness_linear_.backward(tape.pooled, d_logit.values());
      df += global_average_pool_backward(f.channels(), f.height(), f.width(), dp);
    }
  }
  if (!d_logits.empty()) {
    const auto dp = identity_linear_.backward(tape.pooled, d_logits);
    df += global_average_pool_backward(f.channels(), f.height(), f.width(), dp);
  }
  Tensor g = std::move(df);
  for (int s = spec_.trunk_layers - 1; s >= 0; --s) {
    const auto& st = tape.trunk[s];
    g = leaky_relu_backward(st.pre_activation, g, spec_.leaky_slope);
    if (has_trunk_norm(s)) g = trunk_norm_[s].backward(st.norm, g);
    g = trunk_[s].backward(st.conv, g);
  }
  // The judged image occupies the trailing channels of the trunk input.
  Tensor dx, dy;
  split_channels(g, tape.condition_channels, dx, dy);
  return dy;
}

std::vector<LayerShape> Discriminator::layer_shapes() const {
  std::vector<LayerShape> shapes;
  int size = spec_.resolution;
  for (int t = 0; t < spec_.trunk_layers; ++t) {
    size /= 2;
    shapes.push_back({"trunk" + std::to_string(t), spec_.trunk_channels(t), size, size});
  }
  const int r = spec_.realness_size();
  shapes.push_back({"realness", 1, r, r});
  shapes.push_back({"identity", spec_.num_subjects + 1, 1, 1});
  return shapes;
}

std::vector<Parameter*> Discriminator::trunk_parameters() const {
  std::vector<Parameter*> out;
  for (std::size_t i = 0; i < trunk_param_end_; ++i)
    out.push_back(const_cast<Parameter*>(&params_[i]));
  return out;
}

std::vector<Parameter*> Discriminator::realness_parameters() const {
  std::vector<Parameter*> out;
  for (std::size_t i = trunk_param_end_; i < realness_param_end_; ++i)
    out.push_back(const_cast<Parameter*>(&params_[i]));
  return out;
}

std::vector<Parameter*> Discriminator::identity_parameters() const {
  std::vector<Parameter*> out;
  for (std::size_t i = realness_param_end_; i < params_.tensors(); ++i)
    out.push_back(const_cast<Parameter*>(&params_[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Patch transformer

void PatchNetSpec::validate() const {
  if (layers < 2 || layers % 2 != 0) {
    throw InvalidArgument("patch net: layer count must be even and at least 2");
  }
  if (channels < 1 || width < 1) throw InvalidArgument("patch net: sizes must be positive");
  if (patch_size - layers < 1) {
    throw InvalidArgument("patch net: patch size " + std::to_string(patch_size) +
                          " too small for " + std::to_string(layers) + " layers");
  }
}

void to_json(nlohmann::json& j, const PatchNetSpec& s) {
  j = {{"patch_size", s.patch_size}, {"layers", s.layers}, {"channels", s.channels},
       {"width", s.width}};
}

void from_json(const nlohmann::json& j, PatchNetSpec& s) {
  s.patch_size = j.at("patch_size").get<int>();
  s.layers = j.at("layers").get<int>();
  s.channels = j.at("channels").get<int>();
  s.width = j.at("width").get<int>();
}

PatchTransformer::PatchTransformer(PatchNetSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  const int half = spec_.layers / 2;
  for (int k = 0; k < half; ++k) {
    encoder_.emplace_back(params_, "enc" + std::to_string(k), k == 0 ? spec_.channels : spec_.width,
                          spec_.width, 3, 1, 0, true);
  }
  for (int m = 0; m < half; ++m) {
    decoder_.emplace_back(params_, "dec" + std::to_string(m), spec_.width,
                          m == half - 1 ? spec_.channels : spec_.width, 3, 1, 0, true);
  }
  init_gaussian(params_, kInitStddev, seed);
}

Tensor PatchTransformer::forward(const Tensor& patch, PatchTape* tape) const {
  require_image(patch, spec_.channels, spec_.patch_size, "patch net");
  const int half = spec_.layers / 2;
  PatchTape local;
  PatchTape& t = tape ? *tape : local;
  const bool record = tape != nullptr;
  // resize keeps the cached buffers of a reused tape
  t.encoder.resize(half);
  t.decoder.resize(half);
  t.decoder_pre.resize(half);
  t.levels.resize(half + 1);
  t.levels[0] = patch;
  for (int k = 1; k <= half; ++k) {
    t.levels[k] = relu(encoder_[k - 1].forward(t.levels[k - 1], record ? &t.encoder[k - 1] : nullptr));
  }
  Tensor d = t.levels[half];
  for (int m = 1; m <= half; ++m) {
    Tensor c = decoder_[m - 1].forward(d, record ? &t.decoder[m - 1] : nullptr);
    c += t.levels[half - m];
    if (m < half) {
      d = relu(c);
      t.decoder_pre[m - 1] = std::move(c);
    } else {
      d = std::move(c);
    }
  }
  return d;
}

Tensor PatchTransformer::backward(const PatchTape& tape, const Tensor& d_output) {
  const int half = spec_.layers / 2;
  std::vector<Tensor> d_level(half + 1);
  for (int k = 0; k <= half; ++k) d_level[k] = zeros_like(tape.levels[k]);
  Tensor g = d_output;
  for (int m = half; m >= 1; --m) {
    if (m < half) g = relu_backward(tape.decoder_pre[m - 1], g);
    d_level[half - m] += g;
    g = decoder_[m - 1].backward(tape.decoder[m - 1], g);
  }
  d_level[half] += g;
  for (int k = half; k >= 1; --k) {
    Tensor h = relu_backward(tape.levels[k], d_level[k]);
    d_level[k - 1] += encoder_[k - 1].backward(tape.encoder[k - 1], h);
  }
  return d_level[0];
}

std::vector<LayerShape> PatchTransformer::layer_shapes() const {
  std::vector<LayerShape> shapes;
  int size = spec_.patch_size;
  const int half = spec_.layers / 2;
  for (int k = 0; k < half; ++k) {
    size -= 2;
    shapes.push_back({"enc" + std::to_string(k), spec_.width, size, size});
  }
  for (int m = 0; m < half; ++m) {
    size += 2;
    shapes.push_back({"dec" + std::to_string(m), m == half - 1 ? spec_.channels : spec_.width,
                      size, size});
  }
  return shapes;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'T', 'V', 'G', 'A', 'N', 'C', 'K', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

void Checkpoint::add_network(const std::string& role, nlohmann::json spec,
                             const ParameterSet& params) {
  networks.push_back({role, std::move(spec)});
  for (const auto& p : params) {
    CheckpointTensor t{role + "/" + p->name, p->shape, {}};
    t.values.reserve(p->size());
    for (Scalar v : p->value) t.values.push_back(static_cast<float>(v));
    tensors.push_back(std::move(t));
  }
}

void Checkpoint::load_into(const std::string& role, ParameterSet& params) const {
  for (std::size_t i = 0; i < params.tensors(); ++i) {
    Parameter& p = params[i];
    const std::string name = role + "/" + p.name;
    auto it = std::find_if(tensors.begin(), tensors.end(),
                           [&](const CheckpointTensor& t) { return t.name == name; });
    if (it == tensors.end()) throw DecodeError("checkpoint: missing tensor " + name);
    if (it->shape != p.shape || it->values.size() != p.size()) {
      throw DecodeError("checkpoint: shape mismatch for " + name);
    }
    std::copy(it->values.begin(), it->values.end(), p.value.begin());
  }
}

const CheckpointNetwork* Checkpoint::network(const std::string& role) const {
  for (const auto& n : networks)
    if (n.role == role) return &n;
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = 1;
  header["model_kind"] = ckpt.model_kind;
  header["metadata"] = ckpt.metadata;
  header["networks"] = nlohmann::json::array();
  for (const auto& n : ckpt.networks) header["networks"].push_back({{"role", n.role}, {"spec", n.spec}});
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    header["tensors"].push_back(
        {{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.values.size()}});
    offset += t.values.size();
  }
  const std::string text = header.dump();
  std::string blob(kMagic, sizeof(kMagic));
  put_u64(blob, text.size());
  blob += text;
  blob.reserve(blob.size() + offset * 4);
  for (const auto& t : ckpt.tensors)
    for (float v : t.values) put_f32(blob, v);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write checkpoint " + tmp.string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw LoadError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DecodeError("checkpoint " + path.string() + ": bad magic");
  }
  const std::uint64_t header_len = get_u64(bytes + 8);
  if (header_len > blob.size() - 16) throw DecodeError("checkpoint " + path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError("checkpoint " + path.string() + ": header is not valid JSON: " + e.what());
  }
  const std::size_t payload = 16 + header_len;
  Checkpoint ckpt;
  try {
    if (header.at("format").get<int>() != 1) throw DecodeError("unsupported checkpoint format");
    ckpt.model_kind = header.at("model_kind").get<std::string>();
    ckpt.metadata = header.value("metadata", nlohmann::json::object());
    for (const auto& n : header.at("networks")) {
      ckpt.networks.push_back({n.at("role").get<std::string>(), n.at("spec")});
    }
    for (const auto& t : header.at("tensors")) {
      CheckpointTensor tensor;
      tensor.name = t.at("name").get<std::string>();
      tensor.shape = t.at("shape").get<std::vector<int>>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = t.at("count").get<std::size_t>();
      std::size_t expected = 1;
      for (int d : tensor.shape) expected *= static_cast<std::size_t>(d);
      if (expected != count) throw DecodeError("tensor " + tensor.name + ": shape/count mismatch");
      if (payload + (offset + count) * 4 > blob.size()) {
        throw DecodeError("tensor " + tensor.name + ": payload truncated");
      }
      tensor.values.resize(count);
      for (std::size_t i = 0; i < count; ++i) tensor.values[i] = get_f32(bytes + payload + (offset + i) * 4);
      ckpt.tensors.push_back(std::move(tensor));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError("checkpoint " + path.string() + ": malformed header: " + e.what());
  } catch (const DecodeError& e) {
    throw DecodeError("checkpoint " + path.string() + ": " + e.what());
  }
  return ckpt;
}

}  // namespace tvgan
