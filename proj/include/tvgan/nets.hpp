#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tvgan/layers.hpp"
#include "tvgan/tensor.hpp"

namespace tvgan {

inline constexpr double kInitStddev = 0.02;

// Spatial and channel shape of one layer's output, for architecture listings.
struct LayerShape {
  std::string name;
  int channels;
  int height;
  int width;
};

// ---------------------------------------------------------------------------
// U-Net generator

struct GeneratorSpec {
  int resolution = 256;
  int in_channels = 3;
  int out_channels = 3;
  int depth = 8;           // down/up sampling stages
  int base_channels = 64;  // doubles per stage up to 8x base
  // Decoder stages with dropout, counted from the innermost stage (0).
  std::vector<int> dropout_stages = {1, 2, 3};
  double dropout_rate = 0.5;
  double leaky_slope = 0.2;

  int encoder_channels(int stage) const;
  void validate() const;  // throws InvalidArgument
};

void to_json(nlohmann::json& j, const GeneratorSpec& s);
void from_json(const nlohmann::json& j, GeneratorSpec& s);

// Options for a single generator pass. The ablation switches exist for
// architecture tests and are never used in training.
struct GeneratorRun {
  bool stochastic = false;  // dropout active
  std::uint64_t seed = 0;   // dropout mask seed
  bool zero_bottleneck = false;
  bool sever_skips = false;
};

// Activations recorded by a forward pass for the matching backward pass.
struct GeneratorTape {
  struct Encoder {
    Tensor input;  // stage input before the leaky rectifier
    ConvCache conv;
    NormCache norm;
    Tensor output;
  };
  struct Decoder {
    Tensor input;  // concatenated input before the rectifier
    ConvTransposeCache deconv;
    NormCache norm;
    Tensor mask;  // empty when dropout is inactive
  };
  std::vector<Encoder> encoders;
  std::vector<Decoder> decoders;  // indexed like the encoders (0 = outermost)
  Tensor output;
  bool severed_skips = false;
  bool zeroed_bottleneck = false;
};

class Generator {
 public:
  Generator(GeneratorSpec spec, std::uint64_t seed);

  // Input must be resolution x resolution with in_channels channels; output
  // has out_channels channels and values in [-1, 1].
  Tensor forward(const Tensor& x, const GeneratorRun& run, GeneratorTape* tape = nullptr) const;
  // Accumulates parameter gradients from d(loss)/d(output); returns d/dx.
  Tensor backward(const GeneratorTape& tape, const Tensor& d_output);

  const GeneratorSpec& spec() const { return spec_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  std::vector<LayerShape> layer_shapes() const;

 private:
  bool has_encoder_norm(int stage) const;
  bool has_dropout(int stage) const;

  GeneratorSpec spec_;
  ParameterSet params_;
  std::vector<Conv2d> down_;
  std::vector<InstanceNorm> down_norm_;  // default-constructed where unused
  std::vector<ConvTranspose2d> up_;
  std::vector<InstanceNorm> up_norm_;
};

// Convenience wrapper: deterministic unless `stochastic` is set.
Tensor generator_forward(const Generator& g, const Tensor& x, bool stochastic, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Multi-task discriminator: one convolutional trunk feeding a realness head
// and an (N+1)-way identity head.

enum class RealnessHead { patch, scalar };

struct DiscriminatorSpec {
  int resolution = 256;
  int in_channels = 6;  // thermal (3) concatenated with visible (3)
  int trunk_layers = 4;
  int base_channels = 64;
  int num_subjects = 1;  // N; the identity head emits N + 1 logits
  RealnessHead realness_head = RealnessHead::patch;
  double leaky_slope = 0.2;
  // Instance-normalizing the final stage would pin every pooled channel to
  // its shift parameter and starve the identity head.
  bool last_stage_norm = false;

  int trunk_channels(int stage) const;
  int realness_size() const;  // side of the realness map
  void validate() const;
};

void to_json(nlohmann::json& j, const DiscriminatorSpec& s);
void from_json(const nlohmann::json& j, DiscriminatorSpec& s);

struct DiscriminatorOutput {
  Tensor realness;                // scores in (0, 1)
  std::vector<Scalar> id_logits;  // length N + 1
};

struct DiscriminatorTape {
  struct Stage {
    ConvCache conv;
    NormCache norm;
    Tensor pre_activation;
  };
  int condition_channels = 0;
  std::vector<Stage> trunk;
  Tensor features;  // final trunk activation shared by both heads
  ConvCache head_conv;
  std::vector<Scalar> pooled;
  std::vector<Scalar> realness_logit;  // scalar head only
  Tensor realness;
};

class Discriminator {
 public:
  Discriminator(DiscriminatorSpec spec, std::uint64_t seed);

  // x: conditioning image, y: real or generated visible image.
  DiscriminatorOutput forward(const Tensor& x, const Tensor& y,
                              DiscriminatorTape* tape = nullptr) const;
  // Either gradient may be empty. Accumulates parameter gradients and
  // returns d/dy (the gradient with respect to the judged image).
  Tensor backward(const DiscriminatorTape& tape, const Tensor& d_realness,
                  std::span<const Scalar> d_logits);

  const DiscriminatorSpec& spec() const { return spec_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  std::vector<LayerShape> layer_shapes() const;

  std::vector<Parameter*> trunk_parameters() const;
  std::vector<Parameter*> realness_parameters() const;  // head only
  std::vector<Parameter*> identity_parameters() const;  // head only

 private:
  bool has_trunk_norm(int stage) const;

  DiscriminatorSpec spec_;
  ParameterSet params_;
  std::vector<Conv2d> trunk_;
  std::vector<InstanceNorm> trunk_norm_;
  Conv2d realness_conv_;      // patch head
  Linear realness_linear_;    // scalar head
  Linear identity_linear_;
  std::size_t trunk_param_end_ = 0;
  std::size_t realness_param_end_ = 0;
};

// ---------------------------------------------------------------------------
// Patch baseline: residual encoder-decoder over small patches. The encoder
// uses unpadded 3x3 convolutions, the decoder mirrors them with transposed
// convolutions, and every encoder level (including the input) is added to
// the decoder output of the same size.

struct PatchNetSpec {
  int patch_size = 25;
  int layers = 20;
  int channels = 3;
  int width = 64;

  int skip_count() const { return layers / 2; }
  void validate() const;
};

void to_json(nlohmann::json& j, const PatchNetSpec& s);
void from_json(const nlohmann::json& j, PatchNetSpec& s);

struct PatchTape {
  std::vector<ConvCache> encoder;
  std::vector<Tensor> levels;  // level 0 is the input, level k the k-th encoder output
  std::vector<ConvTransposeCache> decoder;
  std::vector<Tensor> decoder_pre;  // pre-rectifier decoder sums
};

class PatchTransformer {
 public:
  PatchTransformer(PatchNetSpec spec, std::uint64_t seed);

  Tensor forward(const Tensor& patch, PatchTape* tape = nullptr) const;
  Tensor backward(const PatchTape& tape, const Tensor& d_output);

  const PatchNetSpec& spec() const { return spec_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  std::vector<LayerShape> layer_shapes() const;

 private:
  PatchNetSpec spec_;
  ParameterSet params_;
  std::vector<Conv2d> encoder_;
  std::vector<ConvTranspose2d> decoder_;
};

// ---------------------------------------------------------------------------
// Checkpoint archive.
//
// Layout: 8-byte magic "TVGANCK1", little-endian u64 header length, a UTF-8
// JSON header, then the concatenated little-endian float32 payload. The
// header lists every network (role + spec) and every tensor (name, shape,
// element offset, count). Tensor names are "<role>/<parameter name>".

struct CheckpointNetwork {
  std::string role;  // "generator", "discriminator", "patch"
  nlohmann::json spec;
};

struct CheckpointTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string model_kind;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<CheckpointNetwork> networks;
  std::vector<CheckpointTensor> tensors;

  void add_network(const std::string& role, nlohmann::json spec, const ParameterSet& params);
  // Copies "<role>/*" tensors into params; every parameter must be present
  // with a matching shape.
  void load_into(const std::string& role, ParameterSet& params) const;
  const CheckpointNetwork* network(const std::string& role) const;
};

// Atomic: writes a temporary sibling file and renames it into place.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);  // throws LoadError/DecodeError

}  // namespace tvgan
