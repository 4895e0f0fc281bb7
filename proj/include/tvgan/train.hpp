#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tvgan/adam.hpp"
#include "tvgan/dataio.hpp"
#include "tvgan/losses.hpp"
#include "tvgan/nets.hpp"

namespace tvgan {

enum class ModelKind { tvgan, pix2pix, patch, plain };

ModelKind parse_model_kind(const std::string& text);
std::string to_string(ModelKind kind);
int default_epochs(ModelKind kind);  // 65, 85, 108; plain has none

struct TrainConfig {
  ModelKind model_kind = ModelKind::tvgan;
  double learning_rate = 0.0002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 1;
  int epochs = 0;  // 0 selects the model kind's default
  LossWeights weights;
  std::uint64_t seed = 0;
  AugmentSet augmentation = {AugmentOp::hflip, AugmentOp::rotate, AugmentOp::crop};
  int checkpoint_every = 0;  // 0 writes only the final checkpoint
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;  // num_subjects is set from the training split
  PatchNetSpec patch;
  int patch_stride = 12;  // training extraction stride
  bool stochastic_inference = false;

  int resolved_epochs() const;
  AdamConfig adam() const;
  void validate() const;
};

// Unknown keys are rejected by from_json.
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// ---------------------------------------------------------------------------
// Adversarial training

// Owns G, D and their optimizers. Each step updates D once and then G once.
class GanTrainer {
 public:
  GanTrainer(const TrainConfig& cfg, const IdentityEncoding& enc);

  // One alternating update on a single pair. Returns losses measured before
  // either network is updated.
  LossReport train_step_gan(const PairedSample& sample, std::uint64_t step_seed);
  // Same over a batch: gradients are averaged, one optimizer step per network.
  LossReport train_step(std::span<const PairedSample* const> batch, std::uint64_t step_seed);

  Generator& generator() { return *generator_; }
  Discriminator& discriminator() { return *discriminator_; }
  std::shared_ptr<Generator> shared_generator() const { return generator_; }
  const TrainConfig& config() const { return cfg_; }
  long steps() const { return steps_; }

  // Observer run after the discriminator update ("discriminator") and after
  // the generator update ("generator") of every step.
  using PhaseHook = std::function<void(const char* phase)>;
  void set_phase_hook(PhaseHook hook) { phase_hook_ = std::move(hook); }

 private:
  bool identity_enabled() const { return cfg_.model_kind == ModelKind::tvgan; }

  TrainConfig cfg_;
  IdentityEncoding enc_;
  std::shared_ptr<Generator> generator_;
  std::shared_ptr<Discriminator> discriminator_;
  std::unique_ptr<Adam> opt_g_;
  std::unique_ptr<Adam> opt_d_;
  PhaseHook phase_hook_;
  long steps_ = 0;
};

// ---------------------------------------------------------------------------
// Patches

struct PatchAt {
  Tensor patch;
  int y = 0;
  int x = 0;
};

// Patches at (r * stride, c * stride) for every fully contained position.
std::vector<PatchAt> extract_patches(const Tensor& image, int patch_size, int stride);
// Mean of all covering patches per pixel; throws naming a gap coordinate.
Tensor reassemble_patches(const std::vector<PatchAt>& patches, int height, int width);

class PatchTrainer {
 public:
  explicit PatchTrainer(const TrainConfig& cfg);

  // One MSE update averaged over the given (input, target) patch pairs.
  double train_step(std::span<const std::pair<const Tensor*, const Tensor*>> batch);

  PatchTransformer& net() { return *net_; }
  std::shared_ptr<PatchTransformer> shared_net() const { return net_; }

 private:
  TrainConfig cfg_;
  std::shared_ptr<PatchTransformer> net_;
  std::unique_ptr<Adam> opt_;
  PatchTape tape_;
};

// ---------------------------------------------------------------------------
// Inference

struct TransformModel {
  ModelKind kind = ModelKind::plain;
  std::shared_ptr<const Generator> generator;       // tvgan, pix2pix
  std::shared_ptr<const PatchTransformer> patch;    // patch
  bool stochastic = false;
  std::uint64_t seed = 0;
};

TransformModel plain_model();
TransformModel load_transform_model(const std::filesystem::path& checkpoint);

// Thermal (1 or 3 channels) to a 3-channel visible estimate.
ImageTensor transform(const TransformModel& model, const ImageTensor& thermal);

// ---------------------------------------------------------------------------
// Training runs

struct LossRecord {
  long step = 0;
  int epoch = 0;
  LossReport losses;
  double mse = 0.0;  // patch runs only
};

// Keys in log order: step, epoch, then the loss terms.
nlohmann::ordered_json to_json_record(const LossRecord& r, ModelKind kind);

struct TrainOutputs {
  std::filesystem::path out_dir;  // empty: nothing is written
  std::string split_path;
  std::string manifest_sha256;
  nlohmann::json extra = nlohmann::json::object();  // echoed into the run manifest
};

struct TrainResult {
  TransformModel model;
  std::vector<LossRecord> log;
  std::vector<LossReport> epoch_means;  // patch runs carry the MSE in total_g
  std::vector<std::filesystem::path> checkpoints;
  long steps = 0;
};

using EpochCallback = std::function<void(int epoch, const LossReport& mean)>;

TrainResult train(const std::vector<PairedSample>& dataset, const DatasetSplit& split,
                  const TrainConfig& cfg, const TrainOutputs& outputs = {},
                  const EpochCallback& on_epoch = {});

std::string checkpoint_name(ModelKind kind, int epoch);

}  // namespace tvgan
