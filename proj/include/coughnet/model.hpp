#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coughnet/audio_io.hpp"
#include "coughnet/dataset.hpp"
#include "coughnet/dsp.hpp"
#include "coughnet/nn.hpp"

namespace coughnet {

inline constexpr std::uint16_t kModelFormatVersion = 1;

struct ConvSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Three-branch ensemble: MFCC MLP, mel-image CNN (conv -> avgpool ->
/// batchnorm -> relu per stage), clinical-flag MLP; branch outputs are
/// concatenated and fed through a two-layer ReLU head to one sigmoid unit.
struct ArchConfig {
  std::size_t mfcc_in = kMfccCount;
  std::vector<std::size_t> mfcc_hidden{64, 32};
  std::size_t image_size = kImageSize;
  std::vector<ConvSpec> convs{{8, 3, 2}, {16, 3, 1}, {32, 3, 1}};
  std::size_t clinical_in = kClinicalCount;
  std::vector<std::size_t> clinical_hidden{8, 8};
  std::vector<std::size_t> head_hidden{64, 32};
  double dropout = 0.3;

  /// Spatial sizes after the input and after each conv and pool, e.g.
  /// 64 -> 31 -> 15 -> 13 -> 6 -> 4 -> 2. Throws invalid_arch if any stage
  /// has nothing left to convolve or pool.
  std::vector<std::size_t> spatial_chain() const;
  std::size_t image_branch_width() const;
  std::size_t concat_width() const;
  /// Throws Error(invalid_arch).
  void validate() const;

  nlohmann::json to_json() const;
  static ArchConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// Column batch of model inputs.
struct Batch {
  nn::Tensor mfcc;      // [N, 39]
  nn::Tensor image;     // [N, 1, 64, 64]
  nn::Tensor clinical;  // [N, 2]

  std::size_t size() const { return mfcc.rank() ? mfcc.dim(0) : 0; }
};

Batch make_batch(std::span<const FeatureVector* const> features);
Batch make_batch(std::span<const FeatureVector> features);

/// The trained (or freshly initialized) network plus its metadata.
///
/// `infer`/`predict` are const and touch no caches; `forward`/`backward`
/// keep per-layer caches and are for the single training thread.
class EnsembleModel {
 public:
  /// He-uniform init for layers feeding ReLU, Glorot-uniform for the output
  /// unit, zero biases, batch-norm stats at mean 0 / var 1, MFCC
  /// standardization at the identity.
  static EnsembleModel build(const ArchConfig& arch, std::uint64_t seed);

  EnsembleModel(EnsembleModel&&) = default;
  EnsembleModel& operator=(EnsembleModel&&) = default;

  const ArchConfig& arch() const { return arch_; }
  std::uint64_t seed() const { return seed_; }

  /// Logits [N, 1].
  nn::Tensor forward(const Batch& batch, nn::Mode mode, Rng& rng);
  void backward(const nn::Tensor& dlogits);
  nn::Tensor infer(const Batch& batch) const;
  /// Sigmoid probabilities in eval mode.
  std::vector<double> predict(const Batch& batch) const;

  std::vector<nn::Param*> params();
  std::size_t parameter_count();

  /// Every persisted tensor in declaration order: MFCC standardization, then
  /// each branch's parameters and running statistics, then the head.
  std::vector<std::pair<std::string, nn::Tensor*>> state();
  std::vector<nn::Tensor> snapshot();
  void restore(const std::vector<nn::Tensor>& tensors);

  /// Per-coefficient standardization applied to MFCC input; std is floored at 1e-8.
  void set_mfcc_normalization(std::span<const double> mean, std::span<const double> stddev);

  /// Free-form metadata persisted with the model (data hash, metrics, ...).
  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  /// "cghm1-" plus the first 12 hex digits of the file's SHA-256; set by
  /// load/serialize.
  const std::string& version_tag() const { return version_tag_; }

 private:
  friend EnsembleModel deserialize_model(std::span<const std::uint8_t> bytes);
  friend void save_model(EnsembleModel& model, const std::filesystem::path& path);
  friend nn::GradCheckResult grad_check(EnsembleModel& model, const Batch& batch,
                                        std::span<const double> labels, double h);

  EnsembleModel() = default;

  nn::Tensor standardize(const nn::Tensor& mfcc) const;

  ArchConfig arch_;
  std::uint64_t seed_ = 0;
  nn::Tensor mfcc_mean_, mfcc_std_;
  nn::Sequential mfcc_branch_, image_branch_, clinical_branch_, head_;
  nlohmann::json metadata_ = nlohmann::json::object();
  std::string version_tag_;
  std::array<std::size_t, 3> widths_{};
};

/// Model file layout (little-endian):
///
///   "CGHM"  u16 version  u32 json_length  json metadata
///   f64 blobs for each tensor listed in metadata["tensors"], in order
///   u32 CRC-32 of every preceding byte
///
/// Metadata holds arch, seed, tensor names/shapes and the free-form metadata.
std::vector<std::uint8_t> serialize_model(EnsembleModel& model);
/// Throws corrupt_file (bad magic, truncation, checksum, inconsistent
/// tensors) or version_mismatch.
EnsembleModel deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(EnsembleModel& model, const std::filesystem::path& path);
EnsembleModel load_model(const std::filesystem::path& path);

/// Gradient check of the whole ensemble on BCE loss in
/// Mode::train_deterministic (batch statistics, no dropout). A perturbed
/// parameter only re-runs its own branch and the head; the other branch
/// outputs are reused, which leaves the loss values unchanged.
nn::GradCheckResult grad_check(EnsembleModel& model, const Batch& batch,
                               std::span<const double> labels, double h = 1e-5);

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double lr = 0.001;
  std::vector<std::uint64_t> seeds{11, 23, 37, 41, 53};
  std::array<double, 3> split_ratios{0.70, 0.15, 0.15};
  /// Runs executed concurrently; results do not depend on this.
  std::size_t workers = 1;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct Example {
  std::string id;
  FeatureVector features;
  double label = 0.0;
};

/// SHA-256 over ids, labels and feature bytes, in order.
std::string dataset_hash(std::span<const Example> examples);

enum class AccessPhase { fit, validate, test };

/// Observer for which examples each phase reads; used to audit that fitting
/// never touches the held-out split.
struct TrainHooks {
  std::function<void(std::size_t run, AccessPhase phase, std::size_t example)> on_access;
};

struct RunReport {
  std::uint64_t seed = 0;
  std::string status = "ok";  // or "non_finite_loss"
  std::size_t best_epoch = 0;  // 1-based; 0 if no epoch finished
  std::size_t epochs_run = 0;
  bool stopped_early = false;
  std::vector<double> train_loss, val_loss;
  std::vector<std::optional<double>> val_auc;
  std::array<std::size_t, 3> split_sizes{};
  std::vector<std::string> test_ids;
  std::vector<double> test_scores, test_labels;
  double test_auc = 0.0;
  double test_accuracy = 0.0;

  nlohmann::json to_json() const;
};

struct TrainReport {
  std::string data_hash;
  TrainConfig config;
  ArchConfig arch;
  std::vector<RunReport> runs;

  nlohmann::json to_json() const;
};

struct TrainResult {
  std::vector<EnsembleModel> models;
  TrainReport report;
};

/// Runs one repeat per seed: fresh stratified 70/15/15 split, fresh init,
/// MFCC standardization fitted on the training part, shuffled minibatch Adam
/// on BCE, early stopping on validation loss with the best epoch's weights
/// restored, then scoring of the held-out part. Throws single_class when the
/// examples hold one label.
TrainResult train(std::span<const Example> examples, const TrainConfig& config,
                  const ArchConfig& arch = {}, const TrainHooks& hooks = {});

/// Features of one clip scored in eval mode.
double predict(const EnsembleModel& model, const AudioClip& clip, ClinicalFlags flags);

}  // namespace coughnet
