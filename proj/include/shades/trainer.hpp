#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "shades/ingest.hpp"
#include "shades/losses.hpp"
#include "shades/networks.hpp"
#include "shades/specular_prior.hpp"

namespace shades {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 4;
  double learning_rate = 1e-4;
  uint64_t seed = 0;
  LossWeights weights;
  bool flip_augmentation = false;
  int checkpoint_every = 1;  // epochs; the last epoch is always written
  bool double_precision = false;
  int geometry_warmup_steps = 0;  // depth and pose stay frozen while the decomposition settles

  static TrainConfig from_key_values(const KeyValueFile& kv);
  void write(KeyValueFile& kv) const;
  void validate() const;

  /// Step size for a 0-based epoch: halved from 3/4 of the run onwards.
  double learning_rate_at(int epoch) const;
};

/// A further neighbor of the target, used only for the auto-mask minimum.
struct Neighbor {
  torch::Tensor image;  // [3,H,W]
  int index = 0;
};

/// One training example: target, the source it is paired with, and any further
/// neighbors of the target.
struct TrainSample {
  torch::Tensor target;  // [3,H,W]
  torch::Tensor source;  // [3,H,W]
  std::optional<Prior> target_prior;
  std::optional<Prior> source_prior;
  std::vector<Neighbor> extra_sources;
  CameraModel camera;
  std::string seq_id;
  int target_index = 0;
  int source_index = 0;
};

struct StepRecord {
  int64_t step = 0;
  int epoch = 0;
  double total = 0.0;
  double l_d_t = 0.0;
  double l_d_s = 0.0;
  double l_a = 0.0;
  double l_r = 0.0;
  double l_es = 0.0;
  double mask_coverage = 0.0;
  double learning_rate = 0.0;
  bool mask_empty = false;

  static std::string csv_header();
  std::string csv_row() const;
};

/// Intermediate tensors of one forward pass, exposed for inspection.
struct ForwardOutputs {
  LossBreakdown losses;
  AutoMask masks;
  torch::Tensor depth_target;
  PoseSE3 pose;
};

/// Pose T_{t->s} mapping target-camera points into each source camera. The
/// pose network always receives the temporally earlier frame first; when the
/// source precedes the target its prediction is inverted.
PoseSE3 relative_pose(Networks& networks, const torch::Tensor& target, const torch::Tensor& source,
                      const std::vector<bool>& source_first);

/// Runs every network on the batch and evaluates the full objective. The graph
/// is kept so the caller can backpropagate. Throws PriorCacheMiss when a sample
/// lacks its priors.
ForwardOutputs forward_batch(Networks& networks, const std::vector<TrainSample>& batch, const TrainConfig& config);

class TrainState {
 public:
  TrainState(const NetworkConfig& network_config, const TrainConfig& config);

  Networks& networks() { return *networks_; }
  const Networks& networks() const { return *networks_; }
  const TrainConfig& config() const { return config_; }
  int64_t step() const { return step_; }

  void set_learning_rate(double lr);
  double learning_rate() const;

  /// Forward, backward and one Adam update. Throws NonFiniteLoss (without
  /// updating) if the objective is not finite.
  StepRecord train_step(const std::vector<TrainSample>& batch, int epoch = 0);

 private:
  TrainConfig config_;
  std::unique_ptr<Networks> networks_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  int64_t step_ = 0;
};

/// Random-access collection of training samples.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual TrainSample get(std::size_t index) const = 0;
};

class InMemorySamples : public SampleSource {
 public:
  explicit InMemorySamples(std::vector<TrainSample> samples) : samples_(std::move(samples)) {}
  std::size_t size() const override { return samples_.size(); }
  TrainSample get(std::size_t index) const override { return samples_.at(index); }

 private:
  std::vector<TrainSample> samples_;
};

/// Sequences on disk. Frames are preprocessed with the loader; priors come
/// from each sequence's PriorCache.
class DiskDataset : public SampleSource {
 public:
  DiskDataset(const std::filesystem::path& data_dir, const IngestConfig& ingest, const CameraModel& raw_camera,
              const SpecularConfig& specular);

  std::size_t size() const override { return pairs_.size(); }
  TrainSample get(std::size_t index) const override;

  /// Computes and stores every missing prior. Returns the number computed.
  int prepare_priors() const;

  const std::vector<SequenceSource>& sequences() const { return sequences_; }

 private:
  struct Entry {
    std::size_t sequence = 0;
    PairIndex pair;
  };

  Frame load_frame(std::size_t sequence, int index) const;

  FrameLoader loader_;
  SpecularConfig specular_;
  std::vector<int> gaps_;
  std::vector<SequenceSource> sequences_;
  std::vector<CameraModel> cameras_;
  std::vector<Entry> pairs_;
};

struct TrainResult {
  std::vector<StepRecord> records;
  std::unique_ptr<Networks> networks;
  std::optional<std::filesystem::path> final_checkpoint;
};

/// Full optimization run. With an output directory it writes `log.csv` and
/// `checkpoints/epoch_N`. Deterministic for a fixed seed in deterministic mode.
TrainResult train_loop(const SampleSource& data, const NetworkConfig& network_config, const TrainConfig& config,
                       const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace shades
