#include "shades/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>

#include "shades/checkpoint.hpp"
#include "shades/error.hpp"
#include "shades/image_io.hpp"
#include "shades/runtime.hpp"
#include "shades/view_synthesis.hpp"

namespace fs = std::filesystem;

namespace shades {

// ---------------------------------------------------------------------------
// TrainConfig

TrainConfig TrainConfig::from_key_values(const KeyValueFile& kv) {
  TrainConfig c;
  c.epochs = kv.get_int("epochs", c.epochs);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.seed = kv.get_u64("seed", c.seed);
  c.weights = LossWeights::from_key_values(kv);
  c.flip_augmentation = kv.get_bool("flip_augmentation", c.flip_augmentation);
  c.checkpoint_every = kv.get_int("checkpoint_every", c.checkpoint_every);
  c.double_precision = kv.get_bool("double_precision", c.double_precision);
  c.geometry_warmup_steps = kv.get_int("geometry_warmup_steps", c.geometry_warmup_steps);
  c.validate();
  return c;
}

void TrainConfig::write(KeyValueFile& kv) const {
  kv.set("epochs", std::to_string(epochs));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("learning_rate", format_number(learning_rate));
  kv.set("seed", std::to_string(seed));
  weights.write(kv);
  kv.set("flip_augmentation", flip_augmentation ? "true" : "false");
  kv.set("checkpoint_every", std::to_string(checkpoint_every));
  kv.set("double_precision", double_precision ? "true" : "false");
  kv.set("geometry_warmup_steps", std::to_string(geometry_warmup_steps));
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorKind::InvalidConfig, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidConfig, "learning_rate must be > 0");
  if (checkpoint_every < 1) throw Error(ErrorKind::InvalidConfig, "checkpoint_every must be >= 1");
  if (geometry_warmup_steps < 0) throw Error(ErrorKind::InvalidConfig, "geometry_warmup_steps must be >= 0");
  weights.validate();
}

double TrainConfig::learning_rate_at(int epoch) const {
  const int decay_epoch = (3 * epochs) / 4;
  return (epochs > 1 && epoch >= decay_epoch) ? learning_rate * 0.5 : learning_rate;
}

// ---------------------------------------------------------------------------
// StepRecord

std::string StepRecord::csv_header() {
  return "step,epoch,total,l_d_t,l_d_s,l_a,l_r,l_es,mask_coverage,learning_rate";
}

std::string StepRecord::csv_row() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%lld,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(step),
                epoch, total, l_d_t, l_d_s, l_a, l_r, l_es, mask_coverage, learning_rate);
  return buf;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

torch::Tensor stack_as(const std::vector<torch::Tensor>& items, torch::ScalarType dtype) {
  return torch::stack(items).to(dtype);
}

PoseSE3 pose_at(const PoseSE3& pose, int64_t b) {
  return {pose.rotation.slice(0, b, b + 1), pose.translation.slice(0, b, b + 1)};
}

}  // namespace

PoseSE3 relative_pose(Networks& networks, const torch::Tensor& target, const torch::Tensor& source,
                      const std::vector<bool>& source_first) {
  if (static_cast<int64_t>(source_first.size()) != target.size(0)) {
    throw Error(ErrorKind::InvalidInput, "relative_pose: one order flag per sample expected");
  }
  std::vector<int64_t> flags(source_first.begin(), source_first.end());
  auto swap = torch::tensor(flags, torch::kBool).view({-1, 1, 1, 1});
  auto earlier = torch::where(swap, source, target);
  auto later = torch::where(swap, target, source);
  auto forward = pose_vec_to_se3(PoseVector::from_network(networks.pose->forward(earlier, later)));
  auto backward = forward.inverse();
  auto swap3 = swap.view({-1, 1, 1});
  return {torch::where(swap3, backward.rotation, forward.rotation),
          torch::where(swap.view({-1, 1}), backward.translation, forward.translation)};
}

ForwardOutputs forward_batch(Networks& networks, const std::vector<TrainSample>& batch, const TrainConfig& config) {
  if (batch.empty()) throw Error(ErrorKind::InvalidInput, "empty batch");
  const auto dtype = config.double_precision ? torch::kFloat64 : torch::kFloat32;
  const auto& weights = config.weights;
  const auto& net_cfg = networks.config;

  std::vector<torch::Tensor> targets, sources, rem_t, rem_s;
  for (const auto& sample : batch) {
    if (!sample.target_prior || !sample.source_prior) {
      throw Error(ErrorKind::PriorCacheMiss, "no prior for " + sample.seq_id + " frame " +
                                                 std::to_string(!sample.target_prior ? sample.target_index
                                                                                     : sample.source_index));
    }
    targets.push_back(sample.target);
    sources.push_back(sample.source);
    rem_t.push_back(sample.target_prior->i_rem);
    rem_s.push_back(sample.source_prior->i_rem);
  }
  auto target = stack_as(targets, dtype);
  auto source = stack_as(sources, dtype);
  auto i_rem_t = stack_as(rem_t, dtype);
  auto i_rem_s = stack_as(rem_s, dtype);
  networks.check_input(target);
  networks.check_input(source);

  auto dec_t = networks.decompose->forward(target);
  auto dec_s = networks.decompose->forward(source);
  auto depth = disp_to_depth(networks.depth->forward(target), net_cfg.d_min, net_cfg.d_max);
  std::vector<bool> source_first;
  for (const auto& sample : batch) source_first.push_back(sample.source_index < sample.target_index);
  auto pose = relative_pose(networks, target, source, source_first);
  auto recon_s = dec_s.recon();

  std::vector<torch::Tensor> warped_albedo, warped_recon, mu1, mu2;
  for (int64_t b = 0; b < static_cast<int64_t>(batch.size()); ++b) {
    const auto& sample = batch[b];
    auto tgt_b = target.slice(0, b, b + 1);
    auto src_b = source.slice(0, b, b + 1);
    auto depth_b = depth.slice(0, b, b + 1);
    auto warped = warp(src_b, depth_b, pose_at(pose, b), sample.camera);
    warped_recon.push_back(resample(recon_s.slice(0, b, b + 1), warped));
    warped_albedo.push_back(resample(dec_s.albedo.slice(0, b, b + 1), warped));
    mu2.push_back(warped.valid);

    std::vector<torch::Tensor> warped_raw{warped.image};
    std::vector<torch::Tensor> raw{src_b};
    if (!sample.extra_sources.empty()) {
      torch::NoGradGuard no_grad;
      for (const auto& extra : sample.extra_sources) {
        auto e = extra.image.unsqueeze(0).to(dtype);
        auto extra_pose = relative_pose(networks, tgt_b, e, {extra.index < sample.target_index});
        warped_raw.push_back(warp(e, depth_b.detach(), extra_pose, sample.camera).image);
        raw.push_back(e);
      }
    }
    mu1.push_back(automask_mu1(tgt_b, warped_raw, raw, weights));
  }

  ForwardOutputs out;
  out.masks = AutoMask::combine(torch::cat(mu1), torch::cat(mu2));
  LossInputs inputs{dec_t.recon(),           i_rem_t,        recon_s, i_rem_s, dec_t.albedo, torch::cat(warped_albedo),
                    torch::cat(warped_recon), depth, target};
  out.losses = total_loss(inputs, out.masks, weights);
  out.depth_target = depth;
  out.pose = pose;
  return out;
}

// ---------------------------------------------------------------------------
// TrainState

TrainState::TrainState(const NetworkConfig& network_config, const TrainConfig& config) : config_(config) {
  config_.validate();
  networks_ = std::make_unique<Networks>(network_config, config_.seed);
  if (config_.double_precision) networks_->to(torch::kFloat64);
  optimizer_ = std::make_unique<torch::optim::Adam>(networks_->parameters(),
                                                    torch::optim::AdamOptions(config_.learning_rate));
}

void TrainState::set_learning_rate(double lr) {
  for (auto& group : optimizer_->param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

double TrainState::learning_rate() const {
  return static_cast<const torch::optim::AdamOptions&>(optimizer_->param_groups().front().options()).lr();
}

StepRecord TrainState::train_step(const std::vector<TrainSample>& batch, int epoch) {
  networks_->train(true);
  optimizer_->zero_grad();
  auto out = forward_batch(*networks_, batch, config_);

  StepRecord record;
  record.step = step_ + 1;
  record.epoch = epoch;
  record.total = out.losses.total.item<double>();
  record.l_d_t = out.losses.l_d_t.item<double>();
  record.l_d_s = out.losses.l_d_s.item<double>();
  record.l_a = out.losses.l_a.item<double>();
  record.l_r = out.losses.l_r.item<double>();
  record.l_es = out.losses.l_es.item<double>();
  record.mask_coverage = out.masks.mu.mean().item<double>();
  record.mask_empty = out.losses.mask_empty;
  record.learning_rate = learning_rate();
  if (!std::isfinite(record.total)) {
    throw Error(ErrorKind::NonFiniteLoss, "step " + std::to_string(record.step) + ": " + record.csv_row());
  }
  out.losses.total.backward();
  if (step_ < config_.geometry_warmup_steps) {
    for (const auto& [name, param] : networks_->named_parameters()) {
      if (name.rfind("decompose.", 0) != 0 && param.grad().defined()) param.mutable_grad().zero_();
    }
  }
  optimizer_->step();
  ++step_;
  return record;
}

// ---------------------------------------------------------------------------
// DiskDataset

DiskDataset::DiskDataset(const fs::path& data_dir, const IngestConfig& ingest, const CameraModel& raw_camera,
                         const SpecularConfig& specular)
    : loader_(ingest, raw_camera), specular_(specular), gaps_(ingest.gaps) {
  sequences_ = discover_sequences(data_dir, ingest.frame_cap);
  if (sequences_.empty()) throw Error(ErrorKind::InsufficientFrames, "no frames found under " + data_dir.string());
  for (std::size_t s = 0; s < sequences_.size(); ++s) {
    const auto& seq = sequences_[s];
    auto first = load_image(seq.files.front());
    cameras_.push_back(loader_.processed_camera(first.size(1), first.size(2)));
    if (seq.files.size() < 2) continue;
    for (const auto& pair : sample_pair_indices(static_cast<int>(seq.files.size()), gaps_)) pairs_.push_back({s, pair});
  }
  if (pairs_.empty()) throw Error(ErrorKind::InsufficientFrames, "no sequence has at least 2 frames");
}

Frame DiskDataset::load_frame(std::size_t sequence, int index) const {
  const auto& seq = sequences_[sequence];
  return loader_.load(seq.files[index], seq.seq_id, index);
}

int DiskDataset::prepare_priors() const {
  int computed = 0;
  for (std::size_t s = 0; s < sequences_.size(); ++s) {
    const auto& seq = sequences_[s];
    PriorCache cache(seq.dir, specular_);
    for (int i = 0; i < static_cast<int>(seq.files.size()); ++i) {
      const auto stem = seq.files[i].stem().string();
      const auto size = loader_.config().out_size;
      if (cache.lookup(stem, size, size)) continue;
      cache.get_or_compute(load_frame(s, i), stem);
      ++computed;
    }
  }
  return computed;
}

TrainSample DiskDataset::get(std::size_t index) const {
  const auto& entry = pairs_.at(index);
  const auto& seq = sequences_[entry.sequence];
  PriorCache cache(seq.dir, specular_);
  const auto size = loader_.config().out_size;

  TrainSample sample;
  sample.seq_id = seq.seq_id;
  sample.target_index = entry.pair.target;
  sample.source_index = entry.pair.source;
  sample.camera = cameras_[entry.sequence];
  sample.target = load_frame(entry.sequence, entry.pair.target).pixels;
  sample.source = load_frame(entry.sequence, entry.pair.source).pixels;
  sample.target_prior = cache.lookup(seq.files[entry.pair.target].stem().string(), size, size);
  sample.source_prior = cache.lookup(seq.files[entry.pair.source].stem().string(), size, size);
  const int length = static_cast<int>(seq.files.size());
  for (int g : gaps_) {
    const int other = entry.pair.target + g;
    if (other < 0 || other >= length || other == entry.pair.source) continue;
    sample.extra_sources.push_back({load_frame(entry.sequence, other).pixels, other});
  }
  return sample;
}

// ---------------------------------------------------------------------------
// Loop

namespace {

TrainSample flipped(const TrainSample& s) {
  TrainSample out = s;
  out.target = s.target.flip({2});
  out.source = s.source.flip({2});
  for (auto& e : out.extra_sources) e.image = e.image.flip({2});
  for (auto* prior : {&out.target_prior, &out.source_prior}) {
    if (!*prior) continue;
    (*prior)->i_rem = (*prior)->i_rem.flip({2});
    (*prior)->mask = (*prior)->mask.flip({1});
  }
  out.camera = s.camera.flipped_horizontally(s.target.size(2));
  return out;
}

}  // namespace

TrainResult train_loop(const SampleSource& data, const NetworkConfig& network_config, const TrainConfig& config,
                       const std::optional<fs::path>& out_dir) {
  apply_execution_mode();
  config.validate();
  const std::size_t count = data.size();
  if (count == 0) throw Error(ErrorKind::InvalidInput, "training set is empty");
  const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = count / batch_size;
  if (steps_per_epoch == 0) {
    throw Error(ErrorKind::InvalidConfig, "batch_size " + std::to_string(batch_size) + " exceeds the " +
                                              std::to_string(count) + " available pairs");
  }

  TrainState state(network_config, config);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::ofstream log;
  if (out_dir) {
    fs::create_directories(*out_dir / "checkpoints");
    log.open(*out_dir / "log.csv", std::ios::trunc);
    if (!log) throw Error(ErrorKind::Io, "cannot write " + (*out_dir / "log.csv").string());
    log << StepRecord::csv_header() << '\n';
  }

  TrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    state.set_learning_rate(config.learning_rate_at(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < steps_per_epoch; ++k) {
      std::vector<TrainSample> batch;
      for (std::size_t j = 0; j < batch_size; ++j) {
        auto sample = data.get(order[k * batch_size + j]);
        if (config.flip_augmentation && (rng() & 1u)) sample = flipped(sample);
        batch.push_back(std::move(sample));
      }
      StepRecord record;
      try {
        record = state.train_step(batch, epoch);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::NonFiniteLoss && log.is_open()) log << "# aborted: " << e.message() << '\n';
        throw;
      }
      if (log.is_open()) log << record.csv_row() << '\n' << std::flush;
      result.records.push_back(record);
    }
    const bool last = epoch + 1 == config.epochs;
    if (out_dir && (last || (epoch + 1) % config.checkpoint_every == 0)) {
      const auto path = *out_dir / "checkpoints" / ("epoch_" + std::to_string(epoch + 1));
      save_checkpoint(path, state.networks(), {state.networks().config, config.seed, state.step(), epoch + 1});
      if (last) result.final_checkpoint = path;
    }
  }

  // Hand the trained weights to the caller.
  auto trained = std::make_unique<Networks>(state.networks().config, config.seed);
  if (config.double_precision) trained->to(torch::kFloat64);
  {
    torch::NoGradGuard no_grad;
    auto dst = trained->named_parameters();
    auto src = state.networks().named_parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i].second.copy_(src[i].second);
  }
  result.networks = std::move(trained);
  return result;
}

}  // namespace shades
