#include <cmath>
#include <fstream>
#include <sstream>

#include "shades/image_io.hpp"
#include "shades/trainer.hpp"
#include "test_util.hpp"
#include "toy_scene.hpp"

using namespace shades;
using shades::testing::TempDir;

namespace {

NetworkConfig net_config(int size) {
  NetworkConfig cfg;
  cfg.image_size = size;
  cfg.base_width = 8;
  return cfg;
}

TrainConfig train_config() {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.seed = 5;
  return cfg;
}

shades::testing::ToyScene small_scene(int views) {
  shades::testing::ToySceneConfig cfg;
  cfg.size = 32;
  cfg.views = views;
  cfg.blob_radius = 2.0;
  return shades::testing::render_toy_scene(cfg);
}

Prior prior_of(const torch::Tensor& image) {
  auto [inpainted, mask] = compute_i_rem(Frame{image, "toy", 0});
  return {inpainted.pixels, mask.mask};
}

std::vector<TrainSample> scene_samples(const shades::testing::ToyScene& scene) {
  std::vector<Prior> priors;
  for (const auto& v : scene.views) priors.push_back(prior_of(v.image));
  std::vector<TrainSample> out;
  const int n = static_cast<int>(scene.views.size());
  for (const auto& p : sample_pair_indices(n, {-1, 1})) {
    TrainSample s;
    s.target = scene.views[p.target].image;
    s.source = scene.views[p.source].image;
    s.target_prior = priors[p.target];
    s.source_prior = priors[p.source];
    const int other = p.target - p.gap;
    if (other >= 0 && other < n) s.extra_sources.push_back({scene.views[other].image, other});
    s.camera = scene.camera;
    s.seq_id = "toy";
    s.target_index = p.target;
    s.source_index = p.source;
    out.push_back(std::move(s));
  }
  return out;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(TrainConfig, ValidationAndSchedule) {
  TrainConfig cfg;
  cfg.epochs = 20;
  EXPECT_DOUBLE_EQ(cfg.learning_rate_at(0), 1e-4);
  EXPECT_DOUBLE_EQ(cfg.learning_rate_at(14), 1e-4);
  EXPECT_DOUBLE_EQ(cfg.learning_rate_at(15), 5e-5);
  EXPECT_FALSE(cfg.flip_augmentation);
  cfg.epochs = 0;
  EXPECT_SHADES_ERROR(cfg.validate(), ErrorKind::InvalidConfig);
  cfg = {};
  cfg.learning_rate = 0.0;
  EXPECT_SHADES_ERROR(cfg.validate(), ErrorKind::InvalidConfig);
  cfg = {};
  cfg.geometry_warmup_steps = -1;
  EXPECT_SHADES_ERROR(cfg.validate(), ErrorKind::InvalidConfig);
}

TEST(StepRecord, CsvLayout) {
  StepRecord r;
  r.step = 3;
  r.epoch = 1;
  r.total = 0.5;
  r.mask_coverage = 0.25;
  r.learning_rate = 1e-4;
  EXPECT_EQ(StepRecord::csv_header(), "step,epoch,total,l_d_t,l_d_s,l_a,l_r,l_es,mask_coverage,learning_rate");
  EXPECT_EQ(r.csv_row(), "3,1,0.5,0,0,0,0,0,0.25,0.0001");
}

TEST(RelativePose, EarlierSourceUsesTheInverse) {
  NetworkConfig cfg = net_config(32);
  cfg.zero_init_pose = false;
  cfg.pose_scale = 1.0;
  Networks nets(cfg, 3);
  torch::NoGradGuard guard;
  torch::manual_seed(2);
  const auto a = torch::rand({1, 3, 32, 32});
  const auto b = torch::rand({1, 3, 32, 32});
  const auto ab = relative_pose(nets, a, b, {false});
  const auto ba = relative_pose(nets, b, a, {true});
  const auto inv = ab.inverse();
  EXPECT_LT(shades::testing::max_abs_diff(ba.rotation, inv.rotation), 1e-6);
  EXPECT_LT(shades::testing::max_abs_diff(ba.translation, inv.translation), 1e-6);
  EXPECT_GT(ab.translation.abs().sum().item<double>(), 0.0);
  EXPECT_SHADES_ERROR(relative_pose(nets, a, b, {true, false}), ErrorKind::InvalidInput);
}

TEST(ForwardBatch, IdenticalFramesGiveFiniteLossAndFullValidity) {
  const auto scene = small_scene(1);
  TrainSample s;
  s.target = scene.views[0].image;
  s.source = scene.views[0].image;
  s.target_prior = s.source_prior = prior_of(scene.views[0].image);
  s.camera = scene.camera;
  Networks nets(net_config(32), 1);
  const auto out = forward_batch(nets, {s}, train_config());
  EXPECT_TRUE(std::isfinite(out.losses.total.item<double>()));
  EXPECT_TRUE(out.masks.mu2.eq(1).all().item<bool>());
  EXPECT_TRUE(torch::equal(out.masks.mu, out.masks.mu1 * out.masks.mu2));
}

TEST(ForwardBatch, MissingPriorsRejected) {
  const auto scene = small_scene(2);
  auto samples = scene_samples(scene);
  samples[0].source_prior.reset();
  Networks nets(net_config(32), 1);
  EXPECT_SHADES_ERROR(forward_batch(nets, {samples[0]}, train_config()), ErrorKind::PriorCacheMiss);
}

TEST(ForwardBatch, WrongResolutionRejected) {
  const auto scene = small_scene(2);
  const auto samples = scene_samples(scene);
  Networks nets(net_config(64), 1);
  EXPECT_SHADES_ERROR(forward_batch(nets, {samples[0]}, train_config()), ErrorKind::InvalidInput);
}

TEST(ForwardBatch, DepthHeadGradientMatchesFiniteDifference) {
  const auto scene = small_scene(2);
  const auto samples = scene_samples(scene);
  auto cfg = train_config();
  cfg.double_precision = true;
  NetworkConfig ncfg = net_config(32);
  ncfg.zero_init_pose = false;
  Networks nets(ncfg, 4);
  nets.to(torch::kFloat64);
  torch::Tensor bias;
  for (auto& [name, p] : nets.named_parameters())
    if (name == "depth.decoder.head.bias") bias = p;
  ASSERT_TRUE(bias.defined());

  auto out = forward_batch(nets, samples, cfg);
  const double analytic = torch::autograd::grad({out.losses.total}, {bias})[0][0].item<double>();
  const double h = 1e-5;
  auto eval = [&](double delta) {
    torch::NoGradGuard guard;
    bias.data()[0] += delta;
    const double v = forward_batch(nets, samples, cfg).losses.total.item<double>();
    bias.data()[0] -= delta;
    return v;
  };
  const double numeric = (eval(h) - eval(-h)) / (2 * h);
  ASSERT_GT(std::abs(analytic), 1e-8);
  EXPECT_LT(std::abs(numeric - analytic) / std::abs(analytic), 1e-2) << numeric << " vs " << analytic;
}

TEST(TrainStep, NonFiniteLossAbortsWithoutUpdating) {
  const auto scene = small_scene(2);
  auto samples = scene_samples(scene);
  samples[0].target_prior->i_rem = samples[0].target_prior->i_rem.clone();
  samples[0].target_prior->i_rem.index_put_({0, 0, 0}, std::nan(""));
  TrainState state(net_config(32), train_config());
  const auto before = state.networks().parameters().front().clone();
  EXPECT_SHADES_ERROR(state.train_step({samples[0]}), ErrorKind::NonFiniteLoss);
  EXPECT_TRUE(torch::equal(before, state.networks().parameters().front()));
  EXPECT_EQ(state.step(), 0);
}

TEST(TrainStep, WarmupFreezesGeometry) {
  const auto scene = small_scene(2);
  const auto samples = scene_samples(scene);
  auto cfg = train_config();
  cfg.geometry_warmup_steps = 2;
  TrainState state(net_config(32), cfg);
  std::vector<std::pair<std::string, torch::Tensor>> before;
  for (const auto& [n, p] : state.networks().named_parameters()) before.emplace_back(n, p.detach().clone());
  state.train_step(samples);
  state.train_step(samples);
  const auto after = state.networks().named_parameters();
  bool decompose_moved = false;
  for (std::size_t i = 0; i < after.size(); ++i) {
    const bool same = torch::equal(before[i].second, after[i].second);
    if (before[i].first.rfind("decompose.", 0) == 0) {
      decompose_moved = decompose_moved || !same;
    } else {
      EXPECT_TRUE(same) << before[i].first;
    }
  }
  EXPECT_TRUE(decompose_moved);
  state.train_step(samples);
  bool depth_moved = false;
  for (std::size_t i = 0; i < after.size(); ++i)
    if (before[i].first.rfind("depth.", 0) == 0) depth_moved = depth_moved || !torch::equal(before[i].second, after[i].second);
  EXPECT_TRUE(depth_moved);
}

TEST(TrainLoop, StepCountLogAndCheckpoints) {
  const auto scene = small_scene(3);
  const auto samples = scene_samples(scene);
  ASSERT_EQ(samples.size(), 4u);
  TempDir dir;
  const auto result = train_loop(InMemorySamples(samples), net_config(32), train_config(), dir.path());
  ASSERT_EQ(result.records.size(), 2u);
  for (const auto& r : result.records) {
    EXPECT_GE(r.mask_coverage, 0.0);
    EXPECT_LE(r.mask_coverage, 1.0);
  }
  std::istringstream log(read_file(dir.path() / "log.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) ++lines;
  EXPECT_EQ(lines, 3);
  ASSERT_TRUE(result.final_checkpoint);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "checkpoints" / "epoch_1"));
}

TEST(TrainLoop, SameSeedSameTrajectory) {
  const auto samples = scene_samples(small_scene(3));
  auto cfg = train_config();
  cfg.epochs = 2;
  cfg.flip_augmentation = true;
  const auto a = train_loop(InMemorySamples(samples), net_config(32), cfg);
  const auto b = train_loop(InMemorySamples(samples), net_config(32), cfg);
  ASSERT_EQ(a.records.size(), 4u);
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].csv_row(), b.records[i].csv_row());
}

TEST(TrainLoop, OversizedBatchRejected) {
  const auto samples = scene_samples(small_scene(2));
  auto cfg = train_config();
  cfg.batch_size = 3;
  EXPECT_SHADES_ERROR(train_loop(InMemorySamples(samples), net_config(32), cfg), ErrorKind::InvalidConfig);
}

TEST(DiskDataset, PairsPriorsAndCacheMisses) {
  TempDir dir;
  const auto scene = small_scene(3);
  std::filesystem::create_directories(dir.path() / "seq");
  for (int i = 0; i < 3; ++i) save_png8(dir.path() / "seq" / (std::to_string(i) + ".png"), scene.views[i].image);
  IngestConfig ingest;
  ingest.out_size = 32;
  DiskDataset data(dir.path(), ingest, scene.camera, {});
  ASSERT_EQ(data.size(), 4u);
  const auto first = data.get(0);
  EXPECT_FALSE(first.target_prior.has_value());
  Networks nets(net_config(32), 1);
  EXPECT_SHADES_ERROR(forward_batch(nets, {first}, train_config()), ErrorKind::PriorCacheMiss);
  EXPECT_EQ(data.prepare_priors(), 3);
  EXPECT_EQ(data.prepare_priors(), 0);
  const auto sample = data.get(1);
  EXPECT_EQ(sample.target_index, 1);
  EXPECT_EQ(sample.source_index, 0);
  ASSERT_TRUE(sample.target_prior && sample.source_prior);
  ASSERT_EQ(sample.extra_sources.size(), 1u);
  EXPECT_EQ(sample.extra_sources[0].index, 2);
  EXPECT_TRUE(std::isfinite(forward_batch(nets, {sample}, train_config()).losses.total.item<double>()));
}
