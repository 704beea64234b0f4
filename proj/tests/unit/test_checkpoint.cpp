#include <fstream>

#include "shades/checkpoint.hpp"
#include "test_util.hpp"

using namespace shades;
using shades::testing::TempDir;

namespace {

NetworkConfig small_config() {
  NetworkConfig cfg;
  cfg.image_size = 32;
  cfg.base_width = 8;
  cfg.zero_init_pose = false;
  return cfg;
}

void flip_byte(const std::filesystem::path& path, std::streamoff from_end) {
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(-from_end, std::ios::end);
  char c = 0;
  f.read(&c, 1);
  f.seekp(-from_end, std::ios::end);
  c = static_cast<char>(c ^ 0x5a);
  f.write(&c, 1);
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitIdentical) {
  TempDir dir;
  Networks nets(small_config(), 21);
  save_checkpoint(dir.path() / "ckpt", nets, {small_config(), 21, 17, 3});
  const auto loaded = load_checkpoint(dir.path() / "ckpt");
  EXPECT_EQ(loaded.info.seed, 21u);
  EXPECT_EQ(loaded.info.step, 17);
  EXPECT_EQ(loaded.info.epoch, 3);
  EXPECT_EQ(loaded.info.config.base_width, 8);
  const auto a = nets.named_parameters();
  const auto b = loaded.networks->named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(torch::equal(a[i].second, b[i].second)) << a[i].first;

  nets.train(false);
  loaded.networks->train(false);
  torch::NoGradGuard guard;
  torch::manual_seed(1);
  const auto x = torch::rand({1, 3, 32, 32});
  const auto y = torch::rand({1, 3, 32, 32});
  EXPECT_TRUE(torch::equal(nets.depth->forward(x), loaded.networks->depth->forward(x)));
  EXPECT_TRUE(torch::equal(nets.pose->forward(x, y), loaded.networks->pose->forward(x, y)));
  EXPECT_TRUE(torch::equal(nets.decompose->forward(x).albedo, loaded.networks->decompose->forward(x).albedo));
}

TEST(Checkpoint, CorruptedPayloadRejected) {
  TempDir dir;
  Networks nets(small_config(), 22);
  save_checkpoint(dir.path() / "ckpt", nets, {small_config(), 22, 0, 0});
  flip_byte(dir.path() / "ckpt", 5);
  EXPECT_SHADES_ERROR(load_checkpoint(dir.path() / "ckpt"), ErrorKind::CheckpointError);
}

TEST(Checkpoint, TruncatedOrMissingRejected) {
  TempDir dir;
  Networks nets(small_config(), 23);
  const auto path = dir.path() / "ckpt";
  save_checkpoint(path, nets, {small_config(), 23, 0, 0});
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  EXPECT_SHADES_ERROR(load_checkpoint(path), ErrorKind::CheckpointError);
  std::ofstream(dir.path() / "junk") << "not a checkpoint at all";
  EXPECT_SHADES_ERROR(load_checkpoint(dir.path() / "junk"), ErrorKind::CheckpointError);
  EXPECT_SHADES_ERROR(load_checkpoint(dir.path() / "absent"), ErrorKind::CheckpointError);
}

TEST(Checkpoint, Fnv1aKnownValues) {
  EXPECT_EQ(fnv1a64("", 0), 14695981039346656037ull);
  EXPECT_EQ(fnv1a64("a", 1), 0xaf63dc4c8601ec8cull);
}
