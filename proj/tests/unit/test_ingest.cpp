#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "oracles.hpp"
#include "shades/image_io.hpp"
#include "shades/ingest.hpp"
#include "test_util.hpp"

using namespace shades;
using shades::testing::max_abs_diff;

namespace {

// Half-pixel-center bilinear resize of one channel, torch's align_corners=false rule.
double resize_oracle(const torch::Tensor& square, int c, int row, int col, int out_size) {
  const double scale = static_cast<double>(square.size(1)) / out_size;
  const int n = static_cast<int>(square.size(1));
  auto src = [&](int o) {
    const double s = std::max((o + 0.5) * scale - 0.5, 0.0);
    const int i0 = std::min(static_cast<int>(std::floor(s)), n - 1);
    const int i1 = std::min(i0 + 1, n - 1);
    return std::tuple<int, int, double>{i0, i1, s - i0};
  };
  const auto [y0, y1, ay] = src(row);
  const auto [x0, x1, ax] = src(col);
  auto px = [&](int y, int x) { return square[c][y][x].item<double>(); };
  return (1 - ay) * ((1 - ax) * px(y0, x0) + ax * px(y0, x1)) + ay * ((1 - ax) * px(y1, x0) + ax * px(y1, x1));
}

CameraModel test_camera() {
  CameraModel cam;
  cam.fx = 12.0;
  cam.fy = 11.0;
  cam.cx = 7.5;
  cam.cy = 7.0;
  return cam;
}

}  // namespace

TEST(CropResize, CentersTheLargestSquare) {
  torch::manual_seed(0);
  const auto raw = torch::rand({3, 480, 640});
  const auto out = crop_resize(raw, 288);
  ASSERT_EQ(out.sizes(), (std::vector<int64_t>{3, 288, 288}));
  const auto square = raw.slice(2, 80, 560).to(torch::kFloat64);
  std::mt19937 rng(1);
  std::uniform_int_distribution<int> pick(0, 287);
  for (int k = 0; k < 50; ++k) {
    const int r = pick(rng), c = pick(rng), ch = k % 3;
    // float32 source coordinates near index 479 carry ~3e-5 of rounding.
    EXPECT_NEAR(out[ch][r][c].item<double>(), resize_oracle(square, ch, r, c, 288), 1e-4);
  }
}

TEST(CropResize, IdentityAtTargetSize) {
  torch::manual_seed(1);
  const auto raw = torch::rand({3, 288, 288});
  EXPECT_TRUE(torch::equal(crop_resize(raw, 288), raw));
  EXPECT_TRUE(torch::equal(crop_resize(crop_resize(raw, 288), 288), crop_resize(raw, 288)));
}

TEST(CropResize, ConstantStaysConstant) {
  const auto out = crop_resize(torch::full({3, 4, 6}, 0.5), 2);
  ASSERT_EQ(out.sizes(), (std::vector<int64_t>{3, 2, 2}));
  EXPECT_LT(max_abs_diff(out, torch::full({3, 2, 2}, 0.5)), 1e-7);
}

TEST(CropResize, EmptyInputRejected) {
  EXPECT_SHADES_ERROR(crop_resize(torch::zeros({3, 0, 4}), 8), ErrorKind::InvalidInput);
}

TEST(Camera, SingularIntrinsicsRejected) {
  CameraModel cam = test_camera();
  cam.fx = 0.0;
  EXPECT_SHADES_ERROR(cam.validate(), ErrorKind::InvalidCamera);
  EXPECT_SHADES_ERROR(undistort(torch::zeros({3, 4, 4}), cam), ErrorKind::InvalidCamera);
  cam.fx = std::nan("");
  EXPECT_SHADES_ERROR(cam.validate(), ErrorKind::InvalidCamera);
}

TEST(Camera, IntrinsicsMatrixAndInverse) {
  const auto cam = test_camera();
  const auto K = cam.K();
  EXPECT_DOUBLE_EQ(K[0][0].item<double>(), 12.0);
  EXPECT_DOUBLE_EQ(K[1][2].item<double>(), 7.0);
  EXPECT_TRUE(torch::equal(K[2], torch::tensor({0.0, 0.0, 1.0}, torch::kFloat64)));
  EXPECT_LT(max_abs_diff(K.matmul(cam.K_inv()), torch::eye(3, torch::kFloat64)), 1e-12);
}

TEST(Camera, LoadsFromKeyValueText) {
  const auto cam = CameraModel::from_key_values(KeyValueFile::parse("fx=100\nfy=90\ncx=50\ncy=40\nk1=0.1\np2=0.01\n"));
  EXPECT_DOUBLE_EQ(cam.fy, 90.0);
  EXPECT_DOUBLE_EQ(cam.dist[0], 0.1);
  EXPECT_DOUBLE_EQ(cam.dist[3], 0.01);
  EXPECT_TRUE(cam.has_distortion());
  EXPECT_SHADES_ERROR(CameraModel::from_key_values(KeyValueFile::parse("fx=100\n")), ErrorKind::InvalidCamera);
}

TEST(Camera, CropResizeMapsPixelCenters) {
  CameraModel cam = test_camera();
  cam.cx = 319.5;
  cam.cy = 239.5;
  const auto out = cam.for_crop_resize(480, 640, 288);
  EXPECT_NEAR(out.cx, 143.5, 1e-12);
  EXPECT_NEAR(out.cy, 143.5, 1e-12);
  EXPECT_NEAR(out.fx, 12.0 * 0.6, 1e-12);
}

TEST(Camera, FlipTwiceIsIdentity) {
  CameraModel cam = test_camera();
  cam.dist = {0.1, -0.02, 0.003, 0.004, 0.001};
  const auto back = cam.flipped_horizontally(16).flipped_horizontally(16);
  EXPECT_DOUBLE_EQ(back.cx, cam.cx);
  EXPECT_EQ(back.dist, cam.dist);
  // Flipping mirrors the distortion field about the principal point.
  const auto flipped = cam.flipped_horizontally(16);
  const auto a = cam.distort_normalized(0.2, 0.1);
  const auto b = flipped.distort_normalized(-0.2, 0.1);
  EXPECT_NEAR(a[0], -b[0], 1e-12);
  EXPECT_NEAR(a[1], b[1], 1e-12);
}

TEST(Camera, UndistortNormalizedInvertsDistortion) {
  CameraModel cam = test_camera();
  cam.dist = {0.05, 0.01, 0.001, -0.001, 0.0};
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int i = 0; i < 100; ++i) {
    const double x = u(rng), y = u(rng);
    const auto d = cam.distort_normalized(x, y);
    const auto back = cam.undistort_normalized(d[0], d[1], 20);
    EXPECT_NEAR(back[0], x, 1e-6);
    EXPECT_NEAR(back[1], y, 1e-6);
  }
}

TEST(Undistort, ZeroCoefficientsAreIdentity) {
  torch::manual_seed(2);
  const auto image = torch::rand({3, 16, 16});
  EXPECT_LT(max_abs_diff(undistort(image, test_camera()), image), 1e-6);
}

TEST(Undistort, ConstantImageStaysConstantInBounds) {
  CameraModel cam = test_camera();
  cam.dist = {0.3, 0.1, 0.01, -0.02, 0.05};
  const auto out = undistort(torch::full({3, 16, 16}, 0.7), cam);
  const auto nonzero = out.ne(0);
  ASSERT_GT(nonzero.sum().item<int64_t>(), 0);
  EXPECT_LT((out.masked_select(nonzero) - 0.7).abs().max().item<double>(), 1e-6);
}

TEST(Undistort, RadialCheckerboardMatchesLoopOracle) {
  CameraModel cam = test_camera();
  cam.dist = {0.1, 0.0, 0.0, 0.0, 0.0};
  auto board = torch::zeros({3, 16, 16}, torch::kFloat64);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) board.index_put_({torch::indexing::Slice(), r, c}, ((r / 2 + c / 2) % 2) ? 0.9 : 0.1);
  const auto out = undistort(board, cam);
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 16; ++c) {
      const double x = (c - cam.cx) / cam.fx, y = (r - cam.cy) / cam.fy;
      const double r2 = x * x + y * y;
      const double xd = x * (1 + 0.1 * r2), yd = y * (1 + 0.1 * r2);
      bool inb = false;
      const double expected = shades::testing::bilinear_pixel(board, 0, xd * cam.fx + cam.cx, yd * cam.fy + cam.cy, inb);
      EXPECT_NEAR(out[0][r][c].item<double>(), expected, 1e-9) << r << "," << c;
    }
  }
}

TEST(Pairs, ThreeFramesGiveFourOrderedPairs) {
  const auto pairs = sample_pair_indices(3, {-1, 1});
  ASSERT_EQ(pairs.size(), 4u);
  const std::vector<std::pair<int, int>> expected{{0, 1}, {1, 0}, {1, 2}, {2, 1}};
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(pairs[i].target, expected[i].first);
    EXPECT_EQ(pairs[i].source, expected[i].second);
    EXPECT_EQ(pairs[i].source - pairs[i].target, pairs[i].gap);
  }
}

TEST(Pairs, SmallCounts) {
  EXPECT_EQ(sample_pair_indices(2, {1}).size(), 1u);
  EXPECT_EQ(sample_pair_indices(5, {-1, 1}).size(), 8u);
  EXPECT_SHADES_ERROR(sample_pair_indices(1, {-1, 1}), ErrorKind::InsufficientFrames);
  EXPECT_SHADES_ERROR(sample_pair_indices(0, {1}), ErrorKind::InsufficientFrames);
}

TEST(Pairs, CountMatchesClosedFormForRandomGapSets) {
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> len(2, 40), gap(-5, 5), ngaps(1, 4);
  for (int trial = 0; trial < 200; ++trial) {
    const int L = len(rng);
    std::set<int> gaps;
    const int n = ngaps(rng);
    while (static_cast<int>(gaps.size()) < n) {
      const int g = gap(rng);
      if (g != 0) gaps.insert(g);
    }
    std::size_t expected = 0;
    for (int g : gaps) expected += static_cast<std::size_t>(std::max(0, L - std::abs(g)));
    const auto pairs = sample_pair_indices(L, {gaps.begin(), gaps.end()});
    ASSERT_EQ(pairs.size(), expected);
    for (const auto& p : pairs) {
      EXPECT_TRUE(gaps.count(p.gap));
      EXPECT_GE(p.source, 0);
      EXPECT_LT(p.source, L);
    }
  }
}

TEST(Pairs, FramePairsKeepSequenceIdentity) {
  std::vector<Frame> seq;
  for (int i = 0; i < 3; ++i) seq.push_back({torch::full({3, 4, 4}, 0.1 * i), "s", i});
  const auto pairs = sample_pairs(seq, {-1, 1});
  ASSERT_EQ(pairs.size(), 4u);
  EXPECT_EQ(pairs[1].target.index, 1);
  EXPECT_EQ(pairs[1].source.index, 0);
  seq[2].seq_id = "other";
  EXPECT_SHADES_ERROR(sample_pairs(seq, {-1, 1}), ErrorKind::InvalidInput);
}

TEST(Frame, ValidationRejectsOutOfRangeValues) {
  Frame ok{torch::full({3, 4, 4}, 0.5), "s", 0};
  EXPECT_NO_THROW(ok.validate());
  Frame bright{torch::full({3, 4, 4}, 1.5), "s", 0};
  EXPECT_SHADES_ERROR(bright.validate(), ErrorKind::InvalidInput);
  Frame gray{torch::full({1, 4, 4}, 0.5), "s", 0};
  EXPECT_SHADES_ERROR(gray.validate(), ErrorKind::InvalidInput);
}

TEST(FrameLoader, ProducesSquareFramesInRange) {
  shades::testing::TempDir dir;
  torch::manual_seed(4);
  const auto raw = torch::rand({3, 24, 32});
  save_png8(dir.path() / "0.png", raw);
  IngestConfig cfg;
  cfg.out_size = 16;
  FrameLoader loader(cfg, std::nullopt);
  const auto frame = loader.load(dir.path() / "0.png", "seq", 0);
  ASSERT_EQ(frame.pixels.sizes(), (std::vector<int64_t>{3, 16, 16}));
  EXPECT_NO_THROW(frame.validate());
  EXPECT_SHADES_ERROR(loader.processed_camera(24, 32), ErrorKind::InvalidCamera);
}

TEST(Discovery, NumericOrderAndCacheSiblingsSkipped) {
  shades::testing::TempDir dir;
  for (const char* seq : {"a", "b", "a_rem", "a_mask"}) std::filesystem::create_directories(dir.path() / seq);
  for (int i : {10, 2, 1}) save_png8(dir.path() / "a" / (std::to_string(i) + ".png"), torch::zeros({3, 4, 4}));
  for (int i : {0, 1}) save_png8(dir.path() / "b" / (std::to_string(i) + ".png"), torch::zeros({3, 4, 4}));
  save_png8(dir.path() / "a_rem" / "1.png", torch::zeros({3, 4, 4}));
  const auto seqs = discover_sequences(dir.path());
  ASSERT_EQ(seqs.size(), 2u);
  EXPECT_EQ(seqs[0].seq_id, "a");
  ASSERT_EQ(seqs[0].files.size(), 3u);
  EXPECT_EQ(seqs[0].files[0].stem(), "1");
  EXPECT_EQ(seqs[0].files[2].stem(), "10");
  EXPECT_EQ(discover_sequences(dir.path(), 2)[0].files.size(), 2u);
}
