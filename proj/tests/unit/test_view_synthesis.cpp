#include <cmath>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "shades/networks.hpp"
#include "shades/view_synthesis.hpp"
#include "test_util.hpp"

using namespace shades;
using shades::testing::gradient_check;
using shades::testing::max_abs_diff;

namespace {

CameraModel camera(int size) {
  CameraModel cam;
  cam.fx = 0.9 * size;
  cam.fy = 0.85 * size;
  cam.cx = 0.5 * (size - 1);
  cam.cy = 0.5 * (size - 1) + 0.3;
  return cam;
}

PoseSE3 make_pose(const std::array<double, 3>& w, const std::array<double, 3>& t) {
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  PoseVector v{torch::tensor({w[0], w[1], w[2]}, opts).view({1, 3}), torch::tensor({t[0], t[1], t[2]}, opts).view({1, 3})};
  return pose_vec_to_se3(v);
}

// Smooth texture, strictly positive.
double texture(double col, double row) { return 0.5 + 0.25 * std::sin(0.21 * col + 0.4) * std::cos(0.17 * row - 0.2); }

torch::Tensor textured_image(int h, int w) {
  auto img = torch::empty({1, 3, h, w}, torch::kFloat64);
  auto a = img.accessor<double, 4>();
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch) a[0][ch][r][c] = texture(c + 3.0 * ch, r);
  return img;
}

}  // namespace

TEST(Pose, IdentityInverseAndValidation) {
  const auto pose = make_pose({0.1, -0.2, 0.05}, {0.3, 0.0, -0.1});
  EXPECT_NO_THROW(pose.validate());
  const auto inv = pose.inverse();
  EXPECT_LT(max_abs_diff(inv.rotation.matmul(pose.rotation), torch::eye(3, torch::kFloat64).unsqueeze(0)), 1e-12);
  const auto t_back = inv.rotation.matmul(pose.translation.unsqueeze(-1)).squeeze(-1) + inv.translation;
  EXPECT_LT(t_back.abs().max().item<double>(), 1e-12);
  PoseSE3 bad{torch::eye(3, torch::kFloat64).unsqueeze(0) * 2.0, torch::zeros({1, 3}, torch::kFloat64)};
  EXPECT_SHADES_ERROR(bad.validate(), ErrorKind::InvalidInput);
}

TEST(Backproject, PrincipalPointLiesOnTheOpticalAxis) {
  CameraModel cam;
  cam.fx = cam.fy = 10.0;
  cam.cx = 2.0;
  cam.cy = 1.0;
  const auto depth = torch::full({1, 1, 4, 5}, 3.0, torch::kFloat64);
  const auto pts = backproject(depth, cam);
  EXPECT_NEAR(pts[0][0][1][2].item<double>(), 0.0, 1e-12);
  EXPECT_NEAR(pts[0][1][1][2].item<double>(), 0.0, 1e-12);
  EXPECT_NEAR(pts[0][2][1][2].item<double>(), 3.0, 1e-12);
}

TEST(Backproject, UnitIntrinsics) {
  CameraModel cam;
  const auto depth = torch::full({1, 1, 5, 5}, 4.0, torch::kFloat64);
  const auto pts = backproject(depth, cam);
  EXPECT_DOUBLE_EQ(pts[0][0][3][2].item<double>(), 8.0);
  EXPECT_DOUBLE_EQ(pts[0][1][3][2].item<double>(), 12.0);
  EXPECT_DOUBLE_EQ(pts[0][2][3][2].item<double>(), 4.0);
}

TEST(Backproject, MatchesLoopOracle) {
  torch::manual_seed(3);
  const auto cam = camera(8);
  const auto depth = torch::rand({1, 1, 8, 8}, torch::kFloat64) * 5 + 0.5;
  const auto pts = backproject(depth, cam);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) {
      const double d = depth[0][0][r][c].item<double>();
      EXPECT_NEAR(pts[0][0][r][c].item<double>(), (c - cam.cx) / cam.fx * d, 1e-6);
      EXPECT_NEAR(pts[0][1][r][c].item<double>(), (r - cam.cy) / cam.fy * d, 1e-6);
      EXPECT_NEAR(pts[0][2][r][c].item<double>(), d, 1e-6);
    }
  }
}

TEST(Backproject, SingularCameraRejected) {
  CameraModel cam;
  cam.fy = 0.0;
  EXPECT_SHADES_ERROR(backproject(torch::ones({1, 1, 2, 2}), cam), ErrorKind::InvalidCamera);
}

TEST(Reproject, IdentityPoseReturnsThePixelGrid) {
  torch::manual_seed(4);
  const auto cam = camera(12);
  const auto depth = torch::rand({2, 1, 12, 12}, torch::kFloat64) * 10 + 0.1;
  const auto proj = reproject(backproject(depth, cam), PoseSE3::identity(2), cam);
  auto grid = torch::meshgrid({torch::arange(12, torch::kFloat64), torch::arange(12, torch::kFloat64)}, "ij");
  const auto expected = torch::stack({grid[1], grid[0]}, -1).unsqueeze(0).expand({2, 12, 12, 2});
  EXPECT_LT(max_abs_diff(proj.coords, expected), 1e-5);
  EXPECT_TRUE(proj.z_valid.eq(1).all().item<bool>());
}

TEST(Reproject, ForwardTranslationScalesAboutPrincipalPoint) {
  const auto cam = camera(16);
  const double d = 3.0;
  const auto depth = torch::full({1, 1, 16, 16}, d, torch::kFloat64);
  const auto proj = reproject(backproject(depth, cam), make_pose({0, 0, 0}, {0, 0, -d / 2}), cam);
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 16; ++c) {
      EXPECT_NEAR(proj.coords[0][r][c][0].item<double>(), cam.cx + 2 * (c - cam.cx), 1e-9);
      EXPECT_NEAR(proj.coords[0][r][c][1].item<double>(), cam.cy + 2 * (r - cam.cy), 1e-9);
    }
  }
}

TEST(Reproject, PointsBehindTheCameraAreInvalid) {
  const auto cam = camera(4);
  const auto depth = torch::full({1, 1, 4, 4}, 1.0, torch::kFloat64);
  const auto proj = reproject(backproject(depth, cam), make_pose({0, 0, 0}, {0, 0, -2.0}), cam);
  EXPECT_TRUE(proj.z_valid.eq(0).all().item<bool>());
  EXPECT_TRUE(torch::isfinite(proj.coords).all().item<bool>());
}

TEST(Bilinear, LatticePointsAreExact) {
  torch::manual_seed(5);
  const auto src = torch::rand({1, 3, 5, 7}, torch::kFloat64);
  auto grid = torch::meshgrid({torch::arange(5, torch::kFloat64), torch::arange(7, torch::kFloat64)}, "ij");
  const auto coords = torch::stack({grid[1], grid[0]}, -1).unsqueeze(0);
  const auto out = bilinear_sample(src, coords);
  EXPECT_TRUE(torch::equal(out.values, src));
  EXPECT_TRUE(out.inbounds.eq(1).all().item<bool>());
}

TEST(Bilinear, MidpointAverages) {
  const auto src = torch::tensor({0.0, 1.0}, torch::kFloat64).view({1, 1, 1, 2});
  const auto coords = torch::tensor({0.5, 0.0}, torch::kFloat64).view({1, 1, 1, 2});
  EXPECT_DOUBLE_EQ(bilinear_sample(src, coords).values.item<double>(), 0.5);
}

TEST(Bilinear, RandomCoordinatesMatchLoopOracle) {
  torch::manual_seed(6);
  const auto src = torch::rand({1, 2, 6, 6}, torch::kFloat64);
  const auto coords = torch::rand({1, 10, 10, 2}, torch::kFloat64) * 7.0 - 0.5;
  const auto out = bilinear_sample(src, coords);
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) {
      for (int c = 0; c < 2; ++c) {
        bool inb = false;
        const double expected = shades::testing::bilinear_pixel(src[0], c, coords[0][i][j][0].item<double>(),
                                                                coords[0][i][j][1].item<double>(), inb);
        EXPECT_NEAR(out.values[0][c][i][j].item<double>(), expected, 1e-6);
        EXPECT_EQ(out.inbounds[0][0][i][j].item<double>(), inb ? 1.0 : 0.0);
      }
    }
  }
}

TEST(Bilinear, NonFiniteCoordinatesGiveZero) {
  const auto src = torch::ones({1, 1, 3, 3}, torch::kFloat64);
  const auto coords = torch::tensor({std::nan(""), 1.0, 1.0, std::numeric_limits<double>::infinity()}, torch::kFloat64).view({1, 1, 2, 2});
  const auto out = bilinear_sample(src, coords);
  EXPECT_TRUE(out.values.eq(0).all().item<bool>());
  EXPECT_TRUE(out.inbounds.eq(0).all().item<bool>());
}

TEST(Warp, IdentityPoseReproducesSource) {
  torch::manual_seed(7);
  const auto cam = camera(10);
  const auto src = torch::rand({2, 3, 10, 10}, torch::kFloat64) * 0.9 + 0.05;
  const auto depth = torch::rand({2, 1, 10, 10}, torch::kFloat64) + 1.0;
  const auto out = warp(src, depth, PoseSE3::identity(2), cam);
  EXPECT_LT(max_abs_diff(out.image, src), 1e-5);
  EXPECT_TRUE(out.valid.eq(1).all().item<bool>());
}

TEST(Warp, EverythingOutOfFrameIsInvalid) {
  const auto cam = camera(8);
  const auto src = torch::full({1, 3, 8, 8}, 0.5, torch::kFloat64);
  const auto depth = torch::full({1, 1, 8, 8}, 2.0, torch::kFloat64);
  const auto out = warp(src, depth, make_pose({0, 0, 0}, {50.0, 0, 0}), cam);
  EXPECT_TRUE(out.valid.eq(0).all().item<bool>());
  EXPECT_TRUE(out.image.eq(0).all().item<bool>());
}

TEST(Warp, ZeroSourcePixelsAreInvalidButInBounds) {
  const auto cam = camera(6);
  auto src = torch::full({1, 3, 6, 6}, 0.5, torch::kFloat64);
  // A 3x3 hole: its center samples only zero pixels even with sub-ulp coordinate noise.
  src.index_put_({0, torch::indexing::Slice(), torch::indexing::Slice(1, 4), torch::indexing::Slice(2, 5)}, 0.0);
  const auto out = warp(src, torch::full({1, 1, 6, 6}, 2.0, torch::kFloat64), PoseSE3::identity(1), cam);
  EXPECT_EQ(out.valid[0][0][2][3].item<double>(), 0.0);
  EXPECT_EQ(out.inbounds[0][0][2][3].item<double>(), 1.0);
}

TEST(Warp, PlaneTranslationMatchesAnalyticWarp) {
  const int n = 24;
  const auto cam = camera(n);
  const double d = 2.5, tx = 0.2, ty = -0.1;
  const auto src = textured_image(n, n);
  const auto out = warp(src, torch::full({1, 1, n, n}, d, torch::kFloat64), make_pose({0, 0, 0}, {tx, ty, 0}), cam);
  double total = 0.0;
  int count = 0;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (out.valid[0][0][r][c].item<double>() == 0.0) continue;
      for (int ch = 0; ch < 3; ++ch) {
        const double expected = texture(c + cam.fx * tx / d + 3.0 * ch, r + cam.fy * ty / d);
        total += std::abs(out.image[0][ch][r][c].item<double>() - expected);
        ++count;
      }
    }
  }
  ASSERT_GT(count, n * n);
  EXPECT_LT(total / count, 2e-3);
}

TEST(Warp, InverseRoundTripRecoversInBoundsPixels) {
  const int n = 24;
  const auto cam = camera(n);
  const double d = 3.0;
  const auto depth = torch::full({1, 1, n, n}, d, torch::kFloat64);
  const auto pose = make_pose({0, 0, 0}, {0.15, 0.1, 0});
  const auto src = textured_image(n, n);
  const auto there = warp(src, depth, pose, cam);
  const auto back = warp(there.image, depth, pose.inverse(), cam);
  // Pixels whose second-pass footprint only touches valid first-pass samples.
  const auto chained = resample(there.valid, back) * back.valid;
  const auto mask = (chained > 1.0 - 1e-9).expand_as(src);
  ASSERT_GT(mask.sum().item<int64_t>(), n * n);
  EXPECT_LT((back.image - src).abs().masked_select(mask).max().item<double>(), 5e-3);
}

TEST(Warp, ValidIsSubsetOfInBoundsForRandomPoses) {
  std::mt19937 rng(9);
  std::normal_distribution<double> g(0.0, 0.3);
  for (int trial = 0; trial < 20; ++trial) {
    torch::manual_seed(100 + trial);
    const auto cam = camera(8);
    auto src = torch::rand({1, 3, 8, 8}, torch::kFloat64);
    src = src * (src > 0.2);
    const auto depth = torch::rand({1, 1, 8, 8}, torch::kFloat64) * 3 + 0.2;
    const auto out = warp(src, depth, make_pose({g(rng), g(rng), g(rng)}, {g(rng), g(rng), g(rng)}), cam);
    EXPECT_TRUE((out.valid <= out.inbounds).all().item<bool>());
    EXPECT_TRUE((out.valid.eq(0) | out.valid.eq(1)).all().item<bool>());
  }
}

TEST(Warp, GradientsMatchFiniteDifferences) {
  torch::manual_seed(8);
  const auto cam = camera(8);
  const auto src = textured_image(8, 8);
  const auto depth = torch::rand({1, 1, 8, 8}, torch::kFloat64) * 0.5 + 2.0;
  const auto pose = make_pose({0.02, -0.03, 0.01}, {0.05, 0.02, 0.01});
  auto by_depth = [&](const torch::Tensor& d) { return warp(src, d, pose, cam).image.mean(); };
  EXPECT_LT(gradient_check(by_depth, depth), 1e-3);
  auto by_pose = [&](const torch::Tensor& p) {
    PoseVector v{p.slice(0, 0, 3).view({1, 3}), p.slice(0, 3, 6).view({1, 3})};
    return warp(src, depth, pose_vec_to_se3(v), cam).image.mean();
  };
  EXPECT_LT(gradient_check(by_pose, torch::tensor({0.02, -0.03, 0.01, 0.05, 0.02, 0.01}, torch::kFloat64)), 1e-3);
}
