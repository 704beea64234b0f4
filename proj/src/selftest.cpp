#include "shades/selftest.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "shades/error.hpp"
#include "shades/evaluation.hpp"
#include "shades/inference.hpp"
#include "shades/losses.hpp"
#include "shades/networks.hpp"
#include "shades/specular_prior.hpp"
#include "shades/view_synthesis.hpp"

namespace shades {

namespace {

using Check = std::pair<std::string, std::function<bool()>>;

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

torch::Tensor dbl(std::vector<double> v, std::vector<int64_t> shape) {
  return torch::tensor(v, torch::kFloat64).reshape(shape);
}

std::vector<Check> checks() {
  std::vector<Check> list;

  list.push_back({"ingest.crop_resize_identity", [] {
                    auto img = torch::rand({3, 8, 8});
                    return torch::equal(crop_resize(img, 8), img);
                  }});

  list.push_back({"specular_prior.planted_patch", [] {
                    Frame f{torch::full({3, 64, 64}, 0.3f), "s", 0};
                    f.pixels.index_put_({torch::indexing::Slice(), torch::indexing::Slice(30, 35),
                                         torch::indexing::Slice(30, 35)},
                                        1.0f);
                    SpecularConfig cfg;
                    cfg.dilation_radius = 0;
                    auto m = segment_specular(f, cfg).mask;
                    return m.sum().item<double>() == 25.0 && m[32][32].item<float>() == 1.0f;
                  }});

  list.push_back({"specular_prior.inpaint_line", [] {
                    Frame f{torch::tensor({0.2f, 0.f, 0.f, 0.f, 0.6f}).reshape({1, 1, 5}).repeat({3, 1, 1}), "s", 0};
                    SpecularMask m{torch::tensor({0.f, 1.f, 1.f, 1.f, 0.f}).reshape({1, 5})};
                    auto out = inpaint(f, m).pixels[0][0];
                    return near(out[1].item<double>(), 0.3, 1e-3) && near(out[2].item<double>(), 0.4, 1e-3) &&
                           near(out[3].item<double>(), 0.5, 1e-3);
                  }});

  list.push_back({"view_synthesis.identity_warp", [] {
                    auto src = torch::rand({1, 3, 6, 6}, torch::kFloat64) + 0.1;
                    auto depth = torch::full({1, 1, 6, 6}, 2.0, torch::kFloat64);
                    CameraModel cam{5.0, 5.0, 2.5, 2.5, {}};
                    auto w = warp(src, depth, PoseSE3::identity(1), cam);
                    return (w.image - src).abs().max().item<double>() < 1e-9 && w.valid.min().item<double>() == 1.0;
                  }});

  list.push_back({"losses.photometric_self_zero", [] {
                    auto x = torch::rand({1, 3, 5, 5}, torch::kFloat64);
                    return photometric_loss(x, x).abs().max().item<double>() == 0.0;
                  }});

  list.push_back({"losses.total_all_ones", [] {
                    auto ones = torch::ones({1, 1, 4, 4}, torch::kFloat64);
                    LossTerms t{torch::ones({}, torch::kFloat64), torch::ones({}, torch::kFloat64), ones, ones,
                                torch::ones({}, torch::kFloat64)};
                    return near(combine_losses(t, AutoMask::combine(ones, ones)).total.item<double>(), 1.61, 1e-12);
                  }});

  list.push_back({"networks.disp_to_depth", [] {
                    auto d = disp_to_depth(torch::full({1}, 0.5, torch::kFloat64), 0.1, 100.0).item<double>();
                    return near(d, 1.0 / (0.01 + 9.99 * 0.5), 1e-12);
                  }});

  list.push_back({"networks.rodrigues_zero", [] {
                    auto r = axis_angle_to_matrix(torch::zeros({1, 3}, torch::kFloat64));
                    return torch::allclose(r[0], torch::eye(3, torch::kFloat64));
                  }});

  list.push_back({"inference.spec_mask_threshold", [] {
                    auto frame = dbl({1.0, 0.75}, {1, 1, 2});
                    auto recon = dbl({0.7, 0.6}, {1, 1, 2});
                    auto m = derive_spec_mask(frame, recon, 50.0);
                    return m[0][0].item<float>() == 1.0f && m[0][1].item<float>() == 0.0f;
                  }});

  list.push_back({"evaluation.median_scale", [] {
                    auto out = median_scale(dbl({1, 2, 3}, {1, 3}), dbl({10, 40, 90}, {1, 3}), torch::ones({1, 3}));
                    return torch::equal(out, dbl({20, 40, 60}, {1, 3}));
                  }});

  list.push_back({"evaluation.metrics_fixture", [] {
                    auto r = depth_metrics(dbl({3, 3}, {1, 2}), dbl({2, 4}, {1, 2}), torch::ones({1, 2}));
                    return near(r.mae, 1.0, 1e-12) && near(r.rmse, 1.0, 1e-12) && near(r.abs_rel, 0.375, 1e-12) &&
                           near(r.sq_rel, 0.375, 1e-12);
                  }});

  list.push_back({"evaluation.ssm_half", [] {
                    auto depth = torch::ones({40, 40}, torch::kFloat64);
                    auto mask = torch::zeros({40, 40}, torch::kFloat64);
                    using torch::indexing::Slice;
                    mask.index_put_({Slice(5, 10), Slice(5, 10)}, 1.0);
                    mask.index_put_({Slice(25, 30), Slice(25, 30)}, 1.0);
                    depth.index_put_({Slice(25, 30), Slice(25, 30)}, 2.0);
                    auto r = ssm(depth, mask);
                    return r && r->percentage == 50.0;
                  }});

  return list;
}

}  // namespace

int run_selftest(std::ostream& out) {
  int failures = 0;
  for (const auto& [name, fn] : checks()) {
    bool ok = false;
    std::string detail;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      detail = std::string(" (") + e.what() + ")";
    }
    out << (ok ? "PASS " : "FAIL ") << name << detail << "\n";
    if (!ok) ++failures;
  }
  return failures;
}

}  // namespace shades
