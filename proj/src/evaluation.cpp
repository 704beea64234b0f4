#include "shades/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "shades/error.hpp"
#include "shades/image_io.hpp"
#include "shades/inference.hpp"

namespace fs = std::filesystem;

namespace shades {

namespace {

torch::Tensor as_map(const torch::Tensor& t, const char* what) {
  if (!t.defined()) throw Error(ErrorKind::InvalidInput, std::string(what) + " is undefined");
  auto m = t.to(torch::kFloat64).contiguous();
  while (m.dim() > 2 && m.size(0) == 1) m = m.squeeze(0);
  if (m.dim() != 2) throw Error(ErrorKind::InvalidInput, std::string(what) + " must be [H,W]");
  return m;
}

std::vector<double> gather(const torch::Tensor& values, const torch::Tensor& valid) {
  auto v = values.masked_select(valid).contiguous();
  return {v.data_ptr<double>(), v.data_ptr<double>() + v.numel()};
}

torch::Tensor valid_mask(const torch::Tensor& valid, const torch::Tensor& like) {
  auto m = as_map(valid, "valid mask");
  if (m.sizes() != like.sizes()) throw Error(ErrorKind::InvalidInput, "mask shape does not match depth");
  return m > 0.5;
}

}  // namespace

double median_of(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorKind::InvalidInput, "median of an empty set");
  const size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

torch::Tensor median_scale(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& valid) {
  auto p = as_map(pred, "prediction");
  auto g = as_map(gt, "ground truth");
  if (p.sizes() != g.sizes()) throw Error(ErrorKind::InvalidInput, "prediction and ground truth shapes differ");
  auto v = valid_mask(valid, p);
  if (!v.any().item<bool>()) throw Error(ErrorKind::InvalidInput, "median_scale: empty valid mask");
  const double med_pred = median_of(gather(p, v));
  if (med_pred == 0.0 || !std::isfinite(med_pred)) {
    throw Error(ErrorKind::DegeneratePrediction, "median prediction is zero or non-finite");
  }
  return p * (median_of(gather(g, v)) / med_pred);
}

MetricRow depth_metrics(const torch::Tensor& pred_scaled, const torch::Tensor& gt, const torch::Tensor& valid) {
  auto p = as_map(pred_scaled, "prediction");
  auto g = as_map(gt, "ground truth");
  if (p.sizes() != g.sizes()) throw Error(ErrorKind::InvalidInput, "prediction and ground truth shapes differ");
  auto v = valid_mask(valid, p);
  const auto pv = gather(p, v);
  const auto gv = gather(g, v);
  if (pv.empty()) throw Error(ErrorKind::InvalidInput, "depth_metrics: empty valid mask");

  const double n = static_cast<double>(pv.size());
  std::vector<double> abs_err(pv.size());
  MetricRow r;
  double sum_sq = 0.0;
  double sum_log_sq = 0.0;
  for (size_t i = 0; i < pv.size(); ++i) {
    if (!(pv[i] > 0.0) || !(gv[i] > 0.0)) throw Error(ErrorKind::InvalidInput, "non-positive depth on a valid pixel");
    const double e = pv[i] - gv[i];
    abs_err[i] = std::abs(e);
    r.mae += abs_err[i];
    sum_sq += e * e;
    const double le = std::log(gv[i]) - std::log(pv[i]);
    sum_log_sq += le * le;
    r.abs_rel += abs_err[i] / gv[i];
    r.sq_rel += e * e / gv[i];
    const double ratio = std::max(gv[i] / pv[i], pv[i] / gv[i]);
    r.delta1 += ratio < 1.25 ? 1.0 : 0.0;
    r.delta2 += ratio < 1.25 * 1.25 ? 1.0 : 0.0;
    r.delta3 += ratio < 1.25 * 1.25 * 1.25 ? 1.0 : 0.0;
  }
  r.mae /= n;
  r.medae = median_of(abs_err);
  r.rmse = std::sqrt(sum_sq / n);
  r.rmse_log = std::sqrt(sum_log_sq / n);
  r.abs_rel /= n;
  r.sq_rel /= n;
  r.delta1 /= n;
  r.delta2 /= n;
  r.delta3 /= n;
  return r;
}

MetricRow average_rows(const std::vector<MetricRow>& rows) {
  MetricRow avg;
  if (rows.empty()) return avg;
  for (const auto& r : rows) {
    avg.mae += r.mae;
    avg.medae += r.medae;
    avg.rmse += r.rmse;
    avg.rmse_log += r.rmse_log;
    avg.abs_rel += r.abs_rel;
    avg.sq_rel += r.sq_rel;
    avg.delta1 += r.delta1;
    avg.delta2 += r.delta2;
    avg.delta3 += r.delta3;
  }
  const double n = static_cast<double>(rows.size());
  for (double* f : {&avg.mae, &avg.medae, &avg.rmse, &avg.rmse_log, &avg.abs_rel, &avg.sq_rel, &avg.delta1, &avg.delta2,
                    &avg.delta3}) {
    *f /= n;
  }
  return avg;
}

SsmConfig SsmConfig::from_key_values(const KeyValueFile& kv) {
  SsmConfig c;
  c.box_margin = kv.get_int("ssm_box_margin", c.box_margin);
  c.tau = kv.get_double("ssm_tau", c.tau);
  c.min_region_area = kv.get_int("ssm_min_region_area", c.min_region_area);
  c.validate();
  return c;
}

void SsmConfig::write(KeyValueFile& kv) const {
  kv.set("ssm_box_margin", std::to_string(box_margin));
  kv.set("ssm_tau", format_number(tau));
  kv.set("ssm_min_region_area", std::to_string(min_region_area));
}

void SsmConfig::validate() const {
  if (box_margin < 1) throw Error(ErrorKind::InvalidConfig, "ssm_box_margin must be >= 1");
  if (!(tau > 0.0)) throw Error(ErrorKind::InvalidConfig, "ssm_tau must be > 0");
  if (min_region_area < 1) throw Error(ErrorKind::InvalidConfig, "ssm_min_region_area must be >= 1");
}

std::optional<SsmResult> ssm(const torch::Tensor& depth, const torch::Tensor& spec_mask, const SsmConfig& config) {
  config.validate();
  auto d = as_map(depth, "depth");
  auto m = valid_mask(spec_mask, d).to(torch::kUInt8).contiguous();
  const int h = static_cast<int>(d.size(0));
  const int w = static_cast<int>(d.size(1));

  cv::Mat mask(h, w, CV_8UC1, m.data_ptr<uint8_t>());
  cv::Mat labels, stats, centroids;
  const int count = cv::connectedComponentsWithStats(mask, labels, stats, centroids, 8, CV_32S);

  const double* dp = d.data_ptr<double>();
  const uint8_t* mp = m.data_ptr<uint8_t>();
  SsmResult result;
  for (int label = 1; label < count; ++label) {
    if (stats.at<int>(label, cv::CC_STAT_AREA) < config.min_region_area) continue;
    const int x0 = stats.at<int>(label, cv::CC_STAT_LEFT);
    const int y0 = stats.at<int>(label, cv::CC_STAT_TOP);
    const int x1 = x0 + stats.at<int>(label, cv::CC_STAT_WIDTH);
    const int y1 = y0 + stats.at<int>(label, cv::CC_STAT_HEIGHT);
    double spec_sum = 0.0;
    int spec_n = 0;
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        if (labels.at<int>(y, x) == label) {
          spec_sum += dp[y * w + x];
          ++spec_n;
        }
      }
    }
    double surr_sum = 0.0;
    int surr_n = 0;
    for (int y = std::max(0, y0 - config.box_margin); y < std::min(h, y1 + config.box_margin); ++y) {
      for (int x = std::max(0, x0 - config.box_margin); x < std::min(w, x1 + config.box_margin); ++x) {
        if (mp[y * w + x] == 0) {
          surr_sum += dp[y * w + x];
          ++surr_n;
        }
      }
    }
    if (surr_n == 0) continue;
    const double mean_spec = spec_sum / spec_n;
    const double mean_surr = surr_sum / surr_n;
    ++result.total_regions;
    if (std::abs(mean_spec - mean_surr) / mean_surr < config.tau) ++result.smooth_regions;
  }
  if (result.total_regions == 0) return std::nullopt;
  result.percentage = 100.0 * result.smooth_regions / result.total_regions;
  return result;
}

double load_gt_scale(const fs::path& gt_dir) {
  const auto path = gt_dir / "scale.json";
  if (!fs::exists(path)) return 1.0;
  std::ifstream in(path);
  try {
    nlohmann::json j;
    in >> j;
    const double s = j.at("scale").get<double>();
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorKind::InvalidInput, "scale.json: scale must be positive");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidInput, "bad " + path.string() + ": " + e.what());
  }
}

std::pair<torch::Tensor, torch::Tensor> load_ground_truth(const fs::path& png_path, double scale) {
  auto counts = load_png16_raw(png_path);
  return {counts * scale, (counts > 0).to(torch::kFloat64)};
}

std::string EvaluationReport::to_csv() const {
  std::string out = "image,mae,medae,rmse,rmse_log,abs_rel,sq_rel,delta1,delta2,delta3,ssm\n";
  auto fmt = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  auto row = [&](const std::string& name, const std::optional<MetricRow>& m, const std::optional<double>& s) {
    std::string line = name;
    if (m) {
      for (double v : {m->mae, m->medae, m->rmse, m->rmse_log, m->abs_rel, m->sq_rel, m->delta1, m->delta2, m->delta3}) {
        line += "," + fmt(v);
      }
    } else {
      for (int i = 0; i < 9; ++i) line += ",NA";
    }
    line += "," + (s ? fmt(*s) : std::string("NA"));
    return line + "\n";
  };
  for (const auto& img : images) {
    out += row(img.name, img.metrics, img.ssm ? std::optional<double>(img.ssm->percentage) : std::nullopt);
  }
  out += row("AVERAGE", average_metrics, average_ssm);
  return out;
}

EvaluationReport evaluate_directory(const fs::path& pred_dir, const std::optional<fs::path>& gt_dir,
                                    const std::optional<fs::path>& mask_dir, const SsmConfig& ssm_config) {
  if (!gt_dir && !mask_dir) throw Error(ErrorKind::InvalidInput, "evaluation needs ground truth or specular masks");
  const fs::path depth_dir = fs::is_directory(pred_dir / "depth") ? pred_dir / "depth" : pred_dir;
  if (!fs::is_directory(depth_dir)) throw Error(ErrorKind::Io, "prediction directory not found: " + pred_dir.string());
  const double gt_scale = gt_dir ? load_gt_scale(*gt_dir) : 1.0;

  EvaluationReport report;
  std::vector<MetricRow> rows;
  std::vector<double> ssm_values;
  for (const auto& png : list_image_files(depth_dir)) {
    ImageEvaluation img;
    img.name = png.stem().string();
    auto pred = read_depth_png(png);
    if (gt_dir) {
      const auto gt_path = *gt_dir / png.filename();
      if (!fs::exists(gt_path)) throw Error(ErrorKind::MissingArtifacts, "no ground truth for " + img.name);
      auto [gt, valid] = load_ground_truth(gt_path, gt_scale);
      if (gt.sizes() != pred.sizes()) throw Error(ErrorKind::InvalidInput, "ground truth size differs for " + img.name);
      img.metrics = depth_metrics(median_scale(pred, gt, valid), gt, valid);
      rows.push_back(*img.metrics);
    }
    if (mask_dir) {
      const auto mask_path = *mask_dir / png.filename();
      if (!fs::exists(mask_path)) throw Error(ErrorKind::MissingArtifacts, "no specular mask for " + img.name);
      auto mask = load_image(mask_path)[0];
      if (mask.sizes() != pred.sizes()) throw Error(ErrorKind::InvalidInput, "mask size differs for " + img.name);
      img.ssm = ssm(pred, mask, ssm_config);
      if (img.ssm) ssm_values.push_back(img.ssm->percentage);
    }
    report.images.push_back(std::move(img));
  }
  if (report.images.empty()) throw Error(ErrorKind::MissingArtifacts, "no depth maps in " + depth_dir.string());
  if (!rows.empty()) report.average_metrics = average_rows(rows);
  if (!ssm_values.empty()) {
    double s = 0.0;
    for (double v : ssm_values) s += v;
    report.average_ssm = s / static_cast<double>(ssm_values.size());
  }
  return report;
}

}  // namespace shades
