#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "shades/key_value.hpp"

namespace shades {

struct MetricRow {
  double mae = 0.0;
  double medae = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
};

/// Median with the two middle values averaged for even counts.
double median_of(std::vector<double> values);

/// pred * median(gt[valid]) / median(pred[valid]). All tensors [H,W] (any
/// float dtype); the result is float64.
/// Throws InvalidInput on an empty mask, DegeneratePrediction on a zero median.
torch::Tensor median_scale(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& valid);

/// Nine direct error metrics over the valid pixels of one image.
/// Throws InvalidInput on an empty mask or non-positive depth on valid pixels.
MetricRow depth_metrics(const torch::Tensor& pred_scaled, const torch::Tensor& gt, const torch::Tensor& valid);

/// Arithmetic mean of per-image rows.
MetricRow average_rows(const std::vector<MetricRow>& rows);

struct SsmConfig {
  int box_margin = 10;
  double tau = 0.1;
  int min_region_area = 9;

  static SsmConfig from_key_values(const KeyValueFile& kv);
  void write(KeyValueFile& kv) const;
  void validate() const;
};

struct SsmResult {
  double percentage = 0.0;
  int smooth_regions = 0;
  int total_regions = 0;
};

/// Percentage of specular regions (8-connected, area >= min_region_area) whose
/// mean depth lies within tau (relative) of the mean non-specular depth in the
/// region's bounding box grown by box_margin. Regions whose box holds no
/// non-specular pixel are skipped. nullopt when no region qualifies.
std::optional<SsmResult> ssm(const torch::Tensor& depth, const torch::Tensor& spec_mask, const SsmConfig& config = {});

/// Ground truth: 16-bit PNG counts times the `scale` in `<gt_dir>/scale.json`
/// (1 when absent); zero counts are invalid. Returns {depth, valid} as float64 [H,W].
std::pair<torch::Tensor, torch::Tensor> load_ground_truth(const std::filesystem::path& png_path, double scale);
double load_gt_scale(const std::filesystem::path& gt_dir);

struct ImageEvaluation {
  std::string name;
  std::optional<MetricRow> metrics;
  std::optional<SsmResult> ssm;
};

struct EvaluationReport {
  std::vector<ImageEvaluation> images;
  std::optional<MetricRow> average_metrics;
  std::optional<double> average_ssm;  // mean of per-image SSM over images with regions

  std::string to_csv() const;
};

/// Evaluates every depth map in `pred_dir` (an `infer` output directory or a
/// directory of depth PNGs with JSON sidecars). At least one of `gt_dir` and
/// `mask_dir` must be given.
EvaluationReport evaluate_directory(const std::filesystem::path& pred_dir, const std::optional<std::filesystem::path>& gt_dir,
                                    const std::optional<std::filesystem::path>& mask_dir, const SsmConfig& ssm_config = {});

}  // namespace shades
