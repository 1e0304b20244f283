#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rccm/mask.hpp"

namespace rccm::metrics {

struct UndefinedMetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inner boundary of a mask: mask pixels with at least one background
// 4-neighbor (image border counts as background).
struct Contour {
  std::vector<std::pair<int64_t, int64_t>> points;  // (y,x) pixel coords, row-major order
  double spacing_mm = 1.0;
};

Contour contour_of(const Mask& mask, double spacing_mm);

// DSC(A,M) = 2|A∩M| / (|A|+|M|) * 100. Error if both masks are empty.
double dice_percent(const Mask& a, const Mask& m);

double area_mm2(const Mask& m, double spacing_mm);
double area_diff_mm2(const Mask& a, const Mask& m, double spacing_mm);

// Surface distances between contour point sets, pixel centers, in mm.
double assd_mm(const Mask& a, const Mask& m, double spacing_mm);
double hausdorff_mm(const Mask& a, const Mask& m, double spacing_mm);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

double f1_score(double precision, double recall);

struct ClassificationScores {
  std::array<std::array<int64_t, 3>, 3> confusion{};  // rows = truth, cols = prediction
  double acc = 0.0;
  double precision_macro = 0.0;
  double recall_macro = 0.0;
  double f1_macro = 0.0;
  double kappa = 0.0;
  bool zero_prediction_warning = false;  // some class never predicted -> precision forced to 0
  // micro-averaged variants (micro precision == recall == acc for single-label)
  double precision_micro = 0.0;
  double f1_micro = 0.0;
};

ClassificationScores confusion_and_scores(const std::vector<int>& truth,
                                          const std::vector<int>& pred);

struct BlandAltman {
  double bias = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// bias = mean(x-y); limits at bias -/+ 1.96 * sample SD of (x-y).
BlandAltman bland_altman(const std::vector<double>& x, const std::vector<double>& y);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample SD, 0 when n < 2
  int64_t n = 0;
};

MeanSd mean_sd(const std::vector<double>& v);

struct SampleEval {
  std::string id;
  double dsc = 0.0;
  double d_pa_mm2 = 0.0;
  std::optional<double> assd_mm;  // unset when the predicted mask is empty
  std::optional<double> hd_mm;
  double pa_alg_mm2 = 0.0;
  double pa_man_mm2 = 0.0;
  int true_class = 0;
  int pred_class = 0;
};

struct MetricsReport {
  int64_t n = 0;
  int64_t excluded_distance_count = 0;
  std::vector<SampleEval> per_sample;
  MeanSd dsc, assd, hd, d_pa;
  std::optional<double> pcc;  // unset on degenerate (zero-variance) inputs
  BlandAltman area_agreement;
  ClassificationScores classification;
};

// Per-sample segmentation metrics + classification scores for one split.
MetricsReport compile_report(std::vector<SampleEval> samples);

// Full-report JSON round-trip (schema of report.json).
std::string report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const std::string& text);

// per_sample.csv content.
std::string per_sample_csv(const MetricsReport& r);

// Evaluates one predicted mask against ground truth.
SampleEval evaluate_sample(const std::string& id, const Mask& predicted, const Mask& truth,
                           double spacing_mm, int true_class, int pred_class);

}  // namespace rccm::metrics
