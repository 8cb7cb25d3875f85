#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace coughnet {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  ///< score >= threshold is called positive; +inf at the origin

  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

using RocCurve = std::vector<RocPoint>;

/// ROC points at each distinct score, descending; tied scores cross the
/// threshold together. Starts at (0, 0) with threshold +inf and ends at
/// (1, 1). Labels are 0/1. Throws single_class.
RocCurve roc_curve(std::span<const double> scores, std::span<const double> labels);

/// Trapezoidal area under a curve.
double roc_area(const RocCurve& curve);

/// Mann-Whitney AUC: (wins + 0.5 ties) over all positive/negative pairs,
/// computed from mid-ranks. Throws single_class.
double auc(std::span<const double> scores, std::span<const double> labels);

/// Fraction of samples where (score >= threshold) matches the label.
double accuracy(std::span<const double> scores, std::span<const double> labels,
                double threshold = 0.5);

double student_t_cdf(double t, double df);
/// Inverse of student_t_cdf for p in (0, 1).
double student_t_quantile(double p, double df);

struct ConfidenceInterval {
  double mean = 0.0;
  double low = 0.0;
  double high = 0.0;
  double half_width = 0.0;
  /// Zero sample variance: the interval collapses to the mean.
  bool degenerate = false;
};

/// mean +- t(0.975, n-1) * s / sqrt(n). Needs n >= 2.
ConfidenceInterval ci95(std::span<const double> values);

enum class Alternative { greater, two_sided };

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;
};

/// One-sample t-test of the mean AUC against `null_value`. The default
/// alternative is "greater" (the model ranks better than chance). Throws
/// zero_variance.
TTestResult t_test_auc(std::span<const double> aucs, double null_value = 0.5,
                       Alternative alternative = Alternative::greater);

/// Scores and 0/1 labels of one evaluated run.
struct RunScores {
  std::vector<double> scores;
  std::vector<double> labels;
};

struct EvalReport {
  std::vector<double> run_auc;
  std::vector<double> run_accuracy;
  double mean_auc = 0.0;
  double mean_accuracy = 0.0;
  ConfidenceInterval ci;
  std::optional<double> p_value;  ///< absent when the AUCs have zero variance
  std::optional<double> t_statistic;
  std::string alternative = "greater";
  std::vector<RocCurve> curves;

  nlohmann::json to_json() const;
};

/// Per-run AUC, accuracy at 0.5 and ROC, then the across-run mean, CI and
/// t-test. A single run gets no CI/t-test (reported as degenerate).
EvalReport build_eval_report(std::span<const RunScores> runs,
                             Alternative alternative = Alternative::greater);

struct NamedCurve {
  std::string name;
  RocCurve curve;
};

/// Writes a standalone SVG (unit square, diagonal reference, one polyline
/// per curve, legend with AUCs) to `svg_path`, and the points as
/// `curve,fpr,tpr,threshold` CSV to `csv_path`. Throws io_failure.
void emit_roc_svg(std::span<const NamedCurve> curves, const std::filesystem::path& svg_path,
                  const std::filesystem::path& csv_path);

std::string roc_svg(std::span<const NamedCurve> curves);
std::string roc_csv(std::span<const NamedCurve> curves);
std::vector<NamedCurve> parse_roc_csv(std::string_view text);

}  // namespace coughnet
