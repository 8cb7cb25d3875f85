#include "coughnet/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/special_functions/beta.hpp>

#include "coughnet/csv.hpp"
#include "coughnet/error.hpp"
#include "coughnet/util.hpp"

namespace coughnet {
namespace {

struct ClassCounts {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

ClassCounts check_inputs(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw Error(Errc::invalid_argument, "scores and labels differ in length");
  }
  ClassCounts counts;
  for (double y : labels) {
    if (y == 1.0) {
      ++counts.positives;
    } else if (y == 0.0) {
      ++counts.negatives;
    } else {
      throw Error(Errc::invalid_argument, "labels must be 0 or 1");
    }
  }
  if (counts.positives == 0 || counts.negatives == 0) {
    throw Error(Errc::single_class, "ROC/AUC need both classes present");
  }
  return counts;
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Identical inputs give exactly 0 even when the rounded mean is off by an ulp.
double sample_stddev(std::span<const double> v, double mean) {
  if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) return 0.0;
  double sq = 0.0;
  for (double x : v) sq += (x - mean) * (x - mean);
  return std::sqrt(sq / static_cast<double>(v.size() - 1));
}

double parse_number(std::string_view text) {
  text = std::string_view(text.data(), text.size());
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(Errc::invalid_argument, "bad number '" + std::string(text) + "' in ROC CSV");
  }
  return v;
}

std::string svg_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace

RocCurve roc_curve(std::span<const double> scores, std::span<const double> labels) {
  const ClassCounts counts = check_inputs(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0;
  std::size_t fp = 0;
  const auto p = static_cast<double>(counts.positives);
  const auto n = static_cast<double>(counts.negatives);
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == threshold; ++i) {
      (labels[order[i]] == 1.0 ? tp : fp) += 1;
    }
    curve.push_back({static_cast<double>(fp) / n, static_cast<double>(tp) / p, threshold});
  }
  return curve;
}

double roc_area(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) * 0.5;
  }
  return area;
}

double auc(std::span<const double> scores, std::span<const double> labels) {
  const ClassCounts counts = check_inputs(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of 1-based mid-ranks of the positives; ties share their average rank.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1.0) rank_sum += mid_rank;
    }
    i = j;
  }
  const auto p = static_cast<double>(counts.positives);
  const auto n = static_cast<double>(counts.negatives);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * n);
}

double accuracy(std::span<const double> scores, std::span<const double> labels, double threshold) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw Error(Errc::invalid_argument, "accuracy needs equal, non-empty score and label lists");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool called = scores[i] >= threshold;
    if (called == (labels[i] == 1.0)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw Error(Errc::invalid_argument, "degrees of freedom must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  // P(|T| > |t|) = I_x(df/2, 1/2) with x = df / (df + t^2).
  const double x = df / (df + t * t);
  const double tail = 0.5 * boost::math::ibeta(df / 2.0, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

double student_t_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) throw Error(Errc::invalid_argument, "quantile level must be in (0, 1)");
  if (!(df > 0.0)) throw Error(Errc::invalid_argument, "degrees of freedom must be positive");
  if (p == 0.5) return 0.0;
  const double tail = p > 0.5 ? 1.0 - p : p;
  const double x = boost::math::ibeta_inv(df / 2.0, 0.5, 2.0 * tail);
  const double t = std::sqrt(df * (1.0 - x) / x);
  return p > 0.5 ? t : -t;
}

ConfidenceInterval ci95(std::span<const double> values) {
  if (values.size() < 2) throw Error(Errc::invalid_argument, "confidence interval needs n >= 2");
  ConfidenceInterval ci;
  ci.mean = mean_of(values);
  const double s = sample_stddev(values, ci.mean);
  if (s == 0.0) {
    ci.low = ci.high = ci.mean;
    ci.degenerate = true;
    return ci;
  }
  const double n = static_cast<double>(values.size());
  ci.half_width = student_t_quantile(0.975, n - 1.0) * s / std::sqrt(n);
  ci.low = ci.mean - ci.half_width;
  ci.high = ci.mean + ci.half_width;
  return ci;
}

TTestResult t_test_auc(std::span<const double> aucs, double null_value, Alternative alternative) {
  if (aucs.size() < 2) throw Error(Errc::invalid_argument, "t-test needs n >= 2");
  const double mean = mean_of(aucs);
  const double s = sample_stddev(aucs, mean);
  if (s == 0.0) throw Error(Errc::zero_variance, "t-test undefined: AUCs have zero variance");
  TTestResult r;
  r.df = static_cast<double>(aucs.size() - 1);
  r.t = (mean - null_value) / (s / std::sqrt(static_cast<double>(aucs.size())));
  if (alternative == Alternative::greater) {
    r.p_value = 1.0 - student_t_cdf(r.t, r.df);
  } else {
    r.p_value = 2.0 * (1.0 - student_t_cdf(std::abs(r.t), r.df));
  }
  r.p_value = std::clamp(r.p_value, std::numeric_limits<double>::min(), 1.0);
  return r;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json curves_json = nlohmann::json::array();
  for (const auto& c : curves) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : c) {
      // JSON has no infinity; the origin's threshold is written as null.
      pts.push_back({p.fpr, p.tpr,
                     std::isfinite(p.threshold) ? nlohmann::json(p.threshold) : nlohmann::json()});
    }
    curves_json.push_back(std::move(pts));
  }
  nlohmann::json j = {
      {"run_auc", run_auc},
      {"run_accuracy", run_accuracy},
      {"mean_auc", mean_auc},
      {"mean_accuracy", mean_accuracy},
      {"ci95", {{"low", ci.low}, {"high", ci.high}, {"half_width", ci.half_width},
                {"degenerate", ci.degenerate}}},
      {"p_value", p_value ? nlohmann::json(*p_value) : nlohmann::json()},
      {"t_statistic", t_statistic ? nlohmann::json(*t_statistic) : nlohmann::json()},
      {"alternative", alternative},
      {"accuracy_threshold", 0.5},
      {"roc_curves", curves_json},
  };
  return j;
}

EvalReport build_eval_report(std::span<const RunScores> runs, Alternative alternative) {
  if (runs.empty()) throw Error(Errc::invalid_argument, "no runs to evaluate");
  EvalReport report;
  report.alternative = alternative == Alternative::greater ? "greater" : "two_sided";
  for (const auto& run : runs) {
    report.curves.push_back(roc_curve(run.scores, run.labels));
    report.run_auc.push_back(auc(run.scores, run.labels));
    report.run_accuracy.push_back(accuracy(run.scores, run.labels));
  }
  report.mean_auc = mean_of(report.run_auc);
  report.mean_accuracy = mean_of(report.run_accuracy);
  if (runs.size() < 2) {
    report.ci = {report.mean_auc, report.mean_auc, report.mean_auc, 0.0, true};
    return report;
  }
  report.ci = ci95(report.run_auc);
  if (!report.ci.degenerate) {
    const TTestResult t = t_test_auc(report.run_auc, 0.5, alternative);
    report.p_value = t.p_value;
    report.t_statistic = t.t;
  }
  return report;
}

std::string roc_csv(std::span<const NamedCurve> curves) {
  std::string out = "curve,fpr,tpr,threshold\n";
  for (const auto& c : curves) {
    for (const auto& p : c.curve) {
      out += csv_escape(c.name) + "," + format_double(p.fpr) + "," + format_double(p.tpr) + "," +
             format_double(p.threshold) + "\n";
    }
  }
  return out;
}

std::vector<NamedCurve> parse_roc_csv(std::string_view text) {
  const CsvTable table = CsvTable::parse(text);
  const std::size_t name_col = table.require_column("curve");
  const std::size_t fpr_col = table.require_column("fpr");
  const std::size_t tpr_col = table.require_column("tpr");
  const std::size_t thr_col = table.require_column("threshold");
  std::vector<NamedCurve> out;
  for (const auto& row : table.rows()) {
    if (out.empty() || out.back().name != row[name_col]) out.push_back({row[name_col], {}});
    out.back().curve.push_back(
        {parse_number(row[fpr_col]), parse_number(row[tpr_col]), parse_number(row[thr_col])});
  }
  return out;
}

std::string roc_svg(std::span<const NamedCurve> curves) {
  static constexpr const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                            "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  constexpr double kLeft = 60, kTop = 20, kSize = 400;
  auto x = [&](double fpr) { return kLeft + fpr * kSize; };
  auto y = [&](double tpr) { return kTop + (1.0 - tpr) * kSize; };

  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"700\" height=\"480\" "
        "viewBox=\"0 0 700 480\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect class=\"axes\" x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kSize
     << "\" height=\"" << kSize << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = i / 4.0;
    os << "<text x=\"" << x(v) << "\" y=\"" << kTop + kSize + 16
       << "\" text-anchor=\"middle\">" << v << "</text>\n";
    os << "<text x=\"" << kLeft - 8 << "\" y=\"" << y(v) + 4 << "\" text-anchor=\"end\">" << v
       << "</text>\n";
  }
  os << "<text x=\"" << kLeft + kSize / 2 << "\" y=\"" << kTop + kSize + 34
     << "\" text-anchor=\"middle\">False positive rate</text>\n";
  os << "<text transform=\"translate(18," << kTop + kSize / 2
     << ") rotate(-90)\" text-anchor=\"middle\">True positive rate</text>\n";
  os << "<line class=\"reference\" x1=\"" << x(0) << "\" y1=\"" << y(0) << "\" x2=\"" << x(1)
     << "\" y2=\"" << y(1) << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";

  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* color = kColors[i % std::size(kColors)];
    os << "<polyline class=\"roc\" fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < curves[i].curve.size(); ++k) {
      const auto& p = curves[i].curve[k];
      os << (k ? " " : "") << x(p.fpr) << "," << y(p.tpr);
    }
    os << "\"/>\n";
  }
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const double ly = kTop + 10 + 20.0 * static_cast<double>(i);
    const char* color = kColors[i % std::size(kColors)];
    std::ostringstream label;
    label.setf(std::ios::fixed);
    label.precision(3);
    label << svg_escape(curves[i].name) << " (AUC " << roc_area(curves[i].curve) << ")";
    os << "<g class=\"legend-entry\"><line x1=\"" << kLeft + kSize + 20 << "\" y1=\"" << ly
       << "\" x2=\"" << kLeft + kSize + 40 << "\" y2=\"" << ly << "\" stroke=\"" << color
       << "\" stroke-width=\"2\"/><text x=\"" << kLeft + kSize + 46 << "\" y=\"" << ly + 4
       << "\">" << label.str() << "</text></g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void emit_roc_svg(std::span<const NamedCurve> curves, const std::filesystem::path& svg_path,
                  const std::filesystem::path& csv_path) {
  if (curves.empty()) throw Error(Errc::invalid_argument, "no ROC curves to plot");
  write_file(svg_path, roc_svg(curves));
  write_file(csv_path, roc_csv(curves));
}

}  // namespace coughnet
