#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cfil/data.hpp"

/// Verification metrics, ROC/AUC, cross-fold aggregation and export.
namespace cfil::metrics {

inline constexpr double kDefaultThreshold = 0.5;

struct ConfusionCounts {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::int64_t positives() const { return tp + fn; }
  std::int64_t negatives() const { return tn + fp; }
  std::int64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

/// Predicts positive iff score >= threshold, so a tie counts as positive.
ConfusionCounts confusion(const std::vector<double>& scores, const std::vector<int>& labels,
                          double threshold = kDefaultThreshold);

/// Rates are undefined (nullopt) when their denominator is zero.
std::optional<double> tpr(const ConfusionCounts& c);
std::optional<double> fpr(const ConfusionCounts& c);
/// Percentages.
std::optional<double> accuracy(const ConfusionCounts& c);
/// Mean of the true positive and true negative rates, as a percentage.
std::optional<double> weighted_accuracy(const ConfusionCounts& c);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Thresholds: a sentinel above every score (1, or the next double above 1
/// when some score equals 1), each distinct score in descending order, then 0.
/// Throws UndefinedError unless both classes are present.
std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);
/// Trapezoidal area under the (fpr, tpr) polyline.
double auc(const std::vector<RocPoint>& points);
/// Fraction of correctly ordered positive/negative score pairs, ties counted
/// as one half. Quadratic; used as an oracle.
double mann_whitney_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct EvalReport {
  int fold = 0;
  ConfusionCounts overall;
  std::map<data::Relation, ConfusionCounts> per_relation;  // relations with at least one sample
  std::vector<RocPoint> roc;
  double auc = 0.0;

  std::optional<double> relation_accuracy(data::Relation r) const;
  /// Mean of the per-relation accuracies present.
  std::optional<double> mva() const;
  std::optional<double> wa() const { return weighted_accuracy(overall); }
  std::optional<double> acc() const { return accuracy(overall); }
};

EvalReport evaluate(const std::vector<double>& scores, const std::vector<data::PairSample>& samples, int fold,
                    double threshold = kDefaultThreshold);

struct Summary {
  int folds = 0;
  std::map<data::Relation, double> relation_mean;  // mean over folds of per-relation accuracy (%)
  double mva = 0.0;                                // unweighted mean over relations (%)
  std::optional<double> wa;                        // from pooled counts (%)
  ConfusionCounts pooled;
  double mean_auc = 0.0;
};

/// Throws InputError if the reports are empty or cover different relations.
Summary aggregate(const std::vector<EvalReport>& reports);

/// Writes roc.csv, report.csv and roc.svg into `dir`.
void export_report(const EvalReport& report, const std::filesystem::path& dir);
std::vector<RocPoint> read_roc_csv(const std::filesystem::path& path);

/// `metric,name,value` rows in export order; undefined values read "undefined".
std::vector<std::array<std::string, 3>> report_rows(const EvalReport& report);

}  // namespace cfil::metrics
