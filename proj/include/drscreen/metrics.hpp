#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "drscreen/grading.hpp"

namespace drscreen::metrics {

struct LabeledPrediction {
  Grade true_grade{0};
  Grade predicted_grade{0};
  double dr_score = 0.0;  // in [0, 1]
};

/// [true][predicted]
using ConfusionMatrix = std::array<std::array<std::size_t, Grade::kCount>, Grade::kCount>;

/// Rates are percentages in [0, 100], unrounded. nullopt means the
/// denominator was zero.
using Rate = std::optional<double>;

struct BinaryCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  friend bool operator==(const BinaryCounts&, const BinaryCounts&) = default;
};

struct BinaryMetrics {
  BinaryCounts counts;
  double binary_accuracy = 0.0;
  Rate sensitivity;
  Rate specificity;
  friend bool operator==(const BinaryMetrics&, const BinaryMetrics&) = default;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

// All of these throw DataError on empty input.
ConfusionMatrix confusion_matrix(std::span<const LabeledPrediction> pairs);
double overall_accuracy(std::span<const LabeledPrediction> pairs);
std::array<Rate, Grade::kCount> classwise_accuracy(std::span<const LabeledPrediction> pairs);
BinaryMetrics binary_metrics(std::span<const LabeledPrediction> pairs);
double within_k_rate(std::span<const LabeledPrediction> pairs, int k);

/// Threshold sweep over distinct dr_scores (positive when score >= t), plus
/// (0,0) and (1,1). Throws UndefinedCurveError unless both binary classes
/// are present, RangeError for a score outside [0,1].
std::vector<RocPoint> roc_curve(std::span<const LabeledPrediction> pairs);

/// Trapezoidal area. Throws UndefinedCurveError on fewer than two points.
double auc(std::span<const RocPoint> points);

struct EvaluationReport {
  std::size_t n_images = 0;
  std::size_t n_patients = 0;
  ConfusionMatrix confusion{};
  double overall_accuracy = 0.0;
  BinaryMetrics binary;
  std::array<Rate, Grade::kCount> classwise{};
  std::map<int, double> within_k;  // k = 0..4
  std::vector<RocPoint> roc_points;  // empty when the curve is undefined
  std::optional<double> auc;
  std::vector<std::string> notes;

  friend bool operator==(const EvaluationReport&, const EvaluationReport&) = default;
};

EvaluationReport build_report(std::span<const LabeledPrediction> pairs, std::size_t n_patients);

/// Undefined values serialize as null.
void to_json(nlohmann::json& j, const EvaluationReport& r);
/// Throws FormatError on a malformed document.
void from_json(const nlohmann::json& j, EvaluationReport& r);

/// Plot data: "grade,stage,n,accuracy" (accuracy empty when undefined).
std::string classwise_csv(const EvaluationReport& r);
/// Plot data: "fpr,tpr".
std::string roc_csv(const EvaluationReport& r);

/// Human-readable summary in the clinical-results table layout, 2 d.p.
std::string render_text(const EvaluationReport& r, const std::string& dataset_name = "validation");

/// "93.02", or "undefined".
std::string format_rate(const Rate& rate);

}  // namespace drscreen::metrics
