#include "drscreen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "drscreen/error.hpp"

namespace drscreen::metrics {
namespace {

void require_non_empty(std::span<const LabeledPrediction> pairs, const char* what) {
  if (pairs.empty()) throw DataError(std::string(what) + ": no labelled predictions");
}

double percent(std::size_t num, std::size_t den) {
  return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

Rate percent_or_undefined(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return percent(num, den);
}

nlohmann::json rate_json(const Rate& r) { return r ? nlohmann::json(*r) : nlohmann::json(nullptr); }

Rate rate_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

ConfusionMatrix confusion_matrix(std::span<const LabeledPrediction> pairs) {
  require_non_empty(pairs, "confusion_matrix");
  ConfusionMatrix m{};
  for (const auto& p : pairs) ++m[p.true_grade.index()][p.predicted_grade.index()];
  return m;
}

double overall_accuracy(std::span<const LabeledPrediction> pairs) {
  require_non_empty(pairs, "overall_accuracy");
  const auto hits = std::count_if(pairs.begin(), pairs.end(),
                                  [](const auto& p) { return p.true_grade == p.predicted_grade; });
  return percent(static_cast<std::size_t>(hits), pairs.size());
}

std::array<Rate, Grade::kCount> classwise_accuracy(std::span<const LabeledPrediction> pairs) {
  const auto m = confusion_matrix(pairs);
  std::array<Rate, Grade::kCount> out{};
  for (std::size_t g = 0; g < Grade::kCount; ++g) {
    std::size_t n = 0;
    for (auto c : m[g]) n += c;
    out[g] = percent_or_undefined(m[g][g], n);
  }
  return out;
}

BinaryMetrics binary_metrics(std::span<const LabeledPrediction> pairs) {
  require_non_empty(pairs, "binary_metrics");
  BinaryMetrics b;
  auto& c = b.counts;
  for (const auto& p : pairs) {
    const bool truth = is_positive(p.true_grade);
    const bool pred = is_positive(p.predicted_grade);
    if (truth && pred) ++c.tp;
    else if (truth) ++c.fn;
    else if (pred) ++c.fp;
    else ++c.tn;
  }
  b.binary_accuracy = percent(c.tp + c.tn, pairs.size());
  b.sensitivity = percent_or_undefined(c.tp, c.tp + c.fn);
  b.specificity = percent_or_undefined(c.tn, c.tn + c.fp);
  return b;
}

double within_k_rate(std::span<const LabeledPrediction> pairs, int k) {
  require_non_empty(pairs, "within_k_rate");
  if (k < 0) throw RangeError("within_k_rate: k must be nonnegative");
  const auto hits = std::count_if(pairs.begin(), pairs.end(), [k](const auto& p) {
    return grade_distance(p.true_grade, p.predicted_grade) <= k;
  });
  return percent(static_cast<std::size_t>(hits), pairs.size());
}

std::vector<RocPoint> roc_curve(std::span<const LabeledPrediction> pairs) {
  std::vector<std::pair<double, bool>> scored;
  scored.reserve(pairs.size());
  std::size_t positives = 0;
  for (const auto& p : pairs) {
    if (!(p.dr_score >= 0.0 && p.dr_score <= 1.0)) {
      throw RangeError("dr_score " + std::to_string(p.dr_score) + " is outside [0, 1]");
    }
    const bool pos = is_positive(p.true_grade);
    positives += pos;
    scored.emplace_back(p.dr_score, pos);
  }
  const std::size_t negatives = scored.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw UndefinedCurveError("ROC needs both DR-positive and DR-negative samples");
  }
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<RocPoint> pts{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < scored.size();) {
    const double t = scored[i].first;
    for (; i < scored.size() && scored[i].first == t; ++i) (scored[i].second ? tp : fp)++;
    const RocPoint p{static_cast<double>(fp) / static_cast<double>(negatives),
                     static_cast<double>(tp) / static_cast<double>(positives)};
    if (!(p == pts.back())) pts.push_back(p);
  }
  if (!(pts.back() == RocPoint{1.0, 1.0})) pts.push_back({1.0, 1.0});
  return pts;
}

double auc(std::span<const RocPoint> points) {
  if (points.size() < 2) throw UndefinedCurveError("AUC needs at least two ROC points");
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  }
  return area;
}

EvaluationReport build_report(std::span<const LabeledPrediction> pairs, std::size_t n_patients) {
  require_non_empty(pairs, "build_report");
  EvaluationReport r;
  r.n_images = pairs.size();
  r.n_patients = n_patients;
  r.confusion = confusion_matrix(pairs);
  r.overall_accuracy = overall_accuracy(pairs);
  r.binary = binary_metrics(pairs);
  r.classwise = classwise_accuracy(pairs);
  for (int k = 0; k < Grade::kCount; ++k) r.within_k[k] = within_k_rate(pairs, k);
  try {
    r.roc_points = roc_curve(pairs);
    r.auc = auc(r.roc_points);
  } catch (const UndefinedCurveError&) {
    r.notes.push_back("ROC/AUC undefined: only one binary class is present");
  }
  for (const Grade g : all_grades()) {
    if (!r.classwise[g.index()]) {
      r.notes.push_back(fmt::format("no stage-{} samples: classwise accuracy for {} is undefined",
                                    g.value(), stage_name(g)));
    }
  }
  if (!r.binary.sensitivity) r.notes.push_back("sensitivity undefined: no DR-positive ground truth");
  if (!r.binary.specificity) r.notes.push_back("specificity undefined: no DR-negative ground truth");
  return r;
}

void to_json(nlohmann::json& j, const EvaluationReport& r) {
  nlohmann::json classwise = nlohmann::json::array();
  for (const auto& c : r.classwise) classwise.push_back(rate_json(c));
  nlohmann::json within = nlohmann::json::object();
  for (const auto& [k, v] : r.within_k) within[std::to_string(k)] = v;
  nlohmann::json roc = nlohmann::json::array();
  for (const auto& p : r.roc_points) roc.push_back({p.fpr, p.tpr});
  j = nlohmann::json{
      {"n_images", r.n_images},
      {"n_patients", r.n_patients},
      {"confusion", r.confusion},
      {"overall_accuracy", r.overall_accuracy},
      {"binary_accuracy", r.binary.binary_accuracy},
      {"sensitivity", rate_json(r.binary.sensitivity)},
      {"specificity", rate_json(r.binary.specificity)},
      {"binary_counts",
       {{"tp", r.binary.counts.tp}, {"fp", r.binary.counts.fp}, {"tn", r.binary.counts.tn}, {"fn", r.binary.counts.fn}}},
      {"classwise_accuracy", classwise},
      {"within_k", within},
      {"roc_points", roc},
      {"auc", r.auc ? nlohmann::json(*r.auc) : nlohmann::json(nullptr)},
      {"notes", r.notes},
  };
}

void from_json(const nlohmann::json& j, EvaluationReport& r) {
  try {
    r = EvaluationReport{};
    r.n_images = j.at("n_images").get<std::size_t>();
    r.n_patients = j.at("n_patients").get<std::size_t>();
    r.confusion = j.at("confusion").get<ConfusionMatrix>();
    r.overall_accuracy = j.at("overall_accuracy").get<double>();
    r.binary.binary_accuracy = j.at("binary_accuracy").get<double>();
    r.binary.sensitivity = rate_from_json(j.at("sensitivity"));
    r.binary.specificity = rate_from_json(j.at("specificity"));
    const auto& bc = j.at("binary_counts");
    r.binary.counts = {bc.at("tp").get<std::size_t>(), bc.at("fp").get<std::size_t>(),
                       bc.at("tn").get<std::size_t>(), bc.at("fn").get<std::size_t>()};
    const auto& cw = j.at("classwise_accuracy");
    if (!cw.is_array() || cw.size() != Grade::kCount) throw FormatError("classwise_accuracy needs 5 entries");
    for (std::size_t g = 0; g < Grade::kCount; ++g) r.classwise[g] = rate_from_json(cw[g]);
    for (const auto& [k, v] : j.at("within_k").items()) r.within_k[std::stoi(k)] = v.get<double>();
    for (const auto& p : j.at("roc_points")) r.roc_points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    if (!j.at("auc").is_null()) r.auc = j.at("auc").get<double>();
    r.notes = j.value("notes", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed evaluation report: ") + e.what());
  }
}

std::string format_rate(const Rate& rate) { return rate ? fmt::format("{:.2f}", *rate) : "undefined"; }

std::string classwise_csv(const EvaluationReport& r) {
  std::string out = "grade,stage,n,accuracy\n";
  for (const Grade g : all_grades()) {
    std::size_t n = 0;
    for (auto c : r.confusion[g.index()]) n += c;
    const auto& acc = r.classwise[g.index()];
    out += fmt::format("{},{},{},{}\n", g.value(), stage_name(g), n, acc ? fmt::format("{:.17g}", *acc) : "");
  }
  return out;
}

std::string roc_csv(const EvaluationReport& r) {
  std::string out = "fpr,tpr\n";
  for (const auto& p : r.roc_points) out += fmt::format("{:.17g},{:.17g}\n", p.fpr, p.tpr);
  return out;
}

std::string render_text(const EvaluationReport& r, const std::string& dataset_name) {
  std::ostringstream os;
  const auto row = [&os](std::string_view label, const std::string& value) {
    os << fmt::format("{:<28}{:>14}\n", label, value);
  };
  row("Metric", dataset_name);
  os << std::string(42, '-') << '\n';
  row("Number of images", std::to_string(r.n_images));
  row("Number of patients", std::to_string(r.n_patients));
  row("Overall accuracy (%)", format_rate(r.overall_accuracy));
  row("Binary accuracy (%)", format_rate(r.binary.binary_accuracy));
  row("Sensitivity (%)", format_rate(r.binary.sensitivity));
  row("Specificity (%)", format_rate(r.binary.specificity));
  for (const auto& [k, v] : r.within_k) {
    if (k == 1) row("Within one grade (%)", format_rate(v));
  }
  row("AUC", r.auc ? fmt::format("{:.4f}", *r.auc) : "undefined");
  os << "\nClasswise accuracy (%)\n";
  for (const Grade g : all_grades()) {
    os << fmt::format("  {} {:<30}{:>10}\n", g.value(), stage_name(g), format_rate(r.classwise[g.index()]));
  }
  os << "\nConfusion matrix (rows: specialist grade, columns: predicted)\n     ";
  for (int p = 0; p < Grade::kCount; ++p) os << fmt::format("{:>6}", p);
  os << '\n';
  for (int t = 0; t < Grade::kCount; ++t) {
    os << fmt::format("  {}  ", t);
    for (int p = 0; p < Grade::kCount; ++p) os << fmt::format("{:>6}", r.confusion[t][p]);
    os << '\n';
  }
  if (!r.notes.empty()) {
    os << "\nNotes\n";
    for (const auto& n : r.notes) os << "  - " << n << '\n';
  }
  return os.str();
}

}  // namespace drscreen::metrics
