#pragma once

// Classification metrics over per-sample probability vectors: accuracy,
// balanced accuracy, macro-F1, one-vs-rest ROC-AUC, ECE with reliability
// bins, and decision-curve net benefit.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace faa {

struct EvalRecord {
  std::uint32_t true_label = 0;
  std::uint32_t predicted_label = 0;
  std::vector<double> probabilities;

  double confidence() const { return probabilities.at(predicted_label); }
};

// predicted_label = argmax (lowest index on ties).
EvalRecord make_record(std::uint32_t true_label, std::vector<double> probabilities);

std::size_t num_classes(std::span<const EvalRecord> records);

double accuracy(std::span<const EvalRecord> records);
// Mean per-class recall over classes present in the true labels.
double balanced_accuracy(std::span<const EvalRecord> records);
// Mean per-class F1 over classes present in the true labels; F1 is 0 when
// precision + recall has a zero denominator.
double macro_f1(std::span<const EvalRecord> records);

struct RocCurve {
  std::vector<double> fpr;
  std::vector<double> tpr;
};

struct RocResult {
  double macro_auc = 0.0;
  std::vector<double> class_auc;  // NaN for classes lacking positives or negatives
  std::vector<RocCurve> class_curves;
  RocCurve macro_curve;  // class tpr averaged on a shared fpr grid
};

// One-vs-rest with the class probability as score; AUC by the Mann-Whitney
// rank statistic with midranks for ties.
RocResult roc_auc_macro(std::span<const EvalRecord> records, std::size_t grid_points = 101);

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;

  double center() const { return 0.5 * (lower + upper); }
};

struct CalibrationResult {
  double ece = 0.0;
  std::vector<ReliabilityBin> bins;
};

inline constexpr std::size_t kDefaultEceBins = 15;

// Equal-width bins (b/n, (b+1)/n] on max-probability confidence; the first
// bin also takes confidence 0.
CalibrationResult expected_calibration_error(std::span<const EvalRecord> records,
                                             std::size_t n_bins = kDefaultEceBins);

struct DecisionCurve {
  std::vector<double> thresholds;
  std::vector<double> net_benefit;               // averaged over classes
  std::vector<std::vector<double>> class_curve;  // [class][threshold]
  std::vector<double> prevalence;                // per class
};

// 0.00, 0.01, ..., 0.99
std::vector<double> default_dca_thresholds();

// Per class c and threshold t: positive when p_c >= t,
//   NB = TP/n - FP/n * t / (1 - t),
// averaged over all classes. Thresholds must lie in [0, 1).
DecisionCurve dca_net_benefit(std::span<const EvalRecord> records,
                              std::span<const double> thresholds);

void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path);
void write_reliability_csv(const CalibrationResult& calibration, const std::filesystem::path& path);
void write_dca_csv(const DecisionCurve& curve, const std::filesystem::path& path);

}  // namespace faa
