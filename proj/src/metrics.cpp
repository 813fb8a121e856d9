#include "faa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace faa {

namespace {

void require_records(std::span<const EvalRecord> records, const char* what) {
  if (records.empty()) throw std::invalid_argument(std::string(what) + ": no records");
}

struct ClassCounts {
  std::vector<std::size_t> tp, fp, fn, support;
};

ClassCounts count_classes(std::span<const EvalRecord> records) {
  const std::size_t k = num_classes(records);
  ClassCounts c{std::vector<std::size_t>(k), std::vector<std::size_t>(k),
                std::vector<std::size_t>(k), std::vector<std::size_t>(k)};
  for (const auto& r : records) {
    c.support.at(r.true_label) += 1;
    if (r.predicted_label == r.true_label) {
      c.tp[r.true_label] += 1;
    } else {
      c.fp.at(r.predicted_label) += 1;
      c.fn[r.true_label] += 1;
    }
  }
  return c;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.precision(17);
  return out;
}

// Upper envelope of a piecewise-linear ROC polyline at x.
double interpolate_tpr(const RocCurve& curve, double x) {
  const auto& f = curve.fpr;
  const auto& t = curve.tpr;
  double best = 0.0;
  for (std::size_t i = 0; i + 1 < f.size(); ++i) {
    if (f[i] <= x && x <= f[i + 1]) {
      const double span = f[i + 1] - f[i];
      const double y = span > 0.0 ? t[i] + (t[i + 1] - t[i]) * (x - f[i]) / span
                                  : std::max(t[i], t[i + 1]);
      best = std::max(best, y);
    }
  }
  return best;
}

}  // namespace

EvalRecord make_record(std::uint32_t true_label, std::vector<double> probabilities) {
  if (probabilities.empty()) throw std::invalid_argument("make_record: empty probabilities");
  const auto best = std::max_element(probabilities.begin(), probabilities.end());
  const auto predicted = static_cast<std::uint32_t>(best - probabilities.begin());
  return EvalRecord{true_label, predicted, std::move(probabilities)};
}

std::size_t num_classes(std::span<const EvalRecord> records) {
  require_records(records, "num_classes");
  const std::size_t k = records.front().probabilities.size();
  for (const auto& r : records) {
    if (r.probabilities.size() != k) {
      throw std::invalid_argument("records disagree on the number of classes");
    }
    if (r.true_label >= k || r.predicted_label >= k) {
      throw std::invalid_argument("record label out of range");
    }
  }
  return k;
}

double accuracy(std::span<const EvalRecord> records) {
  require_records(records, "accuracy");
  std::size_t correct = 0;
  for (const auto& r : records) correct += r.predicted_label == r.true_label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

double balanced_accuracy(std::span<const EvalRecord> records) {
  const auto c = count_classes(records);
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < c.support.size(); ++k) {
    if (c.support[k] == 0) continue;
    total += static_cast<double>(c.tp[k]) / static_cast<double>(c.support[k]);
    ++present;
  }
  return total / static_cast<double>(present);
}

double macro_f1(std::span<const EvalRecord> records) {
  const auto c = count_classes(records);
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < c.support.size(); ++k) {
    if (c.support[k] == 0) continue;
    ++present;
    // F1 = 2TP / (2TP + FP + FN)
    const std::size_t denom = 2 * c.tp[k] + c.fp[k] + c.fn[k];
    if (denom > 0) total += 2.0 * static_cast<double>(c.tp[k]) / static_cast<double>(denom);
  }
  return total / static_cast<double>(present);
}

RocResult roc_auc_macro(std::span<const EvalRecord> records, std::size_t grid_points) {
  const std::size_t k = num_classes(records);
  const std::size_t n = records.size();
  RocResult result;
  result.class_auc.assign(k, std::numeric_limits<double>::quiet_NaN());
  result.class_curves.resize(k);

  std::vector<std::size_t> order(n);
  std::vector<double> ranks(n);
  double auc_sum = 0.0;
  std::size_t valid = 0;
  for (std::size_t cls = 0; cls < k; ++cls) {
    std::size_t n_pos = 0;
    for (const auto& r : records) n_pos += r.true_label == cls ? 1 : 0;
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) continue;

    auto score = [&](std::size_t i) { return records[i].probabilities[cls]; };
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return score(a) < score(b); });
    // midranks (1-based)
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && score(order[j + 1]) == score(order[i])) ++j;
      const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t m = i; m <= j; ++m) ranks[order[m]] = mid;
      i = j + 1;
    }
    double pos_rank_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (records[i].true_label == cls) pos_rank_sum += ranks[i];
    }
    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    const double auc = (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
    result.class_auc[cls] = auc;
    auc_sum += auc;
    ++valid;

    // curve: walk thresholds from high to low, one point per distinct score
    RocCurve& curve = result.class_curves[cls];
    curve.fpr.push_back(0.0);
    curve.tpr.push_back(0.0);
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t i = n; i > 0;) {
      std::size_t j = i;
      const double s = score(order[i - 1]);
      while (j > 0 && score(order[j - 1]) == s) {
        if (records[order[j - 1]].true_label == cls) ++tp; else ++fp;
        --j;
      }
      curve.fpr.push_back(static_cast<double>(fp) / nn);
      curve.tpr.push_back(static_cast<double>(tp) / np);
      i = j;
    }
  }
  if (valid == 0) {
    result.macro_auc = std::numeric_limits<double>::quiet_NaN();
    return result;
  }
  result.macro_auc = auc_sum / static_cast<double>(valid);

  const std::size_t g = std::max<std::size_t>(grid_points, 2);
  for (std::size_t i = 0; i < g; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(g - 1);
    double sum = 0.0;
    for (std::size_t cls = 0; cls < k; ++cls) {
      if (!std::isnan(result.class_auc[cls])) sum += interpolate_tpr(result.class_curves[cls], x);
    }
    result.macro_curve.fpr.push_back(x);
    result.macro_curve.tpr.push_back(sum / static_cast<double>(valid));
  }
  return result;
}

CalibrationResult expected_calibration_error(std::span<const EvalRecord> records,
                                             std::size_t n_bins) {
  require_records(records, "ece");
  if (n_bins < 1) throw std::invalid_argument("ece: n_bins must be >= 1");
  const double nb = static_cast<double>(n_bins);
  CalibrationResult result;
  result.bins.resize(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<double> correct(n_bins, 0.0);
  for (std::size_t b = 0; b < n_bins; ++b) {
    result.bins[b].lower = static_cast<double>(b) / nb;
    result.bins[b].upper = static_cast<double>(b + 1) / nb;
  }
  for (const auto& r : records) {
    const double conf = r.confidence();
    auto b = static_cast<std::size_t>(std::clamp(std::ceil(conf * nb) - 1.0, 0.0, nb - 1.0));
    // settle against the stored edges so rounding in conf * nb cannot misplace
    while (b > 0 && conf <= result.bins[b].lower) --b;
    while (b + 1 < n_bins && conf > result.bins[b].upper) ++b;
    result.bins[b].count += 1;
    conf_sum[b] += conf;
    correct[b] += r.predicted_label == r.true_label ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(records.size());
  for (std::size_t b = 0; b < n_bins; ++b) {
    auto& bin = result.bins[b];
    if (bin.count == 0) continue;
    const double c = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / c;
    bin.accuracy = correct[b] / c;
    result.ece += (c / n) * std::abs(bin.accuracy - bin.mean_confidence);
  }
  return result;
}

std::vector<double> default_dca_thresholds() {
  std::vector<double> t(100);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i) / 100.0;
  return t;
}

DecisionCurve dca_net_benefit(std::span<const EvalRecord> records,
                              std::span<const double> thresholds) {
  const std::size_t k = num_classes(records);
  for (double t : thresholds) {
    if (!(t >= 0.0 && t < 1.0)) throw std::invalid_argument("dca: thresholds must lie in [0, 1)");
  }
  const double n = static_cast<double>(records.size());
  DecisionCurve curve;
  curve.thresholds.assign(thresholds.begin(), thresholds.end());
  curve.net_benefit.assign(thresholds.size(), 0.0);
  curve.class_curve.assign(k, std::vector<double>(thresholds.size(), 0.0));
  curve.prevalence.assign(k, 0.0);
  for (const auto& r : records) curve.prevalence[r.true_label] += 1.0;
  for (double& p : curve.prevalence) p /= n;

  for (std::size_t cls = 0; cls < k; ++cls) {
    for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
      const double t = thresholds[ti];
      std::size_t tp = 0;
      std::size_t fp = 0;
      for (const auto& r : records) {
        if (r.probabilities[cls] >= t) {
          if (r.true_label == cls) ++tp; else ++fp;
        }
      }
      const double nb = static_cast<double>(tp) / n - static_cast<double>(fp) / n * (t / (1.0 - t));
      curve.class_curve[cls][ti] = nb;
    }
  }
  for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
    double sum = 0.0;
    for (std::size_t cls = 0; cls < k; ++cls) sum += curve.class_curve[cls][ti];
    curve.net_benefit[ti] = sum / static_cast<double>(k);
  }
  return curve;
}

void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "fpr,tpr\n";
  for (std::size_t i = 0; i < curve.fpr.size(); ++i) out << curve.fpr[i] << ',' << curve.tpr[i] << '\n';
}

void write_reliability_csv(const CalibrationResult& calibration, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "bin_center,confidence,accuracy,count\n";
  for (const auto& b : calibration.bins) {
    out << b.center() << ',' << b.mean_confidence << ',' << b.accuracy << ',' << b.count << '\n';
  }
}

void write_dca_csv(const DecisionCurve& curve, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "threshold,net_benefit\n";
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    out << curve.thresholds[i] << ',' << curve.net_benefit[i] << '\n';
  }
}

}  // namespace faa
