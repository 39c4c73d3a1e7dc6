#include "viseme/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "viseme/errors.hpp"
#include "viseme/train.hpp"

namespace viseme::eval {
namespace {

void check_shapes(Index n_cols, const std::vector<int>& labels, int n_classes) {
  if (static_cast<Index>(labels.size()) != n_cols)
    throw validation_error("metric inputs disagree: " + std::to_string(n_cols) + " trials vs " +
                           std::to_string(labels.size()) + " labels");
  for (int l : labels)
    if (l < 0 || l >= n_classes)
      throw validation_error("label " + std::to_string(l) + " outside class range");
}

std::string display_modality(const std::string& m) {
  if (m == "EEG_EMG") return "EEG+EMG";
  if (m == "EEG_ONLY") return "EEG";
  return m;
}

// EEG+EMG block first, then EEG, then anything else; windows ascending.
void sort_reports(std::vector<MetricsReport>& reports) {
  auto rank = [](const std::string& m) {
    if (m == "EEG_EMG") return 0;
    if (m == "EEG_ONLY") return 1;
    return 2;
  };
  std::stable_sort(reports.begin(), reports.end(),
                   [&](const MetricsReport& a, const MetricsReport& b) {
                     if (rank(a.modality) != rank(b.modality))
                       return rank(a.modality) < rank(b.modality);
                     return a.window_ms < b.window_ms;
                   });
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmtg(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

double topk_accuracy(const MatF& logits, const std::vector<int>& labels, int k) {
  check_shapes(logits.cols(), labels, static_cast<int>(logits.rows()));
  if (k < 1) throw validation_error("top-k needs k >= 1");
  if (logits.cols() == 0) return 0.0;
  Index hits = 0;
  for (Index i = 0; i < logits.cols(); ++i) {
    const auto ks = decode::top_k(logits.col(i), k);
    if (std::find(ks.begin(), ks.end(), labels[static_cast<size_t>(i)]) != ks.end()) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(logits.cols());
}

Eigen::MatrixXi confusion_matrix(const std::vector<int>& preds, const std::vector<int>& labels,
                                 int n_classes) {
  check_shapes(static_cast<Index>(preds.size()), labels, n_classes);
  for (int p : preds)
    if (p < 0 || p >= n_classes)
      throw validation_error("prediction " + std::to_string(p) + " outside class range");
  Eigen::MatrixXi m = Eigen::MatrixXi::Zero(n_classes, n_classes);
  for (size_t i = 0; i < preds.size(); ++i) ++m(labels[i], preds[i]);
  return m;
}

F1Result macro_f1(const std::vector<int>& preds, const std::vector<int>& labels, int n_classes) {
  const Eigen::MatrixXi cm = confusion_matrix(preds, labels, n_classes);
  F1Result r;
  r.precision = VecD::Zero(n_classes);
  r.recall = VecD::Zero(n_classes);
  r.f1 = VecD::Zero(n_classes);
  r.support.assign(static_cast<size_t>(n_classes), 0);
  r.present.assign(static_cast<size_t>(n_classes), false);

  double sum = 0.0;
  int n_present = 0;
  for (int c = 0; c < n_classes; ++c) {
    const double tp = cm(c, c);
    const double sup = cm.row(c).sum();
    const double pred = cm.col(c).sum();
    r.support[static_cast<size_t>(c)] = static_cast<int>(sup);
    r.present[static_cast<size_t>(c)] = sup > 0 || pred > 0;
    r.precision[c] = pred > 0 ? tp / pred : 0.0;
    r.recall[c] = sup > 0 ? tp / sup : 0.0;
    const double pr = r.precision[c] + r.recall[c];
    r.f1[c] = pr > 0 ? 2.0 * r.precision[c] * r.recall[c] / pr : 0.0;
    if (r.present[static_cast<size_t>(c)]) {
      sum += r.f1[c];
      ++n_present;
    }
  }
  r.macro = n_present > 0 ? sum / n_present : 0.0;
  return r;
}

double macro_ovr_auc(const MatD& scores, const std::vector<int>& labels) {
  const int n_classes = static_cast<int>(scores.rows());
  check_shapes(scores.cols(), labels, n_classes);
  const Index n = scores.cols();

  double sum = 0.0;
  int used = 0;
  std::vector<Index> order(static_cast<size_t>(n));
  for (int c = 0; c < n_classes; ++c) {
    Index n_pos = 0;
    for (int l : labels) n_pos += l == c;
    const Index n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) continue;

    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(),
              [&](Index a, Index b) { return scores(c, a) < scores(c, b); });

    // Mann-Whitney rank sum with midranks on ties.
    double rank_pos = 0.0;
    Index i = 0;
    while (i < n) {
      Index j = i;
      while (j < n && scores(c, order[j]) == scores(c, order[i])) ++j;
      const double mid = 0.5 * static_cast<double>(i + j + 1);  // 1-based average rank
      for (Index t = i; t < j; ++t)
        if (labels[static_cast<size_t>(order[t])] == c) rank_pos += mid;
      i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    sum += (rank_pos - np * (np + 1.0) / 2.0) / (np * nn);
    ++used;
  }
  return used > 0 ? 100.0 * sum / used : 0.0;
}

MetricsReport evaluate(const MatF& logits, const std::vector<int>& labels,
                       const std::string& modality, double window_ms, int n_classes) {
  if (logits.rows() != n_classes)
    throw validation_error("logit rows disagree with the class count");
  check_shapes(logits.cols(), labels, n_classes);

  MetricsReport r;
  r.modality = modality;
  r.window_ms = window_ms;
  r.n_trials = logits.cols();
  r.top1_pct = topk_accuracy(logits, labels, 1);
  r.top3_pct = topk_accuracy(logits, labels, 3);

  std::vector<int> preds;
  preds.reserve(static_cast<size_t>(logits.cols()));
  for (Index i = 0; i < logits.cols(); ++i) preds.push_back(decode::top_k(logits.col(i), 1)[0]);
  r.per_class = macro_f1(preds, labels, n_classes);
  r.f1_macro = r.per_class.macro;
  r.auc_pct = macro_ovr_auc(logits.cast<double>(), labels);
  r.confusion = confusion_matrix(preds, labels, n_classes);
  return r;
}

std::string render_table(std::vector<MetricsReport> reports) {
  sort_reports(reports);
  std::string out;
  if (reports.empty()) return out;
  char line[128];
  std::snprintf(line, sizeof line, "%-9s %7s %8s %8s %8s %8s\n", "Modality", "Window", "Top-1",
                "Top-3", "F1", "AUC");
  out += line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-9s %4.0f ms %8s %8s %8s %8s\n",
                  display_modality(r.modality).c_str(), r.window_ms, fmt2(r.top1_pct).c_str(),
                  fmt2(r.top3_pct).c_str(), fmt2(100.0 * r.f1_macro).c_str(),
                  fmt2(r.auc_pct).c_str());
    out += line;
  }
  return out;
}

nlohmann::ordered_json report_json(std::vector<MetricsReport> reports) {
  sort_reports(reports);
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j{{"modality", r.modality},
                             {"window_ms", r.window_ms},
                             {"n_trials", r.n_trials},
                             {"top1_pct", r.top1_pct},
                             {"top3_pct", r.top3_pct},
                             {"f1_macro", r.f1_macro},
                             {"auc_pct", r.auc_pct}};
    nlohmann::ordered_json per = nlohmann::ordered_json::array();
    for (Index c = 0; c < r.per_class.f1.size(); ++c)
      per.push_back({{"class", c},
                     {"precision", r.per_class.precision[c]},
                     {"recall", r.per_class.recall[c]},
                     {"f1", r.per_class.f1[c]},
                     {"support", r.per_class.support[static_cast<size_t>(c)]},
                     {"present", static_cast<bool>(r.per_class.present[static_cast<size_t>(c)])}});
    j["per_class"] = std::move(per);
    nlohmann::ordered_json cm = nlohmann::ordered_json::array();
    for (Index i = 0; i < r.confusion.rows(); ++i) {
      nlohmann::ordered_json row = nlohmann::ordered_json::array();
      for (Index k = 0; k < r.confusion.cols(); ++k) row.push_back(r.confusion(i, k));
      cm.push_back(std::move(row));
    }
    j["confusion"] = std::move(cm);
    arr.push_back(std::move(j));
  }
  return arr;
}

std::string report_csv(std::vector<MetricsReport> reports) {
  sort_reports(reports);
  std::string out = "modality,window_ms,n_trials,top1_pct,top3_pct,f1_pct,auc_pct\n";
  for (const auto& r : reports) {
    out += r.modality + "," + fmtg(r.window_ms) + "," + std::to_string(r.n_trials) + "," +
           fmt2(r.top1_pct) + "," + fmt2(r.top3_pct) + "," + fmt2(100.0 * r.f1_macro) + "," +
           fmt2(r.auc_pct) + "\n";
  }
  return out;
}

}  // namespace viseme::eval
