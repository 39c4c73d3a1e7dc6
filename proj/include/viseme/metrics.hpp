// Classification metrics over decoder logits: top-k accuracy, macro F1,
// macro one-vs-rest AUC, and confusion counts, plus renderers that lay the
// per-modality/per-window results out as a fixed grid in text, JSON and CSV.
#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "viseme/types.hpp"

namespace viseme::eval {

// Percentage of trials whose label sits among the k largest logits. Equal
// logits rank the lower class id first (the decoder's tie rule).
double topk_accuracy(const MatF& logits, const std::vector<int>& labels, int k);

// Rows are true labels, columns predictions; row sums equal class support.
Eigen::MatrixXi confusion_matrix(const std::vector<int>& preds, const std::vector<int>& labels,
                                 int n_classes);

struct F1Result {
  double macro = 0.0;  // mean over present classes, 0..1
  VecD precision, recall, f1;      // per class, 0 where undefined
  std::vector<int> support;        // true-label count per class
  std::vector<bool> present;       // class has support or predictions
};

// Macro F1 averages only classes that occur in labels or predictions;
// absent classes keep F1 = 0 and are flagged via `present`.
F1Result macro_f1(const std::vector<int>& preds, const std::vector<int>& labels, int n_classes);

// Macro one-vs-rest ROC AUC x100, using class logit as the score. Ties count
// half. Classes lacking positives or negatives are skipped.
double macro_ovr_auc(const MatD& scores, const std::vector<int>& labels);

struct MetricsReport {
  std::string modality;  // "EEG_EMG" or "EEG_ONLY"
  double window_ms = 0.0;
  Index n_trials = 0;
  double top1_pct = 0.0;
  double top3_pct = 0.0;
  double f1_macro = 0.0;  // 0..1
  double auc_pct = 0.0;
  F1Result per_class;
  Eigen::MatrixXi confusion;
};

MetricsReport evaluate(const MatF& logits, const std::vector<int>& labels,
                       const std::string& modality, double window_ms, int n_classes = 15);

// Table-1-shaped grid: one row per (modality, window), EEG+EMG block first,
// windows ascending; columns Top-1, Top-3, F1 (x100), AUC.
std::string render_table(std::vector<MetricsReport> reports);
nlohmann::ordered_json report_json(std::vector<MetricsReport> reports);
std::string report_csv(std::vector<MetricsReport> reports);

}  // namespace viseme::eval
