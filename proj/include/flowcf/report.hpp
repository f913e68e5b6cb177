#pragma once

// Confusion matrix and the precision/recall/F1 classification report.

#include <string>
#include <vector>

#include "flowcf/error.hpp"

namespace flowcf {

struct ClassStats {
  double precision = 0, recall = 0, f1 = 0;
  std::size_t support = 0;
  bool precision_zero_div = false;  // class never predicted
  bool recall_zero_div = false;     // class absent from labels
};

struct ClassificationReport {
  std::vector<ClassStats> per_class;
  double accuracy = 0;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  double weighted_precision = 0, weighted_recall = 0, weighted_f1 = 0;
  std::size_t total_support = 0;
};

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

// entry (i,j): count of true class i predicted as class j.
ConfusionMatrix confusion_matrix(const std::vector<int>& preds,
                                 const std::vector<int>& labels,
                                 std::size_t num_classes);

ClassificationReport report_from_confusion(const ConfusionMatrix& cm);

ClassificationReport classification_report(const std::vector<int>& preds,
                                           const std::vector<int>& labels,
                                           std::size_t num_classes);

// Aligned-column text: one row per class plus Accuracy / Macro Avg /
// Weighted Avg. When `full` is non-null its numbers print in parentheses
// next to the primary report's.
std::string format_report(const ClassificationReport& primary,
                          const std::vector<std::string>& class_names,
                          const ClassificationReport* full = nullptr);

// Machine-readable CSV twin of the text report.
std::string report_csv(const ClassificationReport& report,
                       const std::vector<std::string>& class_names);

std::string confusion_csv(const ConfusionMatrix& cm,
                          const std::vector<std::string>& class_names);

}  // namespace flowcf
