#include "flowcf/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace flowcf {

ConfusionMatrix confusion_matrix(const std::vector<int>& preds,
                                 const std::vector<int>& labels,
                                 std::size_t num_classes) {
  if (preds.size() != labels.size())
    throw ShapeError("confusion_matrix: prediction/label counts differ");
  ConfusionMatrix cm(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int t = labels[i], p = preds[i];
    if (t < 0 || std::size_t(t) >= num_classes || p < 0 ||
        std::size_t(p) >= num_classes)
      throw ValueError("confusion_matrix: class index out of range at sample " +
                       std::to_string(i));
    cm[std::size_t(t)][std::size_t(p)]++;
  }
  return cm;
}

ClassificationReport report_from_confusion(const ConfusionMatrix& cm) {
  const std::size_t k = cm.size();
  ClassificationReport rep;
  rep.per_class.resize(k);

  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      total += cm[i][j];
      if (i == j) correct += cm[i][j];
    }
  if (total == 0) throw ValueError("report: empty confusion matrix");

  for (std::size_t y = 0; y < k; ++y) {
    std::size_t tp = cm[y][y], pred_y = 0, true_y = 0;
    for (std::size_t i = 0; i < k; ++i) {
      pred_y += cm[i][y];
      true_y += cm[y][i];
    }
    ClassStats& s = rep.per_class[y];
    s.support = true_y;
    s.precision_zero_div = pred_y == 0;
    s.recall_zero_div = true_y == 0;
    s.precision = pred_y == 0 ? 0.0 : double(tp) / double(pred_y);
    s.recall = true_y == 0 ? 0.0 : double(tp) / double(true_y);
    s.f1 = (s.precision + s.recall) > 0
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
  }

  rep.accuracy = double(correct) / double(total);
  rep.total_support = total;
  for (const auto& s : rep.per_class) {
    rep.macro_precision += s.precision / double(k);
    rep.macro_recall += s.recall / double(k);
    rep.macro_f1 += s.f1 / double(k);
    const double w = double(s.support) / double(total);
    rep.weighted_precision += w * s.precision;
    rep.weighted_recall += w * s.recall;
    rep.weighted_f1 += w * s.f1;
  }
  return rep;
}

ClassificationReport classification_report(const std::vector<int>& preds,
                                           const std::vector<int>& labels,
                                           std::size_t num_classes) {
  return report_from_confusion(confusion_matrix(preds, labels, num_classes));
}

namespace {

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

// "0.93" or "0.93 (0.91)" when a secondary value is present.
std::string cell(double primary, const double* secondary) {
  std::string s = fmt2(primary);
  if (secondary) s += " (" + fmt2(*secondary) + ")";
  return s;
}

std::string cell_n(std::size_t primary, const std::size_t* secondary) {
  std::string s = std::to_string(primary);
  if (secondary) s += " (" + std::to_string(*secondary) + ")";
  return s;
}

}  // namespace

std::string format_report(const ClassificationReport& primary,
                          const std::vector<std::string>& class_names,
                          const ClassificationReport* full) {
  const std::size_t k = primary.per_class.size();
  if (class_names.size() != k)
    throw ShapeError("format_report: class-name count mismatch");

  std::vector<std::vector<std::string>> rows;
  rows.push_back({"Class", "Precision", "Recall", "F1-Score", "Support"});
  for (std::size_t y = 0; y < k; ++y) {
    const ClassStats& s = primary.per_class[y];
    const ClassStats* f = full ? &full->per_class[y] : nullptr;
    const double fp = f ? f->precision : 0, fr = f ? f->recall : 0,
                 ff = f ? f->f1 : 0;
    const std::size_t fs = f ? f->support : 0;
    rows.push_back({class_names[y], cell(s.precision, f ? &fp : nullptr),
                    cell(s.recall, f ? &fr : nullptr),
                    cell(s.f1, f ? &ff : nullptr),
                    cell_n(s.support, f ? &fs : nullptr)});
  }
  const double facc = full ? full->accuracy : 0;
  rows.push_back(
      {"Accuracy", "", "", cell(primary.accuracy, full ? &facc : nullptr), ""});
  const double fmp = full ? full->macro_precision : 0,
               fmr = full ? full->macro_recall : 0,
               fmf = full ? full->macro_f1 : 0;
  const std::size_t fts = full ? full->total_support : 0;
  rows.push_back(
      {"Macro Avg", cell(primary.macro_precision, full ? &fmp : nullptr),
       cell(primary.macro_recall, full ? &fmr : nullptr),
       cell(primary.macro_f1, full ? &fmf : nullptr),
       cell_n(primary.total_support, full ? &fts : nullptr)});
  const double fwp = full ? full->weighted_precision : 0,
               fwr = full ? full->weighted_recall : 0,
               fwf = full ? full->weighted_f1 : 0;
  rows.push_back(
      {"Weighted Avg", cell(primary.weighted_precision, full ? &fwp : nullptr),
       cell(primary.weighted_recall, full ? &fwr : nullptr),
       cell(primary.weighted_f1, full ? &fwf : nullptr),
       cell_n(primary.total_support, full ? &fts : nullptr)});

  std::vector<std::size_t> widths(5, 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < 5; ++c)
      widths[c] = std::max(widths[c], row[c].size());

  std::ostringstream os;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < 5; ++c) {
      const std::string& v = rows[r][c];
      if (c == 0) {
        os << v << std::string(widths[c] - v.size(), ' ');
      } else {
        os << "  " << std::string(widths[c] - v.size(), ' ') << v;
      }
    }
    os << '\n';
    if (r == 0 || r == k) {
      std::size_t line = widths[0];
      for (std::size_t c = 1; c < 5; ++c) line += widths[c] + 2;
      os << std::string(line, '-') << '\n';
    }
  }
  return os.str();
}

std::string report_csv(const ClassificationReport& report,
                       const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << "class,precision,recall,f1,support,precision_zero_div,recall_zero_div\n";
  char buf[160];
  for (std::size_t y = 0; y < report.per_class.size(); ++y) {
    const ClassStats& s = report.per_class[y];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%zu,%d,%d\n",
                  class_names[y].c_str(), s.precision, s.recall, s.f1,
                  s.support, int(s.precision_zero_div),
                  int(s.recall_zero_div));
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "accuracy,,,%.6f,%zu,,\n", report.accuracy,
                report.total_support);
  os << buf;
  std::snprintf(buf, sizeof(buf), "macro_avg,%.6f,%.6f,%.6f,%zu,,\n",
                report.macro_precision, report.macro_recall, report.macro_f1,
                report.total_support);
  os << buf;
  std::snprintf(buf, sizeof(buf), "weighted_avg,%.6f,%.6f,%.6f,%zu,,\n",
                report.weighted_precision, report.weighted_recall,
                report.weighted_f1, report.total_support);
  os << buf;
  return os.str();
}

std::string confusion_csv(const ConfusionMatrix& cm,
                          const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << "true\\pred";
  for (const auto& n : class_names) os << ',' << n;
  os << '\n';
  for (std::size_t i = 0; i < cm.size(); ++i) {
    os << class_names[i];
    for (std::size_t j = 0; j < cm[i].size(); ++j) os << ',' << cm[i][j];
    os << '\n';
  }
  return os.str();
}

}  // namespace flowcf
