#include "spgat/metrics.hpp"

#include <cmath>
#include <cstdio>

namespace spgat {

int64_t EvalReport::total() const {
  int64_t t = 0;
  for (int64_t v : confusion) t += v;
  return t;
}

EvalReport report_from_confusion(std::vector<int64_t> confusion, int64_t classes) {
  if (classes < 1) {
    throw ConfigError("metrics: class count must be positive, got " +
                      std::to_string(classes));
  }
  if (static_cast<int64_t>(confusion.size()) != classes * classes) {
    throw ConfigError("metrics: confusion matrix size " +
                      std::to_string(confusion.size()) + " does not match " +
                      std::to_string(classes) + " classes");
  }
  int64_t total = 0;
  for (int64_t v : confusion) {
    if (v < 0) throw ConfigError("metrics: negative confusion count");
    total += v;
  }
  if (total == 0) throw EvalError("metrics: confusion matrix holds no samples");

  EvalReport r;
  r.classes = classes;
  r.confusion = std::move(confusion);
  r.per_class_acc.assign(static_cast<size_t>(classes), 0.0);

  int64_t trace = 0;
  double pe_num = 0.0;  // sum of row_total * col_total
  int64_t populated = 0;
  double recall_sum = 0.0;
  for (int64_t c = 0; c < classes; ++c) {
    int64_t row = 0, col = 0;
    for (int64_t j = 0; j < classes; ++j) {
      row += r.at(c, j);
      col += r.at(j, c);
    }
    trace += r.at(c, c);
    pe_num += static_cast<double>(row) * static_cast<double>(col);
    if (row > 0) {
      const double recall = static_cast<double>(r.at(c, c)) / static_cast<double>(row);
      r.per_class_acc[static_cast<size_t>(c)] = recall;
      recall_sum += recall;
      ++populated;
    }
  }
  r.oa = static_cast<double>(trace) / static_cast<double>(total);
  r.aa = recall_sum / static_cast<double>(populated);
  const double pe = pe_num / (static_cast<double>(total) * static_cast<double>(total));
  // pe == 1 forces every sample into one diagonal cell, so agreement is perfect.
  r.kappa = pe >= 1.0 ? 1.0 : (r.oa - pe) / (1.0 - pe);
  return r;
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string report_to_text(const EvalReport& report) {
  std::string out;
  out += "classes " + std::to_string(report.classes) + "\n";
  out += "samples " + std::to_string(report.total()) + "\n";
  out += "oa " + format_real(report.oa) + "\n";
  out += "aa " + format_real(report.aa) + "\n";
  out += "kappa " + format_real(report.kappa) + "\n";
  for (int64_t c = 0; c < report.classes; ++c) {
    out += "class_" + std::to_string(c + 1) + "_acc " +
           format_real(report.per_class_acc[static_cast<size_t>(c)]) + "\n";
  }
  return out;
}

std::string confusion_to_csv(const EvalReport& report) {
  std::string out = "truth\\pred";
  for (int64_t c = 0; c < report.classes; ++c) {
    out += "," + std::to_string(c + 1);
  }
  out += "\n";
  for (int64_t t = 0; t < report.classes; ++t) {
    out += std::to_string(t + 1);
    for (int64_t p = 0; p < report.classes; ++p) {
      out += "," + std::to_string(report.at(t, p));
    }
    out += "\n";
  }
  return out;
}

}  // namespace spgat
