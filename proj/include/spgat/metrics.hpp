#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spgat/errors.hpp"

namespace spgat {

// Confusion-matrix-derived classification metrics. Rows index the true
// class, columns the predicted class, both 0-based.
struct EvalReport {
  int64_t classes = 0;
  std::vector<int64_t> confusion;      // classes*classes, row-major
  std::vector<double> per_class_acc;   // recall per class; 0 when the class
                                       // has no test samples
  double oa = 0.0;                     // trace / total
  double aa = 0.0;                     // mean recall over classes that have
                                       // test samples
  double kappa = 0.0;

  int64_t total() const;
  int64_t at(int64_t truth, int64_t pred) const {
    return confusion[static_cast<size_t>(truth * classes + pred)];
  }
};

// Derives OA/AA/Kappa from raw counts. Throws EvalError when the matrix is
// empty and ConfigError on malformed input.
EvalReport report_from_confusion(std::vector<int64_t> confusion, int64_t classes);

// One `key value` line per metric, deterministic byte-for-byte.
std::string report_to_text(const EvalReport& report);

// Header row `truth\pred,1,..,C` then one row of counts per true class.
std::string confusion_to_csv(const EvalReport& report);

// %.17g rendering used everywhere a real number lands in an output file.
std::string format_real(double v);

}  // namespace spgat
