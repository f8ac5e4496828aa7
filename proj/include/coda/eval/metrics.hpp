#pragma once

#include <string>
#include <vector>

#include "coda/tensor.hpp"

namespace coda::eval {

struct MetricsReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> precision, recall, f1;  // per class
  std::vector<int> support;                   // per class (true counts)
  std::vector<int> zero_support_classes;      // flagged: contribute F1=0
  Tensor confusion;                           // (K,K), rows = true, cols = predicted
  int n_samples = 0;
  std::string aggregation = "image";  // or "well-mean-logit"
};

// Accuracy, macro-F1 (unweighted mean of per-class F1; absent classes
// contribute 0 and are flagged), confusion matrix.
MetricsReport score(const std::vector<int>& predictions, const std::vector<int>& labels, int k);

}  // namespace coda::eval
