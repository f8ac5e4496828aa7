#include "coda/eval/metrics.hpp"

#include "coda/errors.hpp"

namespace coda::eval {

MetricsReport score(const std::vector<int>& predictions, const std::vector<int>& labels, int k) {
  if (predictions.size() != labels.size())
    throw LengthMismatch("score: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
  for (size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] < 0 || predictions[i] >= k)
      throw IndexOutOfRange("score: prediction " + std::to_string(predictions[i]) + " outside [0," +
                            std::to_string(k) + ") at position " + std::to_string(i));
    if (labels[i] < 0 || labels[i] >= k)
      throw IndexOutOfRange("score: label " + std::to_string(labels[i]) + " outside [0," +
                            std::to_string(k) + ") at position " + std::to_string(i));
  }

  MetricsReport r;
  r.n_samples = int(predictions.size());
  r.confusion = Tensor({k, k});
  for (size_t i = 0; i < predictions.size(); ++i) r.confusion.at(labels[i], predictions[i]) += 1.0;

  double trace = 0.0;
  for (int c = 0; c < k; ++c) trace += r.confusion.at(c, c);
  r.accuracy = r.n_samples > 0 ? trace / r.n_samples : 0.0;

  r.precision.assign(size_t(k), 0.0);
  r.recall.assign(size_t(k), 0.0);
  r.f1.assign(size_t(k), 0.0);
  r.support.assign(size_t(k), 0);
  double f1_sum = 0.0;
  for (int c = 0; c < k; ++c) {
    double tp = r.confusion.at(c, c);
    double row = 0.0, col = 0.0;
    for (int j = 0; j < k; ++j) {
      row += r.confusion.at(c, j);
      col += r.confusion.at(j, c);
    }
    r.support[size_t(c)] = int(row);
    if (row == 0.0) r.zero_support_classes.push_back(c);
    r.precision[size_t(c)] = col > 0 ? tp / col : 0.0;
    r.recall[size_t(c)] = row > 0 ? tp / row : 0.0;
    const double pr = r.precision[size_t(c)] + r.recall[size_t(c)];
    r.f1[size_t(c)] = pr > 0 ? 2.0 * r.precision[size_t(c)] * r.recall[size_t(c)] / pr : 0.0;
    f1_sum += r.f1[size_t(c)];
  }
  r.macro_f1 = k > 0 ? f1_sum / k : 0.0;
  return r;
}

}  // namespace coda::eval
