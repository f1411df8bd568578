#include "icehrnet/metrics.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "icehrnet/error.hpp"

namespace icehrnet {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1 || num_classes > 255) throw ValidationError("confusion matrix needs 1..255 classes");
}

ConfusionMatrix::ConfusionMatrix(int num_classes, std::vector<std::uint64_t> counts)
    : num_classes_(num_classes), counts_(std::move(counts)) {
  if (counts_.size() != static_cast<std::size_t>(num_classes) * num_classes) {
    throw ValidationError("confusion matrix count vector has wrong size");
  }
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void ConfusionMatrix::accumulate(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
  if (predicted.size() != truth.size()) throw ValidationError("prediction and ground truth differ in size");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] >= num_classes_) {
      throw ValidationError("prediction " + std::to_string(predicted[i]) + " out of range");
    }
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::uint8_t t = truth[i];
    if (t == kIgnoreValue) continue;
    if (t >= num_classes_) throw ValidationError("ground truth " + std::to_string(t) + " out of range");
    ++counts_[static_cast<std::size_t>(t) * num_classes_ + predicted[i]];
  }
}

void ConfusionMatrix::accumulate(const Mask& predicted, const Mask& truth) {
  if (predicted.height != truth.height || predicted.width != truth.width) {
    throw ValidationError("prediction and ground truth differ in shape");
  }
  accumulate(predicted.labels, truth.labels);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) throw ValidationError("cannot merge confusion matrices of different size");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

double accuracy(const ConfusionMatrix& m) {
  const std::uint64_t total = m.total();
  if (total == 0) throw ValidationError("accuracy of an empty confusion matrix");
  std::uint64_t diag = 0;
  for (int i = 0; i < m.num_classes(); ++i) diag += m.at(i, i);
  return static_cast<double>(diag) / static_cast<double>(total);
}

IouResult mean_iou(const ConfusionMatrix& m) {
  if (m.total() == 0) throw ValidationError("mIoU of an empty confusion matrix");
  const int n = m.num_classes();
  IouResult r;
  r.per_class.assign(n, std::numeric_limits<double>::quiet_NaN());
  double sum = 0;
  int present = 0;
  for (int i = 0; i < n; ++i) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < n; ++j) {
      row += m.at(i, j);
      col += m.at(j, i);
    }
    const std::uint64_t uni = row + col - m.at(i, i);
    if (uni == 0) continue;
    r.per_class[i] = static_cast<double>(m.at(i, i)) / static_cast<double>(uni);
    sum += r.per_class[i];
    ++present;
  }
  if (present == 0) throw ValidationError("mIoU undefined: every class has an empty union");
  r.mean = sum / present;
  return r;
}

}  // namespace icehrnet
