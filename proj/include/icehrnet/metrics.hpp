#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "icehrnet/dataset.hpp"

namespace icehrnet {

// counts(i, j): pixels of true class i predicted as class j.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int num_classes);
  ConfusionMatrix(int num_classes, std::vector<std::uint64_t> counts);

  int num_classes() const { return num_classes_; }
  std::uint64_t at(int truth, int predicted) const {
    return counts_[static_cast<std::size_t>(truth) * num_classes_ + predicted];
  }
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  std::uint64_t total() const;

  // Skips pixels whose ground truth is the ignore value. Predictions must be
  // real class indices.
  void accumulate(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth);
  void accumulate(const Mask& predicted, const Mask& truth);

  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int num_classes_ = 0;
  std::vector<std::uint64_t> counts_;
};

double accuracy(const ConfusionMatrix& m);

struct IouResult {
  double mean = 0.0;
  // NaN for classes whose union is empty; those are excluded from the mean.
  std::vector<double> per_class;
};

IouResult mean_iou(const ConfusionMatrix& m);

}  // namespace icehrnet
