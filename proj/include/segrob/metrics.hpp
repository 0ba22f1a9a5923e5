#pragma once

#include "segrob/types.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace segrob {

/// Per-class TP/FP/FN counts of one image.
struct ImageCounts {
  std::string image_id;
  Eigen::VectorX<std::int64_t> tp, fp, fn;

  ImageCounts() = default;
  explicit ImageCounts(int num_classes, std::string id = {})
      : image_id(std::move(id)),
        tp(Eigen::VectorX<std::int64_t>::Zero(num_classes)),
        fp(Eigen::VectorX<std::int64_t>::Zero(num_classes)),
        fn(Eigen::VectorX<std::int64_t>::Zero(num_classes)) {}

  std::int64_t pixels() const { return tp.sum() + fn.sum(); }
  std::int64_t correct() const { return tp.sum(); }
  double accuracy() const;
};

ImageCounts count_image(int num_classes, const PredictionMap& pred, const LabelMap& truth,
                        const std::string& image_id);

/// Dataset-level confusion counts with the per-image breakdown kept around
/// (the SEA greedy selection swaps single images in and out of aggregates).
struct ConfusionAccumulator {
  int num_classes = 0;
  Eigen::VectorX<std::int64_t> tp, fp, fn;
  std::vector<ImageCounts> images;
  std::map<std::string, std::size_t> index_by_id;

  ConfusionAccumulator() = default;
  explicit ConfusionAccumulator(int k)
      : num_classes(k),
        tp(Eigen::VectorX<std::int64_t>::Zero(k)),
        fp(Eigen::VectorX<std::int64_t>::Zero(k)),
        fn(Eigen::VectorX<std::int64_t>::Zero(k)) {}

  void add(const ImageCounts& counts);
  void merge(const ConfusionAccumulator& other);
  std::int64_t total_pixels() const { return tp.sum() + fn.sum(); }
};

void accumulate(ConfusionAccumulator& acc, const PredictionMap& pred, const LabelMap& truth,
                const std::string& image_id);

double pixel_accuracy(const ConfusionAccumulator& acc);

/// Mean IoU over classes with TP+FP+FN > 0 (never-occurring classes excluded).
double miou(const ConfusionAccumulator& acc);

/// Mean of TP_s / N_s over classes with N_s > 0; upper-bounds miou.
double balanced_accuracy(const ConfusionAccumulator& acc);

Vector per_class_iou(const ConfusionAccumulator& acc);  // NaN for excluded classes

/// Aggregate-counts variants used by the greedy mIoU search, which maintains
/// raw TP/FP/FN vectors and adjusts single images in O(K).
double miou_from_counts(const Eigen::VectorX<std::int64_t>& tp,
                        const Eigen::VectorX<std::int64_t>& fp,
                        const Eigen::VectorX<std::int64_t>& fn);

struct ClassStats {
  Eigen::VectorX<std::int64_t> pixels_per_class;  // N_s
};

ClassStats class_pixel_counts(const std::vector<LabelMap>& labels, int num_classes);

}  // namespace segrob
