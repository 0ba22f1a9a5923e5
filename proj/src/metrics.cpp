#include "segrob/metrics.hpp"

#include <limits>

namespace segrob {

double ImageCounts::accuracy() const {
  const std::int64_t n = pixels();
  check(n > 0, "ImageCounts: empty image");
  return double(correct()) / double(n);
}

ImageCounts count_image(int num_classes, const PredictionMap& pred, const LabelMap& truth,
                        const std::string& image_id) {
  check(pred.height == truth.height && pred.width == truth.width,
        "count_image: prediction/truth shape mismatch");
  ImageCounts c(num_classes, image_id);
  for (int a = 0; a < truth.pixels(); ++a) {
    const int y = truth.labels[a];
    const int m = pred.labels[a];
    check(y >= 0 && y < num_classes && m >= 0 && m < num_classes, "count_image: class id out of range");
    if (m == y) {
      c.tp[y] += 1;
    } else {
      c.fn[y] += 1;
      c.fp[m] += 1;
    }
  }
  return c;
}

void ConfusionAccumulator::add(const ImageCounts& counts) {
  check(counts.tp.size() == num_classes, "accumulate: class count mismatch");
  check(index_by_id.find(counts.image_id) == index_by_id.end(),
        "accumulate: duplicate image id '" + counts.image_id + "'");
  index_by_id.emplace(counts.image_id, images.size());
  images.push_back(counts);
  tp += counts.tp;
  fp += counts.fp;
  fn += counts.fn;
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  check(other.num_classes == num_classes, "merge: class count mismatch");
  for (const auto& img : other.images) add(img);
}

void accumulate(ConfusionAccumulator& acc, const PredictionMap& pred, const LabelMap& truth,
                const std::string& image_id) {
  acc.add(count_image(acc.num_classes, pred, truth, image_id));
}

double pixel_accuracy(const ConfusionAccumulator& acc) {
  const std::int64_t total = acc.total_pixels();
  check(total > 0, "pixel_accuracy: empty accumulator");
  return double(acc.tp.sum()) / double(total);
}

double miou_from_counts(const Eigen::VectorX<std::int64_t>& tp,
                        const Eigen::VectorX<std::int64_t>& fp,
                        const Eigen::VectorX<std::int64_t>& fn) {
  double sum = 0.0;
  int valid = 0;
  for (Eigen::Index s = 0; s < tp.size(); ++s) {
    const std::int64_t u = tp[s] + fp[s] + fn[s];
    if (u == 0) continue;
    sum += double(tp[s]) / double(u);
    ++valid;
  }
  check(valid > 0, "miou: no class with nonzero union");
  return sum / valid;
}

double miou(const ConfusionAccumulator& acc) { return miou_from_counts(acc.tp, acc.fp, acc.fn); }

double balanced_accuracy(const ConfusionAccumulator& acc) {
  double sum = 0.0;
  int valid = 0;
  for (int s = 0; s < acc.num_classes; ++s) {
    const std::int64_t n = acc.tp[s] + acc.fn[s];  // N_s of the evaluated set
    if (n == 0) continue;
    sum += double(acc.tp[s]) / double(n);
    ++valid;
  }
  check(valid > 0, "balanced_accuracy: no class with pixels");
  return sum / valid;
}

Vector per_class_iou(const ConfusionAccumulator& acc) {
  Vector iou(acc.num_classes);
  for (int s = 0; s < acc.num_classes; ++s) {
    const std::int64_t u = acc.tp[s] + acc.fp[s] + acc.fn[s];
    iou[s] = u == 0 ? std::numeric_limits<double>::quiet_NaN() : double(acc.tp[s]) / double(u);
  }
  return iou;
}

ClassStats class_pixel_counts(const std::vector<LabelMap>& labels, int num_classes) {
  check(!labels.empty(), "class_pixel_counts: empty split");
  ClassStats stats;
  stats.pixels_per_class = Eigen::VectorX<std::int64_t>::Zero(num_classes);
  for (const auto& map : labels) {
    for (int a = 0; a < map.pixels(); ++a) {
      const int y = map.labels[a];
      check(y >= 0 && y < num_classes, "class_pixel_counts: label out of range");
      stats.pixels_per_class[y] += 1;
    }
  }
  return stats;
}

}  // namespace segrob
