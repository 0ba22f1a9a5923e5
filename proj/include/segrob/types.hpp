#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace segrob {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntVector = Eigen::VectorXi;

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void check_numeric(bool cond, const std::string& msg) {
  if (!cond) throw std::domain_error(msg);
}

/// H x W x C grid of reals in [0,1]; one pixel per row, pixel index a = y*W + x.
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 0;
  Matrix data;  // (H*W) x C

  ImageTensor() = default;
  ImageTensor(int h, int w, int c) : height(h), width(w), channels(c), data(Matrix::Zero(h * w, c)) {}
  ImageTensor(int h, int w, int c, Matrix d) : height(h), width(w), channels(c), data(std::move(d)) {
    check(data.rows() == Eigen::Index(h) * w && data.cols() == c, "ImageTensor: data shape mismatch");
  }

  int pixels() const { return height * width; }
  bool same_shape(const ImageTensor& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  bool in_unit_box(double tol = 0.0) const {
    return data.minCoeff() >= -tol && data.maxCoeff() <= 1.0 + tol;
  }
};

/// H x W integer class ids in [0, K-1]; background is an ordinary class (id K-1 by convention).
struct LabelMap {
  int height = 0;
  int width = 0;
  IntVector labels;  // H*W

  LabelMap() = default;
  LabelMap(int h, int w) : height(h), width(w), labels(IntVector::Zero(h * w)) {}
  LabelMap(int h, int w, IntVector l) : height(h), width(w), labels(std::move(l)) {
    check(labels.size() == Eigen::Index(h) * w, "LabelMap: label count mismatch");
  }

  int pixels() const { return height * width; }
  void validate_range(int num_classes) const {
    for (Eigen::Index a = 0; a < labels.size(); ++a)
      check(labels[a] >= 0 && labels[a] < num_classes, "LabelMap: label out of range");
  }
};

/// H x W x K logits, one K-vector per pixel row.
struct LogitMap {
  int height = 0;
  int width = 0;
  int classes = 0;
  Matrix data;  // (H*W) x K

  LogitMap() = default;
  LogitMap(int h, int w, int k) : height(h), width(w), classes(k), data(Matrix::Zero(h * w, k)) {}
  LogitMap(int h, int w, int k, Matrix d) : height(h), width(w), classes(k), data(std::move(d)) {
    check(data.rows() == Eigen::Index(h) * w && data.cols() == k, "LogitMap: data shape mismatch");
  }

  int pixels() const { return height * width; }
  bool finite() const { return data.allFinite(); }
};

/// Same shape as LogitMap; rows are softmax distributions.
struct ProbMap {
  int height = 0;
  int width = 0;
  int classes = 0;
  Matrix data;  // (H*W) x K, rows sum to 1

  int pixels() const { return height * width; }
};

/// H x W predicted class ids, argmax over logits with lowest-index tie-break.
struct PredictionMap {
  int height = 0;
  int width = 0;
  IntVector labels;  // H*W

  int pixels() const { return height * width; }
};

}  // namespace segrob
