#include "segrob/softmax.hpp"

namespace segrob {

int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  double best_val = row[0];
  for (int k = 1; k < row.size(); ++k) {
    if (row[k] > best_val) {
      best_val = row[k];
      best = k;
    }
  }
  return best;
}

ProbMap softmax(const LogitMap& logits) {
  check_numeric(logits.finite(), "softmax: non-finite logits");
  ProbMap p;
  p.height = logits.height;
  p.width = logits.width;
  p.classes = logits.classes;
  const Vector row_max = logits.data.rowwise().maxCoeff();
  Matrix e = (logits.data.colwise() - row_max).array().exp();
  p.data = e.array().colwise() / e.rowwise().sum().array();
  return p;
}

PredictionMap predict(const LogitMap& logits) {
  check_numeric(logits.finite(), "predict: non-finite logits");
  PredictionMap m;
  m.height = logits.height;
  m.width = logits.width;
  m.labels.resize(logits.pixels());
  for (int a = 0; a < logits.pixels(); ++a) m.labels[a] = argmax_lowest(logits.data.row(a));
  return m;
}

}  // namespace segrob
