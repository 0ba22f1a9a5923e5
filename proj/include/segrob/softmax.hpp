#pragma once

#include "segrob/types.hpp"

namespace segrob {

/// Max-shifted softmax over each pixel row. Throws on non-finite input.
ProbMap softmax(const LogitMap& logits);

/// Argmax class per pixel, ties broken by lowest class index.
PredictionMap predict(const LogitMap& logits);

/// Lowest-index argmax of one logit row.
int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row);

}  // namespace segrob
