#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "coder/common.hpp"
#include "coder/embedding_store.hpp"
#include "coder/first_stage.hpp"

namespace coder {

/// Label value for negative or unjudged candidates.
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// s_i = dot(X_i, qvec) with 64-bit accumulation. X is row-major float32,
/// n rows of qvec.size() columns.
std::vector<double> score_rows(std::span<const double> qvec, std::span<const float> x_rows,
                               size_t n);

/// Gathers candidate rows from the store and scores them jointly.
std::vector<double> score_candidates(std::span<const double> qvec, const EmbeddingStore& store,
                                     std::span<const uint32_t> ids);

/// Softmax over the finite entries of y; -inf entries receive exactly 0.
/// Errors if every entry is -inf.
std::vector<double> target_distribution(std::span<const double> y);

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // w.r.t. predicted scores
};

/// KL(softmax(y) || softmax(s)) with 0*ln(0) := 0. The predicted softmax runs
/// over all entries; masking applies to targets only. grad = softmax(s) - softmax(y).
LossResult listnet_loss(std::span<const double> scores, std::span<const double> labels);

/// Mean over all (positive, negative) pairs of max(0, margin - s_p + s_n).
/// Positives are the finite-label entries. Errors when either side is empty.
LossResult maxmargin_loss(std::span<const double> scores, std::span<const double> labels,
                          double margin);

/// Candidates sorted by score descending, ties by ascending doc index; the
/// input list length is preserved.
std::vector<ScoredDoc> rerank(std::span<const double> qvec, std::span<const uint32_t> candidate_ids,
                              const EmbeddingStore& store);

}  // namespace coder
