#include "coder/ranking.hpp"

#include <algorithm>
#include <cmath>

namespace coder {

std::vector<double> score_rows(std::span<const double> qvec, std::span<const float> x_rows,
                               size_t n) {
  size_t m = qvec.size();
  if (x_rows.size() != n * m) throw ValidationError("score_rows: matrix shape mismatch");
  std::vector<double> scores(n);
  for (size_t i = 0; i < n; ++i)
    scores[i] = dot_f32_f64(x_rows.subspan(i * m, m), qvec);
  return scores;
}

std::vector<double> score_candidates(std::span<const double> qvec, const EmbeddingStore& store,
                                     std::span<const uint32_t> ids) {
  if (qvec.size() != store.dim())
    throw ValidationError("score_candidates: query dim " + std::to_string(qvec.size()) +
                          " != store dim " + std::to_string(store.dim()));
  std::vector<double> scores(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) scores[i] = dot_f32_f64(store.row(ids[i]), qvec);
  return scores;
}

namespace {

// shifted values and log-sum-exp over the finite entries of v
struct Softmax {
  double max_val;
  double lse;  // ln sum exp(v - max)
};

Softmax softmax_stats(std::span<const double> v, bool finite_only) {
  double max_val = kNegInf;
  for (double x : v) {
    if (std::isnan(x)) throw ValidationError("softmax input contains NaN");
    if (x == std::numeric_limits<double>::infinity())
      throw ValidationError("softmax input contains +inf");
    if (!finite_only && x == kNegInf)
      throw ValidationError("predicted scores must be finite");
    if (x > max_val) max_val = x;
  }
  if (max_val == kNegInf) throw ValidationError("all label entries are -inf");
  double sum = 0.0;
  for (double x : v)
    if (x != kNegInf) sum += std::exp(x - max_val);
  return {max_val, std::log(sum)};
}

}  // namespace

std::vector<double> target_distribution(std::span<const double> y) {
  auto stats = softmax_stats(y, /*finite_only=*/true);
  std::vector<double> p(y.size(), 0.0);
  for (size_t i = 0; i < y.size(); ++i)
    if (y[i] != kNegInf) p[i] = std::exp(y[i] - stats.max_val - stats.lse);
  return p;
}

LossResult listnet_loss(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size())
    throw ValidationError("listnet_loss: scores/labels length mismatch");
  auto y_stats = softmax_stats(labels, true);
  auto s_stats = softmax_stats(scores, false);

  LossResult out;
  out.grad.resize(scores.size());
  double loss = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    double log_q = scores[i] - s_stats.max_val - s_stats.lse;
    double q = std::exp(log_q);
    double p = 0.0;
    if (labels[i] != kNegInf) {
      double log_p = labels[i] - y_stats.max_val - y_stats.lse;
      p = std::exp(log_p);
      loss += p * (log_p - log_q);  // 0*ln(0) := 0 handled by the mask
    }
    out.grad[i] = q - p;
  }
  out.loss = loss;
  return out;
}

LossResult maxmargin_loss(std::span<const double> scores, std::span<const double> labels,
                          double margin) {
  if (scores.size() != labels.size())
    throw ValidationError("maxmargin_loss: scores/labels length mismatch");
  std::vector<size_t> pos, neg;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (std::isnan(labels[i])) throw ValidationError("maxmargin_loss: NaN label");
    (labels[i] != kNegInf ? pos : neg).push_back(i);
  }
  if (pos.empty()) throw ValidationError("maxmargin_loss: no positives");
  if (neg.empty()) throw ValidationError("maxmargin_loss: no negatives");

  LossResult out;
  out.grad.assign(scores.size(), 0.0);
  double loss = 0.0;
  for (size_t p : pos) {
    for (size_t n : neg) {
      double hinge = margin - scores[p] + scores[n];
      if (hinge > 0.0) {
        loss += hinge;
        out.grad[p] -= 1.0;
        out.grad[n] += 1.0;
      }
    }
  }
  double inv_pairs = 1.0 / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
  out.loss = loss * inv_pairs;
  for (double& g : out.grad) g *= inv_pairs;
  return out;
}

std::vector<ScoredDoc> rerank(std::span<const double> qvec, std::span<const uint32_t> candidate_ids,
                              const EmbeddingStore& store) {
  auto scores = score_candidates(qvec, store, candidate_ids);
  std::vector<ScoredDoc> ranked(candidate_ids.size());
  for (size_t i = 0; i < candidate_ids.size(); ++i) ranked[i] = {candidate_ids[i], scores[i]};
  std::sort(ranked.begin(), ranked.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  });
  return ranked;
}

}  // namespace coder
