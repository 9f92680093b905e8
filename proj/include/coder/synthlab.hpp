#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coder/corpus.hpp"
#include "coder/embedding_store.hpp"
#include "coder/first_stage.hpp"
#include "coder/trainer.hpp"

namespace coder {

/// Deterministic synthetic retrieval testbed. Each query is a small set of
/// concept tokens whose latent direction is the normalized sum of the frozen
/// encoder's token columns; positives are planted near the latent (tighter
/// noise for higher grades), hard distractors sit in a cosine band around it,
/// and the rest of the corpus is uniform on the sphere. Document texts are
/// built by matching pursuit against the planted vectors so the frozen
/// document encoder approximately reproduces the geometry and BM25 sees the
/// lexical overlap.
struct SyntheticSpec {
  uint32_t dim = 16;
  uint32_t corpus_size = 5000;
  uint32_t train_queries = 200;
  uint32_t val_queries = 100;
  uint32_t positives_per_query = 3;
  std::vector<int> grade_levels = {3, 2, 1};  // cycled over the positives
  double noise_scale = 0.09;                  // grade g draws noise_scale / g
  uint64_t seed = 1;

  uint32_t concept_tokens = 64;
  uint32_t query_token_count = 4;
  uint32_t hard_per_query = 12;
  double hard_cos_min = 0.6;
  double hard_cos_max = 0.8;
  /// Unjudged docs planted inside the positive shell: mislabeled negatives
  /// that a first stage retrieves near the top.
  uint32_t false_negatives_per_query = 0;
  double false_neg_cos_min = 0.90;
  double false_neg_cos_max = 0.97;
  uint32_t doc_text_tokens = 12;
  size_t max_query_len = 32;

  void validate() const;
};

struct SyntheticData {
  DocStore docs;
  RawQueries raw_queries;  // train split first, then validation
  QuerySet queries;
  RelevanceJudgments qrels;
  EmbeddingStore embeddings;
  Vocab vocab;
  std::vector<std::vector<double>> query_latents;
  uint32_t train_count = 0;

  QuerySet train_split() const;
  QuerySet val_split() const;
};

SyntheticData gen_synthetic(const SyntheticSpec& spec);

/// MRR@k of ranking the full corpus by the planted latent vectors over the
/// validation split; upper-bounds every trained model.
double oracle_latent_mrr(const SyntheticData& data, int k = 10);

struct ExperimentTable {
  std::string title;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<std::vector<double>> values;
  std::string to_tsv() const;
};

/// ---- negative-count saturation --------------------------------------------

struct NegativeCountConfig {
  SyntheticSpec spec;  // d = 8 testbed by default
  std::vector<int> negative_counts = {2, 4, 8, 9, 72};
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10,
                                 11, 12, 13, 14, 15, 16, 17, 18, 19, 20};
  TrainOptions train;  // context_size is derived per run: positives + count
  size_t pool_depth = 200;
  size_t val_pool_depth = 200;
};
NegativeCountConfig default_negative_count_config();

struct NegativeCountResult {
  std::vector<int> negative_counts;
  std::vector<uint64_t> seeds;
  std::vector<std::vector<double>> best_mrr;  // [count][seed]
  std::vector<double> median_mrr;
  std::vector<double> mean_mrr;
  ExperimentTable table() const;
};

/// Fresh trainer per (negative count, seed) with the retrieved_topN policy
/// over a BM25 pool; records the best validation MRR of each run.
NegativeCountResult negative_count_experiment(const NegativeCountConfig& cfg);

/// ---- negative-type and loss-type ablations --------------------------------

struct AblationConfig {
  SyntheticSpec spec;        // graded k=3 testbed by default
  TrainOptions base_train;   // random negatives + max-margin, run to saturation
  TrainOptions finetune;     // shared by every arm; policy/loss set per arm
  int base_random_negatives = 64;
  int finetune_context = 128;
  size_t pool_depth = 500;
  size_t val_pool_depth = 500;
  bool include_inbatch_arm = true;
};
AblationConfig default_ablation_config();

struct ArmResult {
  std::string name;
  double final_val_mrr = 0.0;
  double best_val_mrr = 0.0;
  std::vector<double> train_losses;
  std::vector<std::pair<int64_t, double>> val_curve;
};

struct AblationResult {
  double base_best_mrr = 0.0;  // reranking the same pools with the base encoder
  std::vector<ArmResult> arms;
  const ArmResult* arm(std::string_view name) const;
};

/// Trains a base model to saturation on random negatives, builds dense pools
/// with it, then fine-tunes one arm per (policy, loss) combination from the
/// same base: listnet_retrieved, maxmargin_retrieved, listnet_random and
/// optionally listnet_retrieved_inbatch. Batches are identical across arms
/// that share a policy.
AblationResult ablation_experiment(const AblationConfig& cfg, uint64_t seed);

ExperimentTable negative_type_experiment(const AblationConfig& cfg,
                                         std::span<const uint64_t> seeds);
ExperimentTable loss_type_experiment(const AblationConfig& cfg, std::span<const uint64_t> seeds);

QuerySet slice_queries(const QuerySet& qs, size_t begin, size_t end);

}  // namespace coder
