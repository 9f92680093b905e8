#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "coder/common.hpp"
#include "coder/corpus.hpp"
#include "coder/embedding_store.hpp"
#include "coder/first_stage.hpp"
#include "coder/query_encoder.hpp"
#include "coder/ranking.hpp"

namespace coder {

enum class LossKind { ListNet, MaxMargin };

LossKind parse_loss_kind(std::string_view name);
std::string loss_kind_name(LossKind kind);

/// How the N - k negatives of a training context are chosen.
struct NegativePolicy {
  enum class Kind { RetrievedTopN, RandomOnly, Mixed, RetrievedPlusInbatch };
  Kind kind = Kind::RetrievedTopN;
  /// Mixed: this many negatives come from the pool, the rest are random.
  int mixed_retrieved = 0;

  static NegativePolicy parse(std::string_view text);
  std::string name() const;
  bool needs_pool() const { return kind != Kind::RandomOnly; }
};

struct TrainOptions {
  // context and loss
  int context_size = 1000;  // N, positives included
  NegativePolicy policy;
  LossKind loss = LossKind::ListNet;
  double margin = 1.0;
  double label_temperature = 1.0;
  int rel_threshold = 1;
  // optimizer
  int batch_size = 32;
  double lr = 1.73e-6;
  int warmup_steps = 9000;
  double weight_decay = 9.5e-5;
  double adam_eps = 1.3e-7;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  bool rectify = false;  // RAdam variance rectification
  double max_grad_norm = 1.0;
  // loop
  int max_epochs = 10;
  int eval_every = 100;  // steps between validation passes
  int patience = 10;     // evaluations without improvement before stopping
  int mrr_k = 10;
  uint64_t seed = 42;
  // encoder initialization
  uint32_t embed_dim = 768;
  uint32_t out_dim = 768;
  AggMode agg = AggMode::Mean;
  double dropout = 0.0;
  bool use_projection = false;
  size_t max_query_len = 32;

  std::map<std::string, std::string> to_map() const;
  static TrainOptions from_map(const std::map<std::string, std::string>& kv);
};

/// One training query with its judged positives resolved to dense indices.
struct QueryContext {
  std::string id;
  std::vector<int32_t> tokens;
  std::vector<std::pair<uint32_t, double>> positives;  // (dense index, grade)
};

/// Resolves qrels positives against the doc store; queries without positives
/// are excluded and reported.
std::vector<QueryContext> build_query_contexts(const QuerySet& queries,
                                               const RelevanceJudgments& qrels,
                                               const DocStore& docs, int rel_threshold,
                                               std::vector<std::string>* excluded = nullptr);

struct BatchQuery {
  size_t context_index = 0;
  std::vector<uint32_t> candidates;  // positives first, then negatives
  std::vector<double> labels;        // grades for positives, -inf otherwise
  int positive_count = 0;
};

struct TrainingBatch {
  std::vector<BatchQuery> queries;
  size_t context_size = 0;  // constant across the batch
  int random_topups = 0;    // negatives filled randomly because the pool ran short
};

/// Builds per-query contexts of positives plus policy-selected negatives.
/// Positives are force-included and deduplicated against pool hits; a pool
/// that runs short is topped up with uniform random negatives (recorded in
/// random_topups). In RetrievedPlusInbatch mode the other queries' positives
/// are appended as extra negatives, growing the context beyond context_size.
TrainingBatch assemble_batch(const std::vector<QueryContext>& contexts,
                             std::span<const size_t> selected, const CandidatePool* pool,
                             const NegativePolicy& policy, size_t context_size,
                             size_t corpus_size, uint64_t seed, int64_t step,
                             double label_temperature = 1.0);

struct TrainerState {
  EncoderParams params;
  std::vector<double> m_emb, v_emb, m_proj, v_proj;
  int64_t step = 0;
  int64_t epoch = 0;
  int64_t epoch_pos = 0;  // batches completed within the current epoch
  TrainOptions opt;
};

TrainerState make_trainer_state(EncoderParams params, TrainOptions opt);

/// Linear ramp 0 -> base_lr over warmup_steps, constant afterwards.
double lr_schedule(int64_t step, double base_lr, int64_t warmup_steps);

/// Bias-corrected Adam with decoupled weight decay; variance rectification
/// when opt.rectify is set. Increments the step counter.
void optimizer_step(TrainerState& state, const EncoderGradients& grads);

/// Forward/backward over one batch without touching state: per query,
/// encode -> joint scores -> loss -> grad through the dot product -> encoder
/// backward, averaged over the batch.
struct BatchForward {
  double mean_loss = 0.0;
  EncoderGradients grads;
};
BatchForward batch_forward_backward(const EncoderParams& params, const TrainingBatch& batch,
                                    const std::vector<QueryContext>& contexts,
                                    const EmbeddingStore& store, LossKind loss, double margin,
                                    uint64_t seed, int64_t step);

/// One optimization step: forward/backward, global-norm clipping, optimizer
/// update. Throws TrainingError on a non-finite loss before any update.
double train_step(TrainerState& state, const TrainingBatch& batch,
                  const std::vector<QueryContext>& contexts, const EmbeddingStore& store);

/// MRR@k of reranking the validation pool with the given encoder.
double rerank_validation_mrr(const EncoderParams& params, const QuerySet& val_queries,
                             const CandidatePool& val_pool, const RelevanceJudgments& qrels,
                             const DocStore& docs, const EmbeddingStore& store, int k,
                             int rel_threshold);

struct TrainingInputs {
  const std::vector<QueryContext>* train_contexts = nullptr;
  const CandidatePool* train_pool = nullptr;  // may be null for random_only
  const EmbeddingStore* store = nullptr;
  const QuerySet* val_queries = nullptr;
  const CandidatePool* val_pool = nullptr;
  const RelevanceJudgments* qrels = nullptr;
  const DocStore* docs = nullptr;
  std::ostream* log_stream = nullptr;  // TSV: step, loss, val_mrr, lr
};

struct TrainSummary {
  double best_val_mrr = 0.0;
  int64_t best_step = 0;
  double final_val_mrr = 0.0;
  int64_t steps = 0;
  std::vector<double> train_losses;                    // one entry per step
  std::vector<std::pair<int64_t, double>> val_curve;   // (step, mrr)
  EncoderParams best_params;
};

/// Epochs over shuffled training queries with periodic validation and
/// patience-based early stopping; retains the best-on-validation parameters.
TrainSummary run_training(TrainerState& state, const TrainingInputs& inputs);

/// Flat `key = value` config file (# comments allowed).
std::map<std::string, std::string> parse_config_file(const std::string& path);

struct TrainRunConfig {
  TrainOptions opt;
  std::string collection, vocab, embeddings, qrels;
  std::string train_queries, val_queries;
  std::string train_pool, val_pool;
  std::string out_dir = ".";
  std::string init_checkpoint;  // optional
  std::string resume_state;     // optional
};

TrainRunConfig load_train_config(const std::string& path);

/// File-based pipeline: loads everything, trains, writes checkpoint_best.cdrq,
/// checkpoint_final.cdrq, state_last.cdrq and train_log.tsv under out_dir.
TrainSummary train(const TrainRunConfig& cfg);

void save_trainer_state(const TrainerState& state, const std::string& path);
TrainerState load_trainer_state(const std::string& path);

}  // namespace coder
