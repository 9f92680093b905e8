#include "coder/synthlab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "coder/metrics.hpp"
#include "coder/ranking.hpp"

namespace coder {

namespace {

void normalize(std::vector<double>& v) {
  double norm2 = 0.0;
  for (double x : v) norm2 += x * x;
  if (norm2 > 0.0) {
    double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

std::string token_name(uint32_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "t%04u", i);
  return buf;
}

std::string doc_name(uint32_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "SD%06u", i);
  return buf;
}

// Greedy forward selection on the actual encoder output: append whichever
// token pushes the (unweighted) column sum closest in cosine to the target,
// stopping once no token improves it. Nearby targets share tokens, which
// gives BM25 a lexical signal correlated with the planted geometry.
void pursue_tokens(const std::vector<double>& target, std::vector<double>& column_sum,
                   const std::vector<std::vector<double>>& columns, size_t max_extra,
                   std::vector<uint32_t>& out) {
  double sum_dot_t = dot(column_sum, target);
  double sum_norm2 = dot(column_sum, column_sum);
  double current = sum_norm2 > 0.0 ? sum_dot_t / std::sqrt(sum_norm2) : -1.0;
  for (size_t step = 0; step < max_extra; ++step) {
    double best_cos = current;
    size_t best_t = columns.size();
    for (size_t t = 0; t < columns.size(); ++t) {
      double col_dot_t = dot(columns[t], target);
      double col_norm2 = dot(columns[t], columns[t]);
      double cross = dot(columns[t], column_sum);
      double norm2 = sum_norm2 + 2.0 * cross + col_norm2;
      if (norm2 <= 0.0) continue;
      double c = (sum_dot_t + col_dot_t) / std::sqrt(norm2);
      if (c > best_cos + 1e-12) {
        best_cos = c;
        best_t = t;
      }
    }
    if (best_t == columns.size()) break;
    out.push_back(static_cast<uint32_t>(best_t));
    for (size_t j = 0; j < column_sum.size(); ++j) column_sum[j] += columns[best_t][j];
    sum_dot_t = dot(column_sum, target);
    sum_norm2 = dot(column_sum, column_sum);
    current = best_cos;
  }
}

std::string join_tokens(const std::vector<uint32_t>& tokens) {
  std::string text;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) text.push_back(' ');
    text += token_name(tokens[i]);
  }
  return text;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (dim < 2) throw ValidationError("synthetic dim must be >= 2");
  if (train_queries == 0 || val_queries == 0)
    throw ValidationError("need both train and validation queries");
  if (positives_per_query == 0) throw ValidationError("positives_per_query must be >= 1");
  if (grade_levels.empty()) throw ValidationError("grade_levels must be non-empty");
  for (int g : grade_levels)
    if (g < 1 || g > 3) throw ValidationError("grade levels must be in 1..3");
  if (noise_scale < 0.0) throw ValidationError("noise_scale must be >= 0");
  if (!(hard_cos_min >= -1.0 && hard_cos_max <= 1.0 && hard_cos_min <= hard_cos_max))
    throw ValidationError("hard cosine band must satisfy -1 <= min <= max <= 1");
  if (concept_tokens < query_token_count)
    throw ValidationError("concept vocabulary smaller than a query");
  uint32_t queries = train_queries + val_queries;
  uint64_t planted = static_cast<uint64_t>(queries) *
                     (positives_per_query + hard_per_query + false_negatives_per_query);
  if (corpus_size < planted + positives_per_query)
    throw ValidationError("corpus too small for the planted documents");
}

QuerySet slice_queries(const QuerySet& qs, size_t begin, size_t end) {
  QuerySet out;
  out.query_ids.assign(qs.query_ids.begin() + begin, qs.query_ids.begin() + end);
  out.token_ids.assign(qs.token_ids.begin() + begin, qs.token_ids.begin() + end);
  return out;
}

QuerySet SyntheticData::train_split() const { return slice_queries(queries, 0, train_count); }

QuerySet SyntheticData::val_split() const {
  return slice_queries(queries, train_count, queries.query_ids.size());
}

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const uint32_t d = spec.dim;
  const uint32_t n_queries = spec.train_queries + spec.val_queries;

  SyntheticData data;
  data.train_count = spec.train_queries;

  std::vector<std::string> tokens;
  tokens.reserve(spec.concept_tokens);
  for (uint32_t t = 0; t < spec.concept_tokens; ++t) tokens.push_back(token_name(t));
  data.vocab = Vocab::from_tokens(tokens);

  FrozenDocEncoder enc(d, data.vocab.size(), spec.seed);
  std::vector<std::vector<double>> directions(spec.concept_tokens);
  std::vector<std::vector<double>> columns(spec.concept_tokens);
  for (uint32_t t = 0; t < spec.concept_tokens; ++t) {
    int32_t id = static_cast<int32_t>(t) + Vocab::kFirstRegular;
    directions[t] = enc.token_direction(id);
    auto col = enc.token_column(id);
    columns[t].assign(col.begin(), col.end());
  }

  // queries: distinct concept tokens; latent = normalized sum of directions
  std::vector<std::vector<uint32_t>> query_tokens(n_queries);
  data.query_latents.resize(n_queries);
  for (uint32_t qi = 0; qi < n_queries; ++qi) {
    auto rng = RngStream::from(spec.seed, "query-tokens", qi);
    std::unordered_set<uint32_t> chosen;
    while (chosen.size() < spec.query_token_count)
      chosen.insert(static_cast<uint32_t>(rng.bounded(spec.concept_tokens)));
    query_tokens[qi].assign(chosen.begin(), chosen.end());
    std::sort(query_tokens[qi].begin(), query_tokens[qi].end());

    std::vector<double> latent(d, 0.0);
    for (uint32_t t : query_tokens[qi])
      for (uint32_t j = 0; j < d; ++j) latent[j] += directions[t][j];
    normalize(latent);
    data.query_latents[qi] = std::move(latent);

    char qid[16];
    std::snprintf(qid, sizeof(qid), "SQ%05u", qi);
    data.raw_queries.ids.emplace_back(qid);
    data.raw_queries.texts.push_back(join_tokens(query_tokens[qi]));
  }

  std::vector<float> rows;
  rows.reserve(static_cast<size_t>(spec.corpus_size) * d);
  uint32_t doc_counter = 0;
  auto plant_doc = [&](const std::vector<double>& v, const std::vector<uint32_t>& seed_tokens) {
    std::vector<uint32_t> text_tokens = seed_tokens;
    std::vector<double> column_sum(d, 0.0);
    for (uint32_t t : seed_tokens)
      for (uint32_t j = 0; j < d; ++j) column_sum[j] += columns[t][j];
    if (text_tokens.size() < spec.doc_text_tokens)
      pursue_tokens(v, column_sum, columns, spec.doc_text_tokens - text_tokens.size(),
                    text_tokens);
    data.docs.add(doc_name(doc_counter), join_tokens(text_tokens));
    for (uint32_t j = 0; j < d; ++j) rows.push_back(static_cast<float>(v[j]));
    return doc_counter++;
  };

  const std::vector<uint32_t> no_seed_tokens;
  for (uint32_t qi = 0; qi < n_queries; ++qi) {
    const auto& latent = data.query_latents[qi];
    for (uint32_t p = 0; p < spec.positives_per_query; ++p) {
      int grade = spec.grade_levels[p % spec.grade_levels.size()];
      double sigma = spec.noise_scale / static_cast<double>(grade);
      auto rng = RngStream::from(spec.seed, "positive-noise", qi, p);
      std::vector<double> v(d);
      for (uint32_t j = 0; j < d; ++j) v[j] = latent[j] + sigma * rng.normal();
      normalize(v);
      uint32_t doc = plant_doc(v, query_tokens[qi]);
      data.qrels.add(data.raw_queries.ids[qi], data.docs.doc_id(doc), grade);
    }
    auto plant_in_band = [&](std::string_view tag, uint32_t i, double cos_min, double cos_max) {
      auto rng = RngStream::from(spec.seed, tag, qi, i);
      double c = cos_min + (cos_max - cos_min) * rng.uniform();
      std::vector<double> w(d);
      double wz;
      do {
        for (uint32_t j = 0; j < d; ++j) w[j] = rng.normal();
        wz = dot(w, latent);
        for (uint32_t j = 0; j < d; ++j) w[j] -= wz * latent[j];
        normalize(w);
      } while (dot(w, w) < 0.5);  // resample the degenerate all-parallel draw
      double s = std::sqrt(std::max(0.0, 1.0 - c * c));
      std::vector<double> v(d);
      for (uint32_t j = 0; j < d; ++j) v[j] = c * latent[j] + s * w[j];
      plant_doc(v, no_seed_tokens);
    };
    for (uint32_t h = 0; h < spec.hard_per_query; ++h)
      plant_in_band("hard-band", h, spec.hard_cos_min, spec.hard_cos_max);
    for (uint32_t f = 0; f < spec.false_negatives_per_query; ++f)
      plant_in_band("false-negative", f, spec.false_neg_cos_min, spec.false_neg_cos_max);
  }
  while (doc_counter < spec.corpus_size) {
    auto rng = RngStream::from(spec.seed, "background", doc_counter);
    std::vector<double> v(d);
    for (uint32_t j = 0; j < d; ++j) v[j] = rng.normal();
    normalize(v);
    plant_doc(v, no_seed_tokens);
  }

  data.embeddings = EmbeddingStore::from_matrix(d, std::move(rows));
  data.queries = tokenize_queries(data.raw_queries, data.vocab, spec.max_query_len);
  return data;
}

double oracle_latent_mrr(const SyntheticData& data, int k) {
  RunFile run;
  for (size_t qi = data.train_count; qi < data.queries.query_ids.size(); ++qi) {
    auto hits = dense_search(data.embeddings, data.query_latents[qi], static_cast<size_t>(k));
    RunFile::QueryRun qr;
    qr.query_id = data.queries.query_ids[qi];
    for (const auto& h : hits) qr.ranked.emplace_back(data.docs.doc_id(h.index), h.score);
    run.queries.push_back(std::move(qr));
  }
  return mrr_at_k(run, data.qrels, k, 1).aggregate;
}

std::string ExperimentTable::to_tsv() const {
  std::ostringstream out;
  out << "#" << title << '\n';
  out << "label";
  for (const auto& c : col_labels) out << '\t' << c;
  out << '\n';
  char buf[32];
  for (size_t r = 0; r < row_labels.size(); ++r) {
    out << row_labels[r];
    for (double v : values[r]) {
      std::snprintf(buf, sizeof(buf), "%.6f", v);
      out << '\t' << buf;
    }
    out << '\n';
  }
  return out.str();
}

namespace {

struct PreparedData {
  SyntheticData data;
  QuerySet train_queries;
  QuerySet val_queries;
  std::vector<QueryContext> contexts;
};

PreparedData prepare(const SyntheticSpec& spec, int rel_threshold) {
  PreparedData p{gen_synthetic(spec), {}, {}, {}};
  p.train_queries = p.data.train_split();
  p.val_queries = p.data.val_split();
  p.contexts = build_query_contexts(p.train_queries, p.data.qrels, p.data.docs, rel_threshold);
  return p;
}

CandidatePool bm25_pool(const PreparedData& p, const QuerySet& queries, size_t depth,
                        size_t max_doc_len) {
  Bm25Index index = build_bm25_index(p.data.docs, p.data.vocab, max_doc_len);
  return build_candidate_pool(
      queries, [&](size_t qi, size_t k) { return bm25_search(index, queries.token_ids[qi], k); },
      depth, "bm25(k1=0.9,b=0.4)");
}

CandidatePool dense_pool(const PreparedData& p, const QuerySet& queries,
                         const EncoderParams& params, size_t depth) {
  return build_candidate_pool(
      queries,
      [&](size_t qi, size_t k) {
        auto q = encode(params, queries.token_ids[qi], false, 0);
        return dense_search(p.data.embeddings, q, k);
      },
      depth, "dense(base)");
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

NegativeCountConfig default_negative_count_config() {
  NegativeCountConfig cfg;
  cfg.spec.dim = 8;
  cfg.spec.corpus_size = 2000;
  cfg.spec.train_queries = 150;
  cfg.spec.val_queries = 75;
  cfg.spec.positives_per_query = 1;
  cfg.spec.grade_levels = {1};
  cfg.spec.noise_scale = 0.06;
  cfg.spec.concept_tokens = 48;
  cfg.spec.query_token_count = 3;
  cfg.spec.hard_per_query = 10;
  cfg.spec.doc_text_tokens = 10;

  cfg.train.policy = NegativePolicy::parse("retrieved_topN");
  cfg.train.loss = LossKind::ListNet;
  cfg.train.batch_size = 16;
  cfg.train.lr = 0.02;
  cfg.train.warmup_steps = 20;
  cfg.train.weight_decay = 0.0;
  cfg.train.max_grad_norm = 1.0;
  cfg.train.max_epochs = 30;
  cfg.train.eval_every = 20;
  cfg.train.patience = 1 << 28;
  cfg.train.embed_dim = cfg.spec.dim;
  cfg.train.out_dim = cfg.spec.dim;
  cfg.train.dropout = 0.0;
  cfg.train.use_projection = false;
  return cfg;
}

NegativeCountResult negative_count_experiment(const NegativeCountConfig& cfg) {
  if (cfg.negative_counts.empty() || cfg.seeds.empty())
    throw ValidationError("negative_count_experiment: empty grid");
  for (size_t i = 1; i < cfg.negative_counts.size(); ++i)
    if (cfg.negative_counts[i] <= cfg.negative_counts[i - 1])
      throw ValidationError("negative counts must be strictly ascending");

  NegativeCountResult result;
  result.negative_counts = cfg.negative_counts;
  result.seeds = cfg.seeds;
  result.best_mrr.assign(cfg.negative_counts.size(),
                         std::vector<double>(cfg.seeds.size(), 0.0));

  for (size_t si = 0; si < cfg.seeds.size(); ++si) {
    SyntheticSpec spec = cfg.spec;
    spec.seed = cfg.seeds[si];
    PreparedData p = prepare(spec, cfg.train.rel_threshold);
    CandidatePool train_pool = bm25_pool(p, p.train_queries, cfg.pool_depth, 256);
    CandidatePool val_pool = bm25_pool(p, p.val_queries, cfg.val_pool_depth, 256);

    for (size_t ni = 0; ni < cfg.negative_counts.size(); ++ni) {
      TrainOptions opt = cfg.train;
      opt.seed = cfg.seeds[si];
      opt.context_size = static_cast<int>(spec.positives_per_query) + cfg.negative_counts[ni];
      EncoderParams params =
          init_encoder(static_cast<uint32_t>(p.data.vocab.size()), opt.embed_dim, opt.out_dim,
                       opt.agg, opt.dropout, opt.use_projection, opt.seed);
      TrainerState state = make_trainer_state(std::move(params), opt);
      TrainingInputs in;
      in.train_contexts = &p.contexts;
      in.train_pool = &train_pool;
      in.store = &p.data.embeddings;
      in.val_queries = &p.val_queries;
      in.val_pool = &val_pool;
      in.qrels = &p.data.qrels;
      in.docs = &p.data.docs;
      TrainSummary summary = run_training(state, in);
      result.best_mrr[ni][si] = summary.best_val_mrr;
    }
  }

  for (size_t ni = 0; ni < cfg.negative_counts.size(); ++ni) {
    const auto& row = result.best_mrr[ni];
    double mean = 0.0;
    for (double v : row) mean += v;
    result.median_mrr.push_back(median_of(row));
    result.mean_mrr.push_back(mean / static_cast<double>(row.size()));
  }
  return result;
}

ExperimentTable NegativeCountResult::table() const {
  ExperimentTable t;
  t.title = "best validation MRR@10 by negative count";
  for (uint64_t s : seeds) t.col_labels.push_back("seed" + std::to_string(s));
  t.col_labels.push_back("median");
  t.col_labels.push_back("mean");
  for (size_t ni = 0; ni < negative_counts.size(); ++ni) {
    t.row_labels.push_back("negatives=" + std::to_string(negative_counts[ni]));
    auto row = best_mrr[ni];
    row.push_back(median_mrr[ni]);
    row.push_back(mean_mrr[ni]);
    t.values.push_back(std::move(row));
  }
  return t;
}

AblationConfig default_ablation_config() {
  AblationConfig cfg;
  cfg.spec.dim = 16;
  cfg.spec.corpus_size = 5000;
  cfg.spec.train_queries = 200;
  cfg.spec.val_queries = 100;
  cfg.spec.positives_per_query = 3;
  cfg.spec.grade_levels = {3, 2, 1};
  cfg.spec.noise_scale = 0.12;
  cfg.spec.concept_tokens = 96;
  cfg.spec.hard_per_query = 8;
  cfg.spec.hard_cos_min = 0.6;
  cfg.spec.hard_cos_max = 0.85;
  cfg.spec.false_negatives_per_query = 5;
  cfg.spec.false_neg_cos_min = 0.90;
  cfg.spec.false_neg_cos_max = 0.96;

  cfg.base_train.policy = NegativePolicy::parse("random_only");
  cfg.base_train.loss = LossKind::MaxMargin;
  cfg.base_train.margin = 1.0;
  cfg.base_train.batch_size = 32;
  cfg.base_train.lr = 0.02;
  cfg.base_train.warmup_steps = 50;
  cfg.base_train.weight_decay = 0.0;
  cfg.base_train.max_grad_norm = 1.0;
  cfg.base_train.max_epochs = 250;
  cfg.base_train.eval_every = 20;
  cfg.base_train.patience = 25;
  cfg.base_train.embed_dim = cfg.spec.dim;
  cfg.base_train.out_dim = cfg.spec.dim;

  cfg.finetune = cfg.base_train;
  cfg.finetune.loss = LossKind::ListNet;
  cfg.finetune.policy = NegativePolicy::parse("retrieved_topN");
  cfg.finetune.lr = 0.01;
  cfg.finetune.warmup_steps = 30;
  cfg.finetune.max_epochs = 60;
  cfg.finetune.eval_every = 20;
  cfg.finetune.patience = 1 << 28;
  return cfg;
}

const ArmResult* AblationResult::arm(std::string_view name) const {
  for (const auto& a : arms)
    if (a.name == name) return &a;
  return nullptr;
}

AblationResult ablation_experiment(const AblationConfig& cfg, uint64_t seed) {
  SyntheticSpec spec = cfg.spec;
  spec.seed = seed;
  PreparedData p = prepare(spec, cfg.base_train.rel_threshold);

  // stage 1: base model trained to saturation on random negatives, validated
  // against a fixed lexical first stage
  CandidatePool base_val_pool = bm25_pool(p, p.val_queries, cfg.val_pool_depth, 256);
  TrainOptions base_opt = cfg.base_train;
  base_opt.seed = seed;
  base_opt.context_size =
      static_cast<int>(spec.positives_per_query) + cfg.base_random_negatives;
  EncoderParams init =
      init_encoder(static_cast<uint32_t>(p.data.vocab.size()), base_opt.embed_dim,
                   base_opt.out_dim, base_opt.agg, base_opt.dropout, base_opt.use_projection,
                   seed);
  TrainerState base_state = make_trainer_state(std::move(init), base_opt);
  TrainingInputs base_in;
  base_in.train_contexts = &p.contexts;
  base_in.train_pool = nullptr;
  base_in.store = &p.data.embeddings;
  base_in.val_queries = &p.val_queries;
  base_in.val_pool = &base_val_pool;
  base_in.qrels = &p.data.qrels;
  base_in.docs = &p.data.docs;
  TrainSummary base_summary = run_training(base_state, base_in);
  const EncoderParams base_params = base_summary.best_params;

  // stage 2: candidate pools from the base model (dense retrieval)
  CandidatePool train_pool = dense_pool(p, p.train_queries, base_params, cfg.pool_depth);
  CandidatePool val_pool = dense_pool(p, p.val_queries, base_params, cfg.val_pool_depth);

  AblationResult result;
  result.base_best_mrr =
      rerank_validation_mrr(base_params, p.val_queries, val_pool, p.data.qrels, p.data.docs,
                            p.data.embeddings, cfg.finetune.mrr_k, cfg.finetune.rel_threshold);

  // stage 3: fine-tune one arm per policy/loss combination from the same base
  struct ArmSpec {
    std::string name;
    const char* policy;
    LossKind loss;
  };
  std::vector<ArmSpec> arm_specs = {
      {"listnet_retrieved", "retrieved_topN", LossKind::ListNet},
      {"maxmargin_retrieved", "retrieved_topN", LossKind::MaxMargin},
      {"listnet_random", "random_only", LossKind::ListNet},
  };
  if (cfg.include_inbatch_arm)
    arm_specs.push_back({"listnet_retrieved_inbatch", "retrieved_plus_inbatch", LossKind::ListNet});

  for (const auto& arm_spec : arm_specs) {
    TrainOptions opt = cfg.finetune;
    opt.seed = seed;
    opt.policy = NegativePolicy::parse(arm_spec.policy);
    opt.loss = arm_spec.loss;
    opt.context_size = cfg.finetune_context;
    TrainerState state = make_trainer_state(base_params, opt);
    TrainingInputs in;
    in.train_contexts = &p.contexts;
    in.train_pool = opt.policy.needs_pool() ? &train_pool : nullptr;
    in.store = &p.data.embeddings;
    in.val_queries = &p.val_queries;
    in.val_pool = &val_pool;
    in.qrels = &p.data.qrels;
    in.docs = &p.data.docs;
    TrainSummary summary = run_training(state, in);

    ArmResult arm;
    arm.name = arm_spec.name;
    arm.final_val_mrr = summary.final_val_mrr;
    arm.best_val_mrr = summary.best_val_mrr;
    arm.train_losses = std::move(summary.train_losses);
    arm.val_curve = std::move(summary.val_curve);
    result.arms.push_back(std::move(arm));
  }
  return result;
}

namespace {

ExperimentTable ablation_table(const AblationConfig& cfg, std::span<const uint64_t> seeds,
                               const std::vector<std::string>& arm_names, std::string title) {
  ExperimentTable t;
  t.title = std::move(title);
  for (uint64_t s : seeds) t.col_labels.push_back("seed" + std::to_string(s));
  t.col_labels.push_back("mean");
  std::vector<std::vector<double>> rows(arm_names.size() + 1);
  for (uint64_t seed : seeds) {
    AblationResult res = ablation_experiment(cfg, seed);
    rows[0].push_back(res.base_best_mrr);
    for (size_t a = 0; a < arm_names.size(); ++a) {
      const ArmResult* arm = res.arm(arm_names[a]);
      rows[a + 1].push_back(arm != nullptr ? arm->final_val_mrr : 0.0);
    }
  }
  t.row_labels.push_back("base");
  for (const auto& n : arm_names) t.row_labels.push_back(n);
  for (auto& row : rows) {
    double mean = 0.0;
    for (double v : row) mean += v;
    row.push_back(row.empty() ? 0.0 : mean / static_cast<double>(seeds.size()));
    t.values.push_back(std::move(row));
  }
  return t;
}

}  // namespace

ExperimentTable negative_type_experiment(const AblationConfig& cfg,
                                         std::span<const uint64_t> seeds) {
  std::vector<std::string> arms = {"listnet_retrieved", "listnet_random"};
  if (cfg.include_inbatch_arm) arms.push_back("listnet_retrieved_inbatch");
  return ablation_table(cfg, seeds, arms, "final validation MRR@10 by negative composition");
}

ExperimentTable loss_type_experiment(const AblationConfig& cfg, std::span<const uint64_t> seeds) {
  return ablation_table(cfg, seeds, {"listnet_retrieved", "maxmargin_retrieved"},
                        "final validation MRR@10 by loss type (retrieved_topN)");
}

}  // namespace coder
