#include "coder/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "coder/metrics.hpp"
#include "coder/tensor_file.hpp"

namespace coder {

namespace {

constexpr char kStateMagic[4] = {'C', 'D', 'R', 'Q'};

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

LossKind parse_loss_kind(std::string_view name) {
  if (name == "listnet") return LossKind::ListNet;
  if (name == "maxmargin") return LossKind::MaxMargin;
  throw ValidationError("unknown loss kind: " + std::string(name));
}

std::string loss_kind_name(LossKind kind) {
  return kind == LossKind::ListNet ? "listnet" : "maxmargin";
}

NegativePolicy NegativePolicy::parse(std::string_view text) {
  NegativePolicy p;
  if (text == "retrieved_topN") {
    p.kind = Kind::RetrievedTopN;
  } else if (text == "random_only") {
    p.kind = Kind::RandomOnly;
  } else if (text == "retrieved_plus_inbatch") {
    p.kind = Kind::RetrievedPlusInbatch;
  } else if (text.rfind("mixed:", 0) == 0) {
    p.kind = Kind::Mixed;
    try {
      p.mixed_retrieved = std::stoi(std::string(text.substr(6)));
    } catch (const std::exception&) {
      throw ValidationError("bad mixed policy spec: " + std::string(text));
    }
    if (p.mixed_retrieved < 0) throw ValidationError("mixed retrieved count must be >= 0");
  } else {
    throw ValidationError("unknown negative policy: " + std::string(text));
  }
  return p;
}

std::string NegativePolicy::name() const {
  switch (kind) {
    case Kind::RetrievedTopN:
      return "retrieved_topN";
    case Kind::RandomOnly:
      return "random_only";
    case Kind::Mixed:
      return "mixed:" + std::to_string(mixed_retrieved);
    case Kind::RetrievedPlusInbatch:
      return "retrieved_plus_inbatch";
  }
  return "?";
}

std::map<std::string, std::string> TrainOptions::to_map() const {
  std::map<std::string, std::string> kv;
  kv["context_size"] = std::to_string(context_size);
  kv["policy"] = policy.name();
  kv["loss"] = loss_kind_name(loss);
  kv["margin"] = fmt_double(margin);
  kv["label_temperature"] = fmt_double(label_temperature);
  kv["rel_threshold"] = std::to_string(rel_threshold);
  kv["batch_size"] = std::to_string(batch_size);
  kv["lr"] = fmt_double(lr);
  kv["warmup_steps"] = std::to_string(warmup_steps);
  kv["weight_decay"] = fmt_double(weight_decay);
  kv["adam_eps"] = fmt_double(adam_eps);
  kv["adam_beta1"] = fmt_double(adam_beta1);
  kv["adam_beta2"] = fmt_double(adam_beta2);
  kv["radam"] = rectify ? "1" : "0";
  kv["max_grad_norm"] = fmt_double(max_grad_norm);
  kv["epochs"] = std::to_string(max_epochs);
  kv["eval_every"] = std::to_string(eval_every);
  kv["patience"] = std::to_string(patience);
  kv["mrr_k"] = std::to_string(mrr_k);
  kv["seed"] = std::to_string(seed);
  kv["embed_dim"] = std::to_string(embed_dim);
  kv["out_dim"] = std::to_string(out_dim);
  kv["agg"] = agg_mode_name(agg);
  kv["dropout"] = fmt_double(dropout);
  kv["use_projection"] = use_projection ? "1" : "0";
  kv["max_query_len"] = std::to_string(max_query_len);
  return kv;
}

TrainOptions TrainOptions::from_map(const std::map<std::string, std::string>& kv) {
  TrainOptions o;
  auto get = [&](const std::string& key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  try {
    if (auto* v = get("context_size")) o.context_size = std::stoi(*v);
    if (auto* v = get("policy")) o.policy = NegativePolicy::parse(*v);
    if (auto* v = get("loss")) o.loss = parse_loss_kind(*v);
    if (auto* v = get("margin")) o.margin = std::stod(*v);
    if (auto* v = get("label_temperature")) o.label_temperature = std::stod(*v);
    if (auto* v = get("rel_threshold")) o.rel_threshold = std::stoi(*v);
    if (auto* v = get("batch_size")) o.batch_size = std::stoi(*v);
    if (auto* v = get("lr")) o.lr = std::stod(*v);
    if (auto* v = get("warmup_steps")) o.warmup_steps = std::stoi(*v);
    if (auto* v = get("weight_decay")) o.weight_decay = std::stod(*v);
    if (auto* v = get("adam_eps")) o.adam_eps = std::stod(*v);
    if (auto* v = get("adam_beta1")) o.adam_beta1 = std::stod(*v);
    if (auto* v = get("adam_beta2")) o.adam_beta2 = std::stod(*v);
    if (auto* v = get("radam")) o.rectify = *v == "1" || *v == "true";
    if (auto* v = get("max_grad_norm")) o.max_grad_norm = std::stod(*v);
    if (auto* v = get("epochs")) o.max_epochs = std::stoi(*v);
    if (auto* v = get("eval_every")) o.eval_every = std::stoi(*v);
    if (auto* v = get("patience")) o.patience = std::stoi(*v);
    if (auto* v = get("mrr_k")) o.mrr_k = std::stoi(*v);
    if (auto* v = get("seed")) o.seed = std::stoull(*v);
    if (auto* v = get("embed_dim")) o.embed_dim = static_cast<uint32_t>(std::stoul(*v));
    if (auto* v = get("out_dim")) o.out_dim = static_cast<uint32_t>(std::stoul(*v));
    if (auto* v = get("agg")) o.agg = parse_agg_mode(*v);
    if (auto* v = get("dropout")) o.dropout = std::stod(*v);
    if (auto* v = get("use_projection")) o.use_projection = *v == "1" || *v == "true";
    if (auto* v = get("max_query_len")) o.max_query_len = std::stoul(*v);
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception& e) {
    throw ValidationError(std::string("bad training option value: ") + e.what());
  }
  if (o.context_size < 2) throw ValidationError("context_size must be >= 2");
  if (o.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (o.eval_every < 1) throw ValidationError("eval_every must be >= 1");
  if (o.max_epochs < 1) throw ValidationError("epochs must be >= 1");
  if (o.lr < 0.0) throw ValidationError("lr must be >= 0");
  if (o.dropout < 0.0 || o.dropout >= 1.0) throw ValidationError("dropout must be in [0, 1)");
  return o;
}

std::vector<QueryContext> build_query_contexts(const QuerySet& queries,
                                               const RelevanceJudgments& qrels,
                                               const DocStore& docs, int rel_threshold,
                                               std::vector<std::string>* excluded) {
  std::vector<QueryContext> contexts;
  for (size_t i = 0; i < queries.query_ids.size(); ++i) {
    const std::string& qid = queries.query_ids[i];
    QueryContext ctx;
    ctx.id = qid;
    ctx.tokens = queries.token_ids[i];
    for (const auto& docid : qrels.positives(qid, rel_threshold)) {
      auto idx = docs.index_of(docid);
      if (!idx) continue;  // judged doc absent from this collection
      ctx.positives.emplace_back(static_cast<uint32_t>(*idx),
                                 static_cast<double>(qrels.grade(qid, docid)));
    }
    if (ctx.positives.empty()) {
      if (excluded != nullptr) excluded->push_back(qid);
      continue;
    }
    contexts.push_back(std::move(ctx));
  }
  return contexts;
}

TrainingBatch assemble_batch(const std::vector<QueryContext>& contexts,
                             std::span<const size_t> selected, const CandidatePool* pool,
                             const NegativePolicy& policy, size_t context_size,
                             size_t corpus_size, uint64_t seed, int64_t step,
                             double label_temperature) {
  if (selected.empty()) throw ValidationError("assemble_batch: empty selection");
  if (context_size < 2) throw ValidationError("assemble_batch: context_size must be >= 2");
  if (label_temperature <= 0.0) throw ValidationError("label temperature must be positive");
  if (policy.needs_pool() && pool == nullptr)
    throw ValidationError("policy " + policy.name() + " requires a candidate pool");

  // In-batch mode appends the other queries' positives, growing every context
  // by the same amount so the batch stays rectangular.
  size_t total_positives = 0;
  for (size_t ci : selected) {
    size_t k = contexts[ci].positives.size();
    if (k == 0) throw ValidationError("assemble_batch: query without positives");
    if (k >= context_size)
      throw ValidationError("assemble_batch: query " + contexts[ci].id +
                            " has too many positives for context_size");
    total_positives += k;
  }
  size_t extras = 0;
  if (policy.kind == NegativePolicy::Kind::RetrievedPlusInbatch) {
    // worst case across slots: every other query's positives
    size_t min_k = context_size;
    for (size_t ci : selected) min_k = std::min(min_k, contexts[ci].positives.size());
    extras = total_positives - min_k;
  }
  size_t total = context_size + extras;
  if (total > corpus_size)
    throw ValidationError("assemble_batch: context does not fit in the corpus");

  TrainingBatch batch;
  batch.context_size = total;
  batch.queries.reserve(selected.size());

  for (size_t slot = 0; slot < selected.size(); ++slot) {
    const QueryContext& ctx = contexts[selected[slot]];
    BatchQuery bq;
    bq.context_index = selected[slot];
    bq.positive_count = static_cast<int>(ctx.positives.size());

    std::unordered_set<uint32_t> used;
    for (const auto& [idx, grade] : ctx.positives) {
      bq.candidates.push_back(idx);
      bq.labels.push_back(grade / label_temperature);
      used.insert(idx);
    }

    auto rng = RngStream::from(seed, "assemble-negatives", static_cast<uint64_t>(step), slot);
    auto take_random = [&](size_t want) {
      size_t taken = 0;
      while (taken < want) {
        uint32_t idx = static_cast<uint32_t>(rng.bounded(corpus_size));
        if (!used.insert(idx).second) continue;
        bq.candidates.push_back(idx);
        bq.labels.push_back(kNegInf);
        ++taken;
      }
    };
    auto take_retrieved = [&](size_t want) -> size_t {
      const auto* items = pool != nullptr ? pool->find(ctx.id) : nullptr;
      size_t taken = 0;
      if (items != nullptr) {
        for (const auto& it : *items) {
          if (taken >= want) break;
          if (!used.insert(it.index).second) continue;
          bq.candidates.push_back(it.index);
          bq.labels.push_back(kNegInf);
          ++taken;
        }
      }
      return taken;
    };

    size_t base_negatives = context_size - ctx.positives.size();
    switch (policy.kind) {
      case NegativePolicy::Kind::RetrievedTopN:
      case NegativePolicy::Kind::RetrievedPlusInbatch: {
        size_t got = take_retrieved(base_negatives);
        if (got < base_negatives) {
          batch.random_topups += static_cast<int>(base_negatives - got);
          take_random(base_negatives - got);
        }
        break;
      }
      case NegativePolicy::Kind::RandomOnly:
        take_random(base_negatives);
        break;
      case NegativePolicy::Kind::Mixed: {
        size_t want_retrieved =
            std::min<size_t>(static_cast<size_t>(policy.mixed_retrieved), base_negatives);
        size_t got = take_retrieved(want_retrieved);
        take_random(base_negatives - got);
        break;
      }
    }

    if (policy.kind == NegativePolicy::Kind::RetrievedPlusInbatch) {
      for (size_t other = 0; other < selected.size(); ++other) {
        if (other == slot) continue;
        for (const auto& [idx, grade] : contexts[selected[other]].positives) {
          if (bq.candidates.size() >= total) break;
          if (!used.insert(idx).second) continue;
          bq.candidates.push_back(idx);
          bq.labels.push_back(kNegInf);
        }
      }
      if (bq.candidates.size() < total) take_random(total - bq.candidates.size());
    }

    if (bq.candidates.size() != total)
      throw ValidationError("assemble_batch: context assembly came up short for " + ctx.id);
    batch.queries.push_back(std::move(bq));
  }
  return batch;
}

TrainerState make_trainer_state(EncoderParams params, TrainOptions opt) {
  TrainerState state;
  state.m_emb.assign(params.token_embeddings.size(), 0.0);
  state.v_emb.assign(params.token_embeddings.size(), 0.0);
  state.m_proj.assign(params.projection.size(), 0.0);
  state.v_proj.assign(params.projection.size(), 0.0);
  state.params = std::move(params);
  state.opt = std::move(opt);
  return state;
}

double lr_schedule(int64_t step, double base_lr, int64_t warmup_steps) {
  if (step < 0) throw ValidationError("lr_schedule: step must be >= 0");
  if (warmup_steps <= 0) return base_lr;
  double ramp = static_cast<double>(step) / static_cast<double>(warmup_steps);
  return base_lr * std::min(1.0, ramp);
}

void optimizer_step(TrainerState& state, const EncoderGradients& grads) {
  const TrainOptions& opt = state.opt;
  int64_t t = state.step + 1;
  double lr = lr_schedule(t, opt.lr, opt.warmup_steps);
  double b1 = opt.adam_beta1;
  double b2 = opt.adam_beta2;
  double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));

  bool adaptive = true;
  double rect = 1.0;
  if (opt.rectify) {
    double rho_inf = 2.0 / (1.0 - b2) - 1.0;
    double beta2t = std::pow(b2, static_cast<double>(t));
    double rho_t = rho_inf - 2.0 * static_cast<double>(t) * beta2t / (1.0 - beta2t);
    if (rho_t > 4.0) {
      rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                       ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    } else {
      adaptive = false;
    }
  }

  auto apply = [&](double* param, double* m, double* v, const double* g, size_t len) {
    for (size_t i = 0; i < len; ++i) {
      double grad = g != nullptr ? g[i] : 0.0;
      m[i] = b1 * m[i] + (1.0 - b1) * grad;
      v[i] = b2 * v[i] + (1.0 - b2) * grad * grad;
      double m_hat = m[i] / bc1;
      double update;
      if (adaptive) {
        double v_hat = v[i] / bc2;
        update = rect * m_hat / (std::sqrt(v_hat) + opt.adam_eps);
      } else {
        update = m_hat;
      }
      param[i] -= lr * update + lr * opt.weight_decay * param[i];
    }
  };

  const uint32_t d = state.params.embed_dim;
  for (uint32_t row = 0; row < state.params.vocab_size; ++row) {
    size_t off = static_cast<size_t>(row) * d;
    auto it = grads.token_rows.find(static_cast<int32_t>(row));
    const double* g = it != grads.token_rows.end() ? it->second.data() : nullptr;
    apply(state.params.token_embeddings.data() + off, state.m_emb.data() + off,
          state.v_emb.data() + off, g, d);
  }
  if (state.params.has_projection()) {
    const double* g = grads.projection.empty() ? nullptr : grads.projection.data();
    apply(state.params.projection.data(), state.m_proj.data(), state.v_proj.data(), g,
          state.params.projection.size());
  }
  state.step = t;
}

BatchForward batch_forward_backward(const EncoderParams& params, const TrainingBatch& batch,
                                    const std::vector<QueryContext>& contexts,
                                    const EmbeddingStore& store, LossKind loss, double margin,
                                    uint64_t seed, int64_t step) {
  BatchForward out;
  double total_loss = 0.0;
  std::vector<double> grad_q(params.out_dim);
  for (size_t slot = 0; slot < batch.queries.size(); ++slot) {
    const BatchQuery& bq = batch.queries[slot];
    const QueryContext& ctx = contexts[bq.context_index];

    EncodeCache cache;
    uint64_t dropout_key = derive_key(seed, "dropout", static_cast<uint64_t>(step), slot);
    auto q = encode(params, ctx.tokens, params.dropout_rate > 0.0, dropout_key, &cache);
    auto scores = score_candidates(q, store, bq.candidates);
    LossResult res = loss == LossKind::ListNet ? listnet_loss(scores, bq.labels)
                                               : maxmargin_loss(scores, bq.labels, margin);
    if (!std::isfinite(res.loss))
      throw TrainingError("non-finite loss at step " + std::to_string(step) + " for query " +
                          ctx.id);
    total_loss += res.loss;

    std::fill(grad_q.begin(), grad_q.end(), 0.0);
    for (size_t i = 0; i < bq.candidates.size(); ++i) {
      double g = res.grad[i];
      if (g == 0.0) continue;
      auto row = store.row(bq.candidates[i]);
      for (uint32_t j = 0; j < params.out_dim; ++j)
        grad_q[j] += g * static_cast<double>(row[j]);
    }
    encode_backward(params, cache, grad_q, out.grads);
  }
  double inv_b = 1.0 / static_cast<double>(batch.queries.size());
  out.grads.scale(inv_b);
  out.mean_loss = total_loss * inv_b;
  return out;
}

double train_step(TrainerState& state, const TrainingBatch& batch,
                  const std::vector<QueryContext>& contexts, const EmbeddingStore& store) {
  BatchForward fwd = batch_forward_backward(state.params, batch, contexts, store, state.opt.loss,
                                            state.opt.margin, state.opt.seed, state.step);
  if (state.opt.max_grad_norm > 0.0) {
    double norm = std::sqrt(fwd.grads.squared_norm());
    if (norm > state.opt.max_grad_norm) fwd.grads.scale(state.opt.max_grad_norm / norm);
  }
  optimizer_step(state, fwd.grads);
  return fwd.mean_loss;
}

double rerank_validation_mrr(const EncoderParams& params, const QuerySet& val_queries,
                             const CandidatePool& val_pool, const RelevanceJudgments& qrels,
                             const DocStore& docs, const EmbeddingStore& store, int k,
                             int rel_threshold) {
  RunFile run;
  for (size_t i = 0; i < val_queries.query_ids.size(); ++i) {
    const auto* items = val_pool.find(val_queries.query_ids[i]);
    if (items == nullptr || items->empty()) continue;
    auto q = encode(params, val_queries.token_ids[i], /*train_mode=*/false, 0);
    std::vector<uint32_t> ids;
    ids.reserve(items->size());
    for (const auto& it : *items) ids.push_back(it.index);
    auto ranked = rerank(q, ids, store);
    RunFile::QueryRun qr;
    qr.query_id = val_queries.query_ids[i];
    for (const auto& sd : ranked) qr.ranked.emplace_back(docs.doc_id(sd.index), sd.score);
    run.queries.push_back(std::move(qr));
  }
  return mrr_at_k(run, qrels, k, rel_threshold).aggregate;
}

TrainSummary run_training(TrainerState& state, const TrainingInputs& in) {
  if (in.train_contexts == nullptr || in.store == nullptr)
    throw ValidationError("run_training: missing training inputs");
  if (in.train_contexts->empty()) throw ValidationError("run_training: no training queries");
  bool has_validation = in.val_queries != nullptr && in.val_pool != nullptr &&
                        in.qrels != nullptr && in.docs != nullptr;
  const TrainOptions& opt = state.opt;

  TrainSummary summary;
  auto evaluate = [&]() -> double {
    if (!has_validation) return 0.0;
    return rerank_validation_mrr(state.params, *in.val_queries, *in.val_pool, *in.qrels, *in.docs,
                                 *in.store, opt.mrr_k, opt.rel_threshold);
  };

  double val = evaluate();
  summary.val_curve.emplace_back(state.step, val);
  summary.best_val_mrr = val;
  summary.best_step = state.step;
  summary.best_params = state.params;
  double last_val = val;
  int evals_since_best = 0;

  auto log_row = [&](double loss) {
    if (in.log_stream == nullptr) return;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%lld\t%.9g\t%.6f\t%.9g\n",
                  static_cast<long long>(state.step), loss, last_val,
                  lr_schedule(state.step, opt.lr, opt.warmup_steps));
    *in.log_stream << buf;
  };

  std::vector<size_t> order(in.train_contexts->size());
  bool stop = false;
  for (int64_t epoch = state.epoch; epoch < opt.max_epochs && !stop; ++epoch) {
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto shuffle_rng = RngStream::from(opt.seed, "epoch-shuffle", static_cast<uint64_t>(epoch));
    fisher_yates(order, shuffle_rng);

    size_t num_batches =
        (order.size() + static_cast<size_t>(opt.batch_size) - 1) / static_cast<size_t>(opt.batch_size);
    int64_t start_pos = epoch == state.epoch ? state.epoch_pos : 0;
    for (int64_t b = start_pos; b < static_cast<int64_t>(num_batches) && !stop; ++b) {
      size_t begin = static_cast<size_t>(b) * static_cast<size_t>(opt.batch_size);
      size_t end = std::min(begin + static_cast<size_t>(opt.batch_size), order.size());
      std::span<const size_t> selected(order.data() + begin, end - begin);

      TrainingBatch batch = assemble_batch(*in.train_contexts, selected, in.train_pool, opt.policy,
                                           static_cast<size_t>(opt.context_size),
                                           in.store->count(), opt.seed, state.step,
                                           opt.label_temperature);
      double loss = train_step(state, batch, *in.train_contexts, *in.store);
      summary.train_losses.push_back(loss);
      state.epoch = epoch;
      state.epoch_pos = b + 1;

      if (has_validation && state.step % opt.eval_every == 0) {
        val = evaluate();
        last_val = val;
        summary.val_curve.emplace_back(state.step, val);
        if (val > summary.best_val_mrr + 1e-12) {
          summary.best_val_mrr = val;
          summary.best_step = state.step;
          summary.best_params = state.params;
          evals_since_best = 0;
        } else if (++evals_since_best > opt.patience) {
          stop = true;
        }
      }
      log_row(loss);
    }
    if (!stop) {
      state.epoch = epoch + 1;
      state.epoch_pos = 0;
    }
  }

  if (has_validation &&
      (summary.val_curve.empty() || summary.val_curve.back().first != state.step)) {
    val = evaluate();
    summary.val_curve.emplace_back(state.step, val);
    if (val > summary.best_val_mrr + 1e-12) {
      summary.best_val_mrr = val;
      summary.best_step = state.step;
      summary.best_params = state.params;
    }
  }
  summary.final_val_mrr = summary.val_curve.empty() ? 0.0 : summary.val_curve.back().second;
  summary.steps = state.step;
  return summary;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  size_t line_no = 0;
  auto trim = [](std::string s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ValidationError(path + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ValidationError(path + ":" + std::to_string(line_no) + ": empty key");
    if (!kv.emplace(key, value).second)
      throw ValidationError(path + ":" + std::to_string(line_no) + ": duplicate key " + key);
  }
  return kv;
}

TrainRunConfig load_train_config(const std::string& path) {
  auto kv = parse_config_file(path);
  static const std::unordered_set<std::string> path_keys = {
      "collection", "vocab",      "embeddings", "qrels",   "train_queries", "val_queries",
      "train_pool", "val_pool",   "out_dir",    "init_checkpoint", "resume_state"};
  TrainRunConfig cfg;
  std::map<std::string, std::string> opt_kv;
  for (const auto& [k, v] : kv) {
    if (path_keys.count(k) == 0) {
      opt_kv[k] = v;
      continue;
    }
    if (k == "collection") cfg.collection = v;
    else if (k == "vocab") cfg.vocab = v;
    else if (k == "embeddings") cfg.embeddings = v;
    else if (k == "qrels") cfg.qrels = v;
    else if (k == "train_queries") cfg.train_queries = v;
    else if (k == "val_queries") cfg.val_queries = v;
    else if (k == "train_pool") cfg.train_pool = v;
    else if (k == "val_pool") cfg.val_pool = v;
    else if (k == "out_dir") cfg.out_dir = v;
    else if (k == "init_checkpoint") cfg.init_checkpoint = v;
    else if (k == "resume_state") cfg.resume_state = v;
  }
  static const std::unordered_set<std::string> option_keys = {
      "context_size", "policy", "loss", "margin", "label_temperature", "rel_threshold",
      "batch_size", "lr", "warmup_steps", "weight_decay", "adam_eps", "adam_beta1", "adam_beta2",
      "radam", "max_grad_norm", "epochs", "eval_every", "patience", "mrr_k", "seed", "embed_dim",
      "out_dim", "agg", "dropout", "use_projection", "max_query_len"};
  for (const auto& [k, v] : opt_kv)
    if (option_keys.count(k) == 0) throw ValidationError("unknown config key: " + k);
  cfg.opt = TrainOptions::from_map(opt_kv);

  if (cfg.collection.empty() || cfg.vocab.empty() || cfg.embeddings.empty() || cfg.qrels.empty() ||
      cfg.train_queries.empty() || cfg.val_queries.empty() || cfg.val_pool.empty())
    throw ValidationError(
        "config must set collection, vocab, embeddings, qrels, train_queries, val_queries and "
        "val_pool");
  if (cfg.opt.policy.needs_pool() && cfg.train_pool.empty())
    throw ValidationError("policy " + cfg.opt.policy.name() + " requires train_pool");
  return cfg;
}

TrainSummary train(const TrainRunConfig& cfg) {
  Vocab vocab = load_vocab(cfg.vocab);
  DocStore docs = load_collection(cfg.collection);
  EmbeddingStore store = open_embeddings(cfg.embeddings);
  if (store.count() != docs.count())
    throw ValidationError("embedding count does not match the collection");
  RelevanceJudgments qrels = load_qrels(cfg.qrels);

  QuerySet train_q = tokenize_queries(load_queries(cfg.train_queries), vocab, cfg.opt.max_query_len);
  QuerySet val_q = tokenize_queries(load_queries(cfg.val_queries), vocab, cfg.opt.max_query_len);
  std::vector<std::string> excluded;
  auto contexts = build_query_contexts(train_q, qrels, docs, cfg.opt.rel_threshold, &excluded);
  if (contexts.empty()) throw ValidationError("no training queries with positives");

  CandidatePool train_pool, val_pool;
  if (!cfg.train_pool.empty()) train_pool = load_pool(cfg.train_pool, docs);
  val_pool = load_pool(cfg.val_pool, docs);

  TrainerState state;
  if (!cfg.resume_state.empty()) {
    state = load_trainer_state(cfg.resume_state);
  } else {
    EncoderParams params;
    if (!cfg.init_checkpoint.empty()) {
      params = load_encoder(cfg.init_checkpoint).params;
    } else {
      params = init_encoder(static_cast<uint32_t>(vocab.size()), cfg.opt.embed_dim,
                            cfg.opt.out_dim, cfg.opt.agg, cfg.opt.dropout, cfg.opt.use_projection,
                            cfg.opt.seed);
    }
    if (params.out_dim != store.dim())
      throw ValidationError("encoder out_dim must match the embedding dim");
    state = make_trainer_state(std::move(params), cfg.opt);
  }

  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream log(cfg.out_dir + "/train_log.tsv",
                    cfg.resume_state.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot open training log in " + cfg.out_dir);
  if (cfg.resume_state.empty()) log << "#step\tloss\tval_mrr10\tlr\n";

  TrainingInputs inputs;
  inputs.train_contexts = &contexts;
  inputs.train_pool = cfg.opt.policy.needs_pool() ? &train_pool : nullptr;
  inputs.store = &store;
  inputs.val_queries = &val_q;
  inputs.val_pool = &val_pool;
  inputs.qrels = &qrels;
  inputs.docs = &docs;
  inputs.log_stream = &log;

  TrainSummary summary = run_training(state, inputs);
  save_encoder(summary.best_params, cfg.out_dir + "/checkpoint_best.cdrq", summary.best_step);
  save_encoder(state.params, cfg.out_dir + "/checkpoint_final.cdrq", state.step);
  save_trainer_state(state, cfg.out_dir + "/state_last.cdrq");
  return summary;
}

void save_trainer_state(const TrainerState& state, const std::string& path) {
  TensorFile file;
  file.meta = state.opt.to_map();
  file.meta["state_step"] = std::to_string(state.step);
  file.meta["state_epoch"] = std::to_string(state.epoch);
  file.meta["state_epoch_pos"] = std::to_string(state.epoch_pos);
  file.meta["agg_mode"] = agg_mode_name(state.params.agg);
  file.meta["vocab_size"] = std::to_string(state.params.vocab_size);
  file.meta["enc_embed_dim"] = std::to_string(state.params.embed_dim);
  file.meta["enc_out_dim"] = std::to_string(state.params.out_dim);
  file.meta["enc_dropout"] = fmt_double(state.params.dropout_rate);

  const auto& p = state.params;
  file.tensors.push_back({"token_embeddings", p.vocab_size, p.embed_dim, p.token_embeddings});
  file.tensors.push_back({"m_emb", p.vocab_size, p.embed_dim, state.m_emb});
  file.tensors.push_back({"v_emb", p.vocab_size, p.embed_dim, state.v_emb});
  if (p.has_projection()) {
    file.tensors.push_back({"projection", p.out_dim, p.embed_dim, p.projection});
    file.tensors.push_back({"m_proj", p.out_dim, p.embed_dim, state.m_proj});
    file.tensors.push_back({"v_proj", p.out_dim, p.embed_dim, state.v_proj});
  }
  write_tensor_file(path, kStateMagic, file);
}

TrainerState load_trainer_state(const std::string& path) {
  TensorFile file = read_tensor_file(path, kStateMagic);
  TrainerState state;
  std::map<std::string, std::string> opt_kv;
  for (const auto& [k, v] : file.meta)
    if (k.rfind("state_", 0) != 0 && k.rfind("enc_", 0) != 0 && k != "agg_mode" &&
        k != "vocab_size")
      opt_kv[k] = v;
  state.opt = TrainOptions::from_map(opt_kv);
  state.step = std::stoll(file.meta_value("state_step"));
  state.epoch = std::stoll(file.meta_value("state_epoch"));
  state.epoch_pos = std::stoll(file.meta_value("state_epoch_pos"));

  EncoderParams& p = state.params;
  p.agg = parse_agg_mode(file.meta_value("agg_mode"));
  p.vocab_size = static_cast<uint32_t>(std::stoul(file.meta_value("vocab_size")));
  p.embed_dim = static_cast<uint32_t>(std::stoul(file.meta_value("enc_embed_dim")));
  p.out_dim = static_cast<uint32_t>(std::stoul(file.meta_value("enc_out_dim")));
  p.dropout_rate = std::stod(file.meta_value("enc_dropout"));

  auto need = [&](const std::string& name) -> const TensorFile::Tensor& {
    const auto* t = file.find(name);
    if (t == nullptr) throw FormatError(path + ": missing tensor " + name);
    return *t;
  };
  p.token_embeddings = need("token_embeddings").data;
  state.m_emb = need("m_emb").data;
  state.v_emb = need("v_emb").data;
  if (file.find("projection") != nullptr) {
    p.projection = need("projection").data;
    state.m_proj = need("m_proj").data;
    state.v_proj = need("v_proj").data;
  }
  if (p.token_embeddings.size() != static_cast<size_t>(p.vocab_size) * p.embed_dim)
    throw FormatError(path + ": token_embeddings shape mismatch");
  return state;
}

}  // namespace coder
