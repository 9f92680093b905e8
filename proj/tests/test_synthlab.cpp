#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <unordered_set>

#include "coder/metrics.hpp"
#include "coder/synthlab.hpp"
#include "test_util.hpp"

using namespace coder;

namespace {

SyntheticSpec tiny_spec() {
  SyntheticSpec spec;
  spec.dim = 8;
  spec.corpus_size = 300;
  spec.train_queries = 20;
  spec.val_queries = 10;
  spec.positives_per_query = 2;
  spec.grade_levels = {2, 1};
  spec.noise_scale = 0.05;
  spec.concept_tokens = 32;
  spec.query_token_count = 3;
  spec.hard_per_query = 4;
  spec.doc_text_tokens = 8;
  spec.seed = 11;
  return spec;
}

double cosine(std::span<const float> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("gen_synthetic structure and invariants") {
  auto spec = tiny_spec();
  auto data = gen_synthetic(spec);

  CHECK(data.docs.count() == spec.corpus_size);
  CHECK(data.embeddings.count() == spec.corpus_size);
  CHECK(data.embeddings.dim() == spec.dim);
  CHECK(data.queries.query_ids.size() == 30);
  CHECK(data.train_count == 20);
  CHECK(data.qrels.query_count() == 30);

  // every query has its configured graded positives
  for (const auto& qid : data.queries.query_ids) {
    auto pos = data.qrels.positives(qid, 1);
    CHECK(pos.size() == spec.positives_per_query);
    int max_grade = 0;
    for (const auto& d : pos) max_grade = std::max(max_grade, data.qrels.grade(qid, d));
    CHECK(max_grade == 2);
  }

  // planted embeddings are unit rows
  for (uint64_t i = 0; i < data.embeddings.count(); ++i) {
    double norm2 = 0;
    for (float x : data.embeddings.row(i)) norm2 += static_cast<double>(x) * x;
    CHECK(norm2 == doctest::Approx(1.0).epsilon(1e-5));
  }

  // positives sit close to the latent, grade 2 tighter than grade 1
  for (size_t qi = 0; qi < data.queries.query_ids.size(); ++qi) {
    const auto& qid = data.queries.query_ids[qi];
    for (const auto& docid : data.qrels.positives(qid, 1)) {
      auto idx = *data.docs.index_of(docid);
      double c = cosine(data.embeddings.row(idx), data.query_latents[qi]);
      CHECK(c > 0.9);
    }
  }
}

TEST_CASE("gen_synthetic is bit-deterministic per spec") {
  auto spec = tiny_spec();
  auto a = gen_synthetic(spec);
  auto b = gen_synthetic(spec);
  CHECK(a.raw_queries.texts == b.raw_queries.texts);
  for (size_t i = 0; i < a.docs.count(); ++i) CHECK(a.docs.text(i) == b.docs.text(i));
  for (uint64_t i = 0; i < a.embeddings.count(); ++i) {
    auto ra = a.embeddings.row(i), rb = b.embeddings.row(i);
    for (size_t j = 0; j < ra.size(); ++j) CHECK(ra[j] == rb[j]);
  }

  spec.seed = 12;
  auto c = gen_synthetic(spec);
  bool any_diff = false;
  for (size_t i = 0; i < a.docs.count() && !any_diff; ++i)
    any_diff = a.docs.text(i) != c.docs.text(i);
  CHECK(any_diff);
}

TEST_CASE("zero noise plants the positive exactly at the latent") {
  auto spec = tiny_spec();
  spec.positives_per_query = 1;
  spec.grade_levels = {1};
  spec.noise_scale = 0.0;
  auto data = gen_synthetic(spec);
  for (size_t qi = 0; qi < data.queries.query_ids.size(); ++qi) {
    auto hits = dense_search(data.embeddings, data.query_latents[qi], 1);
    REQUIRE(hits.size() == 1);
    CHECK(data.qrels.grade(data.queries.query_ids[qi], data.docs.doc_id(hits[0].index)) == 1);
  }
}

TEST_CASE("oracle ranker on the latents achieves MRR 1.0") {
  SyntheticSpec spec;
  spec.dim = 16;
  spec.corpus_size = 1500;
  spec.train_queries = 40;
  spec.val_queries = 40;
  spec.positives_per_query = 1;
  spec.grade_levels = {1};
  spec.noise_scale = 0.03;
  spec.hard_per_query = 8;
  spec.seed = 2;
  auto data = gen_synthetic(spec);
  CHECK(oracle_latent_mrr(data, 10) == doctest::Approx(1.0));
}

TEST_CASE("frozen encoder approximately reproduces the planted geometry") {
  auto spec = tiny_spec();
  auto data = gen_synthetic(spec);
  FrozenDocEncoder enc(spec.dim, data.vocab.size(), spec.seed);
  auto rows = encode_documents(enc, data.docs, data.vocab);
  double mean_cos = 0.0;
  for (size_t i = 0; i < data.docs.count(); ++i) {
    std::vector<double> planted(data.embeddings.row(i).begin(), data.embeddings.row(i).end());
    std::span<const float> approx_row(
        reinterpret_cast<const float*>(rows.data()) + i * spec.dim, spec.dim);
    mean_cos += cosine(approx_row, planted);
  }
  mean_cos /= static_cast<double>(data.docs.count());
  CHECK(mean_cos > 0.8);
}

TEST_CASE("bm25 pool over synthetic texts finds the positives") {
  auto spec = tiny_spec();
  auto data = gen_synthetic(spec);
  auto index = build_bm25_index(data.docs, data.vocab);
  auto queries = data.val_split();
  auto pool = build_candidate_pool(
      queries, [&](size_t qi, size_t k) { return bm25_search(index, queries.token_ids[qi], k); },
      100, "bm25");
  size_t found = 0, total = 0;
  for (const auto& qid : queries.query_ids) {
    const auto* items = pool.find(qid);
    REQUIRE(items != nullptr);
    std::unordered_set<uint32_t> in_pool;
    for (const auto& it : *items) in_pool.insert(it.index);
    for (const auto& docid : data.qrels.positives(qid, 1)) {
      ++total;
      found += in_pool.count(static_cast<uint32_t>(*data.docs.index_of(docid)));
    }
  }
  CHECK(static_cast<double>(found) / static_cast<double>(total) > 0.9);
}

TEST_CASE("experiment tables are deterministic") {
  NegativeCountConfig cfg = default_negative_count_config();
  cfg.spec.corpus_size = 400;
  cfg.spec.train_queries = 24;
  cfg.spec.val_queries = 12;
  cfg.spec.hard_per_query = 4;
  cfg.negative_counts = {1, 4};
  cfg.seeds = {1, 2};
  cfg.train.max_epochs = 4;
  cfg.train.batch_size = 8;
  cfg.train.eval_every = 5;
  cfg.pool_depth = 50;
  cfg.val_pool_depth = 50;

  auto a = negative_count_experiment(cfg);
  auto b = negative_count_experiment(cfg);
  CHECK(a.table().to_tsv() == b.table().to_tsv());
  CHECK(a.best_mrr.size() == 2);
  CHECK(a.best_mrr[0].size() == 2);
  for (const auto& row : a.best_mrr)
    for (double v : row) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
}
