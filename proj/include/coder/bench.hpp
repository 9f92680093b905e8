#pragma once

#include <cstdint>

namespace coder {

/// Per-query reranking compute: encode + joint dot-product scoring + sort,
/// over pre-resident embeddings. Wall times exclude data generation.
struct BenchResult {
  int dim = 0;
  int candidates = 0;
  int threads = 1;
  int queries = 0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double max_ms = 0.0;
};

BenchResult bench_rerank(int dim, int n_candidates, int n_queries, int threads, uint64_t seed);

}  // namespace coder
