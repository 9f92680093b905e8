#include "coder/bench.hpp"

#include <algorithm>
#include <chrono>
#include <thread>
#include <vector>

#include "coder/embedding_store.hpp"
#include "coder/query_encoder.hpp"
#include "coder/ranking.hpp"

namespace coder {

BenchResult bench_rerank(int dim, int n_candidates, int n_queries, int threads, uint64_t seed) {
  if (dim < 1 || n_candidates < 1 || n_queries < 1 || threads < 1)
    throw ValidationError("bench_rerank: all sizes must be positive");

  constexpr uint32_t kVocab = 4096;
  constexpr size_t kQueryTokens = 32;

  auto store_rng = RngStream::from(seed, "bench-store");
  std::vector<float> rows(static_cast<size_t>(n_candidates) * static_cast<size_t>(dim));
  for (float& x : rows) x = static_cast<float>(store_rng.normal());
  EmbeddingStore store = EmbeddingStore::from_matrix(static_cast<uint32_t>(dim), std::move(rows));

  EncoderParams params = init_encoder(kVocab, static_cast<uint32_t>(dim),
                                      static_cast<uint32_t>(dim), AggMode::Mean, 0.0, false, seed);

  std::vector<std::vector<int32_t>> queries(static_cast<size_t>(n_queries));
  for (int qi = 0; qi < n_queries; ++qi) {
    auto rng = RngStream::from(seed, "bench-query", static_cast<uint64_t>(qi));
    auto& ids = queries[static_cast<size_t>(qi)];
    ids.resize(kQueryTokens);
    for (auto& id : ids) id = static_cast<int32_t>(rng.bounded(kVocab));
  }
  std::vector<uint32_t> candidate_ids(static_cast<size_t>(n_candidates));
  for (int i = 0; i < n_candidates; ++i) candidate_ids[static_cast<size_t>(i)] = static_cast<uint32_t>(i);

  std::vector<double> latency_ms(static_cast<size_t>(n_queries), 0.0);
  auto worker = [&](int begin, int end) {
    for (int qi = begin; qi < end; ++qi) {
      auto t0 = std::chrono::steady_clock::now();
      auto q = encode(params, queries[static_cast<size_t>(qi)], false, 0);
      auto ranked = rerank(q, candidate_ids, store);
      auto t1 = std::chrono::steady_clock::now();
      // keep the result alive so the work cannot be elided
      latency_ms[static_cast<size_t>(qi)] =
          std::chrono::duration<double, std::milli>(t1 - t0).count() +
          (ranked.empty() ? 1.0 : 0.0);
    }
  };

  if (threads == 1) {
    worker(0, n_queries);
  } else {
    std::vector<std::thread> pool;
    int per = (n_queries + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      int begin = t * per;
      int end = std::min(n_queries, begin + per);
      if (begin >= end) break;
      pool.emplace_back(worker, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  BenchResult result;
  result.dim = dim;
  result.candidates = n_candidates;
  result.threads = threads;
  result.queries = n_queries;
  double sum = 0.0;
  for (double v : latency_ms) sum += v;
  result.mean_ms = sum / static_cast<double>(n_queries);
  std::sort(latency_ms.begin(), latency_ms.end());
  auto pick = [&](double q) {
    size_t idx = static_cast<size_t>(q * static_cast<double>(latency_ms.size() - 1) + 0.5);
    return latency_ms[std::min(idx, latency_ms.size() - 1)];
  };
  result.p50_ms = pick(0.50);
  result.p95_ms = pick(0.95);
  result.max_ms = latency_ms.back();
  return result;
}

}  // namespace coder
