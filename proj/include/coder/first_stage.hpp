#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "coder/common.hpp"
#include "coder/corpus.hpp"
#include "coder/embedding_store.hpp"

namespace coder {

struct ScoredDoc {
  uint32_t index;
  double score;
  bool operator==(const ScoredDoc&) const = default;
};

/// Okapi BM25 over the tokenized collection. Immutable after build; searches
/// are pure and safe to run concurrently.
struct Bm25Index {
  struct Posting {
    uint32_t doc;
    uint32_t tf;
  };
  double k1 = 0.9;
  double b = 0.4;
  uint32_t doc_count = 0;
  double avg_doc_length = 0.0;
  std::vector<double> doc_lengths;
  std::unordered_map<int32_t, std::vector<Posting>> postings;  // sorted by doc
};

Bm25Index build_bm25_index(const DocStore& docs, const Vocab& vocab, size_t max_doc_len = 256,
                           double k1 = 0.9, double b = 0.4);

/// idf(t) = ln(1 + (N - df + 0.5)/(df + 0.5)); duplicate query terms count
/// with multiplicity; terms absent from the corpus contribute 0.
double bm25_score(const Bm25Index& index, std::span<const int32_t> query_ids, uint32_t doc);

/// Top-k by score, ties broken by ascending doc index. Only docs with
/// positive score are returned, so the list may be shorter than k.
std::vector<ScoredDoc> bm25_search(const Bm25Index& index, std::span<const int32_t> query_ids,
                                   size_t k);

/// Exact top-k by dot product over every row, ties by ascending index.
std::vector<ScoredDoc> dense_search(const EmbeddingStore& store, std::span<const double> qvec,
                                    size_t k);

/// Per-query ranked candidate lists from a first-stage method, the ranking
/// context for training and the rerank input at inference.
struct CandidatePool {
  struct Entry {
    std::string query_id;
    std::vector<ScoredDoc> items;
  };
  std::string provenance;
  std::vector<Entry> entries;
  std::unordered_map<std::string, size_t> index;
  /// Queries skipped because they had no regular tokens.
  std::vector<std::string> skipped;

  const std::vector<ScoredDoc>* find(const std::string& query_id) const {
    auto it = index.find(query_id);
    return it == index.end() ? nullptr : &entries[it->second].items;
  }
  void add(std::string query_id, std::vector<ScoredDoc> items);
};

/// Runs search_fn for every query and keeps the top n_pool results. Queries
/// whose token sequence has no regular tokens are skipped and recorded.
CandidatePool build_candidate_pool(
    const QuerySet& queries,
    const std::function<std::vector<ScoredDoc>(size_t query_index, size_t k)>& search_fn,
    size_t n_pool, std::string provenance);

/// Text format: a `#provenance=` header line, then `<qid>\t<rank>\t<docid>\t<score>`
/// sorted by (qid, rank). Scores are printed with max_digits10 so the
/// round-trip is bit-exact.
void save_pool(const CandidatePool& pool, const DocStore& docs, const std::string& path);
CandidatePool load_pool(const std::string& path, const DocStore& docs);

}  // namespace coder
