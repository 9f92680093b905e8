#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "coder/common.hpp"

namespace coder {

/// Passage collection with dense integer indices 0..count-1 mirroring the
/// external string ids. Immutable once loaded; safe for concurrent reads.
class DocStore {
 public:
  size_t add(std::string id, std::string text);
  size_t count() const { return doc_ids_.size(); }
  const std::string& doc_id(size_t index) const { return doc_ids_.at(index); }
  const std::string& text(size_t index) const { return texts_.at(index); }
  std::optional<size_t> index_of(std::string_view id) const;

 private:
  std::vector<std::string> doc_ids_;
  std::vector<std::string> texts_;
  std::unordered_map<std::string, size_t> id_index_;
};

/// Token table with reserved specials. Ids are dense; out-of-vocabulary
/// tokens map to UNK.
class Vocab {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kUnk = 1;
  static constexpr int32_t kBos = 2;
  static constexpr int32_t kFirstRegular = 3;

  Vocab();
  /// Regular tokens get ids kFirstRegular.. in the given order.
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  int32_t id_for(std::string_view token) const;
  const std::string& token_for(int32_t id) const;
  bool contains(std::string_view token) const;
  int32_t size() const { return static_cast<int32_t>(id_to_token_.size()); }

 private:
  void add_token(std::string token);
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int32_t> token_to_id_;
};

struct RawQueries {
  std::vector<std::string> ids;
  std::vector<std::string> texts;
};

struct QuerySet {
  std::vector<std::string> query_ids;
  std::vector<std::vector<int32_t>> token_ids;
};

/// Graded relevance map in TREC qrels semantics, grades 0..3. Explicit
/// grade-0 entries are kept distinct from absent pairs, though metrics treat
/// them identically.
class RelevanceJudgments {
 public:
  void add(const std::string& query_id, const std::string& doc_id, int grade);
  /// 0 for unjudged pairs.
  int grade(const std::string& query_id, const std::string& doc_id) const;
  bool is_judged(const std::string& query_id, const std::string& doc_id) const;
  bool has_judgments(const std::string& query_id) const;
  /// Judged docs for one query (sorted by doc id), or nullptr.
  const std::map<std::string, int>* judged(const std::string& query_id) const;
  std::vector<std::string> positives(const std::string& query_id, int threshold) const;
  size_t query_count() const { return by_query_.size(); }
  size_t pair_count() const { return pair_count_; }
  const std::map<std::string, std::map<std::string, int>>& all() const { return by_query_; }

 private:
  std::map<std::string, std::map<std::string, int>> by_query_;
  size_t pair_count_ = 0;
};

/// Lowercases and splits on non-alphanumeric runs (ASCII).
std::vector<std::string> split_tokens(std::string_view text);

/// BOS-prefixed token ids, truncated to max_len. All-punctuation text yields
/// just [BOS].
std::vector<int32_t> tokenize(std::string_view text, const Vocab& vocab, size_t max_len);

/// Tokens with frequency >= min_freq over the collection plus extra texts,
/// ids in descending frequency order, ties broken lexicographically.
Vocab build_vocab(const DocStore& docs, const std::vector<std::string>& extra_texts,
                  size_t min_freq);

DocStore load_collection(const std::string& path);
void save_collection(const DocStore& docs, const std::string& path);

RawQueries load_queries(const std::string& path);
void save_queries(const RawQueries& queries, const std::string& path);
QuerySet tokenize_queries(const RawQueries& raw, const Vocab& vocab, size_t max_len);

RelevanceJudgments load_qrels(const std::string& path);
void write_qrels(const RelevanceJudgments& qrels, const std::string& path);

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

}  // namespace coder
