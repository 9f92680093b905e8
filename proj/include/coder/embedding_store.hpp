#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "coder/common.hpp"
#include "coder/corpus.hpp"

namespace coder {

/// Read-only dense float32 matrix, one row per dense doc index. Backed either
/// by a memory-mapped file (rows are paged in on demand) or by an owned
/// buffer for in-memory pipelines. No writers after construction.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  static EmbeddingStore from_matrix(uint32_t dim, std::vector<float> rows_row_major);

  uint32_t dim() const { return dim_; }
  uint64_t count() const { return count_; }

  std::span<const float> row(uint64_t index) const {
    if (index >= count_)
      throw ValidationError("row index " + std::to_string(index) + " out of range (count " +
                            std::to_string(count_) + ")");
    return {data_ + index * dim_, dim_};
  }

  /// Rows in the requested order; duplicates are duplicated.
  std::vector<float> get_rows(std::span<const uint32_t> ids) const;

 private:
  friend EmbeddingStore open_embeddings(const std::string& path);
  struct Mapping;

  uint32_t dim_ = 0;
  uint64_t count_ = 0;
  const float* data_ = nullptr;
  std::vector<float> owned_;
  std::shared_ptr<Mapping> mapping_;
};

/// Binary layout: magic "CDRE" | version u32 LE = 1 | dim u32 LE |
/// count u64 LE | count*dim float32 LE row-major. Rejects non-finite input.
void write_embeddings(const std::string& path, uint32_t dim, std::span<const float> rows);

/// Validates magic, version and exact payload size, then memory-maps the rows.
EmbeddingStore open_embeddings(const std::string& path);

/// Deterministic stand-in document encoder: a seeded random projection of
/// bag-of-token counts. Same (seed, vocab size, dim) always yields
/// bit-identical embeddings.
class FrozenDocEncoder {
 public:
  enum class NormMode { L2, None };

  FrozenDocEncoder(uint32_t dim, int32_t vocab_size, uint64_t seed,
                   NormMode norm = NormMode::L2);

  uint32_t dim() const { return dim_; }
  int32_t vocab_size() const { return vocab_size_; }
  NormMode norm_mode() const { return norm_; }
  uint64_t seed() const { return seed_; }

  /// Projection column for one token id.
  std::span<const double> token_column(int32_t token_id) const;
  /// Unit-normalized projection column; used as the token's latent direction.
  std::vector<double> token_direction(int32_t token_id) const;

  /// norm(projection . bag_of_token_counts(ids)). Special token ids (PAD, UNK,
  /// BOS) do not contribute, so a document with no in-vocab tokens maps to the
  /// zero row even under L2.
  std::vector<double> encode_counts(std::span<const int32_t> token_ids) const;

 private:
  uint32_t dim_;
  int32_t vocab_size_;
  uint64_t seed_;
  NormMode norm_;
  std::vector<double> columns_;  // vocab_size x dim, token-major
};

/// Encodes every document; row i aligns with DocStore index i.
std::vector<float> encode_documents(const FrozenDocEncoder& enc, const DocStore& docs,
                                    const Vocab& vocab, size_t max_doc_len = 256);

}  // namespace coder
