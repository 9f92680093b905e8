#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "coder/common.hpp"

namespace coder {

enum class AggMode { Mean, First };

AggMode parse_agg_mode(std::string_view name);
std::string agg_mode_name(AggMode mode);

/// Trainable query encoder parameters: an embedding table pooled by g
/// (mean or first-token) and an optional linear projection to the document
/// dimension. Owned by a single trainer; frozen snapshots may be read
/// concurrently.
struct EncoderParams {
  uint32_t vocab_size = 0;
  uint32_t embed_dim = 0;  // d
  uint32_t out_dim = 0;    // d'
  AggMode agg = AggMode::Mean;
  double dropout_rate = 0.0;
  std::vector<double> token_embeddings;  // vocab_size x embed_dim, row-major
  std::vector<double> projection;        // out_dim x embed_dim; empty = identity

  bool has_projection() const { return !projection.empty(); }
  std::span<const double> embedding_row(int32_t id) const {
    return {token_embeddings.data() + static_cast<size_t>(id) * embed_dim, embed_dim};
  }
  size_t param_count() const { return token_embeddings.size() + projection.size(); }
};

/// token embeddings ~ uniform(-1/sqrt(d), 1/sqrt(d)); projection is identity
/// when out_dim == embed_dim and use_projection is false, else Gaussian/sqrt(d).
EncoderParams init_encoder(uint32_t vocab_size, uint32_t embed_dim, uint32_t out_dim,
                           AggMode agg, double dropout_rate, bool use_projection, uint64_t seed);

/// Activations cached by encode for the exact backward pass.
struct EncodeCache {
  std::vector<int32_t> ids;
  std::vector<double> pooled;         // after dropout, before projection
  std::vector<double> dropout_scale;  // per-coordinate factor; empty = no dropout
  uint32_t embed_dim = 0;
  uint32_t out_dim = 0;
  AggMode agg = AggMode::Mean;
};

/// q = P . g(token embedding rows). Dropout is applied to the pooled vector
/// only in train mode, with inverted scaling, seeded by dropout_key.
std::vector<double> encode(const EncoderParams& params, std::span<const int32_t> ids,
                           bool train_mode, uint64_t dropout_key, EncodeCache* cache = nullptr);

/// Gradients with the same shapes as EncoderParams; token rows are sparse
/// (only ids seen in the batch carry nonzero rows).
struct EncoderGradients {
  std::unordered_map<int32_t, std::vector<double>> token_rows;
  std::vector<double> projection;

  void scale(double factor);
  double squared_norm() const;
};

/// Exact chain rule through projection, pooling, dropout mask and embedding
/// lookup, accumulated into grads.
void encode_backward(const EncoderParams& params, const EncodeCache& cache,
                     std::span<const double> grad_q, EncoderGradients& grads);

/// Loss closure over the encoded query vector: returns the loss and, when
/// grad_out is non-null, the gradient w.r.t. the query vector.
using QueryLossFn = std::function<double(std::span<const double> qvec, std::vector<double>* grad_out)>;

/// Central-difference verification of the analytic backward pass over at
/// least num_coords uniformly sampled parameter coordinates; returns
/// max |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
double finite_diff_check(const EncoderParams& params, std::span<const int32_t> ids,
                         const QueryLossFn& loss, double eps = 1e-5, size_t num_coords = 200,
                         uint64_t seed = 0);

/// CDRQ checkpoint: tensor sections for each parameter plus a text metadata
/// block (agg mode, dims, step count).
void save_encoder(const EncoderParams& params, const std::string& path, int64_t step = 0);

struct LoadedEncoder {
  EncoderParams params;
  int64_t step = 0;
};
LoadedEncoder load_encoder(const std::string& path);

}  // namespace coder
