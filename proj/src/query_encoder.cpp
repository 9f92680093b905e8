#include "coder/query_encoder.hpp"

#include <algorithm>
#include <cmath>

#include "coder/tensor_file.hpp"

namespace coder {

namespace {
constexpr char kCheckpointMagic[4] = {'C', 'D', 'R', 'Q'};
}

AggMode parse_agg_mode(std::string_view name) {
  if (name == "mean") return AggMode::Mean;
  if (name == "first") return AggMode::First;
  throw ValidationError("unknown aggregation mode: " + std::string(name));
}

std::string agg_mode_name(AggMode mode) {
  return mode == AggMode::Mean ? "mean" : "first";
}

EncoderParams init_encoder(uint32_t vocab_size, uint32_t embed_dim, uint32_t out_dim,
                           AggMode agg, double dropout_rate, bool use_projection, uint64_t seed) {
  if (vocab_size == 0 || embed_dim == 0 || out_dim == 0)
    throw ValidationError("encoder dims must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ValidationError("dropout rate must be in [0, 1)");
  bool needs_projection = use_projection || out_dim != embed_dim;

  EncoderParams p;
  p.vocab_size = vocab_size;
  p.embed_dim = embed_dim;
  p.out_dim = out_dim;
  p.agg = agg;
  p.dropout_rate = dropout_rate;

  double bound = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  auto emb_rng = RngStream::from(seed, "encoder-init-embeddings");
  p.token_embeddings.resize(static_cast<size_t>(vocab_size) * embed_dim);
  for (double& x : p.token_embeddings) x = (2.0 * emb_rng.uniform() - 1.0) * bound;

  if (needs_projection) {
    auto proj_rng = RngStream::from(seed, "encoder-init-projection");
    p.projection.resize(static_cast<size_t>(out_dim) * embed_dim);
    for (double& x : p.projection) x = proj_rng.normal() * bound;
  }
  return p;
}

std::vector<double> encode(const EncoderParams& params, std::span<const int32_t> ids,
                           bool train_mode, uint64_t dropout_key, EncodeCache* cache) {
  if (ids.empty()) throw ValidationError("encode: empty token sequence");
  for (int32_t id : ids)
    if (id < 0 || static_cast<uint32_t>(id) >= params.vocab_size)
      throw ValidationError("encode: token id out of range: " + std::to_string(id));

  const uint32_t d = params.embed_dim;
  std::vector<double> pooled(d, 0.0);
  if (params.agg == AggMode::Mean) {
    for (int32_t id : ids) {
      auto row = params.embedding_row(id);
      for (uint32_t j = 0; j < d; ++j) pooled[j] += row[j];
    }
    double inv_w = 1.0 / static_cast<double>(ids.size());
    for (double& x : pooled) x *= inv_w;
  } else {
    auto row = params.embedding_row(ids[0]);
    pooled.assign(row.begin(), row.end());
  }

  std::vector<double> dropout_scale;
  if (train_mode && params.dropout_rate > 0.0) {
    RngStream rng(dropout_key);
    dropout_scale.resize(d);
    double keep_scale = 1.0 / (1.0 - params.dropout_rate);
    for (uint32_t j = 0; j < d; ++j) {
      dropout_scale[j] = rng.uniform() < params.dropout_rate ? 0.0 : keep_scale;
      pooled[j] *= dropout_scale[j];
    }
  }

  std::vector<double> q;
  if (params.has_projection()) {
    q.resize(params.out_dim, 0.0);
    for (uint32_t r = 0; r < params.out_dim; ++r) {
      const double* prow = params.projection.data() + static_cast<size_t>(r) * d;
      double acc = 0.0;
      for (uint32_t j = 0; j < d; ++j) acc += prow[j] * pooled[j];
      q[r] = acc;
    }
  } else {
    if (params.out_dim != d) throw ValidationError("identity projection requires out_dim == embed_dim");
    q = pooled;
  }

  if (cache != nullptr) {
    cache->ids.assign(ids.begin(), ids.end());
    cache->pooled = pooled;
    cache->dropout_scale = std::move(dropout_scale);
    cache->embed_dim = d;
    cache->out_dim = params.out_dim;
    cache->agg = params.agg;
  }
  return q;
}

void EncoderGradients::scale(double factor) {
  for (auto& [id, row] : token_rows)
    for (double& x : row) x *= factor;
  for (double& x : projection) x *= factor;
}

double EncoderGradients::squared_norm() const {
  double acc = 0.0;
  for (const auto& [id, row] : token_rows)
    for (double x : row) acc += x * x;
  for (double x : projection) acc += x * x;
  return acc;
}

void encode_backward(const EncoderParams& params, const EncodeCache& cache,
                     std::span<const double> grad_q, EncoderGradients& grads) {
  if (cache.embed_dim != params.embed_dim || cache.out_dim != params.out_dim ||
      cache.agg != params.agg || cache.ids.empty())
    throw ValidationError("encode_backward: cache does not match params");
  if (grad_q.size() != params.out_dim)
    throw ValidationError("encode_backward: grad size mismatch");

  const uint32_t d = params.embed_dim;
  std::vector<double> grad_pooled(d, 0.0);
  if (params.has_projection()) {
    if (grads.projection.empty()) grads.projection.resize(params.projection.size(), 0.0);
    for (uint32_t r = 0; r < params.out_dim; ++r) {
      const double* prow = params.projection.data() + static_cast<size_t>(r) * d;
      double* gprow = grads.projection.data() + static_cast<size_t>(r) * d;
      double g = grad_q[r];
      for (uint32_t j = 0; j < d; ++j) {
        gprow[j] += g * cache.pooled[j];
        grad_pooled[j] += g * prow[j];
      }
    }
  } else {
    grad_pooled.assign(grad_q.begin(), grad_q.end());
  }

  if (!cache.dropout_scale.empty())
    for (uint32_t j = 0; j < d; ++j) grad_pooled[j] *= cache.dropout_scale[j];

  auto row_grad = [&](int32_t id) -> std::vector<double>& {
    auto [it, inserted] = grads.token_rows.try_emplace(id);
    if (inserted) it->second.assign(d, 0.0);
    return it->second;
  };
  if (params.agg == AggMode::Mean) {
    double inv_w = 1.0 / static_cast<double>(cache.ids.size());
    for (int32_t id : cache.ids) {
      auto& row = row_grad(id);
      for (uint32_t j = 0; j < d; ++j) row[j] += grad_pooled[j] * inv_w;
    }
  } else {
    auto& row = row_grad(cache.ids[0]);
    for (uint32_t j = 0; j < d; ++j) row[j] += grad_pooled[j];
  }
}

double finite_diff_check(const EncoderParams& params, std::span<const int32_t> ids,
                         const QueryLossFn& loss, double eps, size_t num_coords, uint64_t seed) {
  // analytic gradient, densified
  EncodeCache cache;
  auto q = encode(params, ids, /*train_mode=*/false, 0, &cache);
  std::vector<double> grad_q(params.out_dim, 0.0);
  loss(q, &grad_q);
  EncoderGradients grads;
  encode_backward(params, cache, grad_q, grads);

  size_t emb_size = params.token_embeddings.size();
  size_t total = emb_size + params.projection.size();
  auto analytic_at = [&](size_t coord) -> double {
    if (coord < emb_size) {
      int32_t id = static_cast<int32_t>(coord / params.embed_dim);
      auto it = grads.token_rows.find(id);
      if (it == grads.token_rows.end()) return 0.0;
      return it->second[coord % params.embed_dim];
    }
    return grads.projection[coord - emb_size];
  };

  EncoderParams perturbed = params;
  auto loss_at = [&](size_t coord, double delta) {
    double* slot = coord < emb_size ? &perturbed.token_embeddings[coord]
                                    : &perturbed.projection[coord - emb_size];
    double saved = *slot;
    *slot = saved + delta;
    double value = loss(encode(perturbed, ids, false, 0), nullptr);
    *slot = saved;
    return value;
  };

  auto rng = RngStream::from(seed, "finite-diff-coords");
  size_t samples = std::min(num_coords, total);
  std::vector<size_t> coords;
  if (samples == total) {
    coords.resize(total);
    for (size_t i = 0; i < total; ++i) coords[i] = i;
  } else {
    for (size_t i = 0; i < num_coords; ++i) coords.push_back(rng.bounded(total));
  }

  double max_rel = 0.0;
  for (size_t coord : coords) {
    double numeric = (loss_at(coord, eps) - loss_at(coord, -eps)) / (2.0 * eps);
    double analytic = analytic_at(coord);
    double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-12});
    max_rel = std::max(max_rel, std::fabs(analytic - numeric) / denom);
  }
  return max_rel;
}

void save_encoder(const EncoderParams& params, const std::string& path, int64_t step) {
  TensorFile file;
  file.meta["agg_mode"] = agg_mode_name(params.agg);
  file.meta["vocab_size"] = std::to_string(params.vocab_size);
  file.meta["embed_dim"] = std::to_string(params.embed_dim);
  file.meta["out_dim"] = std::to_string(params.out_dim);
  file.meta["dropout_rate"] = std::to_string(params.dropout_rate);
  file.meta["step"] = std::to_string(step);
  file.tensors.push_back(
      {"token_embeddings", params.vocab_size, params.embed_dim, params.token_embeddings});
  if (params.has_projection())
    file.tensors.push_back({"projection", params.out_dim, params.embed_dim, params.projection});
  write_tensor_file(path, kCheckpointMagic, file);
}

LoadedEncoder load_encoder(const std::string& path) {
  TensorFile file = read_tensor_file(path, kCheckpointMagic);
  LoadedEncoder out;
  out.params.agg = parse_agg_mode(file.meta_value("agg_mode"));
  out.params.vocab_size = static_cast<uint32_t>(std::stoul(file.meta_value("vocab_size")));
  out.params.embed_dim = static_cast<uint32_t>(std::stoul(file.meta_value("embed_dim")));
  out.params.out_dim = static_cast<uint32_t>(std::stoul(file.meta_value("out_dim")));
  out.params.dropout_rate = std::stod(file.meta_value("dropout_rate"));
  out.step = std::stoll(file.meta_value("step"));

  const auto* emb = file.find("token_embeddings");
  if (emb == nullptr) throw FormatError(path + ": missing token_embeddings tensor");
  if (emb->rows != out.params.vocab_size || emb->cols != out.params.embed_dim)
    throw FormatError(path + ": token_embeddings shape mismatch");
  out.params.token_embeddings = emb->data;

  if (const auto* proj = file.find("projection"); proj != nullptr) {
    if (proj->rows != out.params.out_dim || proj->cols != out.params.embed_dim)
      throw FormatError(path + ": projection shape mismatch");
    out.params.projection = proj->data;
  } else if (out.params.out_dim != out.params.embed_dim) {
    throw FormatError(path + ": missing projection for out_dim != embed_dim");
  }
  return out;
}

}  // namespace coder
