#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "coder/query_encoder.hpp"
#include "coder/ranking.hpp"
#include "test_util.hpp"

using namespace coder;

namespace {

EncoderParams small_params(AggMode agg, bool projection, uint32_t d = 4, uint32_t d_out = 4,
                           uint64_t seed = 1) {
  return init_encoder(10, d, d_out, agg, 0.0, projection, seed);
}

}  // namespace

TEST_CASE("encode definitional cases") {
  auto p = small_params(AggMode::Mean, false);

  // single token, identity projection: q equals the embedding row
  std::vector<int32_t> single = {5};
  auto q = encode(p, single, false, 0);
  auto row = p.embedding_row(5);
  for (uint32_t j = 0; j < 4; ++j) CHECK(q[j] == row[j]);

  // two tokens: q = (u + v) / 2
  std::vector<int32_t> two = {5, 7};
  auto q2 = encode(p, two, false, 0);
  auto u = p.embedding_row(5);
  auto v = p.embedding_row(7);
  for (uint32_t j = 0; j < 4; ++j) CHECK(q2[j] == doctest::Approx((u[j] + v[j]) / 2).epsilon(1e-15));

  // first mode takes position 0 through the projection
  auto pf = small_params(AggMode::First, true);
  std::vector<int32_t> seq = {2, 5};
  auto qf = encode(pf, seq, false, 0);
  auto bos = pf.embedding_row(2);
  for (uint32_t r = 0; r < 4; ++r) {
    double acc = 0.0;
    for (uint32_t j = 0; j < 4; ++j) acc += pf.projection[r * 4 + j] * bos[j];
    CHECK(qf[r] == doctest::Approx(acc).epsilon(1e-15));
  }

  std::vector<int32_t> empty;
  CHECK_THROWS_AS(encode(p, empty, false, 0), ValidationError);
  std::vector<int32_t> out_of_range = {10};
  CHECK_THROWS_AS(encode(p, out_of_range, false, 0), ValidationError);
}

TEST_CASE("mean mode is permutation invariant; first mode depends on position 0") {
  auto p = small_params(AggMode::Mean, false);
  std::vector<int32_t> a = {2, 5, 7, 9};
  std::vector<int32_t> b = {9, 7, 5, 2};
  CHECK(encode(p, a, false, 0) == encode(p, b, false, 0));

  auto pf = small_params(AggMode::First, false);
  std::vector<int32_t> c = {5, 9, 9, 9};
  std::vector<int32_t> d = {5, 2, 7, 3};
  CHECK(encode(pf, c, false, 0) == encode(pf, d, false, 0));
}

TEST_CASE("dropout: off is deterministic, train/eval agree at rate zero") {
  auto p = small_params(AggMode::Mean, true);
  std::vector<int32_t> ids = {2, 5, 7};
  CHECK(encode(p, ids, true, 42) == encode(p, ids, false, 0));

  auto pd = init_encoder(10, 4, 4, AggMode::Mean, 0.5, true, 1);
  auto q_train = encode(pd, ids, true, 42);
  CHECK(encode(pd, ids, true, 42) == q_train);          // same key, same mask
  CHECK(encode(pd, ids, false, 42) != q_train);         // eval ignores dropout
}

TEST_CASE("encode_backward zero gradient and mean distribution") {
  auto p = small_params(AggMode::Mean, false);
  std::vector<int32_t> ids = {5, 7, 5};  // token 5 repeats
  EncodeCache cache;
  encode(p, ids, false, 0, &cache);

  EncoderGradients zero;
  std::vector<double> zeros(4, 0.0);
  encode_backward(p, cache, zeros, zero);
  for (const auto& [id, row] : zero.token_rows)
    for (double g : row) CHECK(g == 0.0);

  EncoderGradients grads;
  std::vector<double> g = {1.0, 2.0, 3.0, 4.0};
  encode_backward(p, cache, g, grads);
  // each present token row gets grad/w summed over repeats
  for (uint32_t j = 0; j < 4; ++j) {
    CHECK(grads.token_rows.at(5)[j] == doctest::Approx(2.0 * g[j] / 3.0).epsilon(1e-15));
    CHECK(grads.token_rows.at(7)[j] == doctest::Approx(g[j] / 3.0).epsilon(1e-15));
  }
  // sparsity: absent tokens carry no rows at all
  CHECK(grads.token_rows.count(3) == 0);
  CHECK(grads.token_rows.size() == 2);
}

TEST_CASE("cache mismatch is rejected") {
  auto p = small_params(AggMode::Mean, false);
  std::vector<int32_t> ids = {5};
  EncodeCache cache;
  encode(p, ids, false, 0, &cache);
  auto other = small_params(AggMode::First, false);
  EncoderGradients grads;
  std::vector<double> g(4, 1.0);
  CHECK_THROWS_AS(encode_backward(other, cache, g, grads), ValidationError);
}

TEST_CASE("finite differences: linear loss is exact to float noise") {
  auto p = small_params(AggMode::Mean, true, 6, 6, 3);
  std::vector<int32_t> ids = {2, 4, 9};
  std::vector<double> c = {0.3, -1.2, 0.5, 2.0, -0.7, 0.1};
  auto linear = [&](std::span<const double> q, std::vector<double>* grad) {
    double acc = 0.0;
    for (size_t j = 0; j < q.size(); ++j) acc += c[j] * q[j];
    if (grad != nullptr) grad->assign(c.begin(), c.end());
    return acc;
  };
  CHECK(finite_diff_check(p, ids, linear, 1e-5, 400, 0) < 1e-9);
}

TEST_CASE("finite differences: full listnet pipeline under both agg modes") {
  auto rng = RngStream::from(17, "fd-instance");
  const uint32_t d = 16, n = 10;
  std::vector<float> x(n * d);
  for (float& v : x) v = static_cast<float>(rng.normal());
  auto store = EmbeddingStore::from_matrix(d, x);
  std::vector<uint32_t> cand(n);
  for (uint32_t i = 0; i < n; ++i) cand[i] = i;
  std::vector<double> labels(n, kNegInf);
  labels[2] = 2.0;
  labels[6] = 1.0;

  auto loss_fn = [&](std::span<const double> q, std::vector<double>* grad) {
    auto scores = score_candidates(q, store, cand);
    auto res = listnet_loss(scores, labels);
    if (grad != nullptr) {
      grad->assign(q.size(), 0.0);
      for (uint32_t i = 0; i < n; ++i) {
        auto row = store.row(i);
        for (uint32_t j = 0; j < d; ++j) (*grad)[j] += res.grad[i] * static_cast<double>(row[j]);
      }
    }
    return res.loss;
  };

  std::vector<int32_t> ids = {2, 5, 7, 5};
  for (AggMode agg : {AggMode::Mean, AggMode::First}) {
    for (bool proj : {false, true}) {
      auto p = init_encoder(10, d, d, agg, 0.0, proj, 21);
      CHECK(finite_diff_check(p, ids, loss_fn, 1e-5, 300, 5) < 1e-6);
    }
  }
}

TEST_CASE("finite differences detect a corrupted backward pass") {
  // simulate an implementation bug by doubling the reported analytic gradient;
  // with err = |a-n| / max(|a|,|n|) a 2x scale lands at exactly 0.5
  auto p = small_params(AggMode::Mean, false, 8, 8, 2);
  std::vector<int32_t> ids = {3, 4};
  std::vector<double> c = {1.0, -2.0, 0.5, 1.5, -0.25, 2.0, 1.0, -1.0};
  auto corrupted = [&](std::span<const double> q, std::vector<double>* grad) {
    double acc = 0.0;
    for (size_t j = 0; j < q.size(); ++j) acc += c[j] * q[j];
    if (grad != nullptr) {
      grad->assign(c.begin(), c.end());
      for (double& g : *grad) g *= 2.0;
    }
    return acc;
  };
  double err = finite_diff_check(p, ids, corrupted, 1e-5, 64, 0);
  CHECK(err == doctest::Approx(0.5).epsilon(1e-4));
  CHECK(err > 0.3);  // comfortably detectable either way the ratio is defined
}

TEST_CASE("checkpoint round-trip preserves parameters bit-exactly") {
  testutil::TempDir tmp("ckpt");
  auto p = init_encoder(12, 6, 4, AggMode::First, 0.1, true, 9);
  auto path = tmp.file("enc.cdrq");
  save_encoder(p, path, 77);
  auto loaded = load_encoder(path);
  CHECK(loaded.step == 77);
  CHECK(loaded.params.vocab_size == p.vocab_size);
  CHECK(loaded.params.embed_dim == p.embed_dim);
  CHECK(loaded.params.out_dim == p.out_dim);
  CHECK(loaded.params.agg == p.agg);
  CHECK(loaded.params.dropout_rate == p.dropout_rate);
  CHECK(loaded.params.token_embeddings == p.token_embeddings);
  CHECK(loaded.params.projection == p.projection);

  // wrong magic rejected
  auto bogus = tmp.file("bogus.cdrq");
  testutil::write_text(bogus, "CDRE????????");
  CHECK_THROWS_AS(load_encoder(bogus), FormatError);
}
