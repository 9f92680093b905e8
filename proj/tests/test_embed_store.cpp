#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "coder/embedding_store.hpp"
#include "test_util.hpp"

using namespace coder;

TEST_CASE("write_embeddings layout and round-trip") {
  testutil::TempDir tmp("embed");
  auto path = tmp.file("m.cdre");

  std::vector<float> zeros(6, 0.0f);
  write_embeddings(path, 3, zeros);
  CHECK(std::filesystem::file_size(path) == 20 + 24);  // header + 6 * 4 payload bytes

  auto store = open_embeddings(path);
  CHECK(store.dim() == 3);
  CHECK(store.count() == 2);

  std::vector<float> values = {1.5f, -2.25f, 0.125f, 3.0f, 4.0f, -5.5f};
  write_embeddings(path, 3, values);
  auto store2 = open_embeddings(path);
  auto rows = store2.get_rows(std::vector<uint32_t>{0, 1});
  CHECK(std::memcmp(rows.data(), values.data(), values.size() * sizeof(float)) == 0);

  std::vector<float> with_nan = {1.0f, std::nanf(""), 0.0f};
  CHECK_THROWS_AS(write_embeddings(path, 3, with_nan), ValidationError);
  std::vector<float> with_inf = {1.0f, INFINITY, 0.0f};
  CHECK_THROWS_AS(write_embeddings(path, 3, with_inf), ValidationError);
}

TEST_CASE("open_embeddings rejects corrupt files") {
  testutil::TempDir tmp("embed-bad");
  auto good = tmp.file("good.cdre");
  std::vector<float> values(6, 1.0f);
  write_embeddings(good, 3, values);
  std::string bytes = testutil::read_text(good);

  auto bad_magic = tmp.file("bad_magic.cdre");
  std::string spoiled = bytes;
  spoiled[0] = 'X';
  testutil::write_text(bad_magic, spoiled);
  CHECK_THROWS_AS(open_embeddings(bad_magic), FormatError);

  auto bad_version = tmp.file("bad_version.cdre");
  spoiled = bytes;
  spoiled[4] = 9;
  testutil::write_text(bad_version, spoiled);
  CHECK_THROWS_AS(open_embeddings(bad_version), FormatError);

  auto truncated = tmp.file("truncated.cdre");
  testutil::write_text(truncated, bytes.substr(0, bytes.size() - 4));  // one row short
  CHECK_THROWS_AS(open_embeddings(truncated), FormatError);
}

TEST_CASE("get_rows ordering, duplication, range check") {
  auto store = EmbeddingStore::from_matrix(2, {1.0f, 2.0f, 3.0f, 4.0f});
  auto r = store.get_rows(std::vector<uint32_t>{1, 0});
  CHECK(r == std::vector<float>{3.0f, 4.0f, 1.0f, 2.0f});
  auto dup = store.get_rows(std::vector<uint32_t>{0, 0});
  CHECK(dup == std::vector<float>{1.0f, 2.0f, 1.0f, 2.0f});
  CHECK_THROWS_AS(store.get_rows(std::vector<uint32_t>{2}), ValidationError);
  try {
    store.get_rows(std::vector<uint32_t>{2});
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("get_rows permutation property") {
  auto rng = RngStream::from(7, "perm-test");
  std::vector<float> values(40 * 4);
  for (float& x : values) x = static_cast<float>(rng.normal());
  auto store = EmbeddingStore::from_matrix(4, values);

  std::vector<uint32_t> ids = {3, 9, 1, 1, 0, 39, 17};
  auto base = store.get_rows(ids);
  std::vector<size_t> perm = {6, 0, 2, 4, 5, 1, 3};
  std::vector<uint32_t> permuted_ids;
  for (size_t p : perm) permuted_ids.push_back(ids[p]);
  auto permuted = store.get_rows(permuted_ids);
  for (size_t i = 0; i < perm.size(); ++i)
    for (size_t j = 0; j < 4; ++j) CHECK(permuted[i * 4 + j] == base[perm[i] * 4 + j]);
}

TEST_CASE("frozen encoder determinism and degenerate rows") {
  DocStore docs;
  docs.add("D1", "alpha beta beta");
  docs.add("D2", "alpha beta beta");
  docs.add("D3", "!!! ???");  // nothing in-vocab
  Vocab vocab = build_vocab(docs, {}, 1);

  FrozenDocEncoder enc(8, vocab.size(), 123);
  auto rows = encode_documents(enc, docs, vocab);
  REQUIRE(rows.size() == 3 * 8);

  // identical texts produce identical rows
  for (int j = 0; j < 8; ++j) CHECK(rows[j] == rows[8 + j]);
  // no in-vocab tokens -> zero row under L2
  for (int j = 0; j < 8; ++j) CHECK(rows[16 + j] == 0.0f);
  // unit norm for non-degenerate docs
  double norm2 = 0.0;
  for (int j = 0; j < 8; ++j) norm2 += static_cast<double>(rows[j]) * rows[j];
  CHECK(norm2 == doctest::Approx(1.0).epsilon(1e-6));

  FrozenDocEncoder enc2(8, vocab.size(), 123);
  auto rows2 = encode_documents(enc2, docs, vocab);
  CHECK(rows == rows2);

  FrozenDocEncoder enc3(8, vocab.size(), 124);
  CHECK(encode_documents(enc3, docs, vocab) != rows);
}

TEST_CASE("frozen encoder output depends only on content, not insertion order") {
  std::vector<std::pair<std::string, std::string>> entries = {
      {"D1", "red green"}, {"D2", "blue blue red"}, {"D3", "green"}, {"D4", "yellow red blue"}};

  DocStore forward;
  for (auto& [id, text] : entries) forward.add(id, text);
  DocStore shuffled;
  shuffled.add(entries[2].first, entries[2].second);
  shuffled.add(entries[0].first, entries[0].second);
  shuffled.add(entries[3].first, entries[3].second);
  shuffled.add(entries[1].first, entries[1].second);

  // vocab fixed from the same corpus regardless of order
  Vocab vocab = build_vocab(forward, {}, 1);
  FrozenDocEncoder enc(6, vocab.size(), 5);
  auto rows_a = encode_documents(enc, forward, vocab);
  auto rows_b = encode_documents(enc, shuffled, vocab);

  for (auto& [id, text] : entries) {
    size_t ia = *forward.index_of(id);
    size_t ib = *shuffled.index_of(id);
    for (size_t j = 0; j < 6; ++j) CHECK(rows_a[ia * 6 + j] == rows_b[ib * 6 + j]);
  }
}

TEST_CASE("round-trip bit-exactness for random matrices") {
  testutil::TempDir tmp("embed-rt");
  auto rng = RngStream::from(99, "roundtrip");
  std::vector<float> values(77 * 5);
  for (float& x : values) x = static_cast<float>(rng.normal() * 42.0);
  auto path = tmp.file("r.cdre");
  write_embeddings(path, 5, values);
  auto store = open_embeddings(path);
  REQUIRE(store.count() == 77);
  for (uint64_t i = 0; i < store.count(); ++i) {
    auto row = store.row(i);
    for (size_t j = 0; j < 5; ++j) CHECK(row[j] == values[i * 5 + j]);
  }

  // byte-identical re-write
  auto path2 = tmp.file("r2.cdre");
  write_embeddings(path2, 5, store.get_rows([&] {
    std::vector<uint32_t> ids(store.count());
    for (uint32_t i = 0; i < ids.size(); ++i) ids[i] = i;
    return ids;
  }()));
  CHECK(testutil::read_text(path) == testutil::read_text(path2));
}
