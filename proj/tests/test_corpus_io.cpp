#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "coder/corpus.hpp"
#include "test_util.hpp"

using namespace coder;

TEST_CASE("load_collection basic and edge cases") {
  testutil::TempDir tmp("corpus");
  auto path = tmp.file("collection.tsv");

  testutil::write_text(path, "D1\thello world\nD2\tfoo\n");
  auto docs = load_collection(path);
  CHECK(docs.count() == 2);
  CHECK(docs.doc_id(0) == "D1");
  CHECK(docs.doc_id(1) == "D2");
  CHECK(docs.text(0) == "hello world");
  CHECK(*docs.index_of("D2") == 1);
  CHECK(!docs.index_of("D9").has_value());

  testutil::write_text(path, "");
  CHECK(load_collection(path).count() == 0);

  testutil::write_text(path, "D1\ta\nD1\tb\n");
  CHECK_THROWS_AS(load_collection(path), ValidationError);

  testutil::write_text(path, "D1 no tab here\n");
  CHECK_THROWS_AS(load_collection(path), FormatError);
  try {
    load_collection(path);
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":1:") != std::string::npos);  // line number
  }
}

TEST_CASE("tokenize lowercases, splits, maps and truncates") {
  Vocab vocab = Vocab::from_tokens({"hello", "world"});
  CHECK(vocab.id_for("hello") == 3);
  CHECK(vocab.id_for("world") == 4);

  auto ids = tokenize("Hello, world", vocab, 32);
  CHECK(ids == std::vector<int32_t>{Vocab::kBos, 3, 4});

  CHECK(tokenize("xyzzy", vocab, 32) == std::vector<int32_t>{Vocab::kBos, Vocab::kUnk});
  CHECK(tokenize("?!...", vocab, 32) == std::vector<int32_t>{Vocab::kBos});

  std::string long_text;
  for (int i = 0; i < 40; ++i) long_text += "hello ";
  CHECK(tokenize(long_text, vocab, 32).size() == 32);

  // deterministic and idempotent
  CHECK(tokenize("Hello, world", vocab, 32) == tokenize("Hello, world", vocab, 32));
}

TEST_CASE("build_vocab frequency ordering and threshold") {
  DocStore docs;
  docs.add("D1", "a a b");
  auto v1 = build_vocab(docs, {}, 1);
  CHECK(v1.id_for("a") == 3);
  CHECK(v1.id_for("b") == 4);

  auto v2 = build_vocab(docs, {}, 2);
  CHECK(v2.id_for("a") == 3);
  CHECK(v2.id_for("b") == Vocab::kUnk);

  DocStore tie;
  tie.add("D1", "zed apple zed apple");
  auto v3 = build_vocab(tie, {}, 1);
  CHECK(v3.id_for("apple") == 3);  // equal frequency, lexicographic tie-break
  CHECK(v3.id_for("zed") == 4);

  // extra texts (queries) count toward frequencies
  auto v4 = build_vocab(docs, {"c c c"}, 2);
  CHECK(v4.id_for("c") == 3);
}

TEST_CASE("vocab save/load round-trip") {
  testutil::TempDir tmp("vocab");
  Vocab vocab = Vocab::from_tokens({"beta", "alpha"});
  auto path = tmp.file("vocab.tsv");
  save_vocab(vocab, path);
  Vocab loaded = load_vocab(path);
  CHECK(loaded.size() == vocab.size());
  CHECK(loaded.id_for("beta") == 3);
  CHECK(loaded.id_for("alpha") == 4);

  testutil::write_text(path, "tok\t7\n");
  CHECK_THROWS_AS(load_vocab(path), FormatError);
}

TEST_CASE("load_qrels parses grades and rejects bad input") {
  testutil::TempDir tmp("qrels");
  auto path = tmp.file("qrels.txt");

  testutil::write_text(path, "q1 0 D7 2\n");
  auto qrels = load_qrels(path);
  CHECK(qrels.grade("q1", "D7") == 2);
  CHECK(qrels.is_judged("q1", "D7"));
  CHECK(!qrels.is_judged("q1", "D8"));
  CHECK(qrels.grade("q1", "D8") == 0);

  testutil::write_text(path, "q1 0 D7 5\n");
  CHECK_THROWS_AS(load_qrels(path), ValidationError);

  testutil::write_text(path, "q1 0 D7 1\nq1 0 D7 1\n");
  CHECK_THROWS_AS(load_qrels(path), ValidationError);

  // MS MARCO style binary judgments
  testutil::write_text(path, "q1 0 D1 1\nq2 0 D2 1\n");
  auto binary = load_qrels(path);
  CHECK(binary.positives("q1", 1) == std::vector<std::string>{"D1"});
}

TEST_CASE("qrels round-trip up to whitespace normalization and ordering") {
  testutil::TempDir tmp("qrels-rt");
  auto path = tmp.file("in.txt");
  testutil::write_text(path, "q2 0 D1 1\nq1 0 D9 3\nq1 0 D2 0\n");
  auto qrels = load_qrels(path);
  auto out_path = tmp.file("out.txt");
  write_qrels(qrels, out_path);
  CHECK(testutil::read_text(out_path) == "q1 0 D2 0\nq1 0 D9 3\nq2 0 D1 1\n");

  // normalized input reproduces byte-identically
  auto again = tmp.file("again.txt");
  write_qrels(load_qrels(out_path), again);
  CHECK(testutil::read_text(again) == testutil::read_text(out_path));
}

TEST_CASE("explicit grade zero is recorded distinctly but counts as unjudged-relevance") {
  RelevanceJudgments qrels;
  qrels.add("q1", "D1", 0);
  CHECK(qrels.is_judged("q1", "D1"));
  CHECK(qrels.grade("q1", "D1") == 0);
  CHECK(qrels.positives("q1", 1).empty());
}

TEST_CASE("query loading rejects empties and duplicates") {
  testutil::TempDir tmp("queries");
  auto path = tmp.file("queries.tsv");
  testutil::write_text(path, "q1\twhat is a duck\nq2\tduck\n");
  auto raw = load_queries(path);
  CHECK(raw.ids.size() == 2);

  Vocab vocab = Vocab::from_tokens({"duck"});
  auto qs = tokenize_queries(raw, vocab, 8);
  CHECK(qs.token_ids[1] == std::vector<int32_t>{Vocab::kBos, 3});
  for (const auto& ids : qs.token_ids) CHECK(!ids.empty());

  testutil::write_text(path, "q1\t\n");
  CHECK_THROWS_AS(load_queries(path), FormatError);
  testutil::write_text(path, "q1\ta\nq1\tb\n");
  CHECK_THROWS_AS(load_queries(path), ValidationError);
}
