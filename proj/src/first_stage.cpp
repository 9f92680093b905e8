#include "coder/first_stage.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace coder {

namespace {

bool score_order(const ScoredDoc& a, const ScoredDoc& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.index < b.index;
}

}  // namespace

Bm25Index build_bm25_index(const DocStore& docs, const Vocab& vocab, size_t max_doc_len,
                           double k1, double b) {
  if (k1 <= 0.0) throw ValidationError("bm25: k1 must be positive");
  if (b < 0.0 || b > 1.0) throw ValidationError("bm25: b must be in [0, 1]");
  Bm25Index index;
  index.k1 = k1;
  index.b = b;
  index.doc_count = static_cast<uint32_t>(docs.count());
  index.doc_lengths.resize(docs.count(), 0.0);

  double total_len = 0.0;
  for (size_t i = 0; i < docs.count(); ++i) {
    auto ids = tokenize(docs.text(i), vocab, max_doc_len);
    std::map<int32_t, uint32_t> tf;
    size_t len = 0;
    for (int32_t id : ids) {
      if (id < Vocab::kFirstRegular) continue;
      ++tf[id];
      ++len;
    }
    index.doc_lengths[i] = static_cast<double>(len);
    total_len += static_cast<double>(len);
    for (auto [term, f] : tf)
      index.postings[term].push_back({static_cast<uint32_t>(i), f});
  }
  index.avg_doc_length = docs.count() > 0 ? total_len / static_cast<double>(docs.count()) : 0.0;
  return index;
}

namespace {

double idf(const Bm25Index& index, size_t df) {
  return std::log(1.0 + (static_cast<double>(index.doc_count) - static_cast<double>(df) + 0.5) /
                            (static_cast<double>(df) + 0.5));
}

double tf_weight(const Bm25Index& index, double tf, double doc_len) {
  double norm = index.avg_doc_length > 0.0 ? doc_len / index.avg_doc_length : 0.0;
  return tf * (index.k1 + 1.0) / (tf + index.k1 * (1.0 - index.b + index.b * norm));
}

}  // namespace

double bm25_score(const Bm25Index& index, std::span<const int32_t> query_ids, uint32_t doc) {
  if (doc >= index.doc_count) throw ValidationError("bm25_score: doc index out of range");
  double score = 0.0;
  for (int32_t term : query_ids) {
    auto it = index.postings.find(term);
    if (it == index.postings.end()) continue;
    const auto& plist = it->second;
    auto pos = std::lower_bound(plist.begin(), plist.end(), doc,
                                [](const Bm25Index::Posting& p, uint32_t d) { return p.doc < d; });
    if (pos == plist.end() || pos->doc != doc) continue;
    score += idf(index, plist.size()) *
             tf_weight(index, static_cast<double>(pos->tf), index.doc_lengths[doc]);
  }
  return score;
}

std::vector<ScoredDoc> bm25_search(const Bm25Index& index, std::span<const int32_t> query_ids,
                                   size_t k) {
  if (k < 1) throw ValidationError("bm25_search: k must be >= 1");
  std::vector<double> scores(index.doc_count, 0.0);
  for (int32_t term : query_ids) {
    auto it = index.postings.find(term);
    if (it == index.postings.end()) continue;
    const auto& plist = it->second;
    double term_idf = idf(index, plist.size());
    for (const auto& p : plist)
      scores[p.doc] += term_idf * tf_weight(index, static_cast<double>(p.tf),
                                            index.doc_lengths[p.doc]);
  }
  std::vector<ScoredDoc> hits;
  for (uint32_t d = 0; d < index.doc_count; ++d)
    if (scores[d] > 0.0) hits.push_back({d, scores[d]});
  size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<ptrdiff_t>(keep), hits.end(),
                    score_order);
  hits.resize(keep);
  return hits;
}

std::vector<ScoredDoc> dense_search(const EmbeddingStore& store, std::span<const double> qvec,
                                    size_t k) {
  if (k < 1) throw ValidationError("dense_search: k must be >= 1");
  if (qvec.size() != store.dim())
    throw ValidationError("dense_search: query dim " + std::to_string(qvec.size()) +
                          " != store dim " + std::to_string(store.dim()));
  std::vector<ScoredDoc> hits;
  hits.reserve(store.count());
  for (uint64_t i = 0; i < store.count(); ++i)
    hits.push_back({static_cast<uint32_t>(i), dot_f32_f64(store.row(i), qvec)});
  size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<ptrdiff_t>(keep), hits.end(),
                    score_order);
  hits.resize(keep);
  return hits;
}

void CandidatePool::add(std::string query_id, std::vector<ScoredDoc> items) {
  for (size_t i = 0; i + 1 < items.size(); ++i)
    if (items[i].score < items[i + 1].score)
      throw ValidationError("candidate pool scores must be non-increasing for " + query_id);
  std::unordered_map<uint32_t, bool> seen;
  for (const auto& it : items)
    if (!seen.emplace(it.index, true).second)
      throw ValidationError("duplicate candidate doc for " + query_id);
  auto [pos, inserted] = index.emplace(std::move(query_id), entries.size());
  if (!inserted) throw ValidationError("duplicate pool query id: " + pos->first);
  entries.push_back({pos->first, std::move(items)});
}

CandidatePool build_candidate_pool(
    const QuerySet& queries,
    const std::function<std::vector<ScoredDoc>(size_t query_index, size_t k)>& search_fn,
    size_t n_pool, std::string provenance) {
  if (n_pool < 1) throw ValidationError("pool size must be >= 1");
  CandidatePool pool;
  pool.provenance = std::move(provenance);
  for (size_t qi = 0; qi < queries.query_ids.size(); ++qi) {
    bool has_regular = false;
    for (int32_t id : queries.token_ids[qi])
      if (id >= Vocab::kFirstRegular) {
        has_regular = true;
        break;
      }
    if (!has_regular) {
      pool.skipped.push_back(queries.query_ids[qi]);
      continue;
    }
    auto items = search_fn(qi, n_pool);
    if (items.size() > n_pool) items.resize(n_pool);
    pool.add(queries.query_ids[qi], std::move(items));
  }
  return pool;
}

void save_pool(const CandidatePool& pool, const DocStore& docs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "#provenance=" << pool.provenance << '\n';

  std::vector<const CandidatePool::Entry*> sorted;
  sorted.reserve(pool.entries.size());
  for (const auto& e : pool.entries) sorted.push_back(&e);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->query_id < b->query_id; });

  char buf[64];
  for (const auto* e : sorted) {
    for (size_t r = 0; r < e->items.size(); ++r) {
      std::snprintf(buf, sizeof(buf), "%.17g", e->items[r].score);
      out << e->query_id << '\t' << (r + 1) << '\t' << docs.doc_id(e->items[r].index) << '\t'
          << buf << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

CandidatePool load_pool(const std::string& path, const DocStore& docs) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty pool file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::string header = "#provenance=";
  if (line.rfind(header, 0) != 0)
    throw FormatError(path + ": missing #provenance= header");

  CandidatePool pool;
  pool.provenance = line.substr(header.size());

  std::string cur_qid;
  std::vector<ScoredDoc> cur_items;
  size_t line_no = 1;
  auto flush = [&]() {
    if (!cur_qid.empty()) pool.add(cur_qid, std::move(cur_items));
    cur_items = {};
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, docid;
    size_t rank = 0;
    double score = 0.0;
    if (!(ss >> qid >> rank >> docid >> score))
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": expected <qid> <rank> <docid> <score>");
    if (qid != cur_qid) {
      flush();
      cur_qid = qid;
    }
    if (rank != cur_items.size() + 1)
      throw FormatError(path + ":" + std::to_string(line_no) + ": rank gap for query " + qid);
    auto idx = docs.index_of(docid);
    if (!idx) throw FormatError(path + ":" + std::to_string(line_no) + ": unknown doc " + docid);
    cur_items.push_back({static_cast<uint32_t>(*idx), score});
  }
  flush();
  return pool;
}

}  // namespace coder
