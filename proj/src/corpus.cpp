#include "coder/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace coder {

namespace {

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  return out;
}

}  // namespace

size_t DocStore::add(std::string id, std::string text) {
  auto [it, inserted] = id_index_.emplace(id, doc_ids_.size());
  if (!inserted) throw ValidationError("duplicate doc id: " + id);
  doc_ids_.push_back(std::move(id));
  texts_.push_back(std::move(text));
  return doc_ids_.size() - 1;
}

std::optional<size_t> DocStore::index_of(std::string_view id) const {
  auto it = id_index_.find(std::string(id));
  if (it == id_index_.end()) return std::nullopt;
  return it->second;
}

Vocab::Vocab() {
  add_token("<pad>");
  add_token("<unk>");
  add_token("<bos>");
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  for (const auto& t : tokens) v.add_token(t);
  return v;
}

void Vocab::add_token(std::string token) {
  auto [it, inserted] = token_to_id_.emplace(token, static_cast<int32_t>(id_to_token_.size()));
  if (!inserted) throw ValidationError("duplicate vocab token: " + token);
  id_to_token_.push_back(std::move(token));
}

int32_t Vocab::id_for(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token_for(int32_t id) const {
  if (id < 0 || id >= size()) throw ValidationError("token id out of range: " + std::to_string(id));
  return id_to_token_[static_cast<size_t>(id)];
}

bool Vocab::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) > 0;
}

void RelevanceJudgments::add(const std::string& query_id, const std::string& doc_id, int grade) {
  if (grade < 0 || grade > 3)
    throw ValidationError("relevance grade out of range 0..3: " + std::to_string(grade) +
                          " for (" + query_id + ", " + doc_id + ")");
  auto [it, inserted] = by_query_[query_id].emplace(doc_id, grade);
  if (!inserted)
    throw ValidationError("repeated qrels pair (" + query_id + ", " + doc_id + ")");
  ++pair_count_;
}

int RelevanceJudgments::grade(const std::string& query_id, const std::string& doc_id) const {
  auto q = by_query_.find(query_id);
  if (q == by_query_.end()) return 0;
  auto d = q->second.find(doc_id);
  return d == q->second.end() ? 0 : d->second;
}

bool RelevanceJudgments::is_judged(const std::string& query_id, const std::string& doc_id) const {
  auto q = by_query_.find(query_id);
  return q != by_query_.end() && q->second.count(doc_id) > 0;
}

bool RelevanceJudgments::has_judgments(const std::string& query_id) const {
  return by_query_.count(query_id) > 0;
}

const std::map<std::string, int>* RelevanceJudgments::judged(const std::string& query_id) const {
  auto q = by_query_.find(query_id);
  return q == by_query_.end() ? nullptr : &q->second;
}

std::vector<std::string> RelevanceJudgments::positives(const std::string& query_id,
                                                       int threshold) const {
  std::vector<std::string> out;
  auto q = by_query_.find(query_id);
  if (q == by_query_.end()) return out;
  for (const auto& [doc_id, grade] : q->second)
    if (grade >= threshold) out.push_back(doc_id);
  return out;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    unsigned char u = static_cast<unsigned char>(c);
    if (u < 128 && std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::vector<int32_t> tokenize(std::string_view text, const Vocab& vocab, size_t max_len) {
  if (max_len < 1) throw ValidationError("tokenize: max_len must be >= 1");
  std::vector<int32_t> ids;
  ids.push_back(Vocab::kBos);
  for (const auto& tok : split_tokens(text)) {
    if (ids.size() >= max_len) break;
    ids.push_back(vocab.id_for(tok));
  }
  return ids;
}

Vocab build_vocab(const DocStore& docs, const std::vector<std::string>& extra_texts,
                  size_t min_freq) {
  if (min_freq < 1) throw ValidationError("build_vocab: min_freq must be >= 1");
  std::unordered_map<std::string, size_t> freq;
  for (size_t i = 0; i < docs.count(); ++i)
    for (auto& tok : split_tokens(docs.text(i))) ++freq[tok];
  for (const auto& text : extra_texts)
    for (auto& tok : split_tokens(text)) ++freq[tok];

  std::vector<std::pair<std::string, size_t>> kept;
  kept.reserve(freq.size());
  for (auto& [tok, n] : freq)
    if (n >= min_freq) kept.emplace_back(tok, n);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<std::string> ordered;
  ordered.reserve(kept.size());
  for (auto& [tok, n] : kept) ordered.push_back(tok);
  return Vocab::from_tokens(ordered);
}

DocStore load_collection(const std::string& path) {
  auto in = open_input(path);
  DocStore docs;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected <id>\\t<text>");
    std::string id = line.substr(0, tab);
    if (id.empty())
      throw FormatError(path + ":" + std::to_string(line_no) + ": empty doc id");
    docs.add(std::move(id), line.substr(tab + 1));
  }
  return docs;
}

void save_collection(const DocStore& docs, const std::string& path) {
  auto out = open_output(path);
  for (size_t i = 0; i < docs.count(); ++i)
    out << docs.doc_id(i) << '\t' << docs.text(i) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

RawQueries load_queries(const std::string& path) {
  auto in = open_input(path);
  RawQueries q;
  std::unordered_map<std::string, size_t> seen;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected <qid>\\t<text>");
    std::string id = line.substr(0, tab);
    std::string text = line.substr(tab + 1);
    if (id.empty() || text.empty())
      throw FormatError(path + ":" + std::to_string(line_no) + ": empty query id or text");
    if (!seen.emplace(id, line_no).second)
      throw ValidationError("duplicate query id: " + id);
    q.ids.push_back(std::move(id));
    q.texts.push_back(std::move(text));
  }
  return q;
}

void save_queries(const RawQueries& queries, const std::string& path) {
  auto out = open_output(path);
  for (size_t i = 0; i < queries.ids.size(); ++i)
    out << queries.ids[i] << '\t' << queries.texts[i] << '\n';
  if (!out) throw IoError("write failed: " + path);
}

QuerySet tokenize_queries(const RawQueries& raw, const Vocab& vocab, size_t max_len) {
  QuerySet qs;
  qs.query_ids = raw.ids;
  qs.token_ids.reserve(raw.texts.size());
  for (const auto& text : raw.texts) qs.token_ids.push_back(tokenize(text, vocab, max_len));
  return qs;
}

RelevanceJudgments load_qrels(const std::string& path) {
  auto in = open_input(path);
  RelevanceJudgments qrels;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, iteration, docid, grade_str;
    if (!(ss >> qid >> iteration >> docid >> grade_str))
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": expected <qid> 0 <docid> <grade>");
    int grade = 0;
    try {
      size_t pos = 0;
      grade = std::stoi(grade_str, &pos);
      if (pos != grade_str.size()) throw std::invalid_argument(grade_str);
    } catch (const std::exception&) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": bad grade '" + grade_str + "'");
    }
    qrels.add(qid, docid, grade);
  }
  return qrels;
}

void write_qrels(const RelevanceJudgments& qrels, const std::string& path) {
  auto out = open_output(path);
  for (const auto& [qid, docs] : qrels.all())
    for (const auto& [docid, grade] : docs)
      out << qid << " 0 " << docid << ' ' << grade << '\n';
  if (!out) throw IoError("write failed: " + path);
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  auto out = open_output(path);
  for (int32_t id = Vocab::kFirstRegular; id < vocab.size(); ++id)
    out << vocab.token_for(id) << '\t' << id << '\n';
  if (!out) throw IoError("write failed: " + path);
}

Vocab load_vocab(const std::string& path) {
  auto in = open_input(path);
  std::vector<std::string> tokens;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected <token>\\t<id>");
    std::string token = line.substr(0, tab);
    int32_t id = 0;
    try {
      id = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": bad token id");
    }
    int32_t expected = static_cast<int32_t>(tokens.size()) + Vocab::kFirstRegular;
    if (id != expected)
      throw FormatError(path + ":" + std::to_string(line_no) + ": ids must be dense from " +
                        std::to_string(Vocab::kFirstRegular));
    tokens.push_back(std::move(token));
  }
  return Vocab::from_tokens(tokens);
}

}  // namespace coder
