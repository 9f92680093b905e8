#include "coder/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace coder {

namespace {

double log2d(double x) { return std::log2(x); }

double gain_of(int rel, GainMode mode) {
  if (mode == GainMode::Linear) return static_cast<double>(rel);
  return std::pow(2.0, static_cast<double>(rel)) - 1.0;
}

void finish(MetricReport& r) {
  double sum = 0.0;
  for (auto& [qid, v] : r.per_query) sum += v;
  r.evaluated = r.per_query.size();
  r.aggregate = r.evaluated > 0 ? sum / static_cast<double>(r.evaluated) : 0.0;
}

}  // namespace

MetricReport mrr_at_k(const RunFile& run, const RelevanceJudgments& qrels, int k,
                      int rel_threshold) {
  if (k < 1) throw ValidationError("mrr_at_k: k must be >= 1");
  MetricReport report;
  report.metric = "mrr";
  report.k = k;
  report.rel_threshold = rel_threshold;
  for (const auto& q : run.queries) {
    const auto* judged = qrels.judged(q.query_id);
    if (judged == nullptr) {
      ++report.skipped_unjudged;
      continue;
    }
    bool any_relevant = false;
    for (const auto& [doc, grade] : *judged)
      if (grade >= rel_threshold && grade > 0) {
        any_relevant = true;
        break;
      }
    if (!any_relevant) {
      ++report.skipped_no_relevant;
      continue;
    }
    double rr = 0.0;
    size_t depth = std::min<size_t>(q.ranked.size(), static_cast<size_t>(k));
    for (size_t i = 0; i < depth; ++i) {
      auto it = judged->find(q.ranked[i].first);
      if (it != judged->end() && it->second >= rel_threshold && it->second > 0) {
        rr = 1.0 / static_cast<double>(i + 1);
        break;
      }
    }
    report.per_query.emplace_back(q.query_id, rr);
  }
  finish(report);
  return report;
}

MetricReport ndcg_at_k(const RunFile& run, const RelevanceJudgments& qrels, int k, GainMode gain,
                       int zero_below_threshold) {
  if (k < 1) throw ValidationError("ndcg_at_k: k must be >= 1");
  MetricReport report;
  report.metric = "ndcg";
  report.k = k;
  report.rel_threshold = zero_below_threshold;
  for (const auto& q : run.queries) {
    const auto* judged = qrels.judged(q.query_id);
    if (judged == nullptr) {
      ++report.skipped_unjudged;
      continue;
    }
    auto effective = [&](int grade) {
      return grade < zero_below_threshold ? 0 : grade;
    };
    std::vector<int> grades;
    grades.reserve(judged->size());
    for (const auto& [doc, grade] : *judged) grades.push_back(effective(grade));
    std::sort(grades.begin(), grades.end(), std::greater<int>());

    double idcg = 0.0;
    for (size_t i = 0; i < grades.size() && i < static_cast<size_t>(k); ++i)
      idcg += gain_of(grades[i], gain) / log2d(static_cast<double>(i + 2));
    if (idcg <= 0.0) {
      ++report.skipped_no_relevant;
      continue;
    }
    double dcg = 0.0;
    size_t depth = std::min<size_t>(q.ranked.size(), static_cast<size_t>(k));
    for (size_t i = 0; i < depth; ++i) {
      auto it = judged->find(q.ranked[i].first);
      int grade = it == judged->end() ? 0 : effective(it->second);
      dcg += gain_of(grade, gain) / log2d(static_cast<double>(i + 2));
    }
    report.per_query.emplace_back(q.query_id, dcg / idcg);
  }
  finish(report);
  return report;
}

MetricReport recall_at_k(const RunFile& run, const RelevanceJudgments& qrels, int k,
                         int rel_threshold) {
  if (k < 1) throw ValidationError("recall_at_k: k must be >= 1");
  MetricReport report;
  report.metric = "recall";
  report.k = k;
  report.rel_threshold = rel_threshold;
  for (const auto& q : run.queries) {
    const auto* judged = qrels.judged(q.query_id);
    if (judged == nullptr) {
      ++report.skipped_unjudged;
      continue;
    }
    size_t relevant = 0;
    for (const auto& [doc, grade] : *judged)
      if (grade >= rel_threshold && grade > 0) ++relevant;
    if (relevant == 0) {
      ++report.skipped_no_relevant;
      continue;
    }
    size_t found = 0;
    size_t depth = std::min<size_t>(q.ranked.size(), static_cast<size_t>(k));
    for (size_t i = 0; i < depth; ++i) {
      auto it = judged->find(q.ranked[i].first);
      if (it != judged->end() && it->second >= rel_threshold && it->second > 0) ++found;
    }
    report.per_query.emplace_back(q.query_id,
                                  static_cast<double>(found) / static_cast<double>(relevant));
  }
  finish(report);
  return report;
}

namespace {

double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Lentz's continued fraction for the incomplete beta function.
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 400;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;

  double qab = a + b;
  double qap = a + 1.0;
  double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double bt = std::exp(a * std::log(x) + b * std::log(1.0 - x) - log_beta(a, b));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("paired_t_test: length mismatch");
  if (a.size() < 2) throw ValidationError("paired_t_test: need at least 2 pairs");
  size_t n = a.size();
  double mean = 0.0;
  for (size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double d = (a[i] - b[i]) - mean;
    ss += d * d;
  }
  double var = ss / static_cast<double>(n - 1);

  TTestResult out;
  out.n = n;
  if (var == 0.0) {
    if (mean == 0.0) {
      out.t = 0.0;
      out.p = 1.0;
    } else {
      out.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                         : -std::numeric_limits<double>::infinity();
      out.p = 0.0;
    }
    return out;
  }
  double nu = static_cast<double>(n - 1);
  out.t = mean / std::sqrt(var / static_cast<double>(n));
  out.p = regularized_incomplete_beta(nu / 2.0, 0.5, nu / (nu + out.t * out.t));
  return out;
}

void write_run_file(const RunFile& run, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  char buf[64];
  for (const auto& q : run.queries) {
    for (size_t i = 0; i + 1 < q.ranked.size(); ++i)
      if (q.ranked[i].second < q.ranked[i + 1].second)
        throw ValidationError("run scores must be non-increasing for " + q.query_id);
    for (size_t i = 0; i < q.ranked.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.6f", q.ranked[i].second);
      out << q.query_id << " Q0 " << q.ranked[i].first << ' ' << (i + 1) << ' ' << buf << ' '
          << run.tag << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

RunFile read_run_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  RunFile run;
  std::unordered_map<std::string, size_t> qindex;
  std::unordered_map<std::string, std::unordered_set<std::string>> seen_docs;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, q0, docid, tag;
    size_t rank = 0;
    double score = 0.0;
    if (!(ss >> qid >> q0 >> docid >> rank >> score >> tag))
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": expected <qid> Q0 <docid> <rank> <score> <tag>");
    run.tag = tag;
    auto [it, inserted] = qindex.emplace(qid, run.queries.size());
    if (inserted) run.queries.push_back({qid, {}});
    auto& group = run.queries[it->second].ranked;
    if (rank != group.size() + 1)
      throw ValidationError(path + ":" + std::to_string(line_no) + ": rank gap for query " + qid +
                            " (expected " + std::to_string(group.size() + 1) + ", got " +
                            std::to_string(rank) + ")");
    if (!group.empty() && score > group.back().second)
      throw ValidationError(path + ":" + std::to_string(line_no) + ": score inversion for query " +
                            qid);
    if (!seen_docs[qid].insert(docid).second)
      throw ValidationError(path + ":" + std::to_string(line_no) + ": duplicate doc " + docid +
                            " for query " + qid);
    group.emplace_back(docid, score);
  }
  return run;
}

std::string report_to_tsv(const MetricReport& report) {
  std::ostringstream out;
  char buf[64];
  out << "#metric=" << report.metric << "@" << report.k;
  if (report.rel_threshold > 0) out << "\t#threshold=" << report.rel_threshold;
  std::snprintf(buf, sizeof(buf), "%.6f", report.aggregate);
  out << "\t#aggregate=" << buf << "\t#evaluated=" << report.evaluated
      << "\t#skipped_unjudged=" << report.skipped_unjudged
      << "\t#skipped_no_relevant=" << report.skipped_no_relevant << '\n';
  for (const auto& [qid, v] : report.per_query) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    out << qid << '\t' << buf << '\n';
  }
  return out.str();
}

}  // namespace coder
