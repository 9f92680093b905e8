#pragma once

#include <string>
#include <utility>
#include <vector>

#include "coder/common.hpp"
#include "coder/corpus.hpp"

namespace coder {

/// Ranked results per query in TREC run-file shape: contiguous ranks 1..n,
/// non-increasing scores, at most one entry per (qid, docid).
struct RunFile {
  struct QueryRun {
    std::string query_id;
    std::vector<std::pair<std::string, double>> ranked;  // (doc id, score)
  };
  std::string tag = "coder";
  std::vector<QueryRun> queries;
};

struct MetricReport {
  std::string metric;
  int k = 0;
  int rel_threshold = 0;  // 0 where not applicable (nDCG)
  double aggregate = 0.0;  // arithmetic mean over evaluated queries
  std::vector<std::pair<std::string, double>> per_query;
  size_t evaluated = 0;
  size_t skipped_unjudged = 0;     // query in run but absent from qrels
  size_t skipped_no_relevant = 0;  // judged but nothing at/above threshold
};

/// 1/rank of the first doc with grade >= rel_threshold within the top k.
MetricReport mrr_at_k(const RunFile& run, const RelevanceJudgments& qrels, int k,
                      int rel_threshold);

enum class GainMode { Linear, Exponential };

/// DCG with gain(rel)/log2(rank+1); ideal from the qrels-sorted grades.
/// nDCG always uses raw grades; set zero_below_threshold to zero out gains
/// under the threshold for the strict variant cross-check.
MetricReport ndcg_at_k(const RunFile& run, const RelevanceJudgments& qrels, int k,
                       GainMode gain = GainMode::Linear, int zero_below_threshold = 0);

MetricReport recall_at_k(const RunFile& run, const RelevanceJudgments& qrels, int k,
                         int rel_threshold);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  size_t n = 0;
};

/// Two-sided paired t-test over aligned per-query values. Zero variance maps
/// to p=1 when the mean difference is zero and p=0 otherwise.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);

/// Lines `<qid> Q0 <docid> <rank> <score> <tag>`, scores with 6 decimals.
void write_run_file(const RunFile& run, const std::string& path);
/// Exact inverse modulo float formatting; rank gaps or score inversions are
/// validation errors.
RunFile read_run_file(const std::string& path);

std::string report_to_tsv(const MetricReport& report);

}  // namespace coder
