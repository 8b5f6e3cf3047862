#pragma once

#include "lpd/numerics.hpp"

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace lpd {

struct ScoredItem {
  std::string id;
  double score = 0.0;
};

/// Ordered by (score desc, id asc); no duplicates.
struct RankedList {
  std::string query_id;
  std::vector<ScoredItem> items;

  std::size_t depth() const { return items.size(); }
};

/// Top-`depth` items by score with ties broken by ascending id. depth > n returns all n.
RankedList rank(std::span<const double> scores, std::span<const std::string> ids, std::size_t depth,
                std::string query_id = {});

/// Mean over relevant items of precision at their rank; unretrieved relevant items count 0.
/// Throws std::invalid_argument when `relevant` is empty.
double average_precision(const RankedList& ranked, const std::set<std::string>& relevant);

double precision_at(const RankedList& ranked, const std::set<std::string>& relevant, std::size_t k);

struct IouMatrix {
  Matrix values;  // spaces x spaces, symmetric with unit diagonal
  double mean_off_diagonal = 0.0;
};

/// `per_space[s][q]` is space s's ranking for query q. Entry (a, b) is the mean over
/// queries of |top_k(a) n top_k(b)| / |top_k(a) u top_k(b)|.
IouMatrix inter_space_iou(const std::vector<std::vector<RankedList>>& per_space, std::size_t k = 20);

struct QueryMetrics {
  std::string query_id;
  double average_precision = 0.0;
  std::map<std::size_t, double> precision;  // k -> P@k
  std::size_t relevant = 0;
};

struct EvalOptions {
  std::size_t depth = 1000;
  std::vector<std::size_t> precision_ks = {20};
  std::size_t iou_k = 20;  // 0 skips the inter-space IoU
};

struct EvalReport {
  std::vector<QueryMetrics> queries;
  double mean_average_precision = 0.0;
  std::map<std::size_t, double> mean_precision;
  IouMatrix iou;
  std::vector<std::string> warnings;
};

/// Scores are queries x items. `space_scores` may be empty, in which case no IoU is computed.
EvalReport evaluate(const Matrix& aggregate_scores, std::span<const Matrix> space_scores,
                    std::span<const std::string> query_ids, std::span<const std::string> item_ids,
                    const std::map<std::string, std::set<std::string>>& relevance, const EvalOptions& options);

/// Per-query CSV: query_id,relevant,AP,P@k... followed by a MEAN row.
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
/// IoU matrix as CSV with a header row of space indices.
void write_iou_csv(const std::filesystem::path& path, const IouMatrix& iou);
std::string summarize(const EvalReport& report);

}  // namespace lpd
