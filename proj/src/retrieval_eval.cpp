#include "lpd/retrieval_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace lpd {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

RankedList rank(std::span<const double> scores, std::span<const std::string> ids, std::size_t depth,
                std::string query_id) {
  if (scores.size() != ids.size()) throw std::invalid_argument("rank: scores and ids differ in length");
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("rank: non-finite score");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  };
  const std::size_t k = std::min(depth, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);

  RankedList out;
  out.query_id = std::move(query_id);
  out.items.reserve(k);
  std::unordered_set<std::string_view> seen;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& id = ids[order[i]];
    if (!seen.insert(id).second) throw std::invalid_argument("rank: duplicate item id '" + id + "'");
    out.items.push_back({id, scores[order[i]]});
  }
  return out;
}

double average_precision(const RankedList& ranked, const std::set<std::string>& relevant) {
  if (relevant.empty()) throw std::invalid_argument("average_precision: empty judgment set");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < ranked.items.size(); ++r) {
    if (relevant.contains(ranked.items[r].id)) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return sum / static_cast<double>(relevant.size());
}

double precision_at(const RankedList& ranked, const std::set<std::string>& relevant, std::size_t k) {
  if (k == 0) throw std::invalid_argument("precision_at: k must be >= 1");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranked.items.size()); ++r) {
    if (relevant.contains(ranked.items[r].id)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(k);
}

IouMatrix inter_space_iou(const std::vector<std::vector<RankedList>>& per_space, std::size_t k) {
  const std::size_t spaces = per_space.size();
  if (spaces < 2) throw std::invalid_argument("inter_space_iou: need at least 2 spaces");
  if (k == 0) throw std::invalid_argument("inter_space_iou: k must be >= 1");
  const std::size_t queries = per_space[0].size();
  for (const auto& lists : per_space) {
    if (lists.size() != queries) throw std::invalid_argument("inter_space_iou: query count differs across spaces");
    for (const auto& l : lists) {
      if (l.depth() < k) {
        throw std::invalid_argument("inter_space_iou: ranked list depth " + std::to_string(l.depth()) +
                                    " below k = " + std::to_string(k));
      }
    }
  }

  IouMatrix out;
  const auto n = static_cast<Eigen::Index>(spaces);
  out.values = Matrix::Identity(n, n);
  if (queries == 0) return out;

  // Sorted top-k id sets per (space, query).
  std::vector<std::vector<std::vector<std::string>>> tops(spaces, std::vector<std::vector<std::string>>(queries));
  for (std::size_t s = 0; s < spaces; ++s) {
    for (std::size_t q = 0; q < queries; ++q) {
      auto& top = tops[s][q];
      for (std::size_t r = 0; r < k; ++r) top.push_back(per_space[s][q].items[r].id);
      std::sort(top.begin(), top.end());
    }
  }
  double off_total = 0.0;
  for (std::size_t a = 0; a < spaces; ++a) {
    for (std::size_t b = a + 1; b < spaces; ++b) {
      double total = 0.0;
      for (std::size_t q = 0; q < queries; ++q) {
        std::vector<std::string> common;
        std::set_intersection(tops[a][q].begin(), tops[a][q].end(), tops[b][q].begin(), tops[b][q].end(),
                              std::back_inserter(common));
        const double inter = static_cast<double>(common.size());
        total += inter / (2.0 * static_cast<double>(k) - inter);
      }
      const double iou = total / static_cast<double>(queries);
      out.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = iou;
      out.values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = iou;
      off_total += iou;
    }
  }
  out.mean_off_diagonal = off_total / static_cast<double>(spaces * (spaces - 1) / 2);
  return out;
}

EvalReport evaluate(const Matrix& aggregate_scores, std::span<const Matrix> space_scores,
                    std::span<const std::string> query_ids, std::span<const std::string> item_ids,
                    const std::map<std::string, std::set<std::string>>& relevance, const EvalOptions& options) {
  const auto nq = static_cast<Eigen::Index>(query_ids.size());
  const auto n = static_cast<Eigen::Index>(item_ids.size());
  if (aggregate_scores.rows() != nq || aggregate_scores.cols() != n) {
    throw std::invalid_argument("evaluate: score matrix shape does not match queries x items");
  }
  EvalReport report;
  std::vector<double> row(static_cast<std::size_t>(n));
  const auto ranked_row = [&](const Matrix& scores, Eigen::Index q, std::size_t depth) {
    for (Eigen::Index i = 0; i < n; ++i) row[static_cast<std::size_t>(i)] = scores(q, i);
    return rank(row, item_ids, depth, query_ids[static_cast<std::size_t>(q)]);
  };

  std::size_t evaluated = 0;
  for (Eigen::Index q = 0; q < nq; ++q) {
    const auto& qid = query_ids[static_cast<std::size_t>(q)];
    const auto it = relevance.find(qid);
    if (it == relevance.end() || it->second.empty()) {
      report.warnings.push_back("query '" + qid + "' has no relevance judgments; skipped");
      continue;
    }
    const auto ranked = ranked_row(aggregate_scores, q, options.depth);
    QueryMetrics m;
    m.query_id = qid;
    m.relevant = it->second.size();
    m.average_precision = average_precision(ranked, it->second);
    for (auto k : options.precision_ks) {
      m.precision[k] = precision_at(ranked, it->second, k);
      report.mean_precision[k] += m.precision[k];
    }
    report.mean_average_precision += m.average_precision;
    report.queries.push_back(std::move(m));
    ++evaluated;
  }
  if (evaluated > 0) {
    report.mean_average_precision /= static_cast<double>(evaluated);
    for (auto& [k, v] : report.mean_precision) v /= static_cast<double>(evaluated);
  }

  if (options.iou_k > 0 && space_scores.size() >= 2) {
    std::vector<std::vector<RankedList>> per_space(space_scores.size());
    for (std::size_t s = 0; s < space_scores.size(); ++s) {
      for (Eigen::Index q = 0; q < nq; ++q) per_space[s].push_back(ranked_row(space_scores[s], q, options.iou_k));
    }
    report.iou = inter_space_iou(per_space, std::min<std::size_t>(options.iou_k, item_ids.size()));
  }
  return report;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  auto out = open_csv(path);
  out << "query_id,relevant,AP";
  for (const auto& [k, _] : report.mean_precision) out << ",P@" << k;
  out << '\n';
  for (const auto& q : report.queries) {
    out << q.query_id << ',' << q.relevant << ',' << fmt_double(q.average_precision);
    for (const auto& [k, v] : q.precision) out << ',' << fmt_double(v);
    out << '\n';
  }
  out << "MEAN,," << fmt_double(report.mean_average_precision);
  for (const auto& [k, v] : report.mean_precision) out << ',' << fmt_double(v);
  out << '\n';
}

void write_iou_csv(const std::filesystem::path& path, const IouMatrix& iou) {
  auto out = open_csv(path);
  out << "space";
  for (Eigen::Index c = 0; c < iou.values.cols(); ++c) out << ',' << c;
  out << '\n';
  for (Eigen::Index r = 0; r < iou.values.rows(); ++r) {
    out << r;
    for (Eigen::Index c = 0; c < iou.values.cols(); ++c) out << ',' << fmt_double(iou.values(r, c));
    out << '\n';
  }
}

std::string summarize(const EvalReport& report) {
  std::ostringstream s;
  s << "queries: " << report.queries.size() << '\n';
  s << "mAP (exact AP, complete judgments): " << fmt_double(report.mean_average_precision) << '\n';
  for (const auto& [k, v] : report.mean_precision) s << "P@" << k << ": " << fmt_double(v) << '\n';
  if (report.iou.values.size() > 0) {
    s << "mean inter-space IoU: " << fmt_double(report.iou.mean_off_diagonal) << '\n';
  }
  for (const auto& w : report.warnings) s << "warning: " << w << '\n';
  return s.str();
}

}  // namespace lpd
