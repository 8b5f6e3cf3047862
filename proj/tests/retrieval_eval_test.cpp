#include "lpd/random.hpp"
#include "lpd/retrieval_eval.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace lpd;

namespace {

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("v" + std::to_string(100000 + i));
  return ids;
}

RankedList list_of(std::initializer_list<const char*> ids) {
  RankedList r;
  double s = 1.0;
  for (const char* id : ids) r.items.push_back({id, s -= 0.01});
  return r;
}

}  // namespace

TEST_CASE("rank examples") {
  const std::vector<double> scores{0.9, 0.1, 0.5};
  const std::vector<std::string> ids{"a", "b", "c"};
  const auto r = rank(scores, ids, 2);
  REQUIRE(r.depth() == 2);
  CHECK(r.items[0].id == "a");
  CHECK(r.items[1].id == "c");
  CHECK(rank(scores, ids, 10).depth() == 3);

  const std::vector<double> flat(4, 0.3);
  const std::vector<std::string> shuffled{"d", "b", "a", "c"};
  const auto tied = rank(flat, shuffled, 4);
  CHECK(tied.items[0].id == "a");
  CHECK(tied.items[3].id == "d");
}

TEST_CASE("rank rejects duplicates and non-finite scores") {
  const std::vector<std::string> dup{"a", "a"};
  CHECK_THROWS(rank(std::vector<double>{0.1, 0.2}, dup, 2));
  const std::vector<std::string> ids{"a", "b"};
  CHECK_THROWS(rank(std::vector<double>{0.1, std::nan("")}, ids, 2));
}

TEST_CASE("rank equals truncated full sort on 10k items") {
  Rng rng(5);
  const auto ids = make_ids(10000);
  for (int seed = 0; seed < 3; ++seed) {
    std::vector<double> scores(ids.size());
    // Coarse scores force many ties.
    for (auto& s : scores) s = std::floor(rng.uniform() * 500.0) / 500.0;
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores[a] != scores[b] ? scores[a] > scores[b] : ids[a] < ids[b];
    });
    for (std::size_t k : {20u, 1000u}) {
      const auto r = rank(scores, ids, k);
      REQUIRE(r.depth() == k);
      bool same = true;
      for (std::size_t i = 0; i < k; ++i) same = same && r.items[i].id == ids[order[i]];
      CHECK(same);
    }
  }
}

TEST_CASE("average precision examples") {
  const auto r = list_of({"a", "b", "c", "d"});
  CHECK(std::abs(average_precision(r, {"a", "c"}) - 0.8333) < 1e-4);
  CHECK(average_precision(r, {"a", "b"}) == 1.0);
  CHECK(average_precision(r, {"x", "y"}) == 0.0);
  // One of two relevant items is beyond the ranking depth.
  CHECK(average_precision(r, {"b", "z"}) == doctest::Approx(0.25));
  CHECK_THROWS(average_precision(r, {}));
  CHECK(precision_at(r, {"a", "c"}, 2) == doctest::Approx(0.5));
}

TEST_CASE("average precision depends only on the ranking") {
  Rng rng(7);
  const auto ids = make_ids(300);
  std::set<std::string> relevant;
  for (int i = 0; i < 15; ++i) relevant.insert(ids[rng.below(ids.size())]);
  std::vector<double> scores(ids.size()), warped(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    scores[i] = rng.uniform(-2.0, 2.0);
    warped[i] = std::exp(3.0 * scores[i]) - 10.0;
  }
  CHECK(average_precision(rank(scores, ids, 300), relevant) == average_precision(rank(warped, ids, 300), relevant));
}

TEST_CASE("random ranking mAP sits near the base rate") {
  Rng rng(9);
  const std::size_t n = 2000, rel = 100;
  const auto ids = make_ids(n);
  std::set<std::string> relevant(ids.begin(), ids.begin() + rel);
  double total = 0;
  const int trials = 40;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> scores(n);
    for (auto& s : scores) s = rng.uniform();
    total += average_precision(rank(scores, ids, n), relevant);
  }
  CHECK(std::abs(total / trials - static_cast<double>(rel) / n) < 0.02);
}

TEST_CASE("inter-space IoU examples") {
  std::vector<std::string> a_ids, b_ids;
  for (int i = 0; i < 20; ++i) a_ids.push_back("a" + std::to_string(i));
  for (int i = 0; i < 20; ++i) b_ids.push_back(i < 10 ? a_ids[static_cast<std::size_t>(i)] : "b" + std::to_string(i));
  const auto as_list = [](const std::vector<std::string>& ids) {
    RankedList r;
    for (const auto& id : ids) r.items.push_back({id, 0.0});
    return r;
  };
  std::vector<std::string> c_ids;
  for (int i = 0; i < 20; ++i) c_ids.push_back("c" + std::to_string(i));

  const std::vector<std::vector<RankedList>> lists{{as_list(a_ids)}, {as_list(b_ids)}, {as_list(c_ids)}, {as_list(a_ids)}};
  const auto iou = inter_space_iou(lists, 20);
  CHECK(iou.values(0, 1) == doctest::Approx(10.0 / 30.0));
  CHECK(iou.values(0, 2) == 0.0);
  CHECK(iou.values(0, 3) == 1.0);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(iou.values(i, i) == 1.0);
  CHECK(iou.values.isApprox(iou.values.transpose(), 0.0));
  CHECK(iou.mean_off_diagonal == doctest::Approx((1.0 / 3 + 0 + 1 + 0 + 1.0 / 3 + 0) / 6.0));

  std::vector<std::string> short_ids(a_ids.begin(), a_ids.begin() + 5);
  const std::vector<std::vector<RankedList>> shallow{{as_list(short_ids)}, {as_list(short_ids)}};
  CHECK_THROWS(inter_space_iou(shallow, 20));
}

TEST_CASE("evaluate skips unjudged queries and writes reports") {
  const std::vector<std::string> queries{"q1", "q2"};
  const std::vector<std::string> items{"a", "b", "c", "d"};
  Matrix agg(2, 4);
  agg << 0.9, 0.8, 0.7, 0.1, 0.1, 0.2, 0.3, 0.4;
  const std::map<std::string, std::set<std::string>> rel{{"q1", {"a", "c"}}};
  EvalOptions opt;
  opt.iou_k = 2;
  opt.precision_ks = {2};
  const std::vector<Matrix> spaces{agg, agg};
  const auto report = evaluate(agg, spaces, queries, items, rel, opt);
  REQUIRE(report.queries.size() == 1);
  CHECK(report.mean_average_precision == doctest::Approx(5.0 / 6.0));
  CHECK(report.mean_precision.at(2) == doctest::Approx(0.5));
  CHECK(report.warnings.size() == 1);
  CHECK(report.iou.mean_off_diagonal == 1.0);

  testing::TempDir dir("eval");
  write_report_csv(dir / "report.csv", report);
  write_iou_csv(dir / "iou.csv", report.iou);
  const auto csv = testing::read_file(dir / "report.csv");
  CHECK(csv.rfind("query_id,relevant,AP,P@2\n", 0) == 0);
  CHECK(csv.find("MEAN,") != std::string::npos);
  CHECK(testing::read_file(dir / "iou.csv").find("1,1") != std::string::npos);
  CHECK(summarize(report).find("mAP") != std::string::npos);
}
