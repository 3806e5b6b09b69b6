#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "owodlab/matching.hpp"

using namespace owodlab;

namespace {

double assignment_cost(const std::vector<std::vector<double>>& cost,
                       const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  double total = 0.0;
  for (const auto& [r, c] : pairs) total += cost[r][c];
  return total;
}

// Exhaustive minimum over all ways to assign min(R,C) pairs.
double brute_force_min(const std::vector<std::vector<double>>& cost) {
  const std::size_t n_rows = cost.size();
  const std::size_t n_cols = cost[0].size();
  if (n_rows <= n_cols) {
    std::vector<std::size_t> cols(n_cols);
    std::iota(cols.begin(), cols.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    std::sort(cols.begin(), cols.end());
    do {
      double t = 0.0;
      for (std::size_t r = 0; r < n_rows; ++r) t += cost[r][cols[r]];
      best = std::min(best, t);
    } while (std::next_permutation(cols.begin(), cols.end()));
    return best;
  }
  std::vector<std::vector<double>> tr(n_cols, std::vector<double>(n_rows));
  for (std::size_t r = 0; r < n_rows; ++r)
    for (std::size_t c = 0; c < n_cols; ++c) tr[c][r] = cost[r][c];
  return brute_force_min(tr);
}

std::vector<std::vector<double>> random_cost(std::size_t r, std::size_t c,
                                             std::mt19937_64& rng) {
  std::vector<std::vector<double>> m(r, std::vector<double>(c));
  for (auto& row : m)
    for (double& x : row) x = static_cast<double>(rng() % 2000) / 100.0 - 10.0;
  return m;
}

}  // namespace

TEST_CASE("hungarian examples") {
  auto pairs = hungarian({{1, 2}, {3, 1}});
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0] == std::pair<std::size_t, std::size_t>{0, 0});
  CHECK(pairs[1] == std::pair<std::size_t, std::size_t>{1, 1});

  // diagonal-favoring matrix
  std::vector<std::vector<double>> diag(4, std::vector<double>(4, 5.0));
  for (std::size_t i = 0; i < 4; ++i) diag[i][i] = 0.0;
  auto dp = hungarian(diag);
  for (const auto& [r, c] : dp) CHECK(r == c);

  CHECK(hungarian({}).empty());
}

TEST_CASE("hungarian equals brute force on random matrices") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 1 + rng() % 6;
    auto cost = random_cost(n, n, rng);
    auto pairs = hungarian(cost);
    CHECK(assignment_cost(cost, pairs) ==
          doctest::Approx(brute_force_min(cost)).epsilon(1e-9));
  }
}

TEST_CASE("hungarian on rectangular matrices") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t r = 1 + rng() % 5;
    const std::size_t c = 1 + rng() % 5;
    auto cost = random_cost(r, c, rng);
    auto pairs = hungarian(cost);
    CHECK(pairs.size() == std::min(r, c));
    std::vector<char> row_used(r, 0), col_used(c, 0);
    for (const auto& [pr, pc] : pairs) {
      CHECK(!row_used[pr]);
      CHECK(!col_used[pc]);
      row_used[pr] = 1;
      col_used[pc] = 1;
    }
    CHECK(assignment_cost(cost, pairs) ==
          doctest::Approx(brute_force_min(cost)).epsilon(1e-9));
  }
}

TEST_CASE("hungarian tie-break is lexicographic") {
  auto pairs = hungarian({{1, 1}, {1, 1}});
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0] == std::pair<std::size_t, std::size_t>{0, 0});
  CHECK(pairs[1] == std::pair<std::size_t, std::size_t>{1, 1});

  // row 0 can take either column at equal total; it must take column 0
  auto p2 = hungarian({{2, 2}, {2, 2}, {9, 9}});
  REQUIRE(p2.size() == 2);
  CHECK(p2[0] == std::pair<std::size_t, std::size_t>{0, 0});
  CHECK(p2[1] == std::pair<std::size_t, std::size_t>{1, 1});
}

namespace {

DetectorConfig tiny_cfg(std::size_t queries, std::size_t classes) {
  DetectorConfig cfg;
  cfg.num_queries = queries;
  cfg.num_known_classes = classes;
  return cfg;
}

DetectorOutput make_pred(const std::vector<BoundingBox>& boxes,
                         const std::vector<double>& class_logits,
                         const std::vector<double>& objectness) {
  DetectorOutput out;
  out.boxes = boxes;
  out.class_logits = class_logits;
  out.objectness = objectness;
  return out;
}

}  // namespace

TEST_CASE("match_cost hand case") {
  // one query, one class (+unknown): equal logits give prob 0.5 everywhere
  auto cfg = tiny_cfg(1, 1);
  BoundingBox pred_box{0.1, 0.1, 0.2, 0.2};
  BoundingBox gt_box{0.1, 0.3, 0.2, 0.2};  // adjacent: iou 0, giou 0, L1 0.2
  REQUIRE(giou(pred_box, gt_box) == doctest::Approx(0.0));
  auto pred = make_pred({pred_box}, {0.3, 0.3}, {0.0});
  auto cost = match_cost(pred, {{0, gt_box}}, cfg);
  // 2*(-0.5) + 5*0.2 + 2*(1-0) = 2
  CHECK(cost[0][0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("match_cost perfect prediction") {
  auto cfg = tiny_cfg(1, 1);
  BoundingBox b{0.5, 0.5, 0.2, 0.2};
  // saturate class 0 probability toward 1
  auto pred = make_pred({b}, {50.0, -50.0}, {0.0});
  auto cost = match_cost(pred, {{0, b}}, cfg);
  CHECK(cost[0][0] == doctest::Approx(-2.0).epsilon(1e-9));
}

TEST_CASE("match separates matched and unmatched queries") {
  auto cfg = tiny_cfg(3, 2);
  BoundingBox g0{0.2, 0.2, 0.1, 0.1};
  BoundingBox g1{0.7, 0.7, 0.1, 0.1};
  auto pred = make_pred({g1, {0.5, 0.5, 0.1, 0.1}, g0},
                        std::vector<double>(3 * 3, 0.0), {0, 0, 0});
  auto res = match(pred, {{0, g0}, {1, g1}}, cfg);
  REQUIRE(res.pairs.size() == 2);
  // query 2 sits on g0, query 0 on g1
  for (const auto& [q, g] : res.pairs) {
    if (g == 0) CHECK(q == 2);
    if (g == 1) CHECK(q == 0);
  }
  REQUIRE(res.unmatched_queries.size() == 1);
  CHECK(res.unmatched_queries[0] == 1);
}

TEST_CASE("joint_loss with no targets") {
  auto cfg = tiny_cfg(4, 2);
  auto pred = make_pred({{0.5, 0.5, 0.1, 0.1},
                         {0.2, 0.2, 0.1, 0.1},
                         {0.8, 0.8, 0.1, 0.1},
                         {0.4, 0.6, 0.1, 0.1}},
                        std::vector<double>(4 * 3, 0.1), {0.2, -0.1, 0.0, 0.3});
  auto loss = joint_loss(pred, cfg, {}, {});
  CHECK(loss.localization == 0.0);
  CHECK(loss.identification >= 0.0);
  CHECK(loss.objectness >= 0.0);
  CHECK(loss.total == doctest::Approx(loss.identification + loss.objectness));
}

TEST_CASE("joint_loss vanishes for perfect saturated predictions") {
  auto cfg = tiny_cfg(2, 1);
  BoundingBox g{0.5, 0.5, 0.2, 0.2};
  BoundingBox bg{0.1, 0.9, 0.05, 0.05};
  auto pred = make_pred({g, bg},
                        {60.0, -60.0,   // query 0: class 0 certain
                         -60.0, -60.0}, // query 1: background (all low)
                        {60.0, -60.0});
  auto loss = joint_loss(pred, cfg, {{0, g}}, {});
  CHECK(loss.localization == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(loss.identification == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(loss.objectness == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("joint_loss single matched pair against scalar arithmetic") {
  auto cfg = tiny_cfg(1, 1);
  BoundingBox pb{0.4, 0.4, 0.2, 0.2};
  BoundingBox gb{0.45, 0.4, 0.2, 0.2};
  const double logit0 = 0.7, logit1 = -0.4, obj_logit = 0.9;
  auto pred = make_pred({pb}, {logit0, logit1}, {obj_logit});
  auto loss = joint_loss(pred, cfg, {{0, gb}}, {});

  const double l1 = std::fabs(pb.cx - gb.cx) + std::fabs(pb.cy - gb.cy) +
                    std::fabs(pb.w - gb.w) + std::fabs(pb.h - gb.h);
  const double expected_loc = 5.0 * l1 + 2.0 * (1.0 - giou(pb, gb));
  CHECK(loss.localization == doctest::Approx(expected_loc).epsilon(1e-9));

  auto focal = [](double logit, double target) {
    const double p = 1.0 / (1.0 + std::exp(-logit));
    const double pt = target > 0.5 ? p : 1.0 - p;
    const double at = target > 0.5 ? 0.25 : 0.75;
    return -at * std::pow(1.0 - pt, 2.0) * std::log(pt);
  };
  CHECK(loss.identification ==
        doctest::Approx(focal(logit0, 1.0) + focal(logit1, 0.0)).epsilon(1e-9));

  const double p_obj = 1.0 / (1.0 + std::exp(-obj_logit));
  CHECK(loss.objectness == doctest::Approx(-std::log(p_obj)).epsilon(1e-9));
  CHECK(loss.total ==
        doctest::Approx(loss.localization + loss.identification + loss.objectness));
}

TEST_CASE("joint_loss assigns pseudo-unknowns only to unmatched queries") {
  auto cfg = tiny_cfg(2, 1);
  BoundingBox g{0.3, 0.3, 0.2, 0.2};
  BoundingBox u{0.7, 0.7, 0.2, 0.2};
  auto pred = make_pred({g, u}, {5.0, -5.0, -5.0, 5.0}, {1.0, -1.0});
  auto with_pseudo = joint_loss(pred, cfg, {{0, g}}, {u});
  auto without = joint_loss(pred, cfg, {{0, g}}, {});
  // pseudo box is hit exactly by the unmatched query: localization stays ~0
  CHECK(with_pseudo.localization == doctest::Approx(0.0).epsilon(1e-9));
  // objectness target flips to 1 for the second query
  CHECK(with_pseudo.objectness != doctest::Approx(without.objectness));
}

TEST_CASE("joint_loss invariant under GT permutation") {
  std::mt19937_64 rng(31);
  auto cfg = tiny_cfg(5, 3);
  std::vector<BoundingBox> boxes;
  std::vector<double> logits, obj;
  for (int q = 0; q < 5; ++q) {
    boxes.push_back({0.1 + 0.15 * q, 0.5, 0.1, 0.1});
    obj.push_back(static_cast<double>(rng() % 100) / 50.0 - 1.0);
    for (int c = 0; c < 4; ++c) logits.push_back(static_cast<double>(rng() % 100) / 50.0 - 1.0);
  }
  auto pred = make_pred(boxes, logits, obj);
  std::vector<GtInstance> gt = {{0, {0.12, 0.45, 0.1, 0.1}},
                                {2, {0.4, 0.52, 0.12, 0.1}},
                                {1, {0.72, 0.5, 0.1, 0.08}}};
  auto a = joint_loss(pred, cfg, gt, {});
  std::swap(gt[0], gt[2]);
  std::swap(gt[1], gt[2]);
  auto b = joint_loss(pred, cfg, gt, {});
  CHECK(a.total == doctest::Approx(b.total).epsilon(1e-12));
  CHECK(a.localization == doctest::Approx(b.localization).epsilon(1e-12));
}
