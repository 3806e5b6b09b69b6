#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "owodlab/adaptive_plm.hpp"

using namespace owodlab;

namespace {

MeasurerConfig tiny_measurer() {
  MeasurerConfig cfg;
  cfg.n = 2;
  cfg.total = 4;
  cfg.alpha = {2.0 / 3.0, 1.0 / 3.0};
  cfg.beta = {2.0 / 3.0, 1.0 / 3.0};
  return cfg;
}

LossMemory memory_from_newest_first(std::initializer_list<double> losses, std::size_t cap) {
  LossMemory mem(cap);
  // push oldest first so the reported order is exactly `losses`
  std::vector<double> v(losses);
  for (auto it = v.rbegin(); it != v.rend(); ++it) mem.push(*it);
  return mem;
}

}  // namespace

TEST_CASE("measurer defaults satisfy the side conditions") {
  auto cfg = MeasurerConfig::defaults();
  cfg.validate();
  CHECK(cfg.alpha.front() > cfg.alpha.back());  // recent losses weigh more
}

TEST_CASE("measure examples") {
  auto cfg = tiny_measurer();
  cfg.validate();

  auto equal = memory_from_newest_first({3.0, 3.0, 3.0, 3.0}, 4);
  CHECK(measure(equal, cfg) == doctest::Approx(1.0).epsilon(1e-12));

  auto rising = memory_from_newest_first({1.0, 1.0, 2.0, 2.0}, 4);
  CHECK(measure(rising, cfg) == doctest::Approx(0.5).epsilon(1e-12));

  auto falling = memory_from_newest_first({2.0, 2.0, 1.0, 1.0}, 4);
  CHECK(measure(falling, cfg) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("measure error cases") {
  auto cfg = tiny_measurer();
  auto short_mem = memory_from_newest_first({1.0, 1.0, 1.0}, 4);
  CHECK_THROWS_AS(measure(short_mem, cfg), InsufficientHistory);

  auto zero_tail = memory_from_newest_first({1.0, 1.0, 0.0, 0.0}, 4);
  CHECK_THROWS_AS(measure(zero_tail, cfg), DegenerateDenominator);
}

TEST_CASE("measure is scale invariant") {
  auto cfg = MeasurerConfig::defaults(5, 12);
  std::mt19937_64 rng(3);
  LossMemory mem(12);
  LossMemory scaled(12);
  for (int i = 0; i < 12; ++i) {
    const double loss = 0.1 + static_cast<double>(rng() % 1000) / 100.0;
    mem.push(loss);
    scaled.push(loss * 37.5);
  }
  CHECK(measure(mem, cfg) == doctest::Approx(measure(scaled, cfg)).epsilon(1e-12));
}

TEST_CASE("sense examples") {
  SensorConfig cfg;
  cfg.pi_pma = 0.33;
  cfg.pi_nma = 0.5;
  CHECK(sense(0.0, cfg) == 0.0);
  CHECK(sense(2.0, cfg) == doctest::Approx(0.5 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(sense(2.0, cfg) == doctest::Approx(0.365529).epsilon(1e-5));
  CHECK(sense(1.0, cfg) == doctest::Approx(-0.33).epsilon(1e-12));  // boundary on <= branch
}

TEST_CASE("sense range") {
  SensorConfig cfg;
  cfg.pi_pma = 0.4;
  cfg.pi_nma = 0.7;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 2000; ++i) {
    const double trend = static_cast<double>(rng() % 10000) / 1000.0;
    const double dw = sense(trend, cfg);
    CHECK(dw >= -cfg.pi_pma - 1e-12);
    CHECK(dw < cfg.pi_nma);
    if (trend > 1.0) CHECK(dw > cfg.pi_nma * 0.5);
  }
}

TEST_CASE("adjust examples") {
  AdaptiveState st;
  st.w_model = 0.8;
  st.w_input = 0.2;
  adjust(st, 0.0);
  CHECK(st.w_model == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(st.w_input == doctest::Approx(0.2).epsilon(1e-12));

  adjust(st, 0.25);  // pre-norm (1.0, 0.15)
  CHECK(st.w_model == doctest::Approx(1.0 / 1.15).epsilon(1e-9));
  CHECK(st.w_input == doctest::Approx(0.15 / 1.15).epsilon(1e-9));

  st.w_model = 0.5;
  st.w_input = 0.5;
  adjust(st, -0.2);
  CHECK(st.w_model == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(st.w_input == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("step initializes at (0.8, 0.2) and updates only on cycle boundaries") {
  AdaptiveState st(10, 8, MeasurerConfig::defaults(2, 4), SensorConfig{});
  for (int i = 0; i < 10; ++i) {
    auto row = step(st, 1.0);
    CHECK(!row.has_value());
    CHECK(st.w_model == 0.8);
    CHECK(st.w_input == 0.2);
  }
  // past T_start: updates only at t % 8 == 0
  double prev_wm = st.w_model;
  for (int t = 11; t <= 64; ++t) {
    auto row = step(st, 1.0);
    if (t % 8 == 0) {
      CHECK(row.has_value());
      CHECK(row->iteration == static_cast<std::size_t>(t));
    } else {
      CHECK(!row.has_value());
      CHECK(st.w_model == prev_wm);
    }
    prev_wm = st.w_model;
  }
}

TEST_CASE("constant loss stream shifts trust toward the input-driven source") {
  AdaptiveState st(10, 8, MeasurerConfig::defaults(2, 4), SensorConfig{});
  for (int t = 1; t <= 15; ++t) step(st, 2.5);
  auto row = step(st, 2.5);  // t = 16, first update cycle
  REQUIRE(row.has_value());
  CHECK(row->loss_trend == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(row->weight_delta == doctest::Approx(-st.sensor.pi_pma).epsilon(1e-12));
  CHECK(st.w_model < 0.8);
  CHECK(st.w_input > 0.2);
}

TEST_CASE("weights stay normalized and in (0,1) on adversarial streams") {
  std::mt19937_64 rng(17);
  auto run_stream = [&](auto next_loss) {
    AdaptiveState st(20, 7, MeasurerConfig::defaults(3, 9), SensorConfig{0.9, 0.9});
    for (int t = 0; t < 10000; ++t) {
      step(st, next_loss(t));
      CHECK(st.w_model + st.w_input == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(st.w_model > 0.0);
      CHECK(st.w_model < 1.0);
      CHECK(st.w_input > 0.0);
      CHECK(st.w_input < 1.0);
    }
  };
  run_stream([](int) { return 1.0; });
  run_stream([](int t) { return t % 2 ? 10.0 : 0.1; });
  run_stream([](int t) { return std::exp(t * 0.01); });
  run_stream([&](int) { return 0.001 + static_cast<double>(rng() % 10000); });
}

TEST_CASE("fuse_scores examples") {
  // three candidates so min-max normalization maps s_o 0.5 to itself
  BoundingBox probe = BoundingBox::from_corners(0.0, 0.0, 0.3, 0.3);
  BoundingBox half_overlap = BoundingBox::from_corners(0.1, 0.0, 0.4, 0.3);  // iou 0.5
  REQUIRE(iou(probe, half_overlap) == doctest::Approx(0.5));

  std::vector<PseudoCandidate> cands = {
      {BoundingBox::from_corners(0.6, 0.6, 0.7, 0.7), 0.0, 0.0},
      {probe, 0.5, 0.0},
      {BoundingBox::from_corners(0.6, 0.6, 0.7, 0.7), 1.0, 0.0},
  };
  fuse_scores(cands, {half_overlap}, 0.3, 0.7);
  CHECK(cands[1].fused_score == doctest::Approx(0.5).epsilon(1e-9));

  // no input-box overlap zeroes the fused score
  std::vector<PseudoCandidate> cands2 = {
      {probe, 0.2, 0.0}, {probe, 0.9, 0.0}};
  fuse_scores(cands2, {BoundingBox::from_corners(0.8, 0.8, 0.9, 0.9)}, 0.8, 0.2);
  CHECK(cands2[1].fused_score == 0.0);

  // norm(s_o)=0.25, maxIOU=1, W_m=0.8
  std::vector<PseudoCandidate> cands3 = {
      {probe, 0.0, 0.0}, {probe, 0.25, 0.0}, {probe, 1.0, 0.0}};
  fuse_scores(cands3, {probe}, 0.8, 0.2);
  CHECK(cands3[1].fused_score == doctest::Approx(std::pow(0.25, 0.8)).epsilon(1e-9));
  CHECK(cands3[1].fused_score == doctest::Approx(0.329877).epsilon(1e-5));
}

TEST_CASE("fuse_scores degenerate spread falls back to the overlap factor") {
  BoundingBox b = BoundingBox::from_corners(0.1, 0.1, 0.3, 0.3);
  std::vector<PseudoCandidate> cands = {{b, 0.7, 0.0}, {b, 0.7, 0.0}};
  fuse_scores(cands, {b}, 0.5, 0.5);
  CHECK(cands[0].fused_score == doctest::Approx(1.0));
}

TEST_CASE("fuse_scores monotonicity") {
  std::mt19937_64 rng(23);
  BoundingBox target = BoundingBox::from_corners(0.2, 0.2, 0.5, 0.5);
  for (int i = 0; i < 200; ++i) {
    const double so_lo = static_cast<double>(rng() % 1000) / 1000.0;
    const double so_hi = so_lo + static_cast<double>(rng() % 1000) / 1000.0 + 0.001;
    std::vector<PseudoCandidate> cands = {
        {target, 0.0, 0.0}, {target, so_lo, 0.0}, {target, so_hi, 0.0},
        {target, so_hi + 1.0, 0.0}};
    fuse_scores(cands, {target}, 0.6, 0.4);
    CHECK(cands[1].fused_score <= cands[2].fused_score + 1e-12);
  }
}

TEST_CASE("raising the model weight flips the argmax to the objectness-dominant candidate") {
  // candidate A dominates on s_o, candidate B on overlap
  BoundingBox proposal = BoundingBox::from_corners(0.1, 0.1, 0.4, 0.4);
  BoundingBox near_b = BoundingBox::from_corners(0.12, 0.1, 0.42, 0.4);
  BoundingBox off = BoundingBox::from_corners(0.1, 0.3, 0.4, 0.6);
  std::vector<PseudoCandidate> base = {
      {off, 1.0, 0.0},     // A: strong objectness, weak overlap
      {near_b, 0.2, 0.0},  // B: weak objectness, strong overlap
      {off, 0.0, 0.0},     // anchor for min-max normalization
  };
  auto argmax = [](const std::vector<PseudoCandidate>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
      if (v[i].fused_score > v[best].fused_score) best = i;
    return best;
  };
  auto low = base;
  fuse_scores(low, {proposal}, 0.05, 0.95);
  CHECK(argmax(low) == 1);  // input-driven trust wins
  auto high = base;
  fuse_scores(high, {proposal}, 0.95, 0.05);
  CHECK(argmax(high) == 0);  // model-driven trust wins
}

TEST_CASE("select_pseudo_labels") {
  BoundingBox gt = BoundingBox::from_corners(0.1, 0.1, 0.4, 0.4);
  BoundingBox clean = BoundingBox::from_corners(0.6, 0.6, 0.9, 0.9);
  BoundingBox clean2 = BoundingBox::from_corners(0.1, 0.6, 0.35, 0.9);

  std::vector<PseudoCandidate> scored = {
      {gt, 0.0, 0.95},      // coincides with GT: excluded
      {clean, 0.0, 0.9},
      {clean2, 0.0, 0.7},
  };
  auto labels = select_pseudo_labels(scored, {gt}, 5);
  CHECK(labels.size() == 2);  // k larger than survivors

  // near-duplicates collapse to the higher score
  BoundingBox dup = BoundingBox::from_corners(0.6, 0.6, 0.88, 0.9);
  REQUIRE(iou(clean, dup) > 0.7);
  std::vector<PseudoCandidate> dups = {{clean, 0.0, 0.9}, {dup, 0.0, 0.7}};
  auto kept = select_pseudo_labels(dups, {}, 5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].x2() == doctest::Approx(clean.x2()));

  // top-k truncation
  auto topk = select_pseudo_labels(scored, {}, 1);
  CHECK(topk.size() == 1);
  CHECK(topk[0].x1() == doctest::Approx(gt.x1()));
}

TEST_CASE("attention_driven_scores") {
  // 2x2 map: left column bright
  std::vector<double> fmap = {1.0, 0.0, 1.0, 0.0};

  std::vector<BoundingBox> boxes = {
      BoundingBox::from_corners(0.0, 0.0, 1.0, 1.0),   // whole map
      BoundingBox::from_corners(0.0, 0.0, 0.5, 1.0),   // bright half
      BoundingBox{0.5, 0.5, 0.0, 0.0},                 // zero area
  };
  auto scores = attention_driven_scores(fmap, 2, 2, boxes);
  CHECK(scores[0] == doctest::Approx(0.5));
  CHECK(scores[1] == doctest::Approx(1.0));
  CHECK(scores[2] == 0.0);

  std::vector<double> uniform(9, 0.37);
  auto u = attention_driven_scores(uniform, 3, 3,
                                   {BoundingBox::from_corners(0.1, 0.1, 0.9, 0.9)});
  CHECK(u[0] == doctest::Approx(0.37));
}
