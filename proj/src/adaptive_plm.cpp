#include "owodlab/adaptive_plm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace owodlab {

MeasurerConfig MeasurerConfig::defaults(std::size_t n, std::size_t total) {
  MeasurerConfig cfg;
  cfg.n = n;
  cfg.total = total;
  cfg.alpha.resize(n);
  for (std::size_t i = 1; i <= n; ++i)
    cfg.alpha[i - 1] = 2.0 * static_cast<double>(n + 1 - i) /
                       (static_cast<double>(n) * static_cast<double>(n + 1));
  const std::size_t m = total - n;
  cfg.beta.resize(m);
  for (std::size_t j = 1; j <= m; ++j)
    cfg.beta[j - 1] = 2.0 * static_cast<double>(m + 1 - j) /
                      (static_cast<double>(m) * static_cast<double>(m + 1));
  return cfg;
}

void MeasurerConfig::validate() const {
  if (n == 0 || n >= total) throw std::invalid_argument("measurer: need 0 < n < N");
  if (alpha.size() != n || beta.size() != total - n)
    throw std::invalid_argument("measurer: weight vector lengths");
  auto check = [](const std::vector<double>& w, const char* name) {
    double s = 0.0;
    for (double x : w) s += x;
    if (std::fabs(s - 1.0) > 1e-9) throw std::invalid_argument(std::string(name) + ": sum != 1");
    if (w.size() >= 3) {
      const double d = w[1] - w[0];
      for (std::size_t i = 2; i < w.size(); ++i)
        if (std::fabs((w[i] - w[i - 1]) - d) > 1e-9)
          throw std::invalid_argument(std::string(name) + ": not an arithmetic progression");
    }
  };
  check(alpha, "alpha");
  check(beta, "beta");
}

double measure(const LossMemory& mem, const MeasurerConfig& cfg) {
  if (mem.size() < cfg.total) throw InsufficientHistory();
  double num = 0.0;
  for (std::size_t i = 0; i < cfg.n; ++i) num += cfg.alpha[i] * mem.at(i);
  double den = 0.0;
  for (std::size_t j = 0; j < cfg.total - cfg.n; ++j) den += cfg.beta[j] * mem.at(cfg.n + j);
  if (den == 0.0) throw DegenerateDenominator();
  return num / den;
}

double sense(double loss_trend, const SensorConfig& cfg) {
  if (loss_trend > 1.0) {
    const double s = 1.0 / (1.0 + std::exp(-(loss_trend - 1.0)));
    return cfg.pi_nma * s;
  }
  return -cfg.pi_pma * loss_trend;
}

void adjust(AdaptiveState& state, double weight_delta) {
  const double wm = state.w_model * (1.0 + weight_delta);
  const double wi = state.w_input * (1.0 - weight_delta);
  if (wm <= 0.0 || wi <= 0.0) throw NonPositiveWeight();
  const double s = wm + wi;
  // In real arithmetic the multiplicative update keeps both weights strictly
  // inside (0,1), but long one-sided streams can round them to exactly 0 or 1
  // in doubles; the floor preserves the open-interval invariant.
  constexpr double kWeightFloor = 1e-12;
  state.w_model = std::clamp(wm / s, kWeightFloor, 1.0 - kWeightFloor);
  state.w_input = 1.0 - state.w_model;
}

std::optional<ControllerTraceRow> step(AdaptiveState& state, double current_loss) {
  state.t += 1;
  if (state.t <= state.t_start) {
    state.w_model = 0.8;
    state.w_input = 0.2;
    state.memory.push(current_loss);
    return std::nullopt;
  }
  state.memory.push(current_loss);
  if (state.t % state.t_cycle != 0) return std::nullopt;
  double trend;
  try {
    trend = measure(state.memory, state.measurer);
  } catch (const InsufficientHistory&) {
    return std::nullopt;
  } catch (const DegenerateDenominator&) {
    return std::nullopt;
  }
  const double dw = sense(trend, state.sensor);
  adjust(state, dw);
  ControllerTraceRow row;
  row.iteration = state.t;
  row.loss = current_loss;
  row.loss_trend = trend;
  row.weight_delta = dw;
  row.w_model = state.w_model;
  row.w_input = state.w_input;
  return row;
}

void fuse_scores(std::vector<PseudoCandidate>& model_candidates,
                 const std::vector<BoundingBox>& input_boxes, double w_model, double w_input) {
  if (model_candidates.empty()) return;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const PseudoCandidate& c : model_candidates) {
    lo = std::min(lo, c.raw_objectness);
    hi = std::max(hi, c.raw_objectness);
  }
  const double span = hi - lo;
  for (PseudoCandidate& c : model_candidates) {
    const double normed = span > 0.0 ? (c.raw_objectness - lo) / span : 1.0;
    double best = 0.0;
    for (const BoundingBox& b : input_boxes) best = std::max(best, iou(b, c.box));
    c.fused_score = std::pow(normed, w_model) * std::pow(best, w_input);
  }
}

std::vector<BoundingBox> select_pseudo_labels(const std::vector<PseudoCandidate>& scored,
                                              const std::vector<BoundingBox>& gt_known,
                                              std::size_t k) {
  std::vector<Detection> eligible;
  for (const PseudoCandidate& c : scored) {
    bool overlaps_gt = false;
    for (const BoundingBox& g : gt_known) {
      if (iou(c.box, g) > 0.5) {
        overlaps_gt = true;
        break;
      }
    }
    if (overlaps_gt) continue;
    Detection d;
    d.box = c.box;
    d.score = c.fused_score;
    eligible.push_back(d);
  }
  std::vector<Detection> kept = nms(eligible, 0.7);
  std::vector<BoundingBox> out;
  for (std::size_t i = 0; i < kept.size() && i < k; ++i) out.push_back(kept[i].box);
  return out;
}

std::vector<double> attention_driven_scores(const std::vector<double>& feature_map,
                                            std::size_t map_h, std::size_t map_w,
                                            const std::vector<BoundingBox>& boxes) {
  std::vector<double> scores;
  scores.reserve(boxes.size());
  for (const BoundingBox& b : boxes) {
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < map_h; ++i) {
      const double cy = (static_cast<double>(i) + 0.5) / static_cast<double>(map_h);
      if (cy < b.y1() || cy > b.y2()) continue;
      for (std::size_t j = 0; j < map_w; ++j) {
        const double cx = (static_cast<double>(j) + 0.5) / static_cast<double>(map_w);
        if (cx < b.x1() || cx > b.x2()) continue;
        acc += feature_map[i * map_w + j];
        ++count;
      }
    }
    scores.push_back(count > 0 ? acc / static_cast<double>(count) : 0.0);
  }
  return scores;
}

}  // namespace owodlab
