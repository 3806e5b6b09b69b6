#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <stdexcept>
#include <vector>

#include "owodlab/geometry.hpp"

namespace owodlab {

struct InsufficientHistory : std::runtime_error {
  InsufficientHistory() : std::runtime_error("loss memory holds fewer samples than N") {}
};
struct DegenerateDenominator : std::runtime_error {
  DegenerateDenominator() : std::runtime_error("beta-weighted loss sum is zero") {}
};
struct NonPositiveWeight : std::runtime_error {
  NonPositiveWeight() : std::runtime_error("pre-normalization weight is non-positive") {}
};

// Fixed-capacity record of recent scalar losses, newest first.
class LossMemory {
 public:
  explicit LossMemory(std::size_t capacity) : capacity_(capacity) {}

  void push(double loss) {
    buf_.push_front(loss);
    if (buf_.size() > capacity_) buf_.pop_back();
  }
  std::size_t size() const { return buf_.size(); }
  std::size_t capacity() const { return capacity_; }
  // i = 0 is loss_{t-1}
  double at(std::size_t i) const { return buf_.at(i); }
  void clear() { buf_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<double> buf_;
};

struct MeasurerConfig {
  std::size_t n = 25;
  std::size_t total = 75;          // N
  std::vector<double> alpha;       // length n, index 0 weights loss_{t-1}
  std::vector<double> beta;        // length N-n, index 0 weights loss_{t-n-1}

  // Arithmetic-progression weights favouring recent losses; both windows
  // sum to one and have constant successive differences.
  static MeasurerConfig defaults(std::size_t n = 25, std::size_t total = 75);
  void validate() const;
};

struct SensorConfig {
  double pi_pma = 0.33;  // positive momentum amplitude, in (0,1)
  double pi_nma = 0.5;   // negative momentum amplitude, in (0,1)
};

struct PseudoCandidate {
  BoundingBox box;
  double raw_objectness = 0.0;  // s_o
  double fused_score = 0.0;     // S_i
};

// Loss-trend ratio: recent weighted average over older weighted average.
double measure(const LossMemory& mem, const MeasurerConfig& cfg);

// Piecewise momentum response; the <= branch applies at the boundary.
double sense(double loss_trend, const SensorConfig& cfg);

struct AdaptiveState {
  double w_model = 0.8;
  double w_input = 0.2;
  std::size_t t = 0;        // iterations consumed so far
  std::size_t t_start = 75;
  std::size_t t_cycle = 150;  // T_b
  LossMemory memory;
  MeasurerConfig measurer;
  SensorConfig sensor;

  AdaptiveState()
      : memory(75), measurer(MeasurerConfig::defaults()) {}
  AdaptiveState(std::size_t t_start_, std::size_t t_cycle_, MeasurerConfig m, SensorConfig s)
      : t_start(t_start_), t_cycle(t_cycle_), memory(m.total), measurer(std::move(m)),
        sensor(s) {}
};

// Multiplicative update followed by renormalization to unit sum.
void adjust(AdaptiveState& state, double weight_delta);

struct ControllerTraceRow {
  std::size_t iteration = 0;
  double loss = 0.0;
  double loss_trend = 0.0;
  double weight_delta = 0.0;
  double w_model = 0.0;
  double w_input = 0.0;
};

// One controller tick per training iteration. Returns a trace row when an
// update cycle actually ran (the cycle is skipped, weights held, when the
// measurer reports an error).
std::optional<ControllerTraceRow> step(AdaptiveState& state, double current_loss);

// Eq.-style fusion of model-driven objectness and input-driven overlap.
// Sets fused_score on every candidate. raw_objectness is min-max normalized
// across the candidate list; a degenerate spread maps every value to 1.
void fuse_scores(std::vector<PseudoCandidate>& model_candidates,
                 const std::vector<BoundingBox>& input_boxes, double w_model, double w_input);

// Top-k unknown pseudo-label selection from fused candidates.
std::vector<BoundingBox> select_pseudo_labels(const std::vector<PseudoCandidate>& scored,
                                              const std::vector<BoundingBox>& gt_known,
                                              std::size_t k);

// Mean single-channel activation over feature cells whose centers fall
// inside each (normalized) box; empty coverage scores 0.
std::vector<double> attention_driven_scores(const std::vector<double>& feature_map,
                                            std::size_t map_h, std::size_t map_w,
                                            const std::vector<BoundingBox>& boxes);

}  // namespace owodlab
