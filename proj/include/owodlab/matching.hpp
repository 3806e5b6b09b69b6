#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "owodlab/detector.hpp"
#include "owodlab/geometry.hpp"
#include "owodlab/tensor.hpp"

namespace owodlab {

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (query, gt)
  std::vector<std::size_t> unmatched_queries;
};

struct MatchWeights {
  double lambda_cls = 2.0;
  double lambda_l1 = 5.0;
  double lambda_giou = 2.0;
};

// Globally minimal assignment of min(R, C) pairs; among optima, returns the
// lexicographically smallest pair list.
std::vector<std::pair<std::size_t, std::size_t>> hungarian(
    const std::vector<std::vector<double>>& cost);

// DDETR-convention matching cost over softmax class probabilities, L1 box
// distance and GIoU. An unknown GT class targets logit index C.
std::vector<std::vector<double>> match_cost(const DetectorOutput& pred,
                                            const std::vector<GtInstance>& gt,
                                            const DetectorConfig& cfg,
                                            const MatchWeights& w = {});

MatchResult match(const DetectorOutput& pred, const std::vector<GtInstance>& gt,
                  const DetectorConfig& cfg, const MatchWeights& w = {});

struct LossBreakdown {
  double localization = 0.0;
  double identification = 0.0;
  double objectness = 0.0;
  double total = 0.0;
};

struct JointLossRefs {
  Graph::Ref localization = -1;
  Graph::Ref identification = -1;
  Graph::Ref objectness = -1;
  Graph::Ref total = -1;
};

// Differentiable joint loss recorded on the graph. Known GT are matched by
// the Hungarian assignment; pseudo-unknown boxes are matched among the
// remaining queries only. The assignment itself is recomputed from values
// and held fixed during differentiation.
JointLossRefs joint_loss_graph(Graph& g, const ForwardRefs& fwd, const DetectorConfig& cfg,
                               const std::vector<GtInstance>& gt_known,
                               const std::vector<BoundingBox>& pseudo_unknown,
                               const MatchWeights& w = {});

// Value-level convenience wrapper.
LossBreakdown joint_loss(const DetectorOutput& pred, const DetectorConfig& cfg,
                         const std::vector<GtInstance>& gt_known,
                         const std::vector<BoundingBox>& pseudo_unknown,
                         const MatchWeights& w = {});

}  // namespace owodlab
