#include "owodlab/matching.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "owodlab/kernels.hpp"

namespace owodlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Shortest-augmenting-path assignment for n rows <= m cols.
// Returns the minimal total; col_of_row receives the assigned column per row.
double solve_jv(const std::vector<std::vector<double>>& cost, std::vector<std::size_t>& col_of_row) {
  const std::size_t n = cost.size();
  const std::size_t m = n == 0 ? 0 : cost[0].size();
  col_of_row.assign(n, 0);
  if (n == 0) return 0.0;

  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  double total = 0.0;
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) {
      col_of_row[p[j] - 1] = j - 1;
      total += cost[p[j] - 1][j - 1];
    }
  }
  return total;
}

// Minimal cost of assigning min(|rows|,|cols|) pairs within a submatrix.
double solve_subset(const std::vector<std::vector<double>>& cost,
                    const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
  if (rows.empty() || cols.empty()) return 0.0;
  const bool transposed = rows.size() > cols.size();
  const std::vector<std::size_t>& rs = transposed ? cols : rows;
  const std::vector<std::size_t>& cs = transposed ? rows : cols;
  std::vector<std::vector<double>> sub(rs.size(), std::vector<double>(cs.size()));
  for (std::size_t i = 0; i < rs.size(); ++i)
    for (std::size_t j = 0; j < cs.size(); ++j)
      sub[i][j] = transposed ? cost[cs[j]][rs[i]] : cost[rs[i]][cs[j]];
  std::vector<std::size_t> assign;
  return solve_jv(sub, assign);
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> hungarian(
    const std::vector<std::vector<double>>& cost) {
  const std::size_t n_rows = cost.size();
  const std::size_t n_cols = n_rows == 0 ? 0 : cost[0].size();
  for (const auto& row : cost) {
    if (row.size() != n_cols) throw std::invalid_argument("hungarian: ragged cost matrix");
    for (double c : row)
      if (!std::isfinite(c)) throw std::invalid_argument("hungarian: non-finite cost");
  }
  if (n_rows == 0 || n_cols == 0) return {};

  std::vector<std::size_t> all_rows(n_rows), all_cols(n_cols);
  for (std::size_t i = 0; i < n_rows; ++i) all_rows[i] = i;
  for (std::size_t j = 0; j < n_cols; ++j) all_cols[j] = j;
  const double best = solve_subset(cost, all_rows, all_cols);
  const std::size_t target_pairs = std::min(n_rows, n_cols);
  double magnitude = 1.0;
  for (const auto& row : cost)
    for (double c : row) magnitude = std::max(magnitude, std::fabs(c));
  const double eps = 1e-9 * magnitude * static_cast<double>(target_pairs);

  // Fix pairs greedily in lexicographic order, certifying each choice by
  // re-solving the remaining subproblem against the global optimum.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> rows_left = all_rows, cols_left = all_cols;
  double fixed_cost = 0.0;
  for (std::size_t r = 0; r < n_rows && pairs.size() < target_pairs; ++r) {
    std::vector<std::size_t> rows_rest;
    for (std::size_t x : rows_left)
      if (x != r) rows_rest.push_back(x);
    bool matched = false;
    for (std::size_t ci = 0; ci < cols_left.size(); ++ci) {
      const std::size_t c = cols_left[ci];
      std::vector<std::size_t> cols_rest;
      for (std::size_t x : cols_left)
        if (x != c) cols_rest.push_back(x);
      const double total = fixed_cost + cost[r][c] + solve_subset(cost, rows_rest, cols_rest);
      if (total <= best + eps) {
        pairs.emplace_back(r, c);
        fixed_cost += cost[r][c];
        rows_left = rows_rest;
        cols_left = cols_rest;
        matched = true;
        break;
      }
    }
    if (!matched) rows_left = rows_rest;  // row left unmatched (possible when R > C)
  }
  return pairs;
}

std::vector<std::vector<double>> match_cost(const DetectorOutput& pred,
                                            const std::vector<GtInstance>& gt,
                                            const DetectorConfig& cfg, const MatchWeights& w) {
  const std::size_t nq = pred.boxes.size();
  const std::size_t nl = cfg.class_logits();
  std::vector<double> probs(nq * nl);
  kernels::softmax_rows(pred.class_logits.data(), probs.data(), nq, nl);

  std::vector<std::vector<double>> cost(nq, std::vector<double>(gt.size(), 0.0));
  for (std::size_t q = 0; q < nq; ++q) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const std::size_t cls_index =
          gt[g].class_id == kUnknownClass ? cfg.num_known_classes
                                          : static_cast<std::size_t>(gt[g].class_id);
      if (cls_index >= nl) throw std::invalid_argument("match_cost: class id out of range");
      const BoundingBox& pb = pred.boxes[q];
      const BoundingBox& gb = gt[g].box;
      const double l1 = std::fabs(pb.cx - gb.cx) + std::fabs(pb.cy - gb.cy) +
                        std::fabs(pb.w - gb.w) + std::fabs(pb.h - gb.h);
      cost[q][g] = w.lambda_cls * (-probs[q * nl + cls_index]) + w.lambda_l1 * l1 +
                   w.lambda_giou * (1.0 - giou(pb, gb));
    }
  }
  return cost;
}

MatchResult match(const DetectorOutput& pred, const std::vector<GtInstance>& gt,
                  const DetectorConfig& cfg, const MatchWeights& w) {
  MatchResult res;
  if (!gt.empty()) res.pairs = hungarian(match_cost(pred, gt, cfg, w));
  std::vector<char> taken(pred.boxes.size(), 0);
  for (const auto& [q, g] : res.pairs) taken[q] = 1;
  for (std::size_t q = 0; q < pred.boxes.size(); ++q)
    if (!taken[q]) res.unmatched_queries.push_back(q);
  return res;
}

namespace {

DetectorOutput output_from_refs(const Graph& g, const ForwardRefs& fwd) {
  DetectorOutput out;
  const Tensor& boxes = g.at(fwd.boxes);
  for (std::size_t i = 0; i < boxes.rows(); ++i) {
    BoundingBox b;
    b.cx = boxes.v[i * 4 + 0];
    b.cy = boxes.v[i * 4 + 1];
    b.w = boxes.v[i * 4 + 2];
    b.h = boxes.v[i * 4 + 3];
    out.boxes.push_back(b);
  }
  out.class_logits = g.at(fwd.class_logits).v;
  out.objectness = g.at(fwd.objectness).v;
  return out;
}

// lambda_l1 * L1 + lambda_giou * (1 - GIoU), summed over matched pairs.
Graph::Ref localization_term(Graph& g, Graph::Ref boxes, const std::vector<std::size_t>& query_idx,
                             const std::vector<BoundingBox>& targets, const MatchWeights& w) {
  const std::size_t k = query_idx.size();
  Graph::Ref pred = g.gather_rows(boxes, query_idx);
  std::vector<double> tv(k * 4);
  for (std::size_t i = 0; i < k; ++i) {
    tv[i * 4 + 0] = targets[i].cx;
    tv[i * 4 + 1] = targets[i].cy;
    tv[i * 4 + 2] = targets[i].w;
    tv[i * 4 + 3] = targets[i].h;
  }
  Graph::Ref tgt = g.input(k, 4, tv);
  Graph::Ref l1 = g.sum(g.abs(g.sub(pred, tgt)));

  auto corners = [&](Graph::Ref b) {
    Graph::Ref cx = g.slice_cols(b, 0, 1);
    Graph::Ref cy = g.slice_cols(b, 1, 1);
    Graph::Ref hw = g.scale(g.slice_cols(b, 2, 1), 0.5);
    Graph::Ref hh = g.scale(g.slice_cols(b, 3, 1), 0.5);
    return std::array<Graph::Ref, 4>{g.sub(cx, hw), g.sub(cy, hh), g.add(cx, hw), g.add(cy, hh)};
  };
  auto [px1, py1, px2, py2] = corners(pred);
  auto [tx1, ty1, tx2, ty2] = corners(tgt);

  Graph::Ref iw = g.clamp_min(g.sub(g.emin(px2, tx2), g.emax(px1, tx1)), 0.0);
  Graph::Ref ih = g.clamp_min(g.sub(g.emin(py2, ty2), g.emax(py1, ty1)), 0.0);
  Graph::Ref inter = g.mul(iw, ih);
  Graph::Ref area_p = g.mul(g.sub(px2, px1), g.sub(py2, py1));
  Graph::Ref area_t = g.mul(g.sub(tx2, tx1), g.sub(ty2, ty1));
  Graph::Ref uni = g.sub(g.add(area_p, area_t), inter);
  Graph::Ref ew = g.sub(g.emax(px2, tx2), g.emin(px1, tx1));
  Graph::Ref eh = g.sub(g.emax(py2, ty2), g.emin(py1, ty1));
  // predicted extents are sigmoid outputs, so union and enclosure stay positive
  Graph::Ref enc = g.add_scalar(g.mul(ew, eh), 1e-12);
  Graph::Ref giou_v = g.sub(g.div(inter, g.add_scalar(uni, 1e-12)),
                            g.div(g.sub(enc, g.add_scalar(uni, 1e-12)), enc));
  Graph::Ref ones = g.input(k, 1, std::vector<double>(k, 1.0));
  Graph::Ref giou_loss = g.sum(g.sub(ones, giou_v));

  return g.add(g.scale(l1, w.lambda_l1), g.scale(giou_loss, w.lambda_giou));
}

}  // namespace

JointLossRefs joint_loss_graph(Graph& g, const ForwardRefs& fwd, const DetectorConfig& cfg,
                               const std::vector<GtInstance>& gt_known,
                               const std::vector<BoundingBox>& pseudo_unknown,
                               const MatchWeights& w) {
  const DetectorOutput pred = output_from_refs(g, fwd);
  const std::size_t nq = pred.boxes.size();
  const std::size_t nl = cfg.class_logits();

  const MatchResult known_match = match(pred, gt_known, cfg, w);

  // pseudo-unknowns compete only for queries the known matching left free
  std::vector<std::pair<std::size_t, std::size_t>> pseudo_pairs;
  if (!pseudo_unknown.empty() && !known_match.unmatched_queries.empty()) {
    std::vector<GtInstance> pseudo_gt;
    for (const BoundingBox& b : pseudo_unknown) pseudo_gt.push_back({kUnknownClass, b});
    const auto full_cost = match_cost(pred, pseudo_gt, cfg, w);
    std::vector<std::vector<double>> sub;
    for (std::size_t q : known_match.unmatched_queries) sub.push_back(full_cost[q]);
    for (const auto& [i, j] : hungarian(sub))
      pseudo_pairs.emplace_back(known_match.unmatched_queries[i], j);
  }

  // localization over known and pseudo matches together
  std::vector<std::size_t> loc_idx;
  std::vector<BoundingBox> loc_tgt;
  for (const auto& [q, gi] : known_match.pairs) {
    loc_idx.push_back(q);
    loc_tgt.push_back(gt_known[gi].box);
  }
  for (const auto& [q, pi] : pseudo_pairs) {
    loc_idx.push_back(q);
    loc_tgt.push_back(pseudo_unknown[pi]);
  }

  JointLossRefs out;
  const std::size_t matched = loc_idx.size();
  if (matched > 0) {
    out.localization = g.scale(localization_term(g, fwd.boxes, loc_idx, loc_tgt, w),
                               1.0 / static_cast<double>(matched));
  } else {
    out.localization = g.scalar(0.0);
  }

  std::vector<double> cls_targets(nq * nl, 0.0);
  for (const auto& [q, gi] : known_match.pairs)
    cls_targets[q * nl + static_cast<std::size_t>(gt_known[gi].class_id)] = 1.0;
  for (const auto& [q, pi] : pseudo_pairs) {
    (void)pi;
    cls_targets[q * nl + cfg.num_known_classes] = 1.0;
  }
  Graph::Ref focal = g.focal_with_logits(fwd.class_logits, std::move(cls_targets), 0.25, 2.0);
  out.identification =
      g.scale(g.sum(focal), 1.0 / static_cast<double>(std::max<std::size_t>(1, matched)));

  std::vector<double> obj_targets(nq, 0.0);
  for (std::size_t q : loc_idx) obj_targets[q] = 1.0;
  out.objectness = g.mean(g.bce_with_logits(fwd.objectness, std::move(obj_targets)));

  out.total = g.add(g.add(out.localization, out.identification), out.objectness);
  return out;
}

LossBreakdown joint_loss(const DetectorOutput& pred, const DetectorConfig& cfg,
                         const std::vector<GtInstance>& gt_known,
                         const std::vector<BoundingBox>& pseudo_unknown, const MatchWeights& w) {
  Graph g;
  const std::size_t nq = pred.boxes.size();
  std::vector<double> bv(nq * 4);
  for (std::size_t i = 0; i < nq; ++i) {
    bv[i * 4 + 0] = pred.boxes[i].cx;
    bv[i * 4 + 1] = pred.boxes[i].cy;
    bv[i * 4 + 2] = pred.boxes[i].w;
    bv[i * 4 + 3] = pred.boxes[i].h;
  }
  ForwardRefs fwd;
  fwd.boxes = g.input(nq, 4, bv);
  fwd.class_logits = g.input(nq, cfg.class_logits(), pred.class_logits);
  fwd.objectness = g.input(nq, 1, pred.objectness);
  const JointLossRefs refs = joint_loss_graph(g, fwd, cfg, gt_known, pseudo_unknown, w);
  LossBreakdown out;
  out.localization = g.value(refs.localization);
  out.identification = g.value(refs.identification);
  out.objectness = g.value(refs.objectness);
  out.total = g.value(refs.total);
  return out;
}

}  // namespace owodlab
