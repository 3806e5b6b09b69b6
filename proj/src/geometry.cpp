#include "owodlab/geometry.hpp"

#include <algorithm>
#include <numeric>

namespace owodlab {

namespace {

double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  return ix * iy;
}

}  // namespace

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double giou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const double ex = std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1());
  const double ey = std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1());
  const double enclosing = ex * ey;
  const double base = uni > 0.0 ? inter / uni : 0.0;
  if (enclosing <= 0.0) return base;
  return base - (enclosing - uni) / enclosing;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) {
    if (dets[i].score != dets[j].score) return dets[i].score > dets[j].score;
    return i < j;
  });

  std::vector<Detection> kept;
  for (size_t idx : order) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (iou(dets[idx].box, k.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(dets[idx]);
  }
  return kept;
}

}  // namespace owodlab
