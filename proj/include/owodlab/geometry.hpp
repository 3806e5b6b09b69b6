#pragma once

#include <cstddef>
#include <vector>

namespace owodlab {

// Axis-aligned box stored in normalized center-size form.
struct BoundingBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  static BoundingBox from_corners(double x1, double y1, double x2, double y2) {
    BoundingBox b;
    b.cx = 0.5 * (x1 + x2);
    b.cy = 0.5 * (y1 + y2);
    b.w = x2 - x1;
    b.h = y2 - y1;
    return b;
  }

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
};

constexpr int kUnknownClass = -1;

// One labeled object.
struct GtInstance {
  int class_id = 0;
  BoundingBox box;
};

struct Detection {
  BoundingBox box;
  int class_id = kUnknownClass;  // kUnknownClass marks "unknown"
  double score = 0.0;
};

// Intersection over union; degenerate boxes count as empty.
double iou(const BoundingBox& a, const BoundingBox& b);

// Generalized IoU in [-1, 1].
double giou(const BoundingBox& a, const BoundingBox& b);

// Greedy non-maximum suppression. Output sorted by descending score,
// score ties broken by smaller original index.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

}  // namespace owodlab
