#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "owodlab/geometry.hpp"
#include "owodlab/protocol.hpp"

namespace owodlab {

class NoUnknownGT : public std::runtime_error {
 public:
  NoUnknownGT() : std::runtime_error("no unknown ground truth present") {}
};

class UnreachableRecall : public std::runtime_error {
 public:
  UnreachableRecall() : std::runtime_error("detector never attains the requested recall") {}
};

// One image's evaluation payload. GT includes unknown-class instances;
// detections use kUnknownClass for the unknown label.
struct EvalRecord {
  std::string image_id;
  std::vector<Detection> detections;  // descending score after normalization
  std::vector<GtInstance> gt;
};

// Sort by descending score (stable) and keep the top k.
void truncate_top_detections(EvalRecord& record, std::size_t k = 50);

// All-point interpolated average precision at the IOU threshold, greedy
// score-ordered matching. Unknown GT absorb overlapping detections without
// counting them as TP or FP. Empty when the class has no GT.
std::optional<double> average_precision(const std::vector<EvalRecord>& records, int class_id,
                                        const ClassRegistry& reg, double iou_threshold = 0.5);

// Fraction of unknown GT matched by unknown-labeled detections.
double u_recall(const std::vector<EvalRecord>& records, const ClassRegistry& reg);

// Count of unknown GT matched by known-labeled detections (one-to-one).
std::size_t a_ose(const std::vector<EvalRecord>& records, const ClassRegistry& reg);

// P_K / P_{K∪U} - 1 at the score threshold reaching recall_level on
// known-only images.
double wilderness_impact(const std::vector<EvalRecord>& records, const ClassRegistry& reg,
                         double recall_level = 0.8);

struct MetricsReport {
  std::map<int, double> per_class_ap;  // classes with GT only
  std::optional<double> map_previously_known;
  std::optional<double> map_current_known;
  std::optional<double> map_both;
  std::optional<double> unknown_recall;   // absent without unknown GT
  std::optional<double> wilderness;       // absent without unknown GT or recall point
  std::size_t absorbed_errors = 0;        // unknown GT detected as known
  std::size_t num_images = 0;
  std::size_t num_known_gt = 0;
  std::size_t num_unknown_gt = 0;
};

MetricsReport assemble_report(const std::vector<EvalRecord>& records, const ClassRegistry& reg,
                              const std::vector<int>& previously_known);

std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);
// Aligned-column summary table.
std::string report_table(const MetricsReport& report,
                         const std::vector<std::string>& class_names = {});

// JSON-lines detection dump:
// {"image_id", "detections": [{"class", "score", "box": [x1,y1,x2,y2]}]}.
void write_detections(std::ostream& out, const std::vector<EvalRecord>& records);
// Fills image ids and detections; GT comes from annotation files.
std::vector<EvalRecord> read_detections(std::istream& in);

}  // namespace owodlab
