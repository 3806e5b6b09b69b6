#include "owodlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace owodlab {

void truncate_top_detections(EvalRecord& record, std::size_t k) {
  std::stable_sort(record.detections.begin(), record.detections.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (record.detections.size() > k) record.detections.resize(k);
}

namespace {

// Global detection reference with the deterministic order used everywhere:
// score desc, then image id, then within-image index.
struct DetRef {
  std::size_t image = 0;
  std::size_t index = 0;
  double score = 0.0;
};

template <typename Pred>
std::vector<DetRef> sorted_refs(const std::vector<EvalRecord>& records, Pred keep) {
  std::vector<DetRef> refs;
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t d = 0; d < records[i].detections.size(); ++d)
      if (keep(records[i].detections[d])) refs.push_back({i, d, records[i].detections[d].score});
  std::sort(refs.begin(), refs.end(), [&](const DetRef& a, const DetRef& b) {
    if (a.score != b.score) return a.score > b.score;
    if (records[a.image].image_id != records[b.image].image_id)
      return records[a.image].image_id < records[b.image].image_id;
    return a.index < b.index;
  });
  return refs;
}

// Greedy one-to-one matcher: walks detections in the given order, assigning
// each to the best-IOU unmatched GT passing `eligible` with IOU >= thr.
template <typename Eligible>
std::vector<int> greedy_match(const std::vector<EvalRecord>& records,
                              const std::vector<DetRef>& refs, double thr, Eligible eligible) {
  std::vector<std::vector<char>> taken(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) taken[i].assign(records[i].gt.size(), 0);
  std::vector<int> matched_gt(refs.size(), -1);
  for (std::size_t r = 0; r < refs.size(); ++r) {
    const EvalRecord& rec = records[refs[r].image];
    const Detection& det = rec.detections[refs[r].index];
    double best = thr;
    int best_gt = -1;
    for (std::size_t g = 0; g < rec.gt.size(); ++g) {
      if (taken[refs[r].image][g] || !eligible(det, rec.gt[g])) continue;
      const double ov = iou(det.box, rec.gt[g].box);
      if (ov >= best) {
        best = ov;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      taken[refs[r].image][best_gt] = 1;
      matched_gt[r] = best_gt;
    }
  }
  return matched_gt;
}

double all_point_ap(const std::vector<char>& is_tp, std::size_t total_gt) {
  // cumulative PR points, then area under the max-precision envelope
  std::vector<double> precision(is_tp.size()), recall(is_tp.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    tp += is_tp[i] ? 1 : 0;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(total_gt);
  }
  double ap = 0.0, prev_recall = 0.0, envelope = 0.0;
  // walk forward over distinct recall steps using the backward precision max
  for (std::size_t i = 0; i < precision.size(); ++i) {
    double pmax = 0.0;
    for (std::size_t j = i; j < precision.size(); ++j) pmax = std::max(pmax, precision[j]);
    envelope = pmax;
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * envelope;
      prev_recall = recall[i];
    }
  }
  return ap;
}

}  // namespace

std::optional<double> average_precision(const std::vector<EvalRecord>& records, int class_id,
                                        const ClassRegistry& reg, double iou_threshold) {
  std::size_t total_gt = 0;
  for (const EvalRecord& rec : records)
    for (const GtInstance& g : rec.gt)
      if (g.class_id == class_id) ++total_gt;
  if (total_gt == 0) return std::nullopt;

  auto refs = sorted_refs(records, [&](const Detection& d) { return d.class_id == class_id; });
  auto matched = greedy_match(records, refs, iou_threshold,
                              [&](const Detection&, const GtInstance& g) {
                                return g.class_id == class_id;
                              });
  std::vector<char> is_tp;
  is_tp.reserve(refs.size());
  for (std::size_t r = 0; r < refs.size(); ++r) {
    if (matched[r] >= 0) {
      is_tp.push_back(1);
      continue;
    }
    // unmatched: absorbed silently when it covers an unknown GT
    const EvalRecord& rec = records[refs[r].image];
    const Detection& det = rec.detections[refs[r].index];
    bool absorbed = false;
    for (const GtInstance& g : rec.gt)
      if (!reg.is_known(g.class_id) && iou(det.box, g.box) >= iou_threshold) absorbed = true;
    if (!absorbed) is_tp.push_back(0);
  }
  return all_point_ap(is_tp, total_gt);
}

double u_recall(const std::vector<EvalRecord>& records, const ClassRegistry& reg) {
  std::size_t total_unknown = 0;
  for (const EvalRecord& rec : records)
    for (const GtInstance& g : rec.gt)
      if (!reg.is_known(g.class_id)) ++total_unknown;
  if (total_unknown == 0) throw NoUnknownGT();

  auto refs = sorted_refs(records, [](const Detection& d) { return d.class_id == kUnknownClass; });
  auto matched = greedy_match(records, refs, 0.5, [&](const Detection&, const GtInstance& g) {
    return !reg.is_known(g.class_id);
  });
  std::size_t hit = 0;
  for (int m : matched)
    if (m >= 0) ++hit;
  return static_cast<double>(hit) / static_cast<double>(total_unknown);
}

std::size_t a_ose(const std::vector<EvalRecord>& records, const ClassRegistry& reg) {
  auto refs = sorted_refs(records, [&](const Detection& d) { return reg.is_known(d.class_id); });
  auto matched = greedy_match(records, refs, 0.5, [&](const Detection&, const GtInstance& g) {
    return !reg.is_known(g.class_id);
  });
  std::size_t count = 0;
  for (int m : matched)
    if (m >= 0) ++count;
  return count;
}

double wilderness_impact(const std::vector<EvalRecord>& records, const ClassRegistry& reg,
                         double recall_level) {
  if (recall_level <= 0.0 || recall_level > 1.0)
    throw std::invalid_argument("wilderness impact: recall level must be in (0,1]");

  std::vector<char> known_only(records.size(), 1);
  std::size_t known_only_gt = 0;
  for (std::size_t i = 0; i < records.size(); ++i)
    for (const GtInstance& g : records[i].gt)
      if (!reg.is_known(g.class_id)) known_only[i] = 0;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (known_only[i])
      for (const GtInstance& g : records[i].gt)
        if (reg.is_known(g.class_id)) ++known_only_gt;
  if (known_only_gt == 0) throw UnreachableRecall();

  // threshold search on the known-only subset
  auto subset_refs = sorted_refs(records, [&](const Detection& d) { return reg.is_known(d.class_id); });
  std::erase_if(subset_refs, [&](const DetRef& r) { return !known_only[r.image]; });
  auto subset_matched = greedy_match(records, subset_refs, 0.5,
                                     [&](const Detection& d, const GtInstance& g) {
                                       return d.class_id == g.class_id;
                                     });
  double threshold = 0.0;
  bool reached = false;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < subset_refs.size(); ++r) {
    if (subset_matched[r] >= 0) ++tp;
    const double recall = static_cast<double>(tp) / static_cast<double>(known_only_gt);
    if (recall >= recall_level) {
      threshold = subset_refs[r].score;
      reached = true;
      break;
    }
  }
  if (!reached) throw UnreachableRecall();

  // precisions at score >= threshold; detections covering unknown GT are
  // explicit false positives in the K∪U view
  auto refs = sorted_refs(records, [&](const Detection& d) {
    return reg.is_known(d.class_id) && d.score >= threshold;
  });
  auto matched = greedy_match(records, refs, 0.5, [&](const Detection& d, const GtInstance& g) {
    return d.class_id == g.class_id;
  });
  std::size_t tp_k = 0, n_k = 0, tp_all = 0, n_all = 0;
  for (std::size_t r = 0; r < refs.size(); ++r) {
    const bool hit = matched[r] >= 0;
    ++n_all;
    tp_all += hit ? 1 : 0;
    if (known_only[refs[r].image]) {
      ++n_k;
      tp_k += hit ? 1 : 0;
    }
  }
  if (n_k == 0 || tp_all == 0) throw UnreachableRecall();
  const double p_k = static_cast<double>(tp_k) / static_cast<double>(n_k);
  const double p_all = static_cast<double>(tp_all) / static_cast<double>(n_all);
  return p_k / p_all - 1.0;
}

MetricsReport assemble_report(const std::vector<EvalRecord>& records, const ClassRegistry& reg,
                              const std::vector<int>& previously_known) {
  MetricsReport report;
  report.num_images = records.size();
  for (const EvalRecord& rec : records)
    for (const GtInstance& g : rec.gt)
      (reg.is_known(g.class_id) ? report.num_known_gt : report.num_unknown_gt) += 1;

  double sum_prev = 0.0, sum_cur = 0.0;
  std::size_t n_prev = 0, n_cur = 0;
  for (int c : reg.known) {
    auto ap = average_precision(records, c, reg);
    if (!ap) continue;
    report.per_class_ap[c] = *ap;
    const bool prev = std::find(previously_known.begin(), previously_known.end(), c) !=
                      previously_known.end();
    (prev ? sum_prev : sum_cur) += *ap;
    (prev ? n_prev : n_cur) += 1;
  }
  if (n_prev > 0) report.map_previously_known = sum_prev / static_cast<double>(n_prev);
  if (n_cur > 0) report.map_current_known = sum_cur / static_cast<double>(n_cur);
  if (n_prev + n_cur > 0)
    report.map_both = (sum_prev + sum_cur) / static_cast<double>(n_prev + n_cur);

  report.absorbed_errors = a_ose(records, reg);
  if (report.num_unknown_gt > 0) {
    report.unknown_recall = u_recall(records, reg);
    try {
      report.wilderness = wilderness_impact(records, reg);
    } catch (const UnreachableRecall&) {
      // left unset; the table prints a blank
    }
  }
  return report;
}

namespace {

nlohmann::json optional_to_json(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

std::optional<double> optional_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string report_to_json(const MetricsReport& report) {
  nlohmann::json j;
  auto& per_class = j["per_class_ap"] = nlohmann::json::object();
  for (const auto& [c, ap] : report.per_class_ap) per_class[std::to_string(c)] = ap;
  j["map_previously_known"] = optional_to_json(report.map_previously_known);
  j["map_current_known"] = optional_to_json(report.map_current_known);
  j["map_both"] = optional_to_json(report.map_both);
  j["u_recall"] = optional_to_json(report.unknown_recall);
  j["wi"] = optional_to_json(report.wilderness);
  j["a_ose"] = report.absorbed_errors;
  j["num_images"] = report.num_images;
  j["num_known_gt"] = report.num_known_gt;
  j["num_unknown_gt"] = report.num_unknown_gt;
  return j.dump(2);
}

MetricsReport report_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  MetricsReport report;
  for (const auto& [key, value] : j.at("per_class_ap").items())
    report.per_class_ap[std::stoi(key)] = value.get<double>();
  report.map_previously_known = optional_from_json(j.at("map_previously_known"));
  report.map_current_known = optional_from_json(j.at("map_current_known"));
  report.map_both = optional_from_json(j.at("map_both"));
  report.unknown_recall = optional_from_json(j.at("u_recall"));
  report.wilderness = optional_from_json(j.at("wi"));
  report.absorbed_errors = j.at("a_ose").get<std::size_t>();
  report.num_images = j.at("num_images").get<std::size_t>();
  report.num_known_gt = j.at("num_known_gt").get<std::size_t>();
  report.num_unknown_gt = j.at("num_unknown_gt").get<std::size_t>();
  return report;
}

std::string report_table(const MetricsReport& report,
                         const std::vector<std::string>& class_names) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  auto cell = [&](const std::optional<double>& v) {
    std::ostringstream s;
    if (v)
      s << std::fixed << std::setprecision(4) << *v;
    else
      s << "-";
    return s.str();
  };
  out << std::left << std::setw(22) << "metric" << "value\n";
  out << std::left << std::setw(22) << "images" << report.num_images << '\n';
  out << std::left << std::setw(22) << "known GT" << report.num_known_gt << '\n';
  out << std::left << std::setw(22) << "unknown GT" << report.num_unknown_gt << '\n';
  for (const auto& [c, ap] : report.per_class_ap) {
    std::string name = "class " + std::to_string(c);
    if (c >= 0 && static_cast<std::size_t>(c) < class_names.size())
      name += " (" + class_names[c] + ")";
    out << std::left << std::setw(22) << ("AP " + name) << ap << '\n';
  }
  out << std::left << std::setw(22) << "mAP previously known"
      << cell(report.map_previously_known) << '\n';
  out << std::left << std::setw(22) << "mAP current known" << cell(report.map_current_known)
      << '\n';
  out << std::left << std::setw(22) << "mAP both" << cell(report.map_both) << '\n';
  out << std::left << std::setw(22) << "U-Recall" << cell(report.unknown_recall) << '\n';
  out << std::left << std::setw(22) << "WI" << cell(report.wilderness) << '\n';
  out << std::left << std::setw(22) << "A-OSE" << report.absorbed_errors << '\n';
  return out.str();
}

void write_detections(std::ostream& out, const std::vector<EvalRecord>& records) {
  for (const EvalRecord& rec : records) {
    nlohmann::json j;
    j["image_id"] = rec.image_id;
    auto& arr = j["detections"] = nlohmann::json::array();
    for (const Detection& d : rec.detections) {
      nlohmann::json e;
      e["class"] = d.class_id;
      e["score"] = d.score;
      e["box"] = {d.box.x1(), d.box.y1(), d.box.x2(), d.box.y2()};
      arr.push_back(e);
    }
    out << j.dump() << '\n';
  }
}

std::vector<EvalRecord> read_detections(std::istream& in) {
  std::vector<EvalRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    EvalRecord rec;
    rec.image_id = j.at("image_id").get<std::string>();
    for (const auto& e : j.at("detections")) {
      Detection d;
      d.class_id = e.at("class").get<int>();
      d.score = e.at("score").get<double>();
      const auto& b = e.at("box");
      d.box = BoundingBox::from_corners(b.at(0).get<double>(), b.at(1).get<double>(),
                                        b.at(2).get<double>(), b.at(3).get<double>());
      rec.detections.push_back(d);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace owodlab
