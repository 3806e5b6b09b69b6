#include "owodlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "owodlab/adaptive_plm.hpp"
#include "owodlab/matching.hpp"
#include "owodlab/proposals.hpp"

namespace owodlab {

RunPaths RunPaths::from(const RunConfig& cfg) {
  RunPaths p;
  p.train_images_dir = cfg.dataset_dir + "/train";
  p.test_images_dir = cfg.dataset_dir + "/test";
  p.train_annotations = cfg.dataset_dir + "/train.jsonl";
  p.test_annotations = cfg.dataset_dir + "/test.jsonl";
  p.proposals = cfg.dataset_dir + "/proposals.jsonl";
  p.state = cfg.output_dir + "/state.json";
  p.manifest = cfg.output_dir + "/manifest.json";
  p.output_dir = cfg.output_dir;
  return p;
}

std::string RunPaths::checkpoint(std::size_t t) const {
  return output_dir + "/checkpoint_task" + std::to_string(t + 1) + ".bin";
}
std::string RunPaths::loss_log(std::size_t t) const {
  return output_dir + "/loss_task" + std::to_string(t + 1) + ".csv";
}
std::string RunPaths::controller_trace(std::size_t t) const {
  return output_dir + "/controller_task" + std::to_string(t + 1) + ".csv";
}
std::string RunPaths::detections(std::size_t t) const {
  return output_dir + "/detections_task" + std::to_string(t + 1) + ".jsonl";
}
std::string RunPaths::report_json(std::size_t t) const {
  return output_dir + "/report_task" + std::to_string(t + 1) + ".json";
}
std::string RunPaths::report_text(std::size_t t) const {
  return output_dir + "/report_task" + std::to_string(t + 1) + ".txt";
}
std::string RunPaths::exemplar_dir() const { return output_dir + "/exemplars"; }

void RunState::save(const std::string& path) const {
  nlohmann::json j;
  j["task_index"] = task_index;
  j["known"] = registry.known;
  j["unknown"] = registry.unknown;
  j["previously_known"] = previously_known;
  j["checkpoint"] = checkpoint_path;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write state file: " + path);
  out << j.dump(2) << '\n';
}

RunState RunState::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open state file: " + path);
  nlohmann::json j;
  in >> j;
  RunState st;
  st.task_index = j.at("task_index").get<std::size_t>();
  st.registry.known = j.at("known").get<std::vector<int>>();
  st.registry.unknown = j.at("unknown").get<std::vector<int>>();
  st.registry.task_index = st.task_index;
  st.previously_known = j.at("previously_known").get<std::vector<int>>();
  st.checkpoint_path = j.at("checkpoint").get<std::string>();
  return st;
}

namespace {

void write_manifest(const RunConfig& cfg, const RunPaths& paths, const std::string& command,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& artifacts) {
  std::filesystem::create_directories(paths.output_dir);
  nlohmann::json manifest;
  if (std::filesystem::exists(paths.manifest)) {
    std::ifstream in(paths.manifest);
    in >> manifest;
  }
  manifest["config_hash"] = cfg.config_hash;
  manifest["seed"] = cfg.seed;
  nlohmann::json entry;
  entry["inputs"] = inputs;
  entry["artifacts"] = artifacts;
  manifest["commands"][command] = entry;
  std::ofstream out(paths.manifest);
  out << manifest.dump(2) << '\n';
}

std::vector<AnnotatedImage> load_annotations_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open annotation file: " + path);
  return read_annotations(in);
}

void load_pixels(std::vector<AnnotatedImage>& images) {
  for (AnnotatedImage& img : images) img.image = read_ppm(img.image_path);
}

std::map<std::string, std::vector<BoundingBox>> load_proposal_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open proposal file: " + path);
  std::map<std::string, std::vector<BoundingBox>> map;
  for (ProposalRecord& rec : read_proposals(in)) map[rec.image_id] = std::move(rec.boxes);
  return map;
}

// Adam optimizer state; moment buffers follow the stable visit() order.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;

  void update(DetectorParams& params, double lr, double grad_scale) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++step;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    std::size_t slot = 0;
    params.visit([&](const std::string&, Tensor& t) {
      t.ensure_grad();
      if (slot == m.size()) {
        m.emplace_back(t.size(), 0.0);
        v.emplace_back(t.size(), 0.0);
      }
      std::vector<double>& mi = m[slot];
      std::vector<double>& vi = v[slot];
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double gr = t.g[i] * grad_scale;
        mi[i] = b1 * mi[i] + (1.0 - b1) * gr;
        vi[i] = b2 * vi[i] + (1.0 - b2) * gr * gr;
        t.v[i] -= lr * (mi[i] / c1) / (std::sqrt(vi[i] / c2) + eps);
      }
      ++slot;
    });
  }
};

struct CsvWriter {
  std::ofstream out;
  explicit CsvWriter(const std::string& path, const std::string& header) : out(path) {
    if (!out) throw std::runtime_error("cannot write log file: " + path);
    out << header << '\n';
    out << std::setprecision(17);
  }
};

// Pseudo-label mining for one image: fuse model-driven objectness of the
// queries left unmatched by the known-GT assignment with the precomputed
// input-driven proposal overlap, then keep the top-k.
std::vector<BoundingBox> mine_pseudo_labels(const DetectorOutput& out,
                                            const std::vector<GtInstance>& gt,
                                            const std::vector<BoundingBox>& input_boxes,
                                            const DetectorConfig& dcfg, const AdaptiveState& st,
                                            std::size_t k) {
  MatchResult assignment = match(out, gt, dcfg);
  if (assignment.unmatched_queries.empty()) return {};
  std::vector<BoundingBox> boxes;
  for (std::size_t q : assignment.unmatched_queries) boxes.push_back(out.boxes[q]);
  const std::vector<double> s_o =
      attention_driven_scores(out.encoder_activation, out.map_h, out.map_w, boxes);
  std::vector<PseudoCandidate> candidates(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    candidates[i].box = boxes[i];
    candidates[i].raw_objectness = s_o[i];
  }
  fuse_scores(candidates, input_boxes, st.w_model, st.w_input);
  std::vector<BoundingBox> gt_boxes;
  for (const GtInstance& g : gt) gt_boxes.push_back(g.box);
  return select_pseudo_labels(candidates, gt_boxes, k);
}

// Shared SGD loop for task training and exemplar finetuning. Returns
// kExitDivergence when the loss leaves the finite range.
int run_sgd(const RunConfig& cfg, DetectorParams& params, const std::vector<AnnotatedImage>& data,
            const ClassRegistry& reg,
            const std::map<std::string, std::vector<BoundingBox>>* proposal_map,
            std::size_t iterations, double learning_rate, std::uint64_t sample_seed,
            CsvWriter* loss_log, CsvWriter* controller_log) {
  const DetectorConfig& dcfg = cfg.detector;
  const bool use_controller = cfg.controller_enabled && proposal_map != nullptr;
  AdaptiveState controller(cfg.t_start, cfg.t_cycle, cfg.measurer, cfg.sensor);
  static const std::vector<BoundingBox> kNoProposals;

  AdamState optimizer;
  std::mt19937_64 rng(sample_seed);
  for (std::size_t iter = 1; iter <= iterations; ++iter) {
    params.zero_grads();
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const AnnotatedImage& img = data[rng() % data.size()];
      Graph g;
      ForwardRefs fwd = forward_graph(g, img.image, params, dcfg);
      const std::vector<GtInstance> gt = visible_annotations(img, reg);
      std::vector<BoundingBox> pseudo;
      // mine pseudo-unknowns only once the detector has had a known-only
      // warm-up; before that the unmatched queries are essentially noise
      if (use_controller && iter > cfg.pseudo_start) {
        const DetectorOutput out = read_output(g, fwd, dcfg);
        auto it = proposal_map->find(img.image_id);
        const std::vector<BoundingBox>& input_boxes =
            it != proposal_map->end() ? it->second : kNoProposals;
        pseudo = mine_pseudo_labels(out, gt, input_boxes, dcfg, controller, cfg.pseudo_k);
      }
      JointLossRefs loss = joint_loss_graph(g, fwd, dcfg, gt, pseudo);
      const double value = g.value(loss.total);
      if (!std::isfinite(value)) {
        std::cerr << "training diverged: non-finite loss at iteration " << iter << "\n";
        return kExitDivergence;
      }
      batch_loss += value;
      g.backward(loss.total);
    }
    batch_loss /= static_cast<double>(cfg.batch_size);
    // step schedule: drop to a tenth for the last quarter of the run
    const double lr_now = iter * 4 > iterations * 3 ? learning_rate * 0.1 : learning_rate;
    optimizer.update(params, lr_now, 1.0 / static_cast<double>(cfg.batch_size));
    if (loss_log) loss_log->out << iter << ',' << batch_loss << '\n';
    if (use_controller) {
      if (auto row = step(controller, batch_loss); row && controller_log)
        controller_log->out << row->iteration << ',' << row->loss << ',' << row->loss_trend << ','
                            << row->weight_delta << ',' << row->w_model << ',' << row->w_input
                            << '\n';
    }
  }
  return kExitOk;
}

int report_error(const std::exception& e, int code) {
  std::cerr << "error: " << e.what() << "\n";
  return code;
}

}  // namespace

std::vector<Detection> detections_from_output(const DetectorOutput& out, const ClassRegistry& reg,
                                              const DetectorConfig& cfg) {
  const std::size_t logits = cfg.class_logits();
  std::vector<std::size_t> allowed;  // known class logits plus the unknown slot
  for (int c : reg.known)
    if (c >= 0 && static_cast<std::size_t>(c) < cfg.num_known_classes)
      allowed.push_back(static_cast<std::size_t>(c));
  allowed.push_back(cfg.num_known_classes);

  std::vector<Detection> dets;
  for (std::size_t q = 0; q < out.boxes.size(); ++q) {
    const double* row = out.class_logits.data() + q * logits;
    double mx = row[allowed[0]];
    for (std::size_t a : allowed) mx = std::max(mx, row[a]);
    double z = 0.0;
    for (std::size_t a : allowed) z += std::exp(row[a] - mx);
    std::size_t best = allowed[0];
    for (std::size_t a : allowed)
      if (row[a] > row[best]) best = a;
    const double prob = std::exp(row[best] - mx) / z;
    const double objectness = 1.0 / (1.0 + std::exp(-out.objectness[q]));
    Detection d;
    d.box = out.boxes[q];
    d.class_id = best == cfg.num_known_classes ? kUnknownClass : static_cast<int>(best);
    d.score = prob * objectness;
    dets.push_back(d);
  }
  return dets;
}

int cmd_generate(const RunConfig& cfg) {
  try {
    const RunPaths paths = RunPaths::from(cfg);
    std::filesystem::create_directories(paths.train_images_dir);
    std::filesystem::create_directories(paths.test_images_dir);
    ShapeWorldConfig world;
    world.image_size = cfg.detector.image_size;
    world.min_instances = cfg.min_instances;
    world.max_instances = cfg.max_instances;

    auto emit = [&](std::vector<AnnotatedImage> images, const std::string& dir,
                    const std::string& annotation_path) {
      for (AnnotatedImage& img : images) {
        img.image_path = dir + "/" + img.image_id + ".ppm";
        write_ppm(img.image, img.image_path);
      }
      std::ofstream out(annotation_path);
      if (!out) throw std::runtime_error("cannot write annotations: " + annotation_path);
      write_annotations(out, images);
    };
    emit(generate_shapeworld(cfg.seed, cfg.train_count, world), paths.train_images_dir,
         paths.train_annotations);
    emit(generate_shapeworld(cfg.seed + 1, cfg.test_count, world), paths.test_images_dir,
         paths.test_annotations);
    write_manifest(cfg, paths, "generate", {},
                   {paths.train_annotations, paths.test_annotations});
    return kExitOk;
  } catch (const std::exception& e) {
    return report_error(e, kExitDataError);
  }
}

int cmd_proposals(const RunConfig& cfg) {
  try {
    const RunPaths paths = RunPaths::from(cfg);
    std::vector<AnnotatedImage> images = load_annotations_file(paths.train_annotations);
    load_pixels(images);
    std::vector<ProposalRecord> records(images.size());
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < static_cast<long long>(images.size()); ++i) {
      records[i].image_id = images[i].image_id;
      records[i].boxes = selective_search(images[i].image, cfg.search);
    }
    std::ofstream out(paths.proposals);
    if (!out) throw std::runtime_error("cannot write proposals: " + paths.proposals);
    write_proposals(out, records);
    write_manifest(cfg, paths, "proposals", {paths.train_annotations}, {paths.proposals});
    return kExitOk;
  } catch (const std::exception& e) {
    return report_error(e, kExitDataError);
  }
}

int cmd_train(const RunConfig& cfg) {
  try {
    const RunPaths paths = RunPaths::from(cfg);
    std::filesystem::create_directories(paths.output_dir);
    std::vector<AnnotatedImage> images = load_annotations_file(paths.train_annotations);
    load_pixels(images);
    std::map<std::string, std::vector<BoundingBox>> proposal_map;
    if (cfg.controller_enabled) proposal_map = load_proposal_map(paths.proposals);

    RunState state;
    DetectorParams params;
    if (std::filesystem::exists(paths.state)) {
      state = RunState::load(paths.state);
      Checkpoint ckpt = load_checkpoint(state.checkpoint_path);
      params = std::move(ckpt.params);
    } else {
      state.registry = ClassRegistry::initial(shapeworld_tasks());
      state.task_index = 0;
      params = init_params(cfg.detector, cfg.seed);
    }

    CsvWriter loss_log(paths.loss_log(state.task_index), "iteration,loss");
    CsvWriter controller_log(paths.controller_trace(state.task_index),
                             "iteration,loss,loss_trend,weight_delta,w_model,w_input");
    const std::uint64_t sample_seed =
        cfg.seed * 0x9e3779b97f4a7c15ull + state.task_index + 1;
    const int rc = run_sgd(cfg, params, images, state.registry,
                           cfg.controller_enabled ? &proposal_map : nullptr, cfg.iterations,
                           cfg.learning_rate, sample_seed, &loss_log, &controller_log);
    if (rc != kExitOk) return rc;

    // refresh the replay store with this task's known classes
    ExemplarStore store = std::filesystem::exists(paths.exemplar_dir() + "/index.json")
                              ? ExemplarStore::load(paths.exemplar_dir())
                              : ExemplarStore(cfg.exemplars_per_class);
    for (const AnnotatedImage& img : images) {
      AnnotatedImage light = img;
      light.image = RasterImage();  // annotations only; pixels reload from disk
      store.add(light, state.registry);
    }
    store.save(paths.exemplar_dir());

    state.checkpoint_path = paths.checkpoint(state.task_index);
    save_checkpoint(state.checkpoint_path, cfg.detector, params);
    state.save(paths.state);
    write_manifest(cfg, paths, "train_task" + std::to_string(state.task_index + 1),
                   {paths.train_annotations, paths.proposals},
                   {state.checkpoint_path, paths.loss_log(state.task_index),
                    paths.controller_trace(state.task_index)});
    return kExitOk;
  } catch (const ConfigError& e) {
    return report_error(e, kExitConfigError);
  } catch (const std::exception& e) {
    return report_error(e, kExitDataError);
  }
}

int cmd_advance(const RunConfig& cfg) {
  try {
    const RunPaths paths = RunPaths::from(cfg);
    RunState state = RunState::load(paths.state);
    Checkpoint ckpt = load_checkpoint(state.checkpoint_path);
    DetectorParams params = std::move(ckpt.params);

    state.previously_known = state.registry.known;
    advance_task(state.registry, shapeworld_tasks());
    state.task_index = state.registry.task_index;

    ExemplarStore store = ExemplarStore::load(paths.exemplar_dir());
    std::vector<AnnotatedImage> replay = store.build_finetune_set();
    if (replay.empty()) throw std::runtime_error("exemplar store is empty; train first");
    load_pixels(replay);

    const std::uint64_t sample_seed =
        cfg.seed * 0xbf58476d1ce4e5b9ull + state.task_index + 1;
    const int rc = run_sgd(cfg, params, replay, state.registry, nullptr,
                           cfg.finetune_iterations, cfg.learning_rate / cfg.finetune_lr_divisor,
                           sample_seed, nullptr, nullptr);
    if (rc != kExitOk) return rc;

    state.checkpoint_path = paths.checkpoint(state.task_index);
    save_checkpoint(state.checkpoint_path, cfg.detector, params);
    state.save(paths.state);
    write_manifest(cfg, paths, "advance_task" + std::to_string(state.task_index + 1),
                   {paths.exemplar_dir()}, {state.checkpoint_path});
    return kExitOk;
  } catch (const NoNextTask& e) {
    return report_error(e, kExitDataError);
  } catch (const std::exception& e) {
    return report_error(e, kExitDataError);
  }
}

int cmd_eval(const RunConfig& cfg) {
  try {
    const RunPaths paths = RunPaths::from(cfg);
    RunState state = RunState::load(paths.state);
    Checkpoint ckpt = load_checkpoint(state.checkpoint_path);
    std::vector<AnnotatedImage> images = load_annotations_file(paths.test_annotations);
    load_pixels(images);

    std::vector<EvalRecord> records;
    for (const AnnotatedImage& img : images) {
      const DetectorOutput out = forward(img.image, ckpt.params, cfg.detector);
      EvalRecord rec;
      rec.image_id = img.image_id;
      rec.gt = img.instances;
      rec.detections = detections_from_output(out, state.registry, cfg.detector);
      truncate_top_detections(rec, cfg.eval_top_detections);
      records.push_back(std::move(rec));
    }

    const MetricsReport report =
        assemble_report(records, state.registry, state.previously_known);
    {
      std::ofstream out(paths.detections(state.task_index));
      write_detections(out, records);
    }
    {
      std::ofstream out(paths.report_json(state.task_index));
      out << report_to_json(report) << '\n';
    }
    {
      std::ofstream out(paths.report_text(state.task_index));
      out << report_table(report, shapeworld_class_names());
    }
    std::cout << report_table(report, shapeworld_class_names());
    write_manifest(cfg, paths, "eval_task" + std::to_string(state.task_index + 1),
                   {state.checkpoint_path, paths.test_annotations},
                   {paths.report_json(state.task_index), paths.detections(state.task_index)});
    return kExitOk;
  } catch (const std::exception& e) {
    return report_error(e, kExitDataError);
  }
}

namespace {

// Minimal SVG polyline chart for loss curves and controller traces.
void write_svg_lines(const std::string& path, const std::string& title,
                     const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>&
                         series) {
  const double width = 720, height = 420, margin = 50;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& [name, pts] : series)
    for (const auto& [x, y] : pts) {
      if (first) {
        xmin = xmax = x;
        ymin = ymax = y;
        first = false;
      }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto sx = [&](double x) { return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin); };
  auto sy = [&](double y) { return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin); };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write plot: " + path);
  out << std::setprecision(8);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << margin << "\" y=\"24\" font-size=\"16\">" << title << "</text>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
      << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
      << height - margin << "\" stroke=\"black\"/>\n";
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::size_t idx = 0;
  for (const auto& [name, pts] : series) {
    out << "<polyline fill=\"none\" stroke=\"" << colors[idx % 4] << "\" points=\"";
    for (const auto& [x, y] : pts) out << sx(x) << ',' << sy(y) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << width - margin - 150 << "\" y=\"" << margin + 18 * (idx + 1)
        << "\" font-size=\"12\" fill=\"" << colors[idx % 4] << "\">" << name << "</text>\n";
    ++idx;
  }
  out << "</svg>\n";
}

std::vector<std::vector<double>> read_csv_columns(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open log file: " + path);
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

int cmd_plot(const RunConfig& cfg) {
  try {
    const RunPaths paths = RunPaths::from(cfg);
    RunState state = RunState::load(paths.state);

    // chart every task whose logs exist; a fresh advance has no logs yet
    std::size_t plotted = 0;
    for (std::size_t t = 0; t <= state.task_index; ++t) {
      const std::string tag = std::to_string(t + 1);
      if (std::filesystem::exists(paths.loss_log(t))) {
        std::vector<std::pair<double, double>> loss_pts;
        for (const auto& row : read_csv_columns(paths.loss_log(t)))
          loss_pts.push_back({row.at(0), row.at(1)});
        write_svg_lines(paths.output_dir + "/loss_task" + tag + ".svg",
                        "training loss, task " + tag, {{"loss", loss_pts}});
        ++plotted;
      }
      if (std::filesystem::exists(paths.controller_trace(t))) {
        std::vector<std::pair<double, double>> wm, wi;
        for (const auto& row : read_csv_columns(paths.controller_trace(t))) {
          wm.push_back({row.at(0), row.at(4)});
          wi.push_back({row.at(0), row.at(5)});
        }
        if (!wm.empty())
          write_svg_lines(paths.output_dir + "/controller_task" + tag + ".svg",
                          "pseudo-label source weights, task " + tag,
                          {{"W_m", wm}, {"W_I", wi}});
      }
    }
    if (plotted == 0) throw std::runtime_error("no training logs found in " + paths.output_dir);
    return kExitOk;
  } catch (const std::exception& e) {
    return report_error(e, kExitDataError);
  }
}

}  // namespace owodlab
