#include "owodlab/protocol.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace owodlab {

void TaskSpec::validate() const {
  if (tasks.empty()) throw std::invalid_argument("task spec: empty schedule");
  std::set<int> seen;
  for (const auto& group : tasks) {
    if (group.empty()) throw std::invalid_argument("task spec: empty class group");
    for (int c : group)
      if (!seen.insert(c).second)
        throw std::invalid_argument("task spec: class groups must be disjoint");
  }
}

std::vector<int> TaskSpec::full_label_space() const {
  std::vector<int> all;
  for (const auto& group : tasks) all.insert(all.end(), group.begin(), group.end());
  std::sort(all.begin(), all.end());
  return all;
}

ClassRegistry ClassRegistry::initial(const TaskSpec& spec) {
  spec.validate();
  ClassRegistry reg;
  reg.known = spec.tasks[0];
  std::sort(reg.known.begin(), reg.known.end());
  for (std::size_t t = 1; t < spec.tasks.size(); ++t)
    reg.unknown.insert(reg.unknown.end(), spec.tasks[t].begin(), spec.tasks[t].end());
  std::sort(reg.unknown.begin(), reg.unknown.end());
  reg.task_index = 0;
  return reg;
}

bool ClassRegistry::is_known(int class_id) const {
  return std::binary_search(known.begin(), known.end(), class_id);
}

void advance_task(ClassRegistry& reg, const TaskSpec& spec) {
  if (reg.task_index + 1 >= spec.tasks.size()) throw NoNextTask();
  reg.task_index += 1;
  const std::vector<int>& group = spec.tasks[reg.task_index];
  reg.known.insert(reg.known.end(), group.begin(), group.end());
  std::sort(reg.known.begin(), reg.known.end());
  std::vector<int> still_unknown;
  for (int c : reg.unknown)
    if (std::find(group.begin(), group.end(), c) == group.end()) still_unknown.push_back(c);
  reg.unknown = std::move(still_unknown);
}

std::vector<GtInstance> visible_annotations(const AnnotatedImage& img, const ClassRegistry& reg) {
  std::vector<GtInstance> out;
  for (const GtInstance& inst : img.instances)
    if (reg.is_known(inst.class_id)) out.push_back(inst);
  return out;
}

// ---- exemplar store --------------------------------------------------------

void ExemplarStore::add(const AnnotatedImage& img, const ClassRegistry& reg) {
  std::set<int> classes_in_image;
  for (const GtInstance& inst : img.instances)
    if (reg.is_known(inst.class_id)) classes_in_image.insert(inst.class_id);
  for (int c : classes_in_image) {
    std::vector<AnnotatedImage>& bucket = per_class_[c];
    if (bucket.size() >= capacity_) continue;
    bool duplicate = false;
    for (const AnnotatedImage& stored : bucket)
      if (stored.image_id == img.image_id) duplicate = true;
    if (!duplicate) bucket.push_back(img);
  }
}

std::size_t ExemplarStore::count(int class_id) const {
  auto it = per_class_.find(class_id);
  return it == per_class_.end() ? 0 : it->second.size();
}

std::vector<AnnotatedImage> ExemplarStore::build_finetune_set() const {
  std::vector<AnnotatedImage> out;
  std::set<std::string> emitted;
  for (const auto& [class_id, bucket] : per_class_)
    for (const AnnotatedImage& img : bucket)
      if (emitted.insert(img.image_id).second) out.push_back(img);
  return out;
}

void ExemplarStore::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json index;
  index["capacity"] = capacity_;
  auto& classes = index["classes"] = nlohmann::json::array();
  for (const auto& [class_id, bucket] : per_class_) {
    classes.push_back(class_id);
    std::ofstream out(dir + "/class_" + std::to_string(class_id) + ".jsonl");
    if (!out) throw std::runtime_error("exemplar store: cannot write to " + dir);
    write_annotations(out, bucket);
  }
  std::ofstream out(dir + "/index.json");
  if (!out) throw std::runtime_error("exemplar store: cannot write to " + dir);
  out << index.dump(2) << '\n';
}

ExemplarStore ExemplarStore::load(const std::string& dir) {
  std::ifstream in(dir + "/index.json");
  if (!in) throw std::runtime_error("exemplar store: cannot open " + dir + "/index.json");
  nlohmann::json index;
  in >> index;
  ExemplarStore store(index.at("capacity").get<std::size_t>());
  for (const auto& c : index.at("classes")) {
    const int class_id = c.get<int>();
    std::ifstream f(dir + "/class_" + std::to_string(class_id) + ".jsonl");
    if (!f) throw std::runtime_error("exemplar store: missing class file in " + dir);
    store.per_class_[class_id] = read_annotations(f);
  }
  return store;
}

// ---- shape world -----------------------------------------------------------

const std::vector<std::string>& shapeworld_class_names() {
  static const std::vector<std::string> names = {"circle", "square",  "triangle",
                                                 "cross",  "ring",    "star"};
  return names;
}

TaskSpec shapeworld_tasks() {
  TaskSpec spec;
  spec.tasks = {{0, 1, 2}, {3}, {4}, {5}};
  return spec;
}

namespace {

// Solid fills with at least one channel far outside the textured-background
// range, so shape pixels are never confusable with the ground.
constexpr std::uint8_t kPalette[6][3] = {
    {220, 40, 40},   // circle
    {40, 200, 60},   // square
    {50, 60, 220},   // triangle
    {230, 220, 50},  // cross
    {200, 50, 200},  // ring
    {60, 210, 210},  // star
};

struct PixelBounds {
  std::size_t min_x, min_y, max_x, max_y;
  bool any = false;
  void cover(std::size_t x, std::size_t y) {
    if (!any) {
      min_x = max_x = x;
      min_y = max_y = y;
      any = true;
      return;
    }
    min_x = std::min(min_x, x);
    min_y = std::min(min_y, y);
    max_x = std::max(max_x, x);
    max_y = std::max(max_y, y);
  }
};

// Predicate-driven rasterizer over the s-by-s placement cell; u/v are pixel
// centers in [0, s).
template <typename Inside>
PixelBounds paint(RasterImage& img, std::size_t x0, std::size_t y0, std::size_t s, int class_id,
                  Inside inside) {
  PixelBounds bounds;
  const std::uint8_t* color = kPalette[class_id];
  for (std::size_t dy = 0; dy < s; ++dy)
    for (std::size_t dx = 0; dx < s; ++dx) {
      if (!inside(dx + 0.5, dy + 0.5)) continue;
      std::uint8_t* pix = img.at(x0 + dx, y0 + dy);
      pix[0] = color[0];
      pix[1] = color[1];
      pix[2] = color[2];
      bounds.cover(x0 + dx, y0 + dy);
    }
  return bounds;
}

PixelBounds render_shape(RasterImage& img, int class_id, std::size_t x0, std::size_t y0,
                         std::size_t s) {
  const double half = static_cast<double>(s) / 2.0;
  const double sd = static_cast<double>(s);
  switch (class_id) {
    case 0:  // circle
      return paint(img, x0, y0, s, class_id, [&](double u, double v) {
        return (u - half) * (u - half) + (v - half) * (v - half) <= half * half;
      });
    case 1:  // square
      return paint(img, x0, y0, s, class_id, [](double, double) { return true; });
    case 2:  // triangle, apex up
      return paint(img, x0, y0, s, class_id, [&](double u, double v) {
        return std::fabs(u - half) <= (v / sd) * half;
      });
    case 3: {  // cross
      const double bar = sd / 3.0;
      return paint(img, x0, y0, s, class_id, [&](double u, double v) {
        return std::fabs(u - half) <= bar / 2.0 || std::fabs(v - half) <= bar / 2.0;
      });
    }
    case 4:  // ring
      return paint(img, x0, y0, s, class_id, [&](double u, double v) {
        const double d2 = (u - half) * (u - half) + (v - half) * (v - half);
        return d2 <= half * half && d2 >= (half / 2.0) * (half / 2.0);
      });
    case 5:  // star: two opposed triangles (hexagram)
      return paint(img, x0, y0, s, class_id, [&](double u, double v) {
        const bool up = std::fabs(u - half) <= (v / sd) * half;
        const bool down = std::fabs(u - half) <= ((sd - v) / sd) * half;
        return up || down;
      });
    default:
      throw std::invalid_argument("shape world: unknown class id");
  }
}

bool cells_overlap(std::size_t ax, std::size_t ay, std::size_t as, std::size_t bx, std::size_t by,
                   std::size_t bs, std::size_t margin) {
  return ax < bx + bs + margin && bx < ax + as + margin && ay < by + bs + margin &&
         by < ay + as + margin;
}

}  // namespace

std::vector<AnnotatedImage> generate_shapeworld(std::uint64_t seed, std::size_t count,
                                                const ShapeWorldConfig& cfg) {
  if (cfg.num_classes == 0 || cfg.num_classes > 6)
    throw std::invalid_argument("shape world: supports 1..6 classes");
  if (cfg.min_instances == 0 || cfg.min_instances > cfg.max_instances)
    throw std::invalid_argument("shape world: bad instance range");
  if (cfg.image_size < 32) throw std::invalid_argument("shape world: image too small");

  std::mt19937_64 rng(seed);
  const std::size_t side = cfg.image_size;
  std::vector<AnnotatedImage> out;
  out.reserve(count);

  for (std::size_t idx = 0; idx < count; ++idx) {
    AnnotatedImage ann;
    {
      std::ostringstream id;
      id << "sw_" << seed << "_";
      id.width(5);
      id.fill('0');
      id << idx;
      ann.image_id = id.str();
    }
    ann.image = RasterImage(side, side);
    for (std::size_t p = 0; p < side * side; ++p) {
      // textured ground: mid-gray with per-pixel noise
      for (std::size_t c = 0; c < 3; ++c)
        ann.image.pixels[p * 3 + c] = static_cast<std::uint8_t>(85 + rng() % 25);
    }

    const std::size_t want =
        cfg.min_instances + rng() % (cfg.max_instances - cfg.min_instances + 1);
    struct Placed {
      std::size_t x, y, s;
    };
    std::vector<Placed> placed;
    const std::size_t max_extent = std::min<std::size_t>(24, side / 2);
    for (std::size_t k = 0; k < want; ++k) {
      const int class_id = static_cast<int>(rng() % cfg.num_classes);
      for (int attempt = 0; attempt < 50; ++attempt) {
        const std::size_t s = 12 + rng() % (max_extent - 11);  // >= 8 px extent
        const std::size_t x0 = rng() % (side - s);
        const std::size_t y0 = rng() % (side - s);
        bool clash = false;
        for (const Placed& p : placed)
          if (cells_overlap(x0, y0, s, p.x, p.y, p.s, 2)) clash = true;
        if (clash) continue;
        placed.push_back({x0, y0, s});
        const PixelBounds b = render_shape(ann.image, class_id, x0, y0, s);
        GtInstance inst;
        inst.class_id = class_id;
        inst.box = BoundingBox::from_corners(
            static_cast<double>(b.min_x) / static_cast<double>(side),
            static_cast<double>(b.min_y) / static_cast<double>(side),
            static_cast<double>(b.max_x + 1) / static_cast<double>(side),
            static_cast<double>(b.max_y + 1) / static_cast<double>(side));
        ann.instances.push_back(inst);
        break;
      }
    }
    out.push_back(std::move(ann));
  }
  return out;
}

// ---- annotation IO ---------------------------------------------------------

void write_annotations(std::ostream& out, const std::vector<AnnotatedImage>& images) {
  for (const AnnotatedImage& img : images) {
    nlohmann::json j;
    j["image_id"] = img.image_id;
    j["image_path"] = img.image_path;
    auto& arr = j["instances"] = nlohmann::json::array();
    for (const GtInstance& inst : img.instances) {
      nlohmann::json e;
      e["class"] = inst.class_id;
      e["box"] = {inst.box.x1(), inst.box.y1(), inst.box.x2(), inst.box.y2()};
      arr.push_back(e);
    }
    out << j.dump() << '\n';
  }
}

std::vector<AnnotatedImage> read_annotations(std::istream& in) {
  std::vector<AnnotatedImage> images;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    AnnotatedImage img;
    img.image_id = j.at("image_id").get<std::string>();
    img.image_path = j.at("image_path").get<std::string>();
    for (const auto& e : j.at("instances")) {
      GtInstance inst;
      inst.class_id = e.at("class").get<int>();
      const auto& b = e.at("box");
      inst.box = BoundingBox::from_corners(b.at(0).get<double>(), b.at(1).get<double>(),
                                           b.at(2).get<double>(), b.at(3).get<double>());
      img.instances.push_back(inst);
    }
    images.push_back(std::move(img));
  }
  return images;
}

}  // namespace owodlab
