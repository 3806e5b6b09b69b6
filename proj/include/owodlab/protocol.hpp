#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "owodlab/geometry.hpp"
#include "owodlab/image.hpp"

namespace owodlab {

class NoNextTask : public std::runtime_error {
 public:
  NoNextTask() : std::runtime_error("no next task in the schedule") {}
};

// Ordered schedule of pairwise-disjoint class groups.
struct TaskSpec {
  std::vector<std::vector<int>> tasks;
  void validate() const;
  std::vector<int> full_label_space() const;  // sorted union
};

struct ClassRegistry {
  std::vector<int> known;    // sorted
  std::vector<int> unknown;  // sorted
  std::size_t task_index = 0;

  static ClassRegistry initial(const TaskSpec& spec);
  bool is_known(int class_id) const;
};

// Introduces the next task's classes: K grows, U shrinks, t increments.
void advance_task(ClassRegistry& reg, const TaskSpec& spec);

struct AnnotatedImage {
  std::string image_id;
  std::string image_path;  // PPM on disk; may be empty for in-memory data
  RasterImage image;       // may be empty when only annotations are loaded
  std::vector<GtInstance> instances;  // normalized boxes
};

// Instances whose class is currently known; order preserved.
std::vector<GtInstance> visible_annotations(const AnnotatedImage& img, const ClassRegistry& reg);

// Per-class replay buffer: first E images seen holding each class,
// deduplicated by image id within a class.
class ExemplarStore {
 public:
  explicit ExemplarStore(std::size_t capacity = 50) : capacity_(capacity) {}

  void add(const AnnotatedImage& img, const ClassRegistry& reg);
  std::size_t count(int class_id) const;
  std::size_t capacity() const { return capacity_; }

  // All stored exemplars ordered by class id then insertion order,
  // deduplicated by image id across classes.
  std::vector<AnnotatedImage> build_finetune_set() const;

  void save(const std::string& dir) const;
  static ExemplarStore load(const std::string& dir);

 private:
  std::size_t capacity_;
  std::map<int, std::vector<AnnotatedImage>> per_class_;
};

// ---- synthetic shape world -------------------------------------------------

struct ShapeWorldConfig {
  std::size_t image_size = 64;
  std::size_t min_instances = 1;
  std::size_t max_instances = 4;
  std::size_t num_classes = 6;  // circle, square, triangle, cross, ring, star
};

const std::vector<std::string>& shapeworld_class_names();
// Four-stage schedule over the six shapes: {0,1,2}, {3}, {4}, {5}.
TaskSpec shapeworld_tasks();

// Deterministic synthetic dataset: solid shapes on a textured background,
// non-overlapping within an image, GT boxes are exact tight pixel bounds.
std::vector<AnnotatedImage> generate_shapeworld(std::uint64_t seed, std::size_t count,
                                                const ShapeWorldConfig& cfg = {});

// JSON-lines: {"image_id", "image_path", "instances": [{"class", "box"}]}.
void write_annotations(std::ostream& out, const std::vector<AnnotatedImage>& images);
std::vector<AnnotatedImage> read_annotations(std::istream& in);

}  // namespace owodlab
