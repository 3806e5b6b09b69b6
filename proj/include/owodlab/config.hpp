#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "owodlab/adaptive_plm.hpp"
#include "owodlab/detector.hpp"
#include "owodlab/proposals.hpp"

namespace owodlab {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Flat "section.key" -> value store. Precedence: file < OWODLAB_ environment
// variables < explicit set() calls (CLI flags).
class Config {
 public:
  Config() = default;
  static Config load_file(const std::string& path);  // INI sections
  void apply_environment();  // OWODLAB_<SECTION>_<KEY>=value
  void set(const std::string& dotted_key, const std::string& value);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  std::string hash() const;  // FNV-1a over the sorted key=value list

 private:
  std::map<std::string, std::string> values_;
};

// Typed view of everything the commands need.
struct RunConfig {
  std::uint64_t seed = 7;
  std::string output_dir = "runs/default";

  std::string dataset_dir = "data";
  std::size_t train_count = 120;
  std::size_t test_count = 60;
  std::size_t min_instances = 1;
  std::size_t max_instances = 4;

  DetectorConfig detector;

  bool controller_enabled = true;  // false = pseudo-label-free ablation
  MeasurerConfig measurer = MeasurerConfig::defaults(25, 75);
  SensorConfig sensor;
  std::size_t t_start = 75;
  std::size_t t_cycle = 150;
  std::size_t pseudo_k = 5;
  std::size_t pseudo_start = 250;  // iterations of known-only warm-up before mining

  double learning_rate = 1e-3;
  std::size_t iterations = 2000;
  std::size_t batch_size = 4;
  std::size_t finetune_iterations = 300;
  double finetune_lr_divisor = 10.0;
  std::size_t exemplars_per_class = 50;

  SelectiveSearchConfig search;
  std::size_t eval_top_detections = 50;

  std::string config_hash;

  static RunConfig from(const Config& cfg);  // throws ConfigError on bad values
};

}  // namespace owodlab
