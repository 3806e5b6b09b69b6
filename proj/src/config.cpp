#include "owodlab/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

extern char** environ;

namespace owodlab {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

Config Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  Config cfg;
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError(path + ":" + std::to_string(line_no) + ": malformed section header");
      section = lower(trim(t.substr(1, t.size() - 2)));
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = lower(trim(t.substr(0, eq)));
    if (key.empty() || section.empty())
      throw ConfigError(path + ":" + std::to_string(line_no) + ": key outside a section");
    cfg.values_[section + "." + key] = trim(t.substr(eq + 1));
  }
  return cfg;
}

void Config::apply_environment() {
  const std::string prefix = "OWODLAB_";
  for (char** env = environ; env && *env; ++env) {
    const std::string entry = *env;
    if (entry.rfind(prefix, 0) != 0) continue;
    const std::size_t eq = entry.find('=');
    if (eq == std::string::npos) continue;
    const std::string name = entry.substr(prefix.size(), eq - prefix.size());
    const std::size_t sep = name.find('_');
    if (sep == std::string::npos || sep == 0 || sep + 1 >= name.size()) continue;
    const std::string key = lower(name.substr(0, sep)) + "." + lower(name.substr(sep + 1));
    values_[key] = entry.substr(eq + 1);
  }
}

void Config::set(const std::string& dotted_key, const std::string& value) {
  if (dotted_key.find('.') == std::string::npos)
    throw ConfigError("override key must be section.key: " + dotted_key);
  values_[lower(dotted_key)] = value;
}

bool Config::has(const std::string& key) const { return values_.count(key) > 0; }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config value for " + key + " is not a number: " + it->second);
  }
}

long long Config::get_int(const std::string& key, long long fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config value for " + key + " is not an integer: " + it->second);
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string v = lower(it->second);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config value for " + key + " is not a boolean: " + it->second);
}

std::string Config::hash() const {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const auto& [k, v] : values_) {
    mix(k);
    mix("=");
    mix(v);
    mix("\n");
  }
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

RunConfig RunConfig::from(const Config& cfg) {
  RunConfig rc;
  auto positive = [](long long v, const char* what) {
    if (v <= 0) throw ConfigError(std::string(what) + " must be positive");
    return static_cast<std::size_t>(v);
  };

  rc.seed = static_cast<std::uint64_t>(cfg.get_int("run.seed", 7));
  rc.output_dir = cfg.get_string("run.output_dir", rc.output_dir);

  rc.dataset_dir = cfg.get_string("data.dataset_dir", rc.dataset_dir);
  rc.train_count = positive(cfg.get_int("data.train_count", 120), "data.train_count");
  rc.test_count = positive(cfg.get_int("data.test_count", 60), "data.test_count");
  rc.min_instances = positive(cfg.get_int("data.min_instances", 1), "data.min_instances");
  rc.max_instances = positive(cfg.get_int("data.max_instances", 4), "data.max_instances");
  if (rc.max_instances < rc.min_instances)
    throw ConfigError("data.max_instances must be >= data.min_instances");

  rc.detector.embed_dim = positive(cfg.get_int("detector.embed_dim", 32), "detector.embed_dim");
  rc.detector.num_queries =
      positive(cfg.get_int("detector.num_queries", 10), "detector.num_queries");
  rc.detector.encoder_layers =
      positive(cfg.get_int("detector.encoder_layers", 2), "detector.encoder_layers");
  rc.detector.decoder_layers =
      positive(cfg.get_int("detector.decoder_layers", 2), "detector.decoder_layers");
  rc.detector.heads = positive(cfg.get_int("detector.heads", 4), "detector.heads");
  rc.detector.patch_size = positive(cfg.get_int("detector.patch_size", 8), "detector.patch_size");
  rc.detector.image_size = positive(cfg.get_int("data.image_size", 64), "data.image_size");
  // class logits span the full label space so checkpoints keep their shape
  // across task advances; unknown occupies the extra index
  rc.detector.num_known_classes =
      positive(cfg.get_int("detector.label_space", 6), "detector.label_space");
  try {
    rc.detector.mode = decoding_mode_from_string(cfg.get_string("detector.mode", "cascade"));
    rc.detector.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  rc.controller_enabled = cfg.get_bool("controller.enabled", true);
  const std::size_t n = positive(cfg.get_int("controller.n", 25), "controller.n");
  const std::size_t total = positive(cfg.get_int("controller.total", 75), "controller.total");
  try {
    rc.measurer = MeasurerConfig::defaults(n, total);
    rc.measurer.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  rc.sensor.pi_pma = cfg.get_double("controller.pi_pma", 0.33);
  rc.sensor.pi_nma = cfg.get_double("controller.pi_nma", 0.5);
  if (rc.sensor.pi_pma <= 0.0 || rc.sensor.pi_pma >= 1.0 || rc.sensor.pi_nma <= 0.0 ||
      rc.sensor.pi_nma >= 1.0)
    throw ConfigError("controller momentum amplitudes must lie in (0,1)");
  rc.t_start = positive(cfg.get_int("controller.t_start", 75), "controller.t_start");
  rc.t_cycle = positive(cfg.get_int("controller.t_cycle", 150), "controller.t_cycle");
  rc.pseudo_k = positive(cfg.get_int("controller.pseudo_k", 5), "controller.pseudo_k");
  rc.pseudo_start =
      static_cast<std::size_t>(cfg.get_int("controller.pseudo_start", 250));

  rc.learning_rate = cfg.get_double("train.learning_rate", rc.learning_rate);  // Adam step size
  if (rc.learning_rate <= 0.0) throw ConfigError("train.learning_rate must be positive");
  rc.iterations = positive(cfg.get_int("train.iterations", 2000), "train.iterations");
  rc.batch_size = positive(cfg.get_int("train.batch_size", 4), "train.batch_size");
  rc.finetune_iterations =
      positive(cfg.get_int("train.finetune_iterations", 300), "train.finetune_iterations");
  rc.finetune_lr_divisor = cfg.get_double("train.finetune_lr_divisor", 10.0);
  if (rc.finetune_lr_divisor <= 0.0) throw ConfigError("train.finetune_lr_divisor must be positive");
  rc.exemplars_per_class =
      positive(cfg.get_int("train.exemplars_per_class", 50), "train.exemplars_per_class");

  // the upstream absolute pixel thresholds assume VOC-sized inputs; the run
  // defaults scale them down to the 64x64 desk images
  rc.search.scale = cfg.get_double("proposals.scale", 100.0);
  rc.search.sigma = cfg.get_double("proposals.sigma", 0.9);
  rc.search.min_size = positive(cfg.get_int("proposals.min_size", 20), "proposals.min_size");
  rc.search.min_box_pixels =
      positive(cfg.get_int("proposals.min_box_pixels", 50), "proposals.min_box_pixels");
  try {
    rc.search.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  rc.eval_top_detections =
      positive(cfg.get_int("eval.top_detections", 50), "eval.top_detections");

  rc.config_hash = cfg.hash();
  return rc;
}

}  // namespace owodlab
