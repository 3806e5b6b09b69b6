#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "owodlab/harness.hpp"
#include "owodlab/proposals.hpp"

using namespace owodlab;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

// Scratch directory that cleans up after itself.
struct TempDir {
  fs::path root;
  explicit TempDir(const std::string& name) : root(fs::path("harness_scratch") / name) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~TempDir() { fs::remove_all(root); }
  std::string str(const std::string& sub = "") const { return (root / sub).string(); }
};

// Small, fast configuration for the pipeline smoke tests.
Config smoke_config(const TempDir& dir, const std::string& run_name) {
  Config cfg;
  cfg.set("run.seed", "11");
  cfg.set("run.output_dir", dir.str(run_name));
  cfg.set("data.dataset_dir", dir.str("data"));
  cfg.set("data.train_count", "10");
  cfg.set("data.test_count", "4");
  cfg.set("data.image_size", "32");
  cfg.set("detector.embed_dim", "16");
  cfg.set("detector.num_queries", "6");
  cfg.set("detector.encoder_layers", "1");
  cfg.set("detector.decoder_layers", "1");
  cfg.set("detector.heads", "2");
  cfg.set("controller.n", "4");
  cfg.set("controller.total", "12");
  cfg.set("controller.t_start", "10");
  cfg.set("controller.t_cycle", "20");
  cfg.set("train.iterations", "60");
  cfg.set("train.finetune_iterations", "20");
  return cfg;
}

}  // namespace

TEST_CASE("config file parsing handles sections, comments and whitespace") {
  TempDir dir("cfgfile");
  write_file(dir.str("a.ini"),
             "# top comment\n"
             "[Run]\n"
             "Seed = 42\n"
             "; semicolon comment\n"
             "[train]\n"
             "learning_rate = 0.125\n"
             "iterations=9\n");
  Config cfg = Config::load_file(dir.str("a.ini"));
  CHECK(cfg.get_int("run.seed", 0) == 42);
  CHECK(cfg.get_double("train.learning_rate", 0.0) == doctest::Approx(0.125));
  CHECK(cfg.get_int("train.iterations", 0) == 9);
  CHECK(cfg.get_int("train.missing", 5) == 5);
}

TEST_CASE("config file errors are reported with context") {
  TempDir dir("cfgerr");
  CHECK_THROWS_AS(Config::load_file(dir.str("nope.ini")), ConfigError);
  write_file(dir.str("bad1.ini"), "key_without_section = 1\n");
  CHECK_THROWS_AS(Config::load_file(dir.str("bad1.ini")), ConfigError);
  write_file(dir.str("bad2.ini"), "[run]\nno equals sign\n");
  CHECK_THROWS_AS(Config::load_file(dir.str("bad2.ini")), ConfigError);
}

TEST_CASE("typed getters reject malformed values") {
  Config cfg;
  cfg.set("a.num", "12x");
  cfg.set("a.flag", "maybe");
  CHECK_THROWS_AS(cfg.get_int("a.num", 0), ConfigError);
  CHECK_THROWS_AS(cfg.get_double("a.num", 0.0), ConfigError);
  CHECK_THROWS_AS(cfg.get_bool("a.flag", false), ConfigError);
  cfg.set("a.flag", "on");
  CHECK(cfg.get_bool("a.flag", false));
  CHECK_THROWS_AS(cfg.set("nodot", "1"), ConfigError);
}

TEST_CASE("environment overrides file values and set() overrides both") {
  TempDir dir("cfgprec");
  write_file(dir.str("a.ini"), "[train]\niterations = 100\nbatch_size = 2\n");
  setenv("OWODLAB_TRAIN_ITERATIONS", "200", 1);
  Config cfg = Config::load_file(dir.str("a.ini"));
  cfg.apply_environment();
  CHECK(cfg.get_int("train.iterations", 0) == 200);
  CHECK(cfg.get_int("train.batch_size", 0) == 2);
  cfg.set("train.iterations", "300");
  CHECK(cfg.get_int("train.iterations", 0) == 300);
  unsetenv("OWODLAB_TRAIN_ITERATIONS");
}

TEST_CASE("config hash is stable and value-sensitive") {
  Config a, b;
  a.set("x.k", "1");
  b.set("x.k", "1");
  CHECK(a.hash() == b.hash());
  b.set("x.k", "2");
  CHECK(a.hash() != b.hash());
}

TEST_CASE("run config validates ranges and decoding mode") {
  Config cfg;
  CHECK_NOTHROW(RunConfig::from(cfg));  // all defaults valid
  cfg.set("detector.mode", "sideways");
  CHECK_THROWS_AS(RunConfig::from(cfg), ConfigError);
  cfg.set("detector.mode", "coupled");
  cfg.set("train.iterations", "0");
  CHECK_THROWS_AS(RunConfig::from(cfg), ConfigError);
  cfg.set("train.iterations", "10");
  cfg.set("controller.pi_pma", "1.5");
  CHECK_THROWS_AS(RunConfig::from(cfg), ConfigError);
}

TEST_CASE("detection extraction masks classes outside the known set") {
  DetectorConfig dcfg;
  dcfg.num_known_classes = 6;
  DetectorOutput out;
  out.boxes = {BoundingBox::from_corners(0.4, 0.4, 0.6, 0.6)};
  // class 4 has the largest logit overall, but only {0,1,2} are known, so the
  // restricted softmax must pick class 1
  out.class_logits = {0.1, 1.2, 0.3, 2.0, 3.0, 0.0, 0.5};
  out.objectness = {0.0};

  ClassRegistry reg;
  reg.known = {0, 1, 2};
  reg.unknown = {3, 4, 5};
  std::vector<Detection> dets = detections_from_output(out, reg, dcfg);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].class_id == 1);
  // softmax over logits {0.1, 1.2, 0.3, 0.5} (three known + unknown slot)
  const double z = std::exp(0.1) + std::exp(1.2) + std::exp(0.3) + std::exp(0.5);
  CHECK(dets[0].score == doctest::Approx(std::exp(1.2) / z * 0.5).epsilon(1e-12));

  // with class 4 known its dominant logit wins
  reg.known = {0, 1, 2, 4};
  reg.unknown = {3, 5};
  CHECK(detections_from_output(out, reg, dcfg)[0].class_id == 4);

  // a dominant unknown-slot logit maps to the unknown label
  out.class_logits = {0.1, 0.2, 0.3, 0.0, 0.0, 0.0, 5.0};
  CHECK(detections_from_output(out, reg, dcfg)[0].class_id == kUnknownClass);
}

TEST_CASE("run state round-trips through json") {
  TempDir dir("state");
  RunState st;
  st.task_index = 2;
  st.registry.known = {0, 1, 2, 3, 4};
  st.registry.unknown = {5};
  st.registry.task_index = 2;
  st.previously_known = {0, 1, 2, 3};
  st.checkpoint_path = "ck.bin";
  st.save(dir.str("state.json"));
  RunState back = RunState::load(dir.str("state.json"));
  CHECK(back.task_index == 2);
  CHECK(back.registry.known == st.registry.known);
  CHECK(back.registry.unknown == st.registry.unknown);
  CHECK(back.previously_known == st.previously_known);
  CHECK(back.checkpoint_path == "ck.bin");
}

TEST_CASE("pipeline: generate, proposals, train, eval, advance") {
  TempDir dir("pipeline");
  Config base = smoke_config(dir, "run");
  const RunConfig cfg = RunConfig::from(base);
  const RunPaths paths = RunPaths::from(cfg);

  REQUIRE(cmd_generate(cfg) == kExitOk);
  CHECK(fs::exists(paths.train_annotations));
  CHECK(fs::exists(paths.test_annotations));
  {
    std::ifstream in(paths.train_annotations);
    auto images = read_annotations(in);
    REQUIRE(images.size() == 10);
    for (const auto& img : images) {
      CHECK(fs::exists(img.image_path));
      CHECK(!img.instances.empty());
    }
  }

  SUBCASE("generation is deterministic across reruns") {
    const std::string first = read_file(paths.train_annotations);
    REQUIRE(cmd_generate(cfg) == kExitOk);
    CHECK(read_file(paths.train_annotations) == first);
  }

  REQUIRE(cmd_proposals(cfg) == kExitOk);
  {
    std::ifstream in(paths.proposals);
    auto records = read_proposals(in);
    CHECK(records.size() == 10);
  }

  SUBCASE("proposal extraction is deterministic across reruns") {
    const std::string first = read_file(paths.proposals);
    REQUIRE(cmd_proposals(cfg) == kExitOk);
    CHECK(read_file(paths.proposals) == first);
  }

  REQUIRE(cmd_train(cfg) == kExitOk);
  RunState st = RunState::load(paths.state);
  CHECK(st.task_index == 0);
  CHECK(st.registry.known == std::vector<int>{0, 1, 2});
  CHECK(fs::exists(st.checkpoint_path));

  SUBCASE("training reduces the smoothed loss") {
    std::ifstream in(paths.loss_log(0));
    std::string line;
    std::getline(in, line);  // header
    std::vector<double> losses;
    while (std::getline(in, line))
      losses.push_back(std::stod(line.substr(line.find(',') + 1)));
    REQUIRE(losses.size() == 60);
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
      head += losses[i] / 10.0;
      tail += losses[losses.size() - 1 - i] / 10.0;
    }
    CHECK(tail < head);
  }

  SUBCASE("controller trace rows appear only on update-cycle iterations") {
    std::ifstream in(paths.controller_trace(0));
    std::string line;
    std::getline(in, line);
    CHECK(line == "iteration,loss,loss_trend,weight_delta,w_model,w_input");
    while (std::getline(in, line)) {
      const std::size_t iter = std::stoul(line.substr(0, line.find(',')));
      CHECK(iter > 10);       // no updates during warm-up
      CHECK(iter % 20 == 0);  // only at cycle boundaries
    }
  }

  SUBCASE("training twice from the same inputs is byte-identical") {
    Config again = smoke_config(dir, "run_b");
    const RunConfig cfg_b = RunConfig::from(again);
    const RunPaths paths_b = RunPaths::from(cfg_b);
    REQUIRE(cmd_train(cfg_b) == kExitOk);
    CHECK(read_file(paths_b.loss_log(0)) == read_file(paths.loss_log(0)));
    CHECK(read_file(paths_b.controller_trace(0)) == read_file(paths.controller_trace(0)));
    CHECK(read_file(paths_b.checkpoint(0)) == read_file(paths.checkpoint(0)));
  }

  REQUIRE(cmd_eval(cfg) == kExitOk);
  {
    MetricsReport report = report_from_json(read_file(paths.report_json(0)));
    CHECK(report.num_images == 4);
    CHECK(report.num_known_gt + report.num_unknown_gt > 0);
    // first task: three classes known, three withheld, so unknown metrics exist
    CHECK(report.unknown_recall.has_value());
    CHECK(!report.map_previously_known.has_value());
    std::ifstream in(paths.detections(0));
    CHECK(read_detections(in).size() == 4);
  }

  REQUIRE(cmd_advance(cfg) == kExitOk);
  RunState st2 = RunState::load(paths.state);
  CHECK(st2.task_index == 1);
  CHECK(st2.registry.known == std::vector<int>{0, 1, 2, 3});
  CHECK(st2.previously_known == std::vector<int>{0, 1, 2});
  CHECK(fs::exists(paths.checkpoint(1)));

  SUBCASE("advanced checkpoint keeps the detector shape") {
    Checkpoint ck = load_checkpoint(paths.checkpoint(1));
    CHECK(ck.config.num_known_classes == 6);
    CHECK(ck.config.embed_dim == 16);
  }

  REQUIRE(cmd_plot(cfg) == kExitOk);
  CHECK(fs::exists(dir.str("run/loss_task1.svg")));
  CHECK(fs::exists(dir.str("run/controller_task1.svg")));
}

TEST_CASE("train fails cleanly when inputs are missing") {
  TempDir dir("missing");
  Config base = smoke_config(dir, "run");
  const RunConfig cfg = RunConfig::from(base);
  CHECK(cmd_train(cfg) == kExitDataError);    // no dataset yet
  CHECK(cmd_eval(cfg) == kExitDataError);     // no state yet
  CHECK(cmd_advance(cfg) == kExitDataError);  // nothing to advance
  CHECK(cmd_plot(cfg) == kExitDataError);     // nothing to plot
}

TEST_CASE("controller can be disabled for the ablation baseline") {
  TempDir dir("ablation");
  Config base = smoke_config(dir, "run");
  base.set("controller.enabled", "false");
  base.set("train.iterations", "25");
  const RunConfig cfg = RunConfig::from(base);
  REQUIRE(cmd_generate(cfg) == kExitOk);
  // no proposals needed when the pseudo-label controller is off
  REQUIRE(cmd_train(cfg) == kExitOk);
  const RunPaths paths = RunPaths::from(cfg);
  std::ifstream in(paths.controller_trace(0));
  std::string line;
  std::getline(in, line);
  CHECK(!std::getline(in, line));  // header only, no trace rows
}
