#pragma once

#include <string>
#include <vector>

#include "owodlab/config.hpp"
#include "owodlab/detector.hpp"
#include "owodlab/metrics.hpp"
#include "owodlab/protocol.hpp"

namespace owodlab {

// Process exit codes shared by all subcommands.
constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitDataError = 3;
constexpr int kExitDivergence = 4;

// Well-known artifact locations under the configured directories.
struct RunPaths {
  std::string train_images_dir, test_images_dir;
  std::string train_annotations, test_annotations, proposals;
  std::string state, manifest;

  static RunPaths from(const RunConfig& cfg);
  std::string checkpoint(std::size_t task_index) const;
  std::string loss_log(std::size_t task_index) const;
  std::string controller_trace(std::size_t task_index) const;
  std::string detections(std::size_t task_index) const;
  std::string report_json(std::size_t task_index) const;
  std::string report_text(std::size_t task_index) const;
  std::string exemplar_dir() const;

  std::string output_dir;
};

// Lifecycle bookkeeping persisted between commands.
struct RunState {
  std::size_t task_index = 0;
  ClassRegistry registry;
  std::vector<int> previously_known;  // known before the current task group
  std::string checkpoint_path;

  void save(const std::string& path) const;
  static RunState load(const std::string& path);
};

// Class-labeled detections from one forward pass: softmax over the logits of
// currently known classes plus the unknown slot, scored by class probability
// times objectness.
std::vector<Detection> detections_from_output(const DetectorOutput& out,
                                              const ClassRegistry& reg,
                                              const DetectorConfig& cfg);

// Subcommands; each returns a process exit code and reports errors on stderr.
int cmd_generate(const RunConfig& cfg);
int cmd_proposals(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_advance(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_plot(const RunConfig& cfg);

}  // namespace owodlab
