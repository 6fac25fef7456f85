#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xpol/common.hpp"
#include "xpol/env.hpp"

namespace xpol {

// One recorded expert episode. Row t holds the observation the policy would
// have seen before acting, the expert action taken, and the ground-truth
// object poses after that action — so (action, pose) rows align causally.
struct EpisodeData {
  std::uint64_t seed = 0;
  bool success = false;
  int steps = 0;
  std::vector<double> obs;      // steps * obs_dim, row-major
  std::vector<double> actions;  // steps * 10
  std::vector<double> poses;    // steps * 9 * n_objects, simulator truth
};

struct Dataset {
  TaskSpec task;
  std::uint64_t seed = 0;  // generation root seed
  int dropped = 0;         // failed expert rollouts resampled away
  std::vector<EpisodeData> episodes;

  int obs_dim() const { return task.obs_dim(); }
  int action_dim() const { return 10; }
  int pose_dim() const { return 9 * task.n_objects; }
};

// Rolls out the scripted expert until `count` successful episodes are
// collected; failures are dropped, counted, and replaced by the next seed in
// the derived stream, so the result depends only on (task, count, seed).
Dataset generate_demos(const TaskSpec& task, int count, std::uint64_t seed);

std::string task_to_json(const TaskSpec& spec);
TaskSpec task_from_json(const std::string& json);  // ConfigError

// File format: one JSON header line (format tag, version, task spec, dims,
// drop count), then one JSON line per episode whose obs/actions/poses are
// base64 of little-endian f64. Writing the same dataset twice produces
// byte-identical files.
void save_dataset(const Dataset& d, const std::string& path);  // IoError
// IoError on unreadable/ill-formed files, VersionMismatch on a foreign
// format version, ConfigError on a bad embedded task spec.
Dataset load_dataset(const std::string& path);

}  // namespace xpol
