#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xpol/dataset.hpp"
#include "xpol/env.hpp"
#include "xpol/policy.hpp"
#include "xpol/train.hpp"

namespace xpol {

// What feeds the pose side of the next cycle's condition: the policy's own
// prediction, the simulator truth, or truth plus calibrated noise.
enum class OracleMode { Predicted, GroundTruth, GroundTruthPlusNoise };

std::string to_string(OracleMode m);
OracleMode oracle_from_string(const std::string& s);  // ConfigError

struct EvalConfig {
  int trials = 100;
  // Actions executed per prediction; 0 resolves to the policy's n_cond.
  // Must land in [n_cond, horizon].
  int exec_steps = 0;
  OracleMode oracle = OracleMode::Predicted;
  double oracle_sigma_rot = 0.2;    // radians, GroundTruthPlusNoise only
  double oracle_sigma_trans = 0.02; // meters
  std::uint64_t seed = 0;           // trial i runs the env at seed + i
  // Overrides the task's occlusion radius at evaluation time when set.
  std::optional<double> occlusion_radius;

  int resolve_exec(const PolicyConfig& pc) const;
  void validate(const PolicyConfig& pc) const;  // ConfigError
};

// Pose-branch prediction error against simulator truth for one executed
// step, object 0. Rotation is geodesic radians, translation meters.
struct StepError {
  double rot = 0.0;
  double trans = 0.0;
};

struct TrialResult {
  std::uint64_t env_seed = 0;
  bool success = false;
  int steps = 0;
  // One entry per executed step for variants with a pose stream; empty
  // otherwise.
  std::vector<StepError> errors;
};

struct SuiteReport {
  // Echo of the run setup.
  int trials = 0;
  std::uint64_t base_seed = 0;
  int exec_steps = 0;
  OracleMode oracle = OracleMode::Predicted;
  double oracle_sigma_rot = 0.0;
  double oracle_sigma_trans = 0.0;
  double occlusion_radius = 0.0;
  std::string task;
  std::string variant;

  std::vector<TrialResult> rows;
  double success_rate = 0.0;
  double mean_steps = 0.0;
  double std_steps = 0.0;
  // Mean error per step index over the trials that reached that index.
  std::vector<StepError> mean_curve;
  std::vector<int> curve_counts;
};

// A planner produces one receding-horizon plan per call. The environment
// reference lets oracle planners (the scripted expert) read full state;
// learned planners must use only the observation and condition.
using Planner = std::function<Prediction(
    const ToyEnv&, const ObservationRecord&, const ConditionState&, Rng&)>;

struct PlanContext {
  int horizon = 0;
  int n_cond = 0;
  int n_objects = 1;
};

Planner policy_planner(const XPolicy& policy);

// One closed-loop episode: plan, execute exec_steps actions, rebuild the
// condition from the last n_cond executed actions plus the time-matched
// pose estimates (source per OracleMode), repeat until success or the step
// cap. All stochastic draws come from streams derived from env_seed.
TrialResult run_trial(const Planner& plan, const PlanContext& ctx,
                      ToyEnv& env, const EvalConfig& cfg,
                      std::uint64_t env_seed);

SuiteReport run_suite(const XPolicy& policy, const TaskSpec& task,
                      const EvalConfig& cfg);
SuiteReport run_suite_plan(const Planner& plan, const PlanContext& ctx,
                           const TaskSpec& task, const EvalConfig& cfg,
                           const std::string& variant_label);

// Normal-approximation 95% interval over per-seed values; n = 1 collapses
// to a point.
struct MeanCi {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  int n = 0;
};

MeanCi mean_ci95(std::span<const double> xs);

// Report writers. Rerunning the producing pipeline writes byte-identical
// files.
void write_suite_json(const SuiteReport& r, const std::filesystem::path& path);
void write_suite_csv(const SuiteReport& r, const std::filesystem::path& path);
void write_curve_csv(const SuiteReport& r, const std::filesystem::path& path);

// --- Experiment drivers -------------------------------------------------

// Trains a fresh policy (weights seeded from train_seed) and evaluates it.
SuiteReport train_and_eval(const Dataset& data, TrainConfig tc,
                           const TaskSpec& task, const EvalConfig& ec,
                           std::uint64_t train_seed);

struct AblateRow {
  VariantKind variant = VariantKind::XFull;
  std::uint64_t seed = 0;
  double success_rate = 0.0;
};

std::vector<AblateRow> ablate(const Dataset& data, const TrainConfig& base,
                              const TaskSpec& task, const EvalConfig& ec,
                              std::span<const VariantKind> variants,
                              std::span<const std::uint64_t> seeds);

struct SweepRow {
  int n = 0;
  std::uint64_t seed = 0;
  double success_rate = 0.0;
};

// Retrains with n_cond = n (horizon fixed) and evaluates with exec = n.
std::vector<SweepRow> sweep_n(const Dataset& data, const TrainConfig& base,
                              const TaskSpec& task, const EvalConfig& ec,
                              std::span<const int> n_values,
                              std::span<const std::uint64_t> seeds);

struct OracleRow {
  OracleMode mode = OracleMode::Predicted;
  double success_rate = 0.0;
};

// Runs the same policy under the three conditioning sources with shared
// trial seeds.
std::vector<OracleRow> oracle_compare(const XPolicy& policy,
                                      const TaskSpec& task,
                                      const EvalConfig& ec);

void write_ablate_csv(std::span<const AblateRow> rows,
                      const std::filesystem::path& path);
void write_sweep_csv(std::span<const SweepRow> rows,
                     const std::filesystem::path& path);
void write_oracle_csv(std::span<const OracleRow> rows,
                      const std::filesystem::path& path);

}  // namespace xpol
