// Python surface: geometry helpers, the toy environment, demo generation,
// training, checkpoints, and suite evaluation. Configs cross the boundary as
// JSON strings so the C++ structs stay the single source of truth.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <cstring>
#include <string>
#include <vector>

#include "xpol/dataset.hpp"
#include "xpol/env.hpp"
#include "xpol/eval.hpp"
#include "xpol/train.hpp"

namespace py = pybind11;
using namespace xpol;

namespace {

Pose9 pose_from(const std::array<double, 9>& v) {
  Pose9 p;
  p.t = {v[0], v[1], v[2]};
  std::copy(v.begin() + 3, v.end(), p.r.v.begin());
  return p;
}

std::array<double, 9> pose_to(const Pose9& p) {
  std::array<double, 9> v{};
  v[0] = p.t[0];
  v[1] = p.t[1];
  v[2] = p.t[2];
  std::copy(p.r.v.begin(), p.r.v.end(), v.begin() + 3);
  return v;
}

// Trained policy plus the config it was trained under.
struct PolicyHandle {
  TrainConfig cfg;
  XPolicy policy;
};

py::dict report_to_dict(const SuiteReport& r) {
  py::dict d;
  d["task"] = r.task;
  d["variant"] = r.variant;
  d["trials"] = r.trials;
  d["base_seed"] = r.base_seed;
  d["exec_steps"] = r.exec_steps;
  d["oracle"] = to_string(r.oracle);
  d["success_rate"] = r.success_rate;
  d["mean_steps"] = r.mean_steps;
  d["std_steps"] = r.std_steps;
  py::list rows;
  for (const TrialResult& t : r.rows) {
    py::dict row;
    row["seed"] = t.env_seed;
    row["success"] = t.success;
    row["steps"] = t.steps;
    rows.append(row);
  }
  d["rows"] = rows;
  py::list curve;
  for (const StepError& e : r.mean_curve)
    curve.append(py::make_tuple(e.rot, e.trans));
  d["mean_curve"] = curve;
  return d;
}

EvalConfig eval_config(int trials, std::uint64_t seed, int exec_steps,
                       const std::string& oracle, double sigma_rot,
                       double sigma_trans) {
  EvalConfig ec;
  ec.trials = trials;
  ec.seed = seed;
  ec.exec_steps = exec_steps;
  ec.oracle = oracle_from_string(oracle);
  ec.oracle_sigma_rot = sigma_rot;
  ec.oracle_sigma_trans = sigma_trans;
  return ec;
}

}  // namespace

PYBIND11_MODULE(_xpolab, m) {
  m.doc() = "Cross-conditioned diffusion-policy lab core";
  m.attr("__version__") = "0.1.0";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<VersionMismatch>(m, "VersionMismatchError",
                                          PyExc_ValueError);
  static py::exception<Error> base_exc(m, "XpolError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError&) {
      throw;  // handled by the registrations above
    } catch (const VersionMismatch&) {
      throw;
    } catch (const Error& e) {
      base_exc(e.what());
    }
  });

  // Geometry: poses travel as 9-value sequences (tx, ty, tz, r1..r6).
  m.def("pose_compose", [](const std::array<double, 9>& a,
                           const std::array<double, 9>& b) {
    return pose_to(pose_compose(pose_from(a), pose_from(b)));
  });
  m.def("pose_inverse", [](const std::array<double, 9>& p) {
    return pose_to(pose_inverse(pose_from(p)));
  });
  m.def("pose_error", [](const std::array<double, 9>& a,
                         const std::array<double, 9>& b) {
    return pose_error(pose_from(a), pose_from(b));
  });
  m.def(
      "planar_pose",
      [](double x, double y, double yaw, double z) {
        return pose_to(planar_pose(x, y, yaw, z));
      },
      py::arg("x"), py::arg("y"), py::arg("yaw"), py::arg("z") = 0.0);

  py::class_<TaskSpec>(m, "TaskSpec")
      .def_static("make",
                  [](const std::string& kind) {
                    return TaskSpec::make(task_from_string(kind));
                  })
      .def_property_readonly(
          "kind", [](const TaskSpec& t) { return to_string(t.kind); })
      .def_readwrite("occlusion_radius", &TaskSpec::occlusion_radius)
      .def_readonly("max_steps", &TaskSpec::max_steps)
      .def_property_readonly("obs_dim", &TaskSpec::obs_dim);

  py::class_<ToyEnv>(m, "ToyEnv")
      .def(py::init<const TaskSpec&>())
      .def("reset",
           [](ToyEnv& env, std::uint64_t seed) { return env.reset(seed).v; })
      .def("step",
           [](ToyEnv& env, const std::array<double, 10>& action) {
             StepResult r = env.step(action);
             return py::make_tuple(r.obs.v, r.done, r.success);
           })
      .def("expert_action",
           [](const ToyEnv& env) {
             return expert_action(env.state(), env.spec());
           })
      .def_property_readonly("done", &ToyEnv::done)
      .def_property_readonly("success", &ToyEnv::success);

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly(
          "episodes", [](const Dataset& d) { return d.episodes.size(); })
      .def_readonly("dropped", &Dataset::dropped)
      .def_readonly("seed", &Dataset::seed)
      .def_property_readonly("obs_dim", &Dataset::obs_dim)
      .def_property_readonly(
          "task", [](const Dataset& d) { return to_string(d.task.kind); });

  m.def("generate_demos",
        [](const TaskSpec& task, int count, std::uint64_t seed) {
          return generate_demos(task, count, seed);
        });
  m.def("save_dataset", [](const Dataset& d, const std::string& path) {
    save_dataset(d, path);
  });
  m.def("load_dataset", [](const std::string& path) {
    return load_dataset(path);
  });

  py::class_<PolicyHandle>(m, "Policy")
      .def_property_readonly(
          "variant",
          [](const PolicyHandle& h) {
            return to_string(h.cfg.policy.variant);
          })
      .def_property_readonly(
          "config_json",
          [](const PolicyHandle& h) { return train_config_to_json(h.cfg); })
      .def("save",
           [](const PolicyHandle& h, const std::string& path) {
             save_checkpoint(h.policy, h.cfg, path);
           })
      .def(
          "evaluate",
          [](const PolicyHandle& h, const TaskSpec& task, int trials,
             std::uint64_t seed, int exec_steps, const std::string& oracle,
             double sigma_rot, double sigma_trans) {
            EvalConfig ec = eval_config(trials, seed, exec_steps, oracle,
                                        sigma_rot, sigma_trans);
            return report_to_dict(run_suite(h.policy, task, ec));
          },
          py::arg("task"), py::arg("trials") = 100, py::arg("seed") = 0,
          py::arg("exec_steps") = 0, py::arg("oracle") = "predicted",
          py::arg("sigma_rot") = 0.2, py::arg("sigma_trans") = 0.02);

  m.def("train_policy", [](const Dataset& data, const std::string& config) {
    TrainConfig tc = train_config_from_json(config);
    std::vector<TrainPair> pairs =
        make_training_pairs(data, tc.policy.horizon, tc.policy.n_cond);
    XPolicy policy(tc.policy, Rng::derive(tc.seed, "init").next_u64());
    train_policy(policy, pairs, tc);
    return PolicyHandle{tc, std::move(policy)};
  });
  m.def("load_checkpoint", [](const std::string& path) {
    Checkpoint c = load_checkpoint(path);
    return PolicyHandle{std::move(c.config), std::move(c.policy)};
  });
  m.def("default_train_config", [] {
    TrainConfig tc;
    return train_config_to_json(tc);
  });
}
