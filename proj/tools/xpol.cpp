// Command-line surface: demo generation, training, evaluation, the
// ablation/sweep/oracle experiments, and report merging.
//
// Exit codes: 0 success, 2 usage, 3 config, 4 runtime.
// Relative paths (configs and outputs alike) resolve under $XPOL_OUT_ROOT,
// default ".", so one config file drives a whole pipeline in any directory.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "xpol/dataset.hpp"
#include "xpol/env.hpp"
#include "xpol/eval.hpp"
#include "xpol/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xpol;

namespace {

struct Overrides {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::string> task;
  std::optional<std::string> out;
};

fs::path out_root() {
  const char* env = std::getenv("XPOL_OUT_ROOT");
  return (env && *env) ? fs::path(env) : fs::path(".");
}

fs::path resolve(const std::string& p) {
  fs::path q(p);
  return q.is_absolute() ? q : out_root() / q;
}

// Config files are repo inputs and resolve against the working directory;
// only data artifacts live under the output root.
json load_config(const Overrides& o) {
  if (!o.config) return json::object();
  std::ifstream in(*o.config);
  if (!in)
    throw ConfigError("cannot read config file " + *o.config);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

TaskSpec task_spec(const json& cfg, const Overrides& o) {
  const std::string name =
      o.task ? *o.task : cfg.value("task", std::string("push-to-pose"));
  return TaskSpec::make(task_from_string(name));
}

TrainConfig train_section(const json& cfg) {
  if (!cfg.contains("train"))
    throw ConfigError("config needs a \"train\" section");
  return train_config_from_json(cfg.at("train").dump());
}

EvalConfig eval_section(const json& cfg) {
  EvalConfig ec;
  const json e = cfg.value("eval", json::object());
  try {
    ec.trials = e.value("trials", ec.trials);
    ec.exec_steps = e.value("exec_steps", ec.exec_steps);
    if (e.contains("oracle"))
      ec.oracle = oracle_from_string(e.at("oracle").get<std::string>());
    ec.oracle_sigma_rot = e.value("oracle_sigma_rot", ec.oracle_sigma_rot);
    ec.oracle_sigma_trans = e.value("oracle_sigma_trans", ec.oracle_sigma_trans);
    ec.seed = e.value("seed", ec.seed);
    if (e.contains("occlusion_radius") && !e.at("occlusion_radius").is_null())
      ec.occlusion_radius = e.at("occlusion_radius").get<double>();
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("eval section: ") + ex.what());
  }
  return ec;
}

fs::path out_dir(const Overrides& o, const std::string& fallback) {
  fs::path dir = resolve(o.out.value_or(fallback));
  fs::create_directories(dir);
  return dir;
}

Dataset load_data(const json& cfg) {
  const std::string path = cfg.value("data", std::string("demos.jsonl"));
  return load_dataset(resolve(path).string());
}

TrainConfig train_for(const json& cfg, const Dataset& data,
                      const Overrides& o) {
  TrainConfig tc = train_section(cfg);
  if (o.seed) tc.seed = *o.seed;
  if (o.variant) tc.policy.variant = variant_from_string(*o.variant);
  if (tc.policy.obs_dim != static_cast<std::size_t>(data.obs_dim()))
    throw ConfigError("train section obs_dim " +
                      std::to_string(tc.policy.obs_dim) +
                      " does not match the dataset's " +
                      std::to_string(data.obs_dim()));
  tc.validate();
  return tc;
}

void cmd_gen_demos(const json& cfg, const Overrides& o) {
  const TaskSpec task = task_spec(cfg, o);
  const json d = cfg.value("demos", json::object());
  const int count = d.value("count", 50);
  const std::uint64_t seed = o.seed ? *o.seed : d.value("seed", 1ULL);
  const fs::path out =
      resolve(o.out.value_or(d.value("out", std::string("demos.jsonl"))));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());

  Dataset data = generate_demos(task, count, seed);
  save_dataset(data, out.string());
  std::printf("gen-demos: task=%s episodes=%zu dropped=%d seed=%llu -> %s\n",
              to_string(task.kind).c_str(), data.episodes.size(), data.dropped,
              static_cast<unsigned long long>(seed), out.string().c_str());
}

void cmd_train(const json& cfg, const Overrides& o) {
  Dataset data = load_data(cfg);
  TrainConfig tc = train_for(cfg, data, o);
  std::vector<TrainPair> pairs =
      make_training_pairs(data, tc.policy.horizon, tc.policy.n_cond);
  XPolicy policy(tc.policy, Rng::derive(tc.seed, "init").next_u64());

  const int tick = std::max(1, tc.iterations / 10);
  double recent = 0.0;
  int recent_n = 0;
  train_policy(policy, pairs, tc,
               [&](int it, const LossBreakdown& l) {
                 recent += l.l_total;
                 ++recent_n;
                 if ((it + 1) % tick == 0 || it + 1 == tc.iterations) {
                   std::printf("train: it=%d/%d loss=%.4f\n", it + 1,
                               tc.iterations, recent / recent_n);
                   recent = 0.0;
                   recent_n = 0;
                 }
               });

  const fs::path out =
      resolve(o.out.value_or(cfg.value("checkpoint", std::string("ckpt.bin"))));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(policy, tc, out);
  std::printf("train: variant=%s seed=%llu windows=%zu -> %s\n",
              to_string(tc.policy.variant).c_str(),
              static_cast<unsigned long long>(tc.seed), pairs.size(),
              out.string().c_str());
}

void cmd_eval(const json& cfg, const Overrides& o) {
  const fs::path ck =
      resolve(cfg.value("checkpoint", std::string("ckpt.bin")));
  Checkpoint c = load_checkpoint(ck);
  if (cfg.contains("train")) {
    // A config that also describes training pins the expected architecture.
    TrainConfig want = train_section(cfg);
    if (o.variant) want.policy.variant = variant_from_string(*o.variant);
    require_compatible(c.config.policy, want.policy);
  }

  const TaskSpec task = task_spec(cfg, o);
  EvalConfig ec = eval_section(cfg);
  if (o.seed) ec.seed = *o.seed;

  SuiteReport rep = run_suite(c.policy, task, ec);
  const fs::path dir = out_dir(o, "eval-out");
  write_suite_json(rep, dir / "report.json");
  write_suite_csv(rep, dir / "report.csv");
  write_curve_csv(rep, dir / "curve.csv");
  std::printf(
      "eval: task=%s variant=%s oracle=%s trials=%d success_rate=%.3f "
      "mean_steps=%.1f -> %s\n",
      rep.task.c_str(), rep.variant.c_str(), to_string(rep.oracle).c_str(),
      rep.trials, rep.success_rate, rep.mean_steps, dir.string().c_str());
}

std::vector<std::uint64_t> seed_list(const json& section, const Overrides& o,
                                     std::initializer_list<std::uint64_t> dflt) {
  if (o.seed) return {*o.seed};
  std::vector<std::uint64_t> out;
  if (section.contains("seeds"))
    for (const json& s : section.at("seeds")) out.push_back(s.get<std::uint64_t>());
  else
    out.assign(dflt);
  if (out.empty()) throw ConfigError("seed list must not be empty");
  return out;
}

void cmd_ablate(const json& cfg, const Overrides& o) {
  Dataset data = load_data(cfg);
  const TrainConfig base = train_for(cfg, data, o);
  EvalConfig ec = eval_section(cfg);
  const json a = cfg.value("ablate", json::object());

  std::vector<VariantKind> variants;
  if (o.variant) {
    variants = {variant_from_string(*o.variant)};
  } else if (a.contains("variants")) {
    for (const json& v : a.at("variants"))
      variants.push_back(variant_from_string(v.get<std::string>()));
  } else {
    variants = {VariantKind::XFull,  VariantKind::Base,
                VariantKind::SepAux, VariantKind::UniAux,
                VariantKind::Hybrid, VariantKind::UnidirCascade};
  }
  const std::vector<std::uint64_t> seeds = seed_list(a, o, {1, 2, 3, 4, 5});

  std::vector<AblateRow> rows =
      ablate(data, base, data.task, ec, variants, seeds);

  const fs::path dir = out_dir(o, "ablate-out");
  write_ablate_csv(rows, dir / "ablate.csv");
  json summary;
  summary["format"] = "xpol-ablate";
  summary["seeds"] = seeds;
  for (VariantKind v : variants) {
    std::vector<double> rates;
    for (const AblateRow& r : rows)
      if (r.variant == v) rates.push_back(r.success_rate);
    MeanCi ci = mean_ci95(rates);
    summary["variants"][to_string(v)] = {
        {"mean", ci.mean}, {"ci_lo", ci.lo}, {"ci_hi", ci.hi}, {"n", ci.n}};
    std::printf("ablate: %-14s mean=%.3f ci95=[%.3f, %.3f] n=%d\n",
                to_string(v).c_str(), ci.mean, ci.lo, ci.hi, ci.n);
  }
  std::ofstream(dir / "ablate.json") << summary.dump(2) << "\n";
  std::printf("ablate: -> %s\n", dir.string().c_str());
}

void cmd_sweep_n(const json& cfg, const Overrides& o) {
  Dataset data = load_data(cfg);
  const TrainConfig base = train_for(cfg, data, o);
  EvalConfig ec = eval_section(cfg);
  const json s = cfg.value("sweep", json::object());

  std::vector<int> n_values;
  if (s.contains("n_values"))
    for (const json& n : s.at("n_values")) n_values.push_back(n.get<int>());
  else
    n_values = {4, 8, 16};
  const std::vector<std::uint64_t> seeds = seed_list(s, o, {1, 2, 3});

  std::vector<SweepRow> rows =
      sweep_n(data, base, data.task, ec, n_values, seeds);

  const fs::path dir = out_dir(o, "sweep-out");
  write_sweep_csv(rows, dir / "sweep.csv");
  json summary;
  summary["format"] = "xpol-sweep";
  summary["seeds"] = seeds;
  for (int n : n_values) {
    std::vector<double> rates;
    for (const SweepRow& r : rows)
      if (r.n == n) rates.push_back(r.success_rate);
    MeanCi ci = mean_ci95(rates);
    summary["n"][std::to_string(n)] = {
        {"mean", ci.mean}, {"ci_lo", ci.lo}, {"ci_hi", ci.hi}, {"n", ci.n}};
    std::printf("sweep-n: N=%-3d mean=%.3f ci95=[%.3f, %.3f] n=%d\n", n,
                ci.mean, ci.lo, ci.hi, ci.n);
  }
  std::ofstream(dir / "sweep.json") << summary.dump(2) << "\n";
  std::printf("sweep-n: -> %s\n", dir.string().c_str());
}

void cmd_oracle(const json& cfg, const Overrides& o) {
  const fs::path ck =
      resolve(cfg.value("checkpoint", std::string("ckpt.bin")));
  Checkpoint c = load_checkpoint(ck);
  const TaskSpec task = task_spec(cfg, o);
  EvalConfig ec = eval_section(cfg);
  if (o.seed) ec.seed = *o.seed;

  std::vector<OracleRow> rows = oracle_compare(c.policy, task, ec);
  const fs::path dir = out_dir(o, "oracle-out");
  write_oracle_csv(rows, dir / "oracle.csv");
  json summary;
  summary["format"] = "xpol-oracle";
  summary["sigma_rot"] = ec.oracle_sigma_rot;
  summary["sigma_trans"] = ec.oracle_sigma_trans;
  for (const OracleRow& r : rows) {
    summary["modes"][to_string(r.mode)] = r.success_rate;
    std::printf("oracle: %-24s success_rate=%.3f\n", to_string(r.mode).c_str(),
                r.success_rate);
  }
  std::ofstream(dir / "oracle.json") << summary.dump(2) << "\n";
  std::printf("oracle: -> %s\n", dir.string().c_str());
}

// Appends `src` minus its header line to `dst`, prefixing each row with the
// run id. Returns the number of rows merged.
int merge_csv(const fs::path& src, const std::string& run_id,
              std::string& dst) {
  std::ifstream in(src);
  if (!in) return 0;
  std::string line;
  int rows = 0;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    dst += run_id + "," + line + "\n";
    ++rows;
  }
  return rows;
}

void cmd_report(const std::vector<std::string>& run_dirs, const Overrides& o) {
  std::string merged = "run_id,task,variant,oracle,success_rate,mean_steps,std_steps\n";
  std::string curves = "run_id,step,mean_rot_err,mean_trans_err,count\n";
  std::string variant_rows = "run_id,variant,seed,success_rate\n";
  std::string n_rows = "run_id,n_cond,seed,success_rate\n";
  std::string oracle_rows = "run_id,oracle,success_rate\n";
  json bundle;
  bundle["format"] = "xpol-report";
  bundle["runs"] = json::object();
  int artifacts = 0;

  for (const std::string& d : run_dirs) {
    const fs::path dir = resolve(d);
    const std::string id = dir.filename().string();
    const fs::path rj = dir / "report.json";
    if (fs::exists(rj)) {
      json r;
      try {
        std::ifstream in(rj);
        r = json::parse(in);
      } catch (const json::exception& e) {
        throw IoError(rj.string() + ": " + e.what());
      }
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%.17g,%.17g,%.17g\n",
                    id.c_str(), r.value("task", std::string()).c_str(),
                    r.value("variant", std::string()).c_str(),
                    r.value("oracle", std::string()).c_str(),
                    r.value("success_rate", 0.0), r.value("mean_steps", 0.0),
                    r.value("std_steps", 0.0));
      merged += buf;
      bundle["runs"][id] = std::move(r);
      ++artifacts;
    }
    artifacts += merge_csv(dir / "curve.csv", id, curves);
    artifacts += merge_csv(dir / "ablate.csv", id, variant_rows);
    artifacts += merge_csv(dir / "sweep.csv", id, n_rows);
    artifacts += merge_csv(dir / "oracle.csv", id, oracle_rows);
  }
  if (artifacts == 0)
    throw IoError("no run artifacts found under the given directories");

  const fs::path dir = out_dir(o, "report-out");
  auto emit = [&dir](const char* name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw IoError(std::string("cannot write ") + name);
    out << body;
  };
  emit("merged.csv", merged);
  emit("curves.csv", curves);
  emit("variant_success.csv", variant_rows);
  emit("n_success.csv", n_rows);
  emit("oracle_success.csv", oracle_rows);
  std::ofstream(dir / "merged.json") << bundle.dump(2) << "\n";
  std::printf("report: merged %zu run dirs -> %s\n", run_dirs.size(),
              dir.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale cross-conditioned diffusion-policy lab"};
  app.require_subcommand(1);

  Overrides o;
  std::vector<std::string> report_dirs;
  auto add_common = [&o](CLI::App* s) {
    s->add_option("--config", o.config, "JSON config file");
    s->add_option("--seed", o.seed, "override the run seed");
    s->add_option("--variant", o.variant, "override the policy variant");
    s->add_option("--task", o.task, "override the task");
    s->add_option("--out", o.out,
                  "output path, under $XPOL_OUT_ROOT when relative");
  };

  CLI::App* gen = app.add_subcommand("gen-demos", "Generate expert demos");
  CLI::App* train = app.add_subcommand("train", "Train a policy");
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  CLI::App* abl = app.add_subcommand("ablate", "Train+eval variant grid");
  CLI::App* swp = app.add_subcommand("sweep-n", "Train+eval over condition lengths");
  CLI::App* orc = app.add_subcommand("oracle", "Compare conditioning oracles");
  CLI::App* rep = app.add_subcommand("report", "Merge run directories");
  for (CLI::App* s : {gen, train, eval, abl, swp, orc, rep}) add_common(s);
  rep->add_option("dirs", report_dirs, "run directories to merge")
      ->required()
      ->expected(-1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const json cfg = load_config(o);
    if (gen->parsed()) cmd_gen_demos(cfg, o);
    if (train->parsed()) cmd_train(cfg, o);
    if (eval->parsed()) cmd_eval(cfg, o);
    if (abl->parsed()) cmd_ablate(cfg, o);
    if (swp->parsed()) cmd_sweep_n(cfg, o);
    if (orc->parsed()) cmd_oracle(cfg, o);
    if (rep->parsed()) cmd_report(report_dirs, o);
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
}
