#include "xpol/dataset.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace xpol {

static_assert(std::endian::native == std::endian::little,
              "dataset payloads are little-endian f64");

namespace {

constexpr char kB64[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string b64_encode(const unsigned char* data, std::size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= n; i += 3) {
    const unsigned v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back(kB64[(v >> 6) & 63]);
    out.push_back(kB64[v & 63]);
  }
  const std::size_t rem = n - i;
  if (rem == 1) {
    const unsigned v = data[i] << 16;
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.append("==");
  } else if (rem == 2) {
    const unsigned v = (data[i] << 16) | (data[i + 1] << 8);
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back(kB64[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

std::vector<unsigned char> b64_decode(const std::string& s) {
  if (s.size() % 4 != 0) throw IoError("base64: length not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(s.size() / 4 * 3);
  for (std::size_t i = 0; i < s.size(); i += 4) {
    int pad = 0;
    unsigned v = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = s[i + static_cast<std::size_t>(k)];
      if (c == '=') {
        // Padding only in the last two slots of the last group.
        if (i + 4 != s.size() || k < 2) throw IoError("base64: stray padding");
        ++pad;
        v <<= 6;
        continue;
      }
      if (pad > 0) throw IoError("base64: data after padding");
      const int d = b64_value(c);
      if (d < 0) throw IoError("base64: invalid character");
      v = (v << 6) | static_cast<unsigned>(d);
    }
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<unsigned char>(v & 0xff));
  }
  return out;
}

std::string pack_doubles(const std::vector<double>& v) {
  std::vector<unsigned char> bytes(v.size() * sizeof(double));
  if (!v.empty()) std::memcpy(bytes.data(), v.data(), bytes.size());
  return b64_encode(bytes.data(), bytes.size());
}

std::vector<double> unpack_doubles(const std::string& b64,
                                   std::size_t expect) {
  const std::vector<unsigned char> bytes = b64_decode(b64);
  if (bytes.size() != expect * sizeof(double))
    throw IoError("dataset: payload size does not match the declared shape");
  std::vector<double> v(expect);
  if (expect > 0) std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

nlohmann::json task_json(const TaskSpec& s) {
  nlohmann::json j;
  j["kind"] = to_string(s.kind);
  j["n_objects"] = s.n_objects;
  j["occlusion_radius"] = s.occlusion_radius;
  j["attach_radius"] = s.attach_radius;
  j["trans_cap"] = s.trans_cap;
  j["rot_cap"] = s.rot_cap;
  j["theta_succ"] = s.theta_succ;
  j["d_succ"] = s.d_succ;
  j["max_steps"] = s.max_steps;
  j["workspace_half"] = s.workspace_half;
  j["workspace_z_max"] = s.workspace_z_max;
  j["spawn_half"] = s.spawn_half;
  j["min_goal_dist"] = s.min_goal_dist;
  j["lift_z"] = s.lift_z;
  j["hang_offset"] = s.hang_offset;
  return j;
}

TaskSpec task_from(const nlohmann::json& j) {
  TaskSpec s;
  try {
    s.kind = task_from_string(j.at("kind").get<std::string>());
    s.n_objects = j.at("n_objects").get<int>();
    s.occlusion_radius = j.at("occlusion_radius").get<double>();
    s.attach_radius = j.at("attach_radius").get<double>();
    s.trans_cap = j.at("trans_cap").get<double>();
    s.rot_cap = j.at("rot_cap").get<double>();
    s.theta_succ = j.at("theta_succ").get<double>();
    s.d_succ = j.at("d_succ").get<double>();
    s.max_steps = j.at("max_steps").get<int>();
    s.workspace_half = j.at("workspace_half").get<double>();
    s.workspace_z_max = j.at("workspace_z_max").get<double>();
    s.spawn_half = j.at("spawn_half").get<double>();
    s.min_goal_dist = j.at("min_goal_dist").get<double>();
    s.lift_z = j.at("lift_z").get<double>();
    s.hang_offset = j.at("hang_offset").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("task spec json: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace

std::string task_to_json(const TaskSpec& spec) { return task_json(spec).dump(); }

TaskSpec task_from_json(const std::string& json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("task spec json: ") + e.what());
  }
  return task_from(j);
}

Dataset generate_demos(const TaskSpec& task, int count, std::uint64_t seed) {
  task.validate();
  if (count < 0) throw ConfigError("generate_demos: count must be >= 0");
  Dataset d;
  d.task = task;
  d.seed = seed;

  ToyEnv env(task);
  std::uint64_t k = 0;
  while (static_cast<int>(d.episodes.size()) < count) {
    const std::uint64_t ep_seed = Rng::derive(seed, "demos", k++).next_u64();
    EpisodeData ep;
    ep.seed = ep_seed;
    ObservationRecord obs = env.reset(ep_seed);
    for (;;) {
      const auto a = expert_action(env.state(), task);
      ep.obs.insert(ep.obs.end(), obs.v.begin(), obs.v.end());
      ep.actions.insert(ep.actions.end(), a.begin(), a.end());
      const StepResult res = env.step(a);
      for (const Pose9& p : env.state().objects) {
        ep.poses.push_back(p.t[0]);
        ep.poses.push_back(p.t[1]);
        ep.poses.push_back(p.t[2]);
        for (double x : p.r.v) ep.poses.push_back(x);
      }
      ++ep.steps;
      obs = res.obs;
      if (res.done) {
        ep.success = res.success;
        break;
      }
    }
    if (ep.success)
      d.episodes.push_back(std::move(ep));
    else
      ++d.dropped;
  }
  return d;
}

void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_dataset: cannot open " + path);

  nlohmann::json header;
  header["format"] = "xpol-demos";
  header["version"] = 1;
  header["seed"] = d.seed;
  header["count"] = d.episodes.size();
  header["dropped"] = d.dropped;
  header["obs_dim"] = d.obs_dim();
  header["action_dim"] = d.action_dim();
  header["pose_dim"] = d.pose_dim();
  header["task"] = task_json(d.task);
  out << header.dump() << '\n';

  for (const EpisodeData& ep : d.episodes) {
    nlohmann::json j;
    j["seed"] = ep.seed;
    j["success"] = ep.success;
    j["steps"] = ep.steps;
    j["obs"] = pack_doubles(ep.obs);
    j["actions"] = pack_doubles(ep.actions);
    j["poses"] = pack_doubles(ep.poses);
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("save_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_dataset: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw IoError("load_dataset: empty file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("load_dataset: bad header: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != "xpol-demos")
    throw IoError("load_dataset: not a demo dataset");
  const int version = header.value("version", -1);
  if (version != 1)
    throw VersionMismatch("load_dataset: format version " +
                          std::to_string(version) + ", expected 1");

  Dataset d;
  std::size_t declared = 0;
  try {
    d.task = task_from(header.at("task"));
    d.seed = header.at("seed").get<std::uint64_t>();
    d.dropped = header.at("dropped").get<int>();
    declared = header.at("count").get<std::size_t>();
    if (header.at("obs_dim").get<int>() != d.obs_dim() ||
        header.at("action_dim").get<int>() != d.action_dim() ||
        header.at("pose_dim").get<int>() != d.pose_dim())
      throw IoError("load_dataset: header dims disagree with the task spec");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("load_dataset: bad header: ") + e.what());
  }

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      EpisodeData ep;
      ep.seed = j.at("seed").get<std::uint64_t>();
      ep.success = j.at("success").get<bool>();
      ep.steps = j.at("steps").get<int>();
      if (ep.steps < 0) throw IoError("load_dataset: negative step count");
      const auto n = static_cast<std::size_t>(ep.steps);
      ep.obs = unpack_doubles(j.at("obs").get<std::string>(),
                              n * static_cast<std::size_t>(d.obs_dim()));
      ep.actions =
          unpack_doubles(j.at("actions").get<std::string>(),
                         n * static_cast<std::size_t>(d.action_dim()));
      ep.poses = unpack_doubles(j.at("poses").get<std::string>(),
                                n * static_cast<std::size_t>(d.pose_dim()));
      d.episodes.push_back(std::move(ep));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("load_dataset: bad episode line: ") +
                    e.what());
    }
  }
  if (d.episodes.size() != declared)
    throw IoError("load_dataset: episode count disagrees with the header");
  return d;
}

}  // namespace xpol
