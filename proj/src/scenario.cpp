#include "span/scenario.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include "json.hpp"
#include "span/errors.hpp"

namespace span {

namespace {

using nlohmann::json;

constexpr int kScenarioVersion = 1;

[[noreturn]] void fail(const std::string& where, const std::string& msg) {
  throw ParseError("scenario: " + where + ": " + msg);
}

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) fail(where, "expected an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.contains(k)) fail(where, "unknown key '" + k + "'");
  }
}

double number(const json& j, const std::string& where) {
  if (!j.is_number()) fail(where, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(where, "expected a finite number");
  return v;
}

double number_or(const json& obj, const char* key, const std::string& where, double fallback) {
  return obj.contains(key) ? number(obj[key], where + "." + key) : fallback;
}

int integer(const json& j, const std::string& where) {
  if (!j.is_number_integer()) fail(where, "expected an integer");
  return j.get<int>();
}

int integer_or(const json& obj, const char* key, const std::string& where, int fallback) {
  return obj.contains(key) ? integer(obj[key], where + "." + key) : fallback;
}

Vec2 vec2(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) fail(where, "expected [x, y]");
  return {number(j[0], where + "[0]"), number(j[1], where + "[1]")};
}

std::string string(const json& j, const std::string& where) {
  if (!j.is_string()) fail(where, "expected a string");
  return j.get<std::string>();
}

const json& required(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) fail(where, "missing required key '" + std::string(key) + "'");
  return obj[key];
}

MapSpec parse_map(const json& j) {
  check_keys(j, "map", {"file", "resolution", "origin"});
  MapSpec spec;
  spec.file = string(required(j, "file", "map"), "map.file");
  if (j.contains("resolution") != j.contains("origin")) {
    fail("map", "give both resolution and origin, or neither (sidecar)");
  }
  if (j.contains("resolution")) {
    GridGeometry g;
    g.resolution = number(j["resolution"], "map.resolution");
    g.origin = vec2(j["origin"], "map.origin");
    if (!(g.resolution > 0.0)) fail("map.resolution", "must be positive");
    spec.geometry = g;
  }
  return spec;
}

CrowdParams parse_crowd_params(const json& j) {
  const std::string w = "pedestrians.params";
  check_keys(j, w,
             {"k", "tau0", "horizon", "max_speed", "relaxation", "gradient_step", "max_force",
              "wall_margin", "wall_strength"});
  CrowdParams p;
  p.k = number_or(j, "k", w, p.k);
  p.tau0 = number_or(j, "tau0", w, p.tau0);
  p.horizon = number_or(j, "horizon", w, p.horizon);
  p.max_speed = number_or(j, "max_speed", w, p.max_speed);
  p.relaxation = number_or(j, "relaxation", w, p.relaxation);
  p.gradient_step = number_or(j, "gradient_step", w, p.gradient_step);
  p.max_force = number_or(j, "max_force", w, p.max_force);
  p.wall_margin = number_or(j, "wall_margin", w, p.wall_margin);
  p.wall_strength = number_or(j, "wall_strength", w, p.wall_strength);
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    fail(w, e.what());
  }
  return p;
}

PedestrianSource parse_pedestrians(const json& j, double r_ped) {
  if (!j.is_object()) fail("pedestrians", "expected an object");
  const std::string type = string(required(j, "type", "pedestrians"), "pedestrians.type");
  if (type == "simulated") {
    check_keys(j, "pedestrians", {"type", "agents", "params"});
    SimulatedCrowdSpec spec;
    if (j.contains("params")) spec.params = parse_crowd_params(j["params"]);
    const json& agents = required(j, "agents", "pedestrians");
    if (!agents.is_array()) fail("pedestrians.agents", "expected an array");
    for (std::size_t i = 0; i < agents.size(); ++i) {
      const std::string w = "pedestrians.agents[" + std::to_string(i) + "]";
      check_keys(agents[i], w, {"id", "start", "goal", "velocity", "preferred_speed"});
      Pedestrian p;
      p.id = integer_or(agents[i], "id", w, static_cast<int>(i));
      p.position = vec2(required(agents[i], "start", w), w + ".start");
      p.goal = vec2(required(agents[i], "goal", w), w + ".goal");
      if (agents[i].contains("velocity")) p.velocity = vec2(agents[i]["velocity"], w + ".velocity");
      p.preferred_speed = number_or(agents[i], "preferred_speed", w, 1.0);
      if (!(p.preferred_speed > 0.0) || p.preferred_speed > spec.params.max_speed) {
        fail(w + ".preferred_speed", "must be in (0, max_speed]");
      }
      p.radius = r_ped;
      spec.agents.push_back(p);
    }
    return spec;
  }
  if (type == "scripted") {
    check_keys(j, "pedestrians", {"type", "agents"});
    ScriptedCrowdSpec spec;
    const json& agents = required(j, "agents", "pedestrians");
    if (!agents.is_array()) fail("pedestrians.agents", "expected an array");
    for (std::size_t i = 0; i < agents.size(); ++i) {
      const std::string w = "pedestrians.agents[" + std::to_string(i) + "]";
      check_keys(agents[i], w, {"id", "start", "velocity", "t_start", "t_end"});
      ScriptedAgent a;
      a.id = integer_or(agents[i], "id", w, static_cast<int>(i));
      a.start = vec2(required(agents[i], "start", w), w + ".start");
      a.velocity = vec2(required(agents[i], "velocity", w), w + ".velocity");
      a.t_start = number_or(agents[i], "t_start", w, 0.0);
      a.t_end = number_or(agents[i], "t_end", w, 120.0);
      if (!(a.t_end > a.t_start)) fail(w, "t_end must exceed t_start");
      spec.agents.push_back(a);
    }
    return spec;
  }
  if (type == "replay") {
    check_keys(j, "pedestrians", {"type", "corpus", "start_time", "shifts"});
    ReplaySpec spec;
    spec.corpus = string(required(j, "corpus", "pedestrians"), "pedestrians.corpus");
    spec.start_time = number_or(j, "start_time", "pedestrians", 0.0);
    if (j.contains("shifts")) {
      const json& shifts = j["shifts"];
      if (!shifts.is_array()) fail("pedestrians.shifts", "expected an array");
      for (std::size_t i = 0; i < shifts.size(); ++i) {
        const std::string w = "pedestrians.shifts[" + std::to_string(i) + "]";
        check_keys(shifts[i], w, {"agent_id", "offset"});
        spec.shifts.emplace_back(integer(required(shifts[i], "agent_id", w), w + ".agent_id"),
                                 number(required(shifts[i], "offset", w), w + ".offset"));
      }
    }
    return spec;
  }
  fail("pedestrians.type", "expected 'simulated', 'scripted' or 'replay', got '" + type + "'");
}

void check_unique_ids(const PedestrianSource& src) {
  std::set<int> ids;
  auto add = [&](int id) {
    if (!ids.insert(id).second) fail("pedestrians", "duplicate id " + std::to_string(id));
  };
  if (const auto* s = std::get_if<SimulatedCrowdSpec>(&src)) {
    for (const auto& a : s->agents) add(a.id);
  } else if (const auto* s2 = std::get_if<ScriptedCrowdSpec>(&src)) {
    for (const auto& a : s2->agents) add(a.id);
  }
}

}  // namespace

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Scenario parse_scenario(std::string_view text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("scenario: ") + e.what());
  }
  check_keys(doc, "document",
             {"version", "name", "seed", "map", "robot", "pedestrians", "model", "predictor",
              "planner", "collision", "episode"});
  const int version = integer(required(doc, "version", "document"), "version");
  if (version != kScenarioVersion) fail("version", "unsupported version " + std::to_string(version));

  Scenario sc;
  sc.base_dir = base_dir;
  sc.hash = fnv1a_hex(doc.dump());
  if (doc.contains("name")) sc.name = string(doc["name"], "name");
  const json& seed = required(doc, "seed", "document");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0)) {
    fail("seed", "expected a non-negative integer");
  }
  sc.seed = seed.get<std::uint64_t>();

  EpisodeConfig& ep = sc.episode;
  if (doc.contains("collision")) {
    const json& c = doc["collision"];
    check_keys(c, "collision", {"epsilon", "r_robot", "r_ped", "sweep_count", "dt", "horizon"});
    ep.collision.epsilon = number_or(c, "epsilon", "collision", ep.collision.epsilon);
    ep.collision.r_robot = number_or(c, "r_robot", "collision", ep.collision.r_robot);
    ep.collision.r_ped = number_or(c, "r_ped", "collision", ep.collision.r_ped);
    ep.collision.sweep_count = integer_or(c, "sweep_count", "collision", ep.collision.sweep_count);
    ep.collision.dt = number_or(c, "dt", "collision", ep.collision.dt);
    ep.collision.horizon = number_or(c, "horizon", "collision", ep.collision.horizon);
  }

  const json& robot = required(doc, "robot", "document");
  check_keys(robot, "robot", {"start", "goal"});
  const json& start = required(robot, "start", "robot");
  if (!start.is_array() || (start.size() != 2 && start.size() != 3)) {
    fail("robot.start", "expected [x, y] or [x, y, theta]");
  }
  ep.start = {number(start[0], "robot.start[0]"), number(start[1], "robot.start[1]"),
              start.size() == 3 ? wrap_angle(number(start[2], "robot.start[2]")) : 0.0};
  ep.goal = vec2(required(robot, "goal", "robot"), "robot.goal");

  if (doc.contains("map") && !doc["map"].is_null()) sc.map = parse_map(doc["map"]);
  if (doc.contains("pedestrians")) {
    sc.pedestrians = parse_pedestrians(doc["pedestrians"], ep.collision.r_ped);
  }
  check_unique_ids(sc.pedestrians);
  if (doc.contains("model") && !doc["model"].is_null()) sc.model = string(doc["model"], "model");

  if (doc.contains("predictor")) {
    const json& p = doc["predictor"];
    check_keys(p, "predictor", {"m", "gamma", "observations"});
    sc.predictor.basis_size = integer_or(p, "m", "predictor", sc.predictor.basis_size);
    sc.predictor.gamma = number_or(p, "gamma", "predictor", sc.predictor.gamma);
    sc.predictor.observations =
        integer_or(p, "observations", "predictor", sc.predictor.observations);
    if (sc.predictor.basis_size < 1 || !(sc.predictor.gamma > 0.0) ||
        sc.predictor.observations < 1) {
      fail("predictor", "m and observations must be >= 1, gamma > 0");
    }
  }

  if (doc.contains("planner")) {
    const json& p = doc["planner"];
    check_keys(p, "planner",
               {"kappa", "restarts", "rho_begin", "rho_end", "max_evals", "v_min", "v_max",
                "omega_min", "omega_max"});
    ep.kappa = number_or(p, "kappa", "planner", ep.kappa);
    ep.planner.restarts = integer_or(p, "restarts", "planner", ep.planner.restarts);
    ep.planner.solver.rho_begin = number_or(p, "rho_begin", "planner", ep.planner.solver.rho_begin);
    ep.planner.solver.rho_end = number_or(p, "rho_end", "planner", ep.planner.solver.rho_end);
    ep.planner.solver.max_evals = integer_or(p, "max_evals", "planner", ep.planner.solver.max_evals);
    ep.bounds.lower.v = number_or(p, "v_min", "planner", ep.bounds.lower.v);
    ep.bounds.upper.v = number_or(p, "v_max", "planner", ep.bounds.upper.v);
    ep.bounds.lower.omega = number_or(p, "omega_min", "planner", ep.bounds.lower.omega);
    ep.bounds.upper.omega = number_or(p, "omega_max", "planner", ep.bounds.upper.omega);
  }
  if (doc.contains("episode")) {
    const json& e = doc["episode"];
    check_keys(e, "episode", {"goal_tolerance", "max_time"});
    ep.goal_tolerance = number_or(e, "goal_tolerance", "episode", ep.goal_tolerance);
    ep.max_time = number_or(e, "max_time", "episode", ep.max_time);
  }
  try {
    ep.validate();
  } catch (const std::invalid_argument& e) {
    fail("document", e.what());
  }
  return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_scenario(ss.str(), path.parent_path());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

ReplayTrack scripted_track(const ScriptedAgent& a) {
  return {a.id,
          {{a.t_start, a.start}, {a.t_end, a.start + (a.t_end - a.t_start) * a.velocity}}};
}

ScenarioRuntime instantiate(const Scenario& sc, bool need_model) {
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : sc.base_dir / path;
  };
  ScenarioRuntime rt;
  if (sc.map) {
    rt.map = std::make_unique<OccupancyGrid>(
        load_grid(resolve(sc.map->file), std::nullopt, sc.map->geometry));
  }
  const double r_ped = sc.episode.collision.r_ped;
  if (const auto* sim = std::get_if<SimulatedCrowdSpec>(&sc.pedestrians)) {
    rt.world = std::make_unique<SimulatedCrowd>(sim->agents, sim->params, rt.map.get(),
                                                sc.episode.collision.r_robot);
  } else if (const auto* scripted = std::get_if<ScriptedCrowdSpec>(&sc.pedestrians)) {
    std::vector<ReplayTrack> tracks;
    for (const auto& a : scripted->agents) tracks.push_back(scripted_track(a));
    rt.world = std::make_unique<ReplayCrowd>(std::move(tracks), 0.0, r_ped);
  } else {
    const auto& replay = std::get<ReplaySpec>(sc.pedestrians);
    std::vector<ReplayTrack> tracks = load_replay_csv(resolve(replay.corpus));
    for (const auto& [id, offset] : replay.shifts) {
      bool found = false;
      for (auto& t : tracks) {
        if (t.id != id) continue;
        for (auto& p : t.points) p.t += offset;
        found = true;
      }
      if (!found) throw std::runtime_error("shift for unknown agent id " + std::to_string(id));
    }
    rt.world = std::make_unique<ReplayCrowd>(std::move(tracks), replay.start_time, r_ped);
  }
  if (need_model) {
    if (sc.model.empty()) throw std::runtime_error("scenario names no predictor model");
    PredictorModel model = load_model(resolve(sc.model));
    const PredictorSpec& ps = sc.predictor;
    if (model.basis().size() != ps.basis_size || model.basis().gamma() != ps.gamma ||
        model.observations() != ps.observations) {
      throw std::runtime_error("model " + sc.model +
                               " does not match the scenario's predictor settings (m, gamma, "
                               "observations)");
    }
    if (std::abs(model.dt() - sc.episode.collision.dt) > 1e-9) {
      throw std::runtime_error("model observation spacing differs from the control period");
    }
    rt.model = std::move(model);
  }
  return rt;
}

EpisodeLog simulate(const Scenario& sc, PlannerMode mode, bool timing) {
  ScenarioRuntime rt = instantiate(sc, mode == PlannerMode::predictive);
  EpisodeConfig cfg = sc.episode;
  cfg.mode = mode;
  cfg.record_timing = timing;
  std::mt19937_64 rng(sc.seed);
  EpisodeLog log = run_episode(*rt.world, rt.map.get(), rt.model ? &*rt.model : nullptr, cfg, rng);
  log.header.seed = sc.seed;
  log.header.scenario_hash = sc.hash;
  log.header.map = sc.map ? sc.map->file : "";
  return log;
}

}  // namespace span
