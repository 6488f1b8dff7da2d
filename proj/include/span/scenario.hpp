#pragma once

// Scenario files: one JSON document that fixes everything an episode
// depends on. Unknown keys are rejected at every level; omitted optional
// fields take the documented defaults. Relative paths resolve against the
// scenario file's directory.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "span/crowd_sim.hpp"
#include "span/episode.hpp"
#include "span/occupancy.hpp"
#include "span/predictor.hpp"

namespace span {

struct MapSpec {
  std::string file;                     ///< PGM or CSV raster
  std::optional<GridGeometry> geometry;  ///< falls back to the sidecar JSON
};

struct SimulatedCrowdSpec {
  std::vector<Pedestrian> agents;
  CrowdParams params;
};

/// Pedestrians on fixed straight paths: present from t_start to t_end,
/// moving at constant velocity; they ignore the robot.
struct ScriptedAgent {
  int id = 0;
  Vec2 start = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
  double t_start = 0.0;
  double t_end = 0.0;
};
struct ScriptedCrowdSpec {
  std::vector<ScriptedAgent> agents;
};

/// Recorded corpus overlaid on the episode: track times shift by the
/// per-agent offsets, then episode time 0 maps to corpus time start_time.
struct ReplaySpec {
  std::string corpus;
  double start_time = 0.0;
  std::vector<std::pair<int, double>> shifts;  ///< (agent id, offset s)
};

using PedestrianSource = std::variant<SimulatedCrowdSpec, ScriptedCrowdSpec, ReplaySpec>;

struct PredictorSpec {
  int basis_size = 8;
  double gamma = 0.01;
  int observations = 5;
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 0;
  std::optional<MapSpec> map;
  PedestrianSource pedestrians = SimulatedCrowdSpec{};
  std::string model;  ///< predictor file, empty for none
  PredictorSpec predictor;
  EpisodeConfig episode;
  std::filesystem::path base_dir;  ///< for relative paths
  std::string hash;                ///< 16 hex digits over the canonical document
};

/// Throws ParseError on syntax errors, unknown keys, wrong types, missing
/// required fields (version, seed, robot) and out-of-range values.
[[nodiscard]] Scenario parse_scenario(std::string_view text,
                                      const std::filesystem::path& base_dir = {});
[[nodiscard]] Scenario load_scenario(const std::filesystem::path& path);

/// 64-bit FNV-1a of the bytes, as 16 lowercase hex digits.
[[nodiscard]] std::string fnv1a_hex(std::string_view bytes);

/// Track for a scripted agent: its two end points.
[[nodiscard]] ReplayTrack scripted_track(const ScriptedAgent& agent);

/// Everything needed to run a scenario, loaded from disk.
struct ScenarioRuntime {
  std::unique_ptr<OccupancyGrid> map;
  std::unique_ptr<World> world;
  std::optional<PredictorModel> model;
};

/// Loads the map, builds the pedestrian world and, when `need_model`,
/// loads the predictor and checks it against the scenario's predictor
/// settings and control period.
[[nodiscard]] ScenarioRuntime instantiate(const Scenario& scenario, bool need_model);

/// Runs the scenario once with a generator seeded from scenario.seed and
/// fills in the log header (seed, hash, map reference).
[[nodiscard]] EpisodeLog simulate(const Scenario& scenario, PlannerMode mode, bool timing);

}  // namespace span
