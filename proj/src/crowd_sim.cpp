#include "span/crowd_sim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

#include "span/errors.hpp"

namespace span {

void CrowdParams::validate() const {
  const bool ok = k >= 0.0 && tau0 > 0.0 && horizon > 0.0 && max_speed > 0.0 &&
                  relaxation > 0.0 && gradient_step > 0.0 && max_force > 0.0 &&
                  wall_margin >= 0.0 && wall_strength >= 0.0;
  if (!ok) throw std::invalid_argument("crowd parameters out of range");
}

double time_to_contact(const Vec2& rel_pos, const Vec2& rel_vel, double r_sum) {
  const double c = rel_pos.squaredNorm() - r_sum * r_sum;
  if (c < 0.0) return 0.0;
  const double a = rel_vel.squaredNorm();
  const double b = 2.0 * rel_pos.dot(rel_vel);
  if (a == 0.0 || b >= 0.0) return std::numeric_limits<double>::infinity();
  const double disc = b * b - 4.0 * a * c;
  if (disc <= 0.0) return std::numeric_limits<double>::infinity();
  // Smaller root in the cancellation-free form 2c / (-b + sqrt(disc)).
  return 2.0 * c / (-b + std::sqrt(disc));
}

double pairwise_ttc(const Pedestrian& a, const Pedestrian& b) {
  return time_to_contact(a.position - b.position, a.velocity - b.velocity, a.radius + b.radius);
}

double interaction_energy(double tau, const CrowdParams& params) {
  if (!(tau < params.horizon)) return 0.0;
  if (tau <= 0.0) return std::numeric_limits<double>::infinity();
  return params.k / (tau * tau) * std::exp(-tau / params.tau0);
}

namespace {

/// -dE/d(rel_pos) by central differences, capped at max_force.
Vec2 interaction_force(const Vec2& rel_pos, const Vec2& rel_vel, double r_sum,
                       const CrowdParams& params) {
  if (params.k == 0.0) return Vec2::Zero();
  const double dist = rel_pos.norm();
  const Vec2 away = dist > 0.0 ? Vec2(rel_pos / dist) : Vec2(1.0, 0.0);
  if (dist < r_sum) return params.max_force * away;
  if (interaction_energy(time_to_contact(rel_pos, rel_vel, r_sum), params) == 0.0) {
    return Vec2::Zero();
  }
  const double h = params.gradient_step;
  Vec2 grad;
  for (int i = 0; i < 2; ++i) {
    Vec2 up = rel_pos;
    Vec2 down = rel_pos;
    up(i) += h;
    down(i) -= h;
    const double e_up = interaction_energy(time_to_contact(up, rel_vel, r_sum), params);
    const double e_down = interaction_energy(time_to_contact(down, rel_vel, r_sum), params);
    grad(i) = (e_up - e_down) / (2.0 * h);
  }
  Vec2 force = -grad;
  if (!force.allFinite()) return params.max_force * away;
  const double mag = force.norm();
  if (mag > params.max_force) force *= params.max_force / mag;
  return force;
}

Vec2 wall_force(const Pedestrian& p, const OccupancyGrid& map, const CrowdParams& params) {
  constexpr int kDirections = 16;
  const double reach[3] = {p.radius, p.radius + 0.5 * params.wall_margin,
                           p.radius + params.wall_margin};
  Vec2 push = Vec2::Zero();
  for (int d = 0; d < kDirections; ++d) {
    const double phi = 2.0 * std::numbers::pi * d / kDirections;
    const Vec2 dir(std::cos(phi), std::sin(phi));
    double occ = 0.0;
    for (double r : reach) occ += map.query(p.position + r * dir);
    push -= (occ / 3.0) * dir;
  }
  return params.wall_strength * push;
}

Vec2 goal_force(const Pedestrian& p, const CrowdParams& params) {
  const Vec2 to_goal = p.goal - p.position;
  const double dist = to_goal.norm();
  Vec2 desired = Vec2::Zero();
  if (dist > 1e-9) {
    const double speed = std::min(p.preferred_speed, dist / params.relaxation);
    desired = speed * to_goal / dist;
  }
  return (desired - p.velocity) / params.relaxation;
}

}  // namespace

std::vector<Pedestrian> step_crowd(std::span<const Pedestrian> peds, double dt,
                                   const CrowdParams& params, const OccupancyGrid* map,
                                   std::span<const Pedestrian> obstacles) {
  params.validate();
  if (!(dt > 0.0)) throw std::invalid_argument("crowd step must be positive");
  std::vector<Pedestrian> next(peds.begin(), peds.end());
  for (std::size_t i = 0; i < peds.size(); ++i) {
    const Pedestrian& a = peds[i];
    Vec2 force = goal_force(a, params);
    auto add = [&](const Pedestrian& b) {
      force += interaction_force(a.position - b.position, a.velocity - b.velocity,
                                 a.radius + b.radius, params);
    };
    for (std::size_t j = 0; j < peds.size(); ++j) {
      if (j != i) add(peds[j]);
    }
    for (const auto& b : obstacles) add(b);
    if (map != nullptr) force += wall_force(a, *map, params);

    Pedestrian& n = next[i];
    n.velocity = a.velocity + force * dt;
    const double speed = n.velocity.norm();
    if (speed > params.max_speed) n.velocity *= params.max_speed / speed;
    n.position = a.position + n.velocity * dt;
  }
  return next;
}

// ---------------------------------------------------------------------------
// Replay

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    if (comma == std::string_view::npos) {
      out.push_back(trim(line.substr(pos)));
      return out;
    }
    out.push_back(trim(line.substr(pos, comma - pos)));
    pos = comma + 1;
  }
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && ec == std::errc() && ptr == s.data() + s.size();
}

void load_one(const std::filesystem::path& file, std::map<int, ReplayTrack>& tracks,
              std::map<int, std::string>& owner) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  auto fail = [&](std::size_t line, const std::string& msg) {
    throw ParseError(file.string() + ": line " + std::to_string(line) + ": " + msg);
  };
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  std::map<int, ReplayTrack> local;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_commas(line);
    if (!header) {
      if (fields.size() != 4 || fields[0] != "t" || fields[1] != "agent_id" || fields[2] != "x" ||
          fields[3] != "y") {
        fail(line_no, "expected header 't,agent_id,x,y'");
      }
      header = true;
      continue;
    }
    if (fields.size() != 4) fail(line_no, "expected 4 fields, got " + std::to_string(fields.size()));
    double t = 0.0;
    int id = 0;
    double x = 0.0;
    double y = 0.0;
    if (!parse_number(fields[0], t) || !std::isfinite(t)) fail(line_no, "bad time");
    if (!parse_number(fields[1], id)) fail(line_no, "bad agent id");
    if (!parse_number(fields[2], x) || !parse_number(fields[3], y) || !std::isfinite(x) ||
        !std::isfinite(y)) {
      fail(line_no, "bad coordinate");
    }
    ReplayTrack& track = local[id];
    track.id = id;
    if (!track.points.empty() && !(t > track.points.back().t)) {
      fail(line_no, "times for agent " + std::to_string(id) + " must strictly increase");
    }
    track.points.push_back({t, Vec2(x, y)});
  }
  if (!header) fail(line_no, "missing header");
  for (auto& [id, track] : local) {
    if (owner.contains(id)) {
      throw ParseError(file.string() + ": agent id " + std::to_string(id) + " already used in " +
                       owner[id]);
    }
    owner[id] = file.string();
    tracks[id] = std::move(track);
  }
}

}  // namespace

std::vector<ReplayTrack> load_replay_csv(const std::filesystem::path& path) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(path)) {
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".csv") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .csv files in " + path.string());
  } else {
    files.push_back(path);
  }
  std::map<int, ReplayTrack> tracks;
  std::map<int, std::string> owner;
  for (const auto& f : files) load_one(f, tracks, owner);
  std::vector<ReplayTrack> out;
  for (auto& [id, track] : tracks) out.push_back(std::move(track));
  return out;
}

Vec2 track_position(const ReplayTrack& track, double t) {
  const auto& pts = track.points;
  if (pts.empty()) throw std::invalid_argument("empty replay track");
  if (t <= pts.front().t) return pts.front().p;
  if (t >= pts.back().t) return pts.back().p;
  const auto it = std::upper_bound(pts.begin(), pts.end(), t,
                                   [](double v, const TimedPoint& p) { return v < p.t; });
  const TimedPoint& hi = *it;
  const TimedPoint& lo = *(it - 1);
  const double s = (t - lo.t) / (hi.t - lo.t);
  return lo.p + s * (hi.p - lo.p);
}

bool track_active(const ReplayTrack& track, double t) {
  constexpr double kSlack = 1e-9;
  return !track.points.empty() && t >= track.points.front().t - kSlack &&
         t <= track.points.back().t + kSlack;
}

std::vector<ReplayObservation> replay_positions(std::span<const ReplayTrack> tracks, double t,
                                                int count, double dt) {
  if (count < 1 || !(dt > 0.0)) throw std::invalid_argument("window needs count >= 1, dt > 0");
  std::vector<ReplayObservation> out;
  for (const auto& track : tracks) {
    if (!track_active(track, t)) continue;
    ReplayObservation obs{track.id, {}};
    for (int j = 0; j < count; ++j) {
      obs.window.push_back(track_position(track, t - (count - 1 - j) * dt));
    }
    out.push_back(std::move(obs));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Worlds

SimulatedCrowd::SimulatedCrowd(std::vector<Pedestrian> peds, CrowdParams params,
                               const OccupancyGrid* map, double robot_radius)
    : peds_(std::move(peds)), params_(params), map_(map), robot_radius_(robot_radius) {
  params_.validate();
  std::sort(peds_.begin(), peds_.end(),
            [](const Pedestrian& a, const Pedestrian& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < peds_.size(); ++i) {
    if (peds_[i].id == peds_[i - 1].id) throw std::invalid_argument("duplicate pedestrian id");
  }
}

std::vector<AgentSnapshot> SimulatedCrowd::agents() const {
  std::vector<AgentSnapshot> out;
  for (const auto& p : peds_) out.push_back({p.id, p.position, p.radius});
  return out;
}

void SimulatedCrowd::advance(const RobotState& robot, const Control& u, double dt) {
  Pedestrian as_agent;
  as_agent.id = -1;
  as_agent.position = Vec2(robot.x, robot.y);
  as_agent.velocity = u.v * Vec2(std::cos(robot.theta), std::sin(robot.theta));
  as_agent.goal = as_agent.position;
  as_agent.radius = robot_radius_;
  const Pedestrian obstacles[1] = {as_agent};
  peds_ = step_crowd(peds_, dt, params_, map_, obstacles);
  time_ += dt;
}

ReplayCrowd::ReplayCrowd(std::vector<ReplayTrack> tracks, double start_time, double radius)
    : tracks_(std::move(tracks)), start_time_(start_time), radius_(radius) {
  for (const auto& t : tracks_) {
    if (t.points.empty()) throw std::invalid_argument("empty replay track");
  }
  std::sort(tracks_.begin(), tracks_.end(),
            [](const ReplayTrack& a, const ReplayTrack& b) { return a.id < b.id; });
}

std::vector<AgentSnapshot> ReplayCrowd::agents() const {
  std::vector<AgentSnapshot> out;
  const double t = start_time_ + time_;
  for (const auto& track : tracks_) {
    if (track_active(track, t)) out.push_back({track.id, track_position(track, t), radius_});
  }
  return out;
}

void ReplayCrowd::advance(const RobotState&, const Control&, double dt) { time_ += dt; }

}  // namespace span
