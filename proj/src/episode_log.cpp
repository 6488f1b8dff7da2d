#include "span/episode_log.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <vector>

#include "json.hpp"
#include "span/errors.hpp"

namespace span {

namespace {

constexpr const char* kMagic = "# span-episode-log 1";
constexpr const char* kColumns =
    "kind,step,t,id,x,y,theta,v,omega,ped_collision,map_collision,iter_ms";

double round_time(double t) { return std::round(t * 1e9) / 1e9; }

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
}

class LineParser {
 public:
  explicit LineParser(std::size_t line) : line_(line) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("episode log: line " + std::to_string(line_) + ": " + msg);
  }
  double number(std::string_view s, const char* what) const {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
      fail(std::string("bad ") + what + " '" + std::string(s) + "'");
    }
    return v;
  }
  template <typename Int>
  Int integer(std::string_view s, const char* what) const {
    Int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
      fail(std::string("bad ") + what + " '" + std::string(s) + "'");
    }
    return v;
  }
  bool flag(std::string_view s, const char* what) const {
    if (s == "0") return false;
    if (s == "1") return true;
    fail(std::string("bad ") + what + " '" + std::string(s) + "'");
  }

 private:
  std::size_t line_;
};

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("number formatting failed");
  return std::string(buf, ptr);
}

void write_log(const EpisodeLog& log, std::ostream& out) {
  const LogHeader& h = log.header;
  out << kMagic << '\n';
  out << "# seed=" << h.seed << '\n';
  out << "# scenario_hash=" << h.scenario_hash << '\n';
  out << "# planner=" << h.planner << '\n';
  out << "# map=" << h.map << '\n';
  out << "# dt=" << format_double(h.dt) << '\n';
  out << "# goal=" << format_double(h.goal.x()) << ',' << format_double(h.goal.y()) << '\n';
  out << "# goal_tolerance=" << format_double(h.goal_tolerance) << '\n';
  out << "# r_robot=" << format_double(h.r_robot) << '\n';
  out << "# r_ped=" << format_double(h.r_ped) << '\n';
  out << "# timing=" << (h.timing ? 1 : 0) << '\n';
  out << "# outcome=" << (log.outcome == Outcome::success ? "success" : "timeout") << '\n';
  out << kColumns << '\n';
  for (const auto& s : log.steps) {
    const std::string t = format_double(round_time(s.step * h.dt));
    out << "robot," << s.step << ',' << t << ",," << format_double(s.robot.x) << ','
        << format_double(s.robot.y) << ',' << format_double(s.robot.theta) << ',';
    if (s.has_control) {
      out << format_double(s.control.v) << ',' << format_double(s.control.omega);
    } else {
      out << ',';
    }
    out << ',' << (s.ped_collision ? 1 : 0) << ',' << (s.map_collision ? 1 : 0) << ','
        << format_double(s.iter_ms) << '\n';
    for (const auto& p : s.peds) {
      out << "ped," << s.step << ',' << t << ',' << p.id << ',' << format_double(p.position.x())
          << ',' << format_double(p.position.y()) << ",,,,,,\n";
    }
  }
}

EpisodeLog parse_log(std::istream& in) {
  EpisodeLog log;
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next_line() || line != kMagic) LineParser(1).fail("missing '# span-episode-log 1' header");

  bool have_outcome = false;
  while (next_line()) {
    const LineParser lp(line_no);
    if (line.rfind("# ", 0) != 0) {
      if (line != kColumns) lp.fail("expected column header");
      break;
    }
    const std::string_view kv = std::string_view(line).substr(2);
    const std::size_t eq = kv.find('=');
    if (eq == std::string_view::npos) lp.fail("expected key=value");
    const std::string_view key = kv.substr(0, eq);
    const std::string_view value = kv.substr(eq + 1);
    LogHeader& h = log.header;
    if (key == "seed") {
      h.seed = lp.integer<std::uint64_t>(value, "seed");
    } else if (key == "scenario_hash") {
      h.scenario_hash = value;
    } else if (key == "planner") {
      if (value != "predictive" && value != "reactive") lp.fail("unknown planner");
      h.planner = value;
    } else if (key == "map") {
      h.map = value;
    } else if (key == "dt") {
      h.dt = lp.number(value, "dt");
      if (!(h.dt > 0.0)) lp.fail("dt must be positive");
    } else if (key == "goal") {
      const auto xy = split(value, ',');
      if (xy.size() != 2) lp.fail("goal needs two coordinates");
      h.goal = Vec2(lp.number(xy[0], "goal x"), lp.number(xy[1], "goal y"));
    } else if (key == "goal_tolerance") {
      h.goal_tolerance = lp.number(value, "goal tolerance");
    } else if (key == "r_robot") {
      h.r_robot = lp.number(value, "robot radius");
    } else if (key == "r_ped") {
      h.r_ped = lp.number(value, "pedestrian radius");
    } else if (key == "timing") {
      h.timing = lp.flag(value, "timing flag");
    } else if (key == "outcome") {
      if (value == "success") {
        log.outcome = Outcome::success;
      } else if (value == "timeout") {
        log.outcome = Outcome::timeout;
      } else {
        lp.fail("unknown outcome");
      }
      have_outcome = true;
    } else {
      lp.fail("unknown header key '" + std::string(key) + "'");
    }
  }
  if (!have_outcome) LineParser(line_no).fail("missing outcome header");

  while (next_line()) {
    const LineParser lp(line_no);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 12) lp.fail("expected 12 fields, got " + std::to_string(f.size()));
    const int step = lp.integer<int>(f[1], "step");
    if (f[0] == "robot") {
      if (step != static_cast<int>(log.steps.size())) lp.fail("steps must be consecutive from 0");
      if (!log.steps.empty() && !log.steps.back().has_control) {
        lp.fail("record after the final step");
      }
      StepRecord s;
      s.step = step;
      s.robot = {lp.number(f[4], "x"), lp.number(f[5], "y"), lp.number(f[6], "theta")};
      if (f[7].empty() != f[8].empty()) lp.fail("control needs both v and omega");
      s.has_control = !f[7].empty();
      if (s.has_control) s.control = {lp.number(f[7], "v"), lp.number(f[8], "omega")};
      s.ped_collision = lp.flag(f[9], "pedestrian collision flag");
      s.map_collision = lp.flag(f[10], "map collision flag");
      s.iter_ms = lp.number(f[11], "iteration time");
      log.steps.push_back(std::move(s));
    } else if (f[0] == "ped") {
      if (log.steps.empty() || step != log.steps.back().step) {
        lp.fail("pedestrian row must follow its robot row");
      }
      log.steps.back().peds.push_back(
          {lp.integer<int>(f[3], "pedestrian id"), Vec2(lp.number(f[4], "x"), lp.number(f[5], "y"))});
    } else {
      lp.fail("unknown row kind '" + std::string(f[0]) + "'");
    }
  }
  if (log.steps.empty()) LineParser(line_no).fail("log has no steps");
  return log;
}

Metrics compute_metrics(const EpisodeLog& log, const OccupancyGrid* map) {
  const LogHeader& h = log.header;
  Metrics m;
  m.seed = h.seed;
  m.scenario_hash = h.scenario_hash;
  int colliding = 0;
  double sum_ms = 0.0;
  double max_ms = 0.0;
  int iterations = 0;
  for (const auto& s : log.steps) {
    const Vec2 pos(s.robot.x, s.robot.y);
    const bool ped = true_ped_collision(pos, s.peds, h.r_robot, h.r_ped);
    const bool wall = map != nullptr ? true_map_collision(pos, *map, h.r_robot) : s.map_collision;
    if (ped || wall) ++colliding;
    if (!m.ttg_s && (pos - h.goal).norm() < h.goal_tolerance) {
      m.ttg_s = round_time(s.step * h.dt);
    }
    if (s.has_control) {
      sum_ms += s.iter_ms;
      max_ms = std::max(max_ms, s.iter_ms);
      ++iterations;
    }
  }
  m.reached = m.ttg_s.has_value();
  m.doc_s = round_time(colliding * h.dt);
  if (h.timing && iterations > 0) {
    m.mean_iter_ms = sum_ms / iterations;
    m.max_iter_ms = max_ms;
  }
  return m;
}

std::string metrics_json(const Metrics& m) {
  nlohmann::ordered_json j;
  auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  j["ttg_s"] = opt(m.ttg_s);
  j["doc_s"] = m.doc_s;
  j["reached"] = m.reached;
  j["mean_iter_ms"] = opt(m.mean_iter_ms);
  j["max_iter_ms"] = opt(m.max_iter_ms);
  j["seed"] = m.seed;
  j["scenario_hash"] = m.scenario_hash;
  return j.dump(2) + "\n";
}

void write_plot_csv(const EpisodeLog& log, std::ostream& out) {
  out << "kind,id,t,x,y,distance_to_goal\n";
  for (const auto& s : log.steps) {
    const std::string t = format_double(round_time(s.step * log.header.dt));
    const Vec2 pos(s.robot.x, s.robot.y);
    out << "robot,," << t << ',' << format_double(pos.x()) << ',' << format_double(pos.y()) << ','
        << format_double((pos - log.header.goal).norm()) << '\n';
    for (const auto& p : s.peds) {
      out << "ped," << p.id << ',' << t << ',' << format_double(p.position.x()) << ','
          << format_double(p.position.y()) << ",\n";
    }
  }
}

}  // namespace span
