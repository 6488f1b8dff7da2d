#pragma once

// Episode log files, metrics, and plot-data export.
//
// Log file layout (text, '\n' line ends):
//   # span-episode-log 1
//   # key=value               (one line per LogHeader field, fixed order)
//   kind,step,t,id,x,y,theta,v,omega,ped_collision,map_collision,iter_ms
//   robot,0,0,,0,0,0,1,0,0,0,0
//   ped,0,0,3,4.5,-2,,,,,,
//   ...
// One robot row per step followed by one ped row per pedestrian present.
// The final robot row leaves v and omega empty. Numbers use the shortest
// representation that reads back to the same double.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "span/episode.hpp"

namespace span {

void write_log(const EpisodeLog& log, std::ostream& out);

/// Throws ParseError naming the line on malformed input.
[[nodiscard]] EpisodeLog parse_log(std::istream& in);

struct Metrics {
  std::optional<double> ttg_s;  ///< time of the first record within goal tolerance
  double doc_s = 0.0;           ///< dt times the number of colliding records
  bool reached = false;
  std::optional<double> mean_iter_ms;  ///< absent when timing was not recorded
  std::optional<double> max_iter_ms;
  std::uint64_t seed = 0;
  std::string scenario_hash;
};

/// Pure function of the log. Pedestrian collisions are recomputed from the
/// logged positions; map collisions are recomputed when `map` is given and
/// taken from the logged flags otherwise. Times are rounded to 1e-9 s.
[[nodiscard]] Metrics compute_metrics(const EpisodeLog& log, const OccupancyGrid* map = nullptr);

/// JSON object with exactly the keys ttg_s, doc_s, reached, mean_iter_ms,
/// max_iter_ms, seed, scenario_hash (absent values are null).
[[nodiscard]] std::string metrics_json(const Metrics& m);

/// Tidy CSV for external plotting:
///   kind,id,t,x,y,distance_to_goal
/// robot rows (id empty) and ped rows (distance_to_goal empty) per step.
void write_plot_csv(const EpisodeLog& log, std::ostream& out);

/// Shortest round-trip decimal form of a double.
[[nodiscard]] std::string format_double(double v);

}  // namespace span
