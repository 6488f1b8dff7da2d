#pragma once

// Static obstacle field: a raster of occupancy probabilities with bilinear
// interpolation between cell centers.
//
// Cell (ix, iy) covers [origin + (ix, iy) res, origin + (ix + 1, iy + 1) res);
// its value sits at the cell center. ix grows with world x, iy with world y.
// Queries outside the covered rectangle return 1.0. Inside it, the half-cell
// border beyond the outermost centers uses the nearest edge values.

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

namespace span {

struct GridGeometry {
  double resolution = 0.1;                       ///< meters per cell
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();  ///< lower-left corner of cell (0, 0)
};

class OccupancyGrid {
 public:
  /// Values are listed row by row with iy = 0 (lowest y) first. Throws
  /// std::invalid_argument on empty grids, size mismatch, values outside
  /// [0, 1] or a non-positive resolution.
  OccupancyGrid(int width, int height, std::vector<double> values, GridGeometry geometry);

  /// Every cell set to `value`.
  static OccupancyGrid uniform(int width, int height, double value, GridGeometry geometry);

  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] double resolution() const { return geometry_.resolution; }
  [[nodiscard]] const Eigen::Vector2d& origin() const { return geometry_.origin; }
  [[nodiscard]] const GridGeometry& geometry() const { return geometry_; }
  [[nodiscard]] double cell(int ix, int iy) const {
    return values_[static_cast<std::size_t>(iy) * static_cast<std::size_t>(width_) +
                   static_cast<std::size_t>(ix)];
  }
  [[nodiscard]] const std::vector<double>& values() const { return values_; }

  /// World coordinate of the center of cell (ix, iy).
  [[nodiscard]] Eigen::Vector2d cell_center(int ix, int iy) const;

  /// True when p lies in the rectangle covered by the cells.
  [[nodiscard]] bool contains(const Eigen::Vector2d& p) const;

  /// Occupancy probability at p (bilinear between cell centers, 1.0 outside).
  [[nodiscard]] double query(const Eigen::Vector2d& p) const;

  /// Largest difference between neighbouring cells divided by the
  /// resolution: a Lipschitz constant of query() inside the grid with
  /// respect to the L1 distance.
  [[nodiscard]] double lipschitz_bound() const;

 private:
  int width_;
  int height_;
  std::vector<double> values_;
  GridGeometry geometry_;
};

/// Upper envelope of OccupancyGrid::query over squares of half-width
/// `radius`: for every p, upper_bound(p) >= query(q) whenever
/// |q - p|_inf <= radius. Built once per grid and radius with a separable
/// running-max filter; each lookup is O(1).
class OccupancyEnvelope {
 public:
  OccupancyEnvelope(const OccupancyGrid& grid, double radius);

  [[nodiscard]] double upper_bound(const Eigen::Vector2d& p) const;
  [[nodiscard]] double radius() const { return radius_; }

 private:
  int width_;
  int height_;
  GridGeometry geometry_;
  double radius_;
  std::vector<double> max_;
};

enum class GridFormat { pgm, csv };

/// Cell values of a parsed raster, rows ordered as in OccupancyGrid.
struct RasterValues {
  int width = 0;
  int height = 0;
  std::vector<double> values;
};

/// Parses a binary (P5) or ASCII (P2) PGM. Occupancy is 1 - pixel / maxval.
/// The first image row is the top of the map (highest y). Throws ParseError
/// naming the byte offset of the problem.
[[nodiscard]] RasterValues parse_pgm(std::string_view bytes);

/// Parses comma-separated rows of probabilities in [0, 1]; the first line
/// is the top of the map. Throws ParseError naming line and column.
[[nodiscard]] RasterValues parse_csv_grid(std::string_view text);

/// Reads `<path>.json`: {"resolution": r, "origin": [x, y]}.
[[nodiscard]] GridGeometry load_grid_geometry(const std::filesystem::path& sidecar);

/// Loads a raster plus its geometry. Without explicit geometry the sidecar
/// `<path>.json` is required. The format is taken from the extension when
/// not given (".pgm" or ".csv").
[[nodiscard]] OccupancyGrid load_grid(const std::filesystem::path& path,
                                      std::optional<GridFormat> format = std::nullopt,
                                      std::optional<GridGeometry> geometry = std::nullopt);

/// Path of the geometry sidecar for a raster file.
[[nodiscard]] std::filesystem::path grid_sidecar_path(const std::filesystem::path& raster);

}  // namespace span
