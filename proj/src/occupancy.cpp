#include "span/occupancy.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "span/errors.hpp"

namespace span {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Flips rows so that the first (top) row of a file ends up at the highest iy.
std::vector<double> flip_rows(const std::vector<double>& top_first, int width, int height) {
  std::vector<double> out(top_first.size());
  for (int r = 0; r < height; ++r) {
    const auto src = static_cast<std::size_t>(r) * static_cast<std::size_t>(width);
    const auto dst = static_cast<std::size_t>(height - 1 - r) * static_cast<std::size_t>(width);
    std::copy_n(top_first.begin() + static_cast<std::ptrdiff_t>(src), width,
                out.begin() + static_cast<std::ptrdiff_t>(dst));
  }
  return out;
}

// Whitespace/comment-aware tokenizer for PGM headers and ASCII rasters.
class PgmReader {
 public:
  explicit PgmReader(std::string_view bytes) : bytes_(bytes) {}

  [[nodiscard]] std::size_t offset() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  long read_uint(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    if (pos_ >= bytes_.size()) fail(what, "unexpected end of file");
    long value = 0;
    const auto* first = bytes_.data() + pos_;
    const auto* last = bytes_.data() + bytes_.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || value < 0) {
      pos_ = start;
      fail(what, "expected a non-negative integer");
    }
    pos_ += static_cast<std::size_t>(ptr - first);
    if (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_])) &&
        bytes_[pos_] != '#') {
      fail(what, "unexpected character after integer");
    }
    return value;
  }

  unsigned char byte() { return static_cast<unsigned char>(bytes_[pos_++]); }
  [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }
  [[nodiscard]] char peek() const { return bytes_[pos_]; }
  void advance() { ++pos_; }

  [[noreturn]] void fail(const char* what, const std::string& msg) const {
    throw ParseError("pgm: " + msg + " while reading " + what + " at byte offset " +
                     std::to_string(pos_));
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

OccupancyGrid::OccupancyGrid(int width, int height, std::vector<double> values,
                             GridGeometry geometry)
    : width_(width), height_(height), values_(std::move(values)), geometry_(geometry) {
  if (width_ < 1 || height_ < 1) throw std::invalid_argument("grid must have at least one cell");
  if (values_.size() != static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_)) {
    throw std::invalid_argument("grid value count does not match width x height");
  }
  if (!(geometry_.resolution > 0.0) || !std::isfinite(geometry_.resolution)) {
    throw std::invalid_argument("grid resolution must be positive");
  }
  if (!geometry_.origin.allFinite()) throw std::invalid_argument("grid origin must be finite");
  for (double v : values_) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("grid values must lie in [0, 1]");
  }
}

OccupancyGrid OccupancyGrid::uniform(int width, int height, double value, GridGeometry geometry) {
  return OccupancyGrid(width, height,
                       std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) *
                                               static_cast<std::size_t>(std::max(height, 0)),
                                           value),
                       geometry);
}

Eigen::Vector2d OccupancyGrid::cell_center(int ix, int iy) const {
  return geometry_.origin + geometry_.resolution * Eigen::Vector2d(ix + 0.5, iy + 0.5);
}

bool OccupancyGrid::contains(const Eigen::Vector2d& p) const {
  const Eigen::Vector2d u = (p - geometry_.origin) / geometry_.resolution;
  return u.x() >= 0.0 && u.y() >= 0.0 && u.x() < width_ && u.y() < height_;
}

double OccupancyGrid::query(const Eigen::Vector2d& p) const {
  const double ux = (p.x() - geometry_.origin.x()) / geometry_.resolution;
  const double uy = (p.y() - geometry_.origin.y()) / geometry_.resolution;
  if (!(ux >= 0.0 && uy >= 0.0 && ux < width_ && uy < height_)) return 1.0;

  // Continuous index relative to cell centers, clamped at the border.
  auto axis = [](double u, int n, int& i0, int& i1, double& frac) {
    const double c = u - 0.5;
    if (c <= 0.0) {
      i0 = i1 = 0;
      frac = 0.0;
    } else if (c >= n - 1) {
      i0 = i1 = n - 1;
      frac = 0.0;
    } else {
      i0 = static_cast<int>(c);
      i1 = i0 + 1;
      frac = c - i0;
    }
  };
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  double fx = 0.0, fy = 0.0;
  axis(ux, width_, x0, x1, fx);
  axis(uy, height_, y0, y1, fy);
  const double bottom = (1.0 - fx) * cell(x0, y0) + fx * cell(x1, y0);
  const double top = (1.0 - fx) * cell(x0, y1) + fx * cell(x1, y1);
  return (1.0 - fy) * bottom + fy * top;
}

double OccupancyGrid::lipschitz_bound() const {
  double diff = 0.0;
  for (int iy = 0; iy < height_; ++iy) {
    for (int ix = 0; ix < width_; ++ix) {
      if (ix + 1 < width_) diff = std::max(diff, std::abs(cell(ix + 1, iy) - cell(ix, iy)));
      if (iy + 1 < height_) diff = std::max(diff, std::abs(cell(ix, iy + 1) - cell(ix, iy)));
    }
  }
  return diff / geometry_.resolution;
}

OccupancyEnvelope::OccupancyEnvelope(const OccupancyGrid& grid, double radius)
    : width_(grid.width()),
      height_(grid.height()),
      geometry_(grid.geometry()),
      radius_(radius),
      max_(grid.values()) {
  if (!(radius >= 0.0) || !std::isfinite(radius)) {
    throw std::invalid_argument("envelope radius must be finite and non-negative");
  }
  // Any point within `radius` of a point in cell c interpolates from cells
  // at most k away from c on each axis.
  const int k = static_cast<int>(std::ceil(radius / geometry_.resolution)) + 1;
  const auto w = static_cast<std::size_t>(width_);
  std::vector<double> tmp(max_.size());
  for (int iy = 0; iy < height_; ++iy) {
    for (int ix = 0; ix < width_; ++ix) {
      double m = 0.0;
      for (int j = std::max(0, ix - k); j <= std::min(width_ - 1, ix + k); ++j) {
        m = std::max(m, max_[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(j)]);
      }
      tmp[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)] = m;
    }
  }
  for (int iy = 0; iy < height_; ++iy) {
    for (int ix = 0; ix < width_; ++ix) {
      double m = 0.0;
      for (int j = std::max(0, iy - k); j <= std::min(height_ - 1, iy + k); ++j) {
        m = std::max(m, tmp[static_cast<std::size_t>(j) * w + static_cast<std::size_t>(ix)]);
      }
      max_[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)] = m;
    }
  }
}

double OccupancyEnvelope::upper_bound(const Eigen::Vector2d& p) const {
  const double res = geometry_.resolution;
  const double lo_x = (p.x() - radius_ - geometry_.origin.x()) / res;
  const double lo_y = (p.y() - radius_ - geometry_.origin.y()) / res;
  const double hi_x = (p.x() + radius_ - geometry_.origin.x()) / res;
  const double hi_y = (p.y() + radius_ - geometry_.origin.y()) / res;
  // Part of the square leaves the map, where queries return 1.
  if (!(lo_x >= 0.0 && lo_y >= 0.0 && hi_x < width_ && hi_y < height_)) return 1.0;
  const int ix = std::clamp(static_cast<int>((p.x() - geometry_.origin.x()) / res), 0, width_ - 1);
  const int iy = std::clamp(static_cast<int>((p.y() - geometry_.origin.y()) / res), 0, height_ - 1);
  return max_[static_cast<std::size_t>(iy) * static_cast<std::size_t>(width_) +
              static_cast<std::size_t>(ix)];
}

RasterValues parse_pgm(std::string_view bytes) {
  PgmReader in(bytes);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '2' && bytes[1] != '5')) {
    in.fail("magic number", "expected P2 or P5");
  }
  const bool binary = bytes[1] == '5';
  in.advance();
  in.advance();
  const long width = in.read_uint("width");
  const long height = in.read_uint("height");
  const long maxval = in.read_uint("maxval");
  if (width < 1 || height < 1) in.fail("dimensions", "width and height must be positive");
  if (maxval < 1 || maxval > 65535) in.fail("maxval", "maxval must be in [1, 65535]");

  const auto count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  std::vector<double> top_first(count);
  const auto scale = static_cast<double>(maxval);
  if (binary) {
    if (in.remaining() < 1 || !std::isspace(static_cast<unsigned char>(in.peek()))) {
      in.fail("raster", "expected one whitespace byte before the raster");
    }
    in.advance();
    const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
    for (std::size_t i = 0; i < count; ++i) {
      if (in.remaining() < sample_bytes) {
        in.fail("raster", "truncated raster, expected " + std::to_string(count * sample_bytes) +
                              " bytes of pixel data");
      }
      unsigned value = in.byte();
      if (sample_bytes == 2) value = (value << 8) | in.byte();
      if (value > static_cast<unsigned>(maxval)) in.fail("raster", "pixel exceeds maxval");
      top_first[i] = 1.0 - value / scale;
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const long value = in.read_uint("raster");
      if (value > maxval) in.fail("raster", "pixel exceeds maxval");
      top_first[i] = 1.0 - static_cast<double>(value) / scale;
    }
  }
  const int w = static_cast<int>(width);
  const int h = static_cast<int>(height);
  return {w, h, flip_rows(top_first, w, h)};
}

RasterValues parse_csv_grid(std::string_view text) {
  std::vector<double> top_first;
  int width = -1;
  int height = 0;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    int cols = 0;
    std::size_t pos = 0;
    while (true) {
      std::size_t comma = line.find(',', pos);
      if (comma == std::string_view::npos) comma = line.size();
      std::string_view field = line.substr(pos, comma - pos);
      const std::size_t col = pos + 1;
      while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) {
        field.remove_prefix(1);
      }
      while (!field.empty() && (field.back() == ' ' || field.back() == '\t')) {
        field.remove_suffix(1);
      }
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
      if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
        throw ParseError("csv grid: line " + std::to_string(line_no) + ", column " +
                         std::to_string(col) + ": expected a number, got '" +
                         std::string(field) + "'");
      }
      if (!(value >= 0.0 && value <= 1.0)) {
        throw ParseError("csv grid: line " + std::to_string(line_no) + ", column " +
                         std::to_string(col) + ": value " + std::string(field) +
                         " outside [0, 1]");
      }
      top_first.push_back(value);
      ++cols;
      if (comma == line.size()) break;
      pos = comma + 1;
    }
    if (width < 0) {
      width = cols;
    } else if (cols != width) {
      throw ParseError("csv grid: line " + std::to_string(line_no) + " has " +
                       std::to_string(cols) + " values, expected " + std::to_string(width));
    }
    ++height;
  }
  if (height == 0) throw ParseError("csv grid: no rows at line " + std::to_string(line_no));
  return {width, height, flip_rows(top_first, width, height)};
}

std::filesystem::path grid_sidecar_path(const std::filesystem::path& raster) {
  return std::filesystem::path(raster.string() + ".json");
}

GridGeometry load_grid_geometry(const std::filesystem::path& sidecar) {
  const std::string text = read_file(sidecar);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(sidecar.string() + ": byte " + std::to_string(e.byte) + ": " + e.what());
  }
  GridGeometry g;
  try {
    g.resolution = j.at("resolution").get<double>();
    const auto& o = j.at("origin");
    if (!o.is_array() || o.size() != 2) throw ParseError(sidecar.string() + ": origin must be [x, y]");
    g.origin = Eigen::Vector2d(o[0].get<double>(), o[1].get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(sidecar.string() + ": " + e.what());
  }
  if (!(g.resolution > 0.0)) throw ParseError(sidecar.string() + ": resolution must be positive");
  return g;
}

OccupancyGrid load_grid(const std::filesystem::path& path, std::optional<GridFormat> format,
                        std::optional<GridGeometry> geometry) {
  if (!format) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".pgm") {
      format = GridFormat::pgm;
    } else if (ext == ".csv") {
      format = GridFormat::csv;
    } else {
      throw std::invalid_argument("cannot infer map format from extension '" + ext + "'");
    }
  }
  const std::string bytes = read_file(path);
  RasterValues raster;
  try {
    raster = *format == GridFormat::pgm ? parse_pgm(bytes) : parse_csv_grid(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  const GridGeometry g = geometry ? *geometry : load_grid_geometry(grid_sidecar_path(path));
  return OccupancyGrid(raster.width, raster.height, std::move(raster.values), g);
}

}  // namespace span
