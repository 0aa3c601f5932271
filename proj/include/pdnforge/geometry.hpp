#pragma once

// Board outlines, the 16x16 occupancy grid, boundary meshes and port placement.
// Contours and masks are in millimeters; BoundaryMesh is in meters because it
// feeds the field solver directly.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "pdnforge/error.hpp"
#include "pdnforge/rng.hpp"

namespace pdnforge {

inline constexpr int kGridSize = 16;
inline constexpr double kBoardSideMm = 200.0;
inline constexpr double kCellPitchMm = kBoardSideMm / kGridSize;  // 12.5
inline constexpr double kViaSpacingMm = 2.0;
inline constexpr double kDefaultSegmentMm = 5.0;
inline constexpr int kSplineSamplesPerSpan = 32;

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Point a, Point b) = default;
};

inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point a) { return std::hypot(a.x, a.y); }

// ---------------------------------------------------------------------------
// Polygon helpers

/// Signed shoelace area; positive for counter-clockwise vertex order.
inline double signed_area(const std::vector<Point>& v) {
  double a = 0.0;
  for (std::size_t i = 0, n = v.size(); i < n; ++i) a += cross(v[i], v[(i + 1) % n]);
  return 0.5 * a;
}

inline Point polygon_centroid(const std::vector<Point>& v) {
  double a = 0.0, cx = 0.0, cy = 0.0;
  for (std::size_t i = 0, n = v.size(); i < n; ++i) {
    const Point p = v[i], q = v[(i + 1) % n];
    const double c = cross(p, q);
    a += c;
    cx += (p.x + q.x) * c;
    cy += (p.y + q.y) * c;
  }
  a *= 0.5;
  return {cx / (6.0 * a), cy / (6.0 * a)};
}

inline double perimeter(const std::vector<Point>& v) {
  double s = 0.0;
  for (std::size_t i = 0, n = v.size(); i < n; ++i) s += norm(v[(i + 1) % n] - v[i]);
  return s;
}

inline double point_segment_distance(Point p, Point a, Point b) {
  const Point ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return norm(p - (a + t * ab));
}

/// Even-odd containment. Points within `tol` of an edge count as inside.
inline bool contains(const std::vector<Point>& poly, Point p, double tol = 1e-9) {
  const std::size_t n = poly.size();
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point a = poly[i], b = poly[j];
    if (point_segment_distance(p, a, b) <= tol) return true;
    if ((a.y > p.y) != (b.y > p.y)) {
      const double xi = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < xi) inside = !inside;
    }
  }
  return inside;
}

/// Minimum distance from `p` to the polygon outline.
inline double boundary_distance(const std::vector<Point>& poly, Point p) {
  double d = INFINITY;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i)
    d = std::min(d, point_segment_distance(p, poly[i], poly[(i + 1) % n]));
  return d;
}

namespace detail {

inline int orientation(Point a, Point b, Point c) {
  const double v = cross(b - a, c - a);
  const double scale = std::max({norm(b - a), norm(c - a), 1e-300});
  if (std::abs(v) <= 1e-12 * scale * scale) return 0;
  return v > 0 ? 1 : -1;
}

inline bool on_segment(Point a, Point b, Point p) {
  return std::min(a.x, b.x) - 1e-12 <= p.x && p.x <= std::max(a.x, b.x) + 1e-12 &&
         std::min(a.y, b.y) - 1e-12 <= p.y && p.y <= std::max(a.y, b.y) + 1e-12;
}

inline bool segments_intersect(Point p1, Point p2, Point q1, Point q2) {
  const int o1 = orientation(p1, p2, q1), o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1), o4 = orientation(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(p1, p2, q1)) return true;
  if (o2 == 0 && on_segment(p1, p2, q2)) return true;
  if (o3 == 0 && on_segment(q1, q2, p1)) return true;
  if (o4 == 0 && on_segment(q1, q2, p2)) return true;
  return false;
}

}  // namespace detail

/// True when no two non-adjacent edges touch.
inline bool is_simple(const std::vector<Point>& v) {
  const std::size_t n = v.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Point a = v[i], b = v[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (detail::segments_intersect(a, b, v[j], v[(j + 1) % n])) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// ClosedContour

/// Simple polygon in millimeters, implicitly closed.
class ClosedContour {
 public:
  ClosedContour() = default;

  /// Validates every invariant; throws PreconditionError otherwise.
  explicit ClosedContour(std::vector<Point> vertices, double bounds = kBoardSideMm)
      : vertices_(std::move(vertices)) {
    require(vertices_.size() >= 3, "contour needs at least 3 vertices");
    for (std::size_t i = 0, n = vertices_.size(); i < n; ++i) {
      const Point p = vertices_[i];
      require(p.x >= 0.0 && p.x <= bounds && p.y >= 0.0 && p.y <= bounds,
              "contour vertex outside board bounds");
      require(norm(vertices_[(i + 1) % n] - p) > 1e-9, "consecutive contour vertices coincide");
    }
    require(is_simple(vertices_), "contour self-intersects");
  }

  const std::vector<Point>& vertices() const { return vertices_; }
  std::size_t size() const { return vertices_.size(); }
  double area() const { return std::abs(signed_area(vertices_)); }
  bool contains(Point p) const { return pdnforge::contains(vertices_, p); }

  static ClosedContour rectangle(double x0, double y0, double x1, double y1) {
    return ClosedContour({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}});
  }

  friend bool operator==(const ClosedContour&, const ClosedContour&) = default;

 private:
  std::vector<Point> vertices_;
};

namespace detail {

// Centripetal Catmull-Rom (Barry-Goldman pyramid) between p1 and p2.
inline Point catmull_rom(Point p0, Point p1, Point p2, Point p3, double u) {
  auto knot = [](double t, Point a, Point b) { return t + std::sqrt(std::max(norm(b - a), 1e-12)); };
  const double t0 = 0.0, t1 = knot(t0, p0, p1), t2 = knot(t1, p1, p2), t3 = knot(t2, p2, p3);
  const double t = t1 + u * (t2 - t1);
  auto lerp = [](Point a, Point b, double ta, double tb, double tt) {
    return ((tb - tt) / (tb - ta)) * a + ((tt - ta) / (tb - ta)) * b;
  };
  const Point a1 = lerp(p0, p1, t0, t1, t), a2 = lerp(p1, p2, t1, t2, t), a3 = lerp(p2, p3, t2, t3, t);
  const Point b1 = lerp(a1, a2, t0, t2, t), b2 = lerp(a2, a3, t1, t3, t);
  return lerp(b1, b2, t1, t2, t);
}

inline bool collinear(const std::vector<Point>& pts) {
  for (std::size_t i = 2; i < pts.size(); ++i)
    if (orientation(pts[0], pts[1], pts[i]) != 0) return false;
  return true;
}

}  // namespace detail

/// Periodic centripetal Catmull-Rom through `knots`, sampled per span.
inline std::vector<Point> smooth_closed(const std::vector<Point>& knots,
                                        int samples_per_span = kSplineSamplesPerSpan) {
  const std::size_t n = knots.size();
  std::vector<Point> out;
  out.reserve(n * static_cast<std::size_t>(samples_per_span));
  for (std::size_t i = 0; i < n; ++i) {
    const Point p0 = knots[(i + n - 1) % n], p1 = knots[i], p2 = knots[(i + 1) % n],
                p3 = knots[(i + 2) % n];
    for (int s = 0; s < samples_per_span; ++s)
      out.push_back(detail::catmull_rom(p0, p1, p2, p3, static_cast<double>(s) / samples_per_span));
  }
  return out;
}

/// Random organic board outline: `n_points` uniform samples in the square,
/// ordered by polar angle about their centroid and joined by a closed spline.
inline ClosedContour generate_random_contour(Rng& rng, int n_points = 8,
                                             double bounds = kBoardSideMm) {
  require(n_points >= 3, "generate_random_contour: n_points must be >= 3");
  require(bounds > 0.0, "generate_random_contour: bounds must be positive");
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<Point> pts(static_cast<std::size_t>(n_points));
    for (auto& p : pts) {
      p.x = rng.uniform(0.0, bounds);
      p.y = rng.uniform(0.0, bounds);
    }
    if (detail::collinear(pts)) continue;
    Point c{};
    for (const auto& p : pts) c = c + p;
    c = (1.0 / n_points) * c;
    std::sort(pts.begin(), pts.end(), [c](Point a, Point b) {
      return std::atan2(a.y - c.y, a.x - c.x) < std::atan2(b.y - c.y, b.x - c.x);
    });
    const std::vector<Point> poly = smooth_closed(pts);
    bool ok = std::abs(signed_area(poly)) >= 0.01 * bounds * bounds;
    for (std::size_t i = 0; ok && i < poly.size(); ++i) {
      const Point p = poly[i];
      ok = p.x >= 0.0 && p.x <= bounds && p.y >= 0.0 && p.y <= bounds &&
           norm(poly[(i + 1) % poly.size()] - p) > 1e-9;
    }
    if (!ok || !is_simple(poly)) continue;
    return ClosedContour(poly, bounds);
  }
  throw DegenerateGeometryError("generate_random_contour: no valid outline after 100 attempts");
}

// ---------------------------------------------------------------------------
// BoardMask

struct Cell {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

/// Center of a grid cell in millimeters. Row 0 is the lowest y band.
inline Point cell_center(Cell c) {
  return {(c.col + 0.5) * kCellPitchMm, (c.row + 0.5) * kCellPitchMm};
}

/// 16x16 board occupancy; 1 marks a board cell.
class BoardMask {
 public:
  using Grid = std::array<std::array<std::uint8_t, kGridSize>, kGridSize>;

  BoardMask() : cells_{} {}
  explicit BoardMask(const Grid& cells) : cells_(cells) {}

  std::uint8_t at(int row, int col) const { return cells_[row][col]; }
  std::uint8_t at(Cell c) const { return cells_[c.row][c.col]; }
  void set(int row, int col, std::uint8_t v) { cells_[row][col] = v; }
  const Grid& grid() const { return cells_; }

  int count() const {
    int n = 0;
    for (const auto& r : cells_)
      for (auto v : r) n += v != 0;
    return n;
  }

  /// Board cells in row-major order.
  std::vector<Cell> board_cells() const {
    std::vector<Cell> out;
    for (int r = 0; r < kGridSize; ++r)
      for (int c = 0; c < kGridSize; ++c)
        if (cells_[r][c]) out.push_back({r, c});
    return out;
  }

  friend bool operator==(const BoardMask&, const BoardMask&) = default;

 private:
  Grid cells_;
};

/// Labels 4-connected components of 1-cells; returns component id per cell (-1 for 0-cells).
inline std::array<std::array<int, kGridSize>, kGridSize> label_components(const BoardMask& m,
                                                                          int* n_components = nullptr) {
  std::array<std::array<int, kGridSize>, kGridSize> label;
  for (auto& r : label) r.fill(-1);
  int next = 0;
  for (int r0 = 0; r0 < kGridSize; ++r0)
    for (int c0 = 0; c0 < kGridSize; ++c0) {
      if (!m.at(r0, c0) || label[r0][c0] >= 0) continue;
      std::queue<Cell> q;
      q.push({r0, c0});
      label[r0][c0] = next;
      while (!q.empty()) {
        const Cell cur = q.front();
        q.pop();
        constexpr int dr[] = {1, -1, 0, 0}, dc[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int r = cur.row + dr[k], c = cur.col + dc[k];
          if (r < 0 || c < 0 || r >= kGridSize || c >= kGridSize) continue;
          if (!m.at(r, c) || label[r][c] >= 0) continue;
          label[r][c] = next;
          q.push({r, c});
        }
      }
      ++next;
    }
  if (n_components) *n_components = next;
  return label;
}

/// Cell-center containment without connectivity filtering.
inline BoardMask rasterize_raw(const ClosedContour& contour) {
  BoardMask m;
  for (int r = 0; r < kGridSize; ++r)
    for (int c = 0; c < kGridSize; ++c) m.set(r, c, contour.contains(cell_center({r, c})) ? 1 : 0);
  return m;
}

/// 16x16 mask of the outline, reduced to its largest 4-connected component
/// (ties go to the component found first in row-major order).
inline BoardMask rasterize_contour(const ClosedContour& contour) {
  const BoardMask raw = rasterize_raw(contour);
  int n = 0;
  const auto label = label_components(raw, &n);
  if (n == 0) throw DegenerateGeometryError("rasterize_contour: no cell center inside the outline");
  std::vector<int> sizes(static_cast<std::size_t>(n), 0);
  for (const auto& r : label)
    for (int v : r)
      if (v >= 0) ++sizes[static_cast<std::size_t>(v)];
  const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  BoardMask m;
  for (int r = 0; r < kGridSize; ++r)
    for (int c = 0; c < kGridSize; ++c) m.set(r, c, label[r][c] == keep ? 1 : 0);
  return m;
}

// ---------------------------------------------------------------------------
// BoundaryMesh

struct Segment {
  Point start;   // m
  Point end;     // m
  Point mid;     // m
  Point normal;  // outward unit normal
  double length = 0.0;
};

/// Closed chain of straight boundary elements, counter-clockwise, in meters.
struct BoundaryMesh {
  std::vector<Segment> segments;
  double area = 0.0;  // enclosed polygon area, m^2
  Point centroid;     // m

  std::size_t size() const { return segments.size(); }
  double perimeter() const {
    double s = 0.0;
    for (const auto& seg : segments) s += seg.length;
    return s;
  }
  /// Polygon traced by the segment start points.
  std::vector<Point> polygon() const {
    std::vector<Point> p;
    p.reserve(segments.size());
    for (const auto& s : segments) p.push_back(s.start);
    return p;
  }
};

/// Splits every contour edge into ceil(len / target_len) equal segments.
inline BoundaryMesh discretize_boundary(const ClosedContour& contour,
                                        double target_len_mm = kDefaultSegmentMm) {
  require(target_len_mm > 0.0, "discretize_boundary: target length must be positive");
  std::vector<Point> v = contour.vertices();
  if (signed_area(v) < 0.0) std::reverse(v.begin(), v.end());
  constexpr double mm = 1e-3;
  BoundaryMesh mesh;
  for (std::size_t i = 0, n = v.size(); i < n; ++i) {
    const Point a = mm * v[i], b = mm * v[(i + 1) % n];
    const double len = norm(b - a);
    const int pieces = std::max(1, static_cast<int>(std::ceil(len / (target_len_mm * mm) - 1e-12)));
    const Point t = (1.0 / len) * (b - a);
    const Point nrm{t.y, -t.x};
    for (int k = 0; k < pieces; ++k) {
      Segment s;
      s.start = a + (static_cast<double>(k) / pieces) * (b - a);
      s.end = k + 1 == pieces ? b : a + (static_cast<double>(k + 1) / pieces) * (b - a);
      s.mid = 0.5 * (s.start + s.end);
      s.normal = nrm;
      s.length = len / pieces;
      mesh.segments.push_back(s);
    }
  }
  std::vector<Point> vm;
  vm.reserve(v.size());
  for (const auto& p : v) vm.push_back(mm * p);
  mesh.area = signed_area(vm);
  mesh.centroid = polygon_centroid(vm);
  return mesh;
}

// ---------------------------------------------------------------------------
// Ports

enum class Side : std::uint8_t { top = 0, bottom = 1 };

struct DecapPort {
  Cell cell;
  Side side = Side::top;
  friend bool operator==(const DecapPort&, const DecapPort&) = default;
};

/// IC port plus decap ports. Every port is a power/ground via pair 2 mm
/// apart along +x, centered in its cell.
struct PortSet {
  Cell ic_cell;
  std::vector<DecapPort> decap_ports;

  static Point power_via_mm(Cell c) { return cell_center(c) - Point{0.5 * kViaSpacingMm, 0.0}; }
  static Point ground_via_mm(Cell c) { return cell_center(c) + Point{0.5 * kViaSpacingMm, 0.0}; }

  friend bool operator==(const PortSet&, const PortSet&) = default;
};

inline constexpr int kMaxDecaps = 19;

/// Places the IC uniformly on a board cell (top side), then each decap on a
/// uniformly chosen free (cell, side) slot.
inline PortSet place_ports(Rng& rng, const BoardMask& mask, int n_decaps) {
  require(n_decaps >= 0 && n_decaps <= kMaxDecaps, "place_ports: n_decaps must be in [0, 19]");
  const std::vector<Cell> cells = mask.board_cells();
  const std::size_t slots = 2 * cells.size();
  if (cells.empty() || slots < static_cast<std::size_t>(n_decaps) + 1)
    throw CapacityError("place_ports: mask has " + std::to_string(slots) + " slots, need " +
                        std::to_string(n_decaps + 1));
  PortSet ports;
  ports.ic_cell = cells[rng.index(cells.size())];
  std::vector<DecapPort> free;
  free.reserve(slots);
  for (const Cell c : cells)
    for (Side s : {Side::top, Side::bottom})
      if (!(c == ports.ic_cell && s == Side::top)) free.push_back({c, s});
  for (int k = 0; k < n_decaps; ++k) {
    const std::size_t j = static_cast<std::size_t>(k) + rng.index(free.size() - static_cast<std::size_t>(k));
    std::swap(free[static_cast<std::size_t>(k)], free[j]);
    ports.decap_ports.push_back(free[static_cast<std::size_t>(k)]);
  }
  return ports;
}

}  // namespace pdnforge
