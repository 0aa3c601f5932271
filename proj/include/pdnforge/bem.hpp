#pragma once

// Quasi-static inductance between vertical vias in a plane pair of arbitrary
// outline. The in-plane current potential of a via obeys the 2D Laplace
// equation with a magnetic-wall (zero normal derivative) condition on the
// board edge; only the edge is discretized.
//
// Source potential for a unit via current (kernel -ln r):
//   phi_s(x) = -ln|x - s| + pi/(2A) |x - c|^2 + sum_j sigma_j int_j -ln|x - y| ds
// The quadratic term is a uniform areal sink that makes the Neumann problem
// compatible; piecewise-constant densities sigma_j are collocated at segment
// midpoints. The discrete system carries one extra unknown, a small
// correction to the sink strength, so that the midpoint conditions and
// sum_j sigma_j len_j = -1 hold together exactly. Potentials are finally shifted to zero mean over the board area,
// which is the gauge in which the plane-pair capacitance separates exactly
// from the inductive part (the uniform cavity mode).

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "pdnforge/error.hpp"
#include "pdnforge/geometry.hpp"

namespace pdnforge {

inline constexpr double kMu0 = 4.0e-7 * std::numbers::pi;
inline constexpr double kDefaultViaRadius = 0.25e-3;  // m

/// Via positions in meters plus the gauge reference via.
struct ViaLayout {
  std::vector<Point> positions;
  std::vector<double> radii;
  std::size_t reference_index = 0;

  std::size_t size() const { return positions.size(); }
};

inline void validate_layout(const ViaLayout& layout, const BoundaryMesh& mesh) {
  require(!layout.positions.empty(), "via layout is empty");
  require(layout.radii.size() == layout.positions.size(), "via layout: radii/positions size mismatch");
  require(layout.reference_index < layout.size(), "via layout: invalid reference index");
  const std::vector<Point> poly = mesh.polygon();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    require(layout.radii[i] > 0.0, "via layout: radius must be positive");
    require(contains(poly, layout.positions[i], 0.0) &&
                boundary_distance(poly, layout.positions[i]) > layout.radii[i],
            "via " + std::to_string(i) + " is not strictly inside the board");
    for (std::size_t j = 0; j < i; ++j)
      require(norm(layout.positions[i] - layout.positions[j]) > layout.radii[i] + layout.radii[j],
              "vias " + std::to_string(j) + " and " + std::to_string(i) + " overlap");
  }
}

namespace bem_detail {

struct LocalCoords {
  double u, v;
};

inline LocalCoords local(const Segment& s, Point x) {
  const Point t = (1.0 / s.length) * (s.end - s.start);
  const Point d = x - s.start;
  return {dot(d, t), dot(d, s.normal)};
}

inline double antiderivative(double w, double v) {
  const double r2 = w * w + v * v;
  double f = r2 > 0.0 ? 0.5 * w * std::log(r2) - w : 0.0;
  if (v != 0.0) f += v * std::atan(w / v);
  return f;
}

}  // namespace bem_detail

/// int_seg ln|x - y| ds_y, exact for a straight segment.
inline double segment_log_integral(const Segment& s, Point x) {
  const auto [u, v] = bem_detail::local(s, x);
  return bem_detail::antiderivative(u, v) - bem_detail::antiderivative(u - s.length, v);
}

/// Gradient in x of segment_log_integral, for x off the segment.
inline Point segment_log_gradient(const Segment& s, Point x) {
  const auto [u, v] = bem_detail::local(s, x);
  const double L = s.length;
  const double ra2 = u * u + v * v, rb2 = (u - L) * (u - L) + v * v;
  const double du = 0.5 * std::log(ra2 / rb2);
  const double dv = std::atan2(L * v, v * v + u * (u - L));
  const Point t = (1.0 / L) * (s.end - s.start);
  return du * t + dv * s.normal;
}

/// Boundary densities for one source point.
struct BoundaryDensity {
  Point source;
  std::vector<double> sigma;     // one value per segment
  double sink_correction = 0.0;  // extra areal sink strength, ~0 on fine meshes
};

/// Collocation system for one boundary mesh, factorized once and reused for
/// every source.
class BoundarySolver {
 public:
  explicit BoundarySolver(BoundaryMesh mesh) : mesh_(std::move(mesh)) {
    const std::size_t n = mesh_.size();
    require(n >= 3, "boundary mesh needs at least 3 segments");
    require(mesh_.area > 0.0, "boundary mesh must enclose positive (counter-clockwise) area");
    Eigen::MatrixXd a(n + 1, n + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const Segment& si = mesh_.segments[i];
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) {
          a(i, j) = std::numbers::pi;
        } else {
          a(i, j) = -dot(si.normal, segment_log_gradient(mesh_.segments[j], si.mid));
        }
      }
      a(i, n) = dot(si.normal, sink_gradient(si.mid));
      a(n, i) = mesh_.segments[i].length;
    }
    a(n, n) = 0.0;
    lu_.compute(a);
    const double rc = lu_.rcond();
    if (!(rc > 1e-13))
      throw NumericalError("boundary collocation matrix is singular (rcond " + std::to_string(rc) + ")");

    // Area integrals of the single-layer basis, needed for the zero-mean gauge.
    area_log_moment_.resize(n);
    static constexpr double gx[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563,
                                     0.8611363115940526};
    static constexpr double gw[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461,
                                     0.3478548451374538};
    for (std::size_t j = 0; j < n; ++j) {
      const Segment& s = mesh_.segments[j];
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) {
        const double t = 0.5 * (gx[k] + 1.0);
        acc += 0.5 * gw[k] * area_log_integral(s.start + t * (s.end - s.start));
      }
      area_log_moment_[j] = acc * s.length;
    }
    // int_A pi/(2A)|x - c|^2 dA = pi/(2A) * polar moment about the centroid.
    double polar = 0.0;
    const std::vector<Point> poly = mesh_.polygon();
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Point p = poly[i] - mesh_.centroid, q = poly[(i + 1) % poly.size()] - mesh_.centroid;
      const double c = cross(p, q);
      polar += c * (p.x * p.x + p.x * q.x + q.x * q.x + p.y * p.y + p.y * q.y + q.y * q.y);
    }
    polar /= 12.0;
    sink_area_integral_ = std::numbers::pi / (2.0 * mesh_.area) * polar;
  }

  const BoundaryMesh& mesh() const { return mesh_; }

  /// Densities satisfying the magnetic-wall condition at every midpoint with
  /// sum_j sigma_j len_j = -1.
  BoundaryDensity solve(Point source) const {
    const std::size_t n = mesh_.size();
    Eigen::VectorXd rhs(n + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const Segment& s = mesh_.segments[i];
      rhs(i) = -dot(s.normal, incident_gradient(source, s.mid));
    }
    rhs(n) = -1.0;
    const Eigen::VectorXd x = lu_.solve(rhs);
    if (!x.allFinite()) throw NumericalError("boundary solve produced non-finite densities");
    BoundaryDensity d;
    d.source = source;
    d.sigma.assign(x.data(), x.data() + n);
    d.sink_correction = x(n);
    return d;
  }

  /// Raw (un-gauged) potential at x. `self_radius` > 0 evaluates the source
  /// term at that distance instead of |x - s|.
  double potential(const BoundaryDensity& d, Point x, double self_radius = 0.0) const {
    const double r = self_radius > 0.0 ? self_radius : norm(x - d.source);
    double phi = -std::log(r) + (1.0 + d.sink_correction) * sink(x);
    for (std::size_t j = 0; j < mesh_.size(); ++j)
      phi -= d.sigma[j] * segment_log_integral(mesh_.segments[j], x);
    return phi;
  }

  /// Mean of the raw potential over the board area.
  double area_mean(const BoundaryDensity& d) const {
    double total = area_log_integral(d.source) + (1.0 + d.sink_correction) * sink_area_integral_;
    for (std::size_t j = 0; j < mesh_.size(); ++j) total += d.sigma[j] * area_log_moment_[j];
    return total / mesh_.area;
  }

  /// Interior-limit normal derivative of the total potential at fraction
  /// `t` in [0,1] along segment `seg`.
  double normal_derivative(const BoundaryDensity& d, std::size_t seg, double t) const {
    const Segment& s = mesh_.segments[seg];
    const Point x = s.start + t * (s.end - s.start);
    double g = dot(s.normal, incident_gradient(d.source, x) + d.sink_correction * sink_gradient(x));
    for (std::size_t j = 0; j < mesh_.size(); ++j) {
      if (j == seg)
        g += std::numbers::pi * d.sigma[j];
      else
        g -= d.sigma[j] * dot(s.normal, segment_log_gradient(mesh_.segments[j], x));
    }
    return g;
  }

  /// Normal derivative of the source terms alone (point source + areal sink).
  double incident_normal_derivative(Point source, std::size_t seg, double t) const {
    const Segment& s = mesh_.segments[seg];
    return dot(s.normal, incident_gradient(source, s.start + t * (s.end - s.start)));
  }

  /// int_A -ln|x - y| dA_x via the divergence theorem.
  double area_log_integral(Point y) const {
    double q = 0.0;
    for (const Segment& s : mesh_.segments) {
      const double h = dot(s.start - y, s.normal);
      if (h == 0.0) continue;
      q += h * (-0.5 * segment_log_integral(s, y) + 0.25 * s.length);
    }
    return q;
  }

 private:
  double sink(Point x) const {
    const Point d = x - mesh_.centroid;
    return std::numbers::pi / (2.0 * mesh_.area) * dot(d, d);
  }

  Point sink_gradient(Point x) const { return (std::numbers::pi / mesh_.area) * (x - mesh_.centroid); }

  Point incident_gradient(Point source, Point x) const {
    const Point d = x - source;
    const double r2 = dot(d, d);
    return (-1.0 / r2) * d + sink_gradient(x);
  }

  BoundaryMesh mesh_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  std::vector<double> area_log_moment_;
  double sink_area_integral_ = 0.0;
};

/// Free-function form of BoundarySolver::solve.
inline BoundaryDensity solve_boundary(const BoundaryMesh& mesh, Point source) {
  const std::vector<Point> poly = mesh.polygon();
  require(contains(poly, source, 0.0) && boundary_distance(poly, source) > 0.0,
          "solve_boundary: source must be strictly inside the mesh");
  return BoundarySolver(mesh).solve(source);
}

/// Zero-mean-gauge potential matrix g(i, j): potential at via j due to a unit
/// source at via i, self terms taken at the via radius. Not symmetrized.
inline Eigen::MatrixXd via_potential_matrix(const BoundarySolver& solver, const ViaLayout& layout) {
  validate_layout(layout, solver.mesh());
  const std::size_t n = layout.size();
  Eigen::MatrixXd g(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const BoundaryDensity d = solver.solve(layout.positions[i]);
    const double mean = solver.area_mean(d);
    for (std::size_t j = 0; j < n; ++j)
      g(i, j) = solver.potential(d, layout.positions[j], i == j ? layout.radii[i] : 0.0) - mean;
  }
  return g;
}

/// Per-via inductance matrix per meter of cavity thickness (H/m), zero-mean
/// gauge, symmetrized. Entry (i, j) couples the vertical currents of vias i, j.
inline Eigen::MatrixXd via_inductance_matrix(const BoundarySolver& solver, const ViaLayout& layout) {
  const Eigen::MatrixXd g = via_potential_matrix(solver, layout);
  return kMu0 / (2.0 * std::numbers::pi) * 0.5 * (g + g.transpose());
}

inline Eigen::MatrixXd via_inductance_matrix(const BoundaryMesh& mesh, const ViaLayout& layout) {
  return via_inductance_matrix(BoundarySolver(mesh), layout);
}

// ---------------------------------------------------------------------------
// Mesh refinement and extrapolation

/// Cuts every element into `pieces(segment)` equal parts.
template <class F>
BoundaryMesh subdivide(const BoundaryMesh& m, F pieces) {
  BoundaryMesh out;
  out.area = m.area;
  out.centroid = m.centroid;
  for (const Segment& s : m.segments) {
    const int k = std::max(1, pieces(s));
    for (int i = 0; i < k; ++i) {
      Segment t = s;
      t.start = s.start + (static_cast<double>(i) / k) * (s.end - s.start);
      t.end = i + 1 == k ? s.end : s.start + (static_cast<double>(i + 1) / k) * (s.end - s.start);
      t.mid = 0.5 * (t.start + t.end);
      t.length = s.length / k;
      out.segments.push_back(t);
    }
  }
  return out;
}

/// Halves every element.
inline BoundaryMesh split_segments(const BoundaryMesh& m) {
  return subdivide(m, [](const Segment&) { return 2; });
}

/// Splits elements until none is longer than `ratio` times its distance to
/// the nearest via. Vias sitting about a millimeter from the edge need this.
inline BoundaryMesh refine_near_vias(const BoundaryMesh& m, const ViaLayout& layout, double ratio = 1.0) {
  require(ratio > 0.0, "refine_near_vias: ratio must be positive");
  return subdivide(m, [&](const Segment& s) {
    double d = INFINITY;
    for (Point p : layout.positions) d = std::min(d, point_segment_distance(p, s.start, s.end));
    return static_cast<int>(std::min(64.0, std::ceil(s.length / (ratio * d) - 1e-12)));
  });
}

struct BemOptions {
  double via_refine_ratio = 1.0;  // <= 0 disables near-via refinement
  bool extrapolate = true;        // Richardson step over one mesh halving
};

/// Per-via inductance matrix (H/m) on `base` refined near the vias. The
/// collocation error is first order in the element length, so with
/// extrapolation the result is 2 L(h/2) - L(h).
inline Eigen::MatrixXd refined_via_inductance(const BoundaryMesh& base, const ViaLayout& layout,
                                              const BemOptions& opt = {}) {
  const BoundaryMesh mesh = opt.via_refine_ratio > 0.0 ? refine_near_vias(base, layout, opt.via_refine_ratio) : base;
  const Eigen::MatrixXd coarse = via_inductance_matrix(mesh, layout);
  if (!opt.extrapolate) return coarse;
  return 2.0 * via_inductance_matrix(split_segments(mesh), layout) - coarse;
}

/// Loops (via i, reference via) for every non-reference via, in layout order.
struct UnitInductanceMatrix {
  Eigen::MatrixXd lambda;             // H/m, (N-1)x(N-1)
  std::vector<std::size_t> loop_vias;  // via index of each loop
};

/// Loop inductances per unit thickness from a per-via matrix. The four-term
/// combination is independent of the potential gauge.
inline UnitInductanceMatrix loop_inductance(const Eigen::MatrixXd& via_l, std::size_t ref) {
  UnitInductanceMatrix out;
  for (std::size_t i = 0; i < static_cast<std::size_t>(via_l.rows()); ++i)
    if (i != ref) out.loop_vias.push_back(i);
  const auto m = static_cast<Eigen::Index>(out.loop_vias.size());
  out.lambda.resize(m, m);
  const auto r = static_cast<Eigen::Index>(ref);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) {
      const auto i = static_cast<Eigen::Index>(out.loop_vias[a]);
      const auto k = static_cast<Eigen::Index>(out.loop_vias[b]);
      out.lambda(a, b) = via_l(i, k) - via_l(i, r) - via_l(r, k) + via_l(r, r);
    }
  out.lambda = 0.5 * (out.lambda + out.lambda.transpose()).eval();
  return out;
}

inline UnitInductanceMatrix unit_inductance_matrix(const BoundaryMesh& mesh, const ViaLayout& layout) {
  const BoundarySolver solver(mesh);
  const Eigen::MatrixXd g = via_potential_matrix(solver, layout);
  // Built from the raw matrix so the loop values do not depend on the
  // via-level symmetrization.
  return loop_inductance(kMu0 / (2.0 * std::numbers::pi) * g, layout.reference_index);
}

}  // namespace pdnforge
