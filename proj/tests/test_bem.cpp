#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "pdnforge/bem.hpp"
#include "pdnforge/boardgen.hpp"
#include "pdnforge/circuit.hpp"

using namespace pdnforge;

namespace {

BoundaryMesh circle_mesh(double radius_mm, int n) {
  std::vector<Point> v;
  for (int k = 0; k < n; ++k) {
    const double a = 2 * std::numbers::pi * k / n;
    v.push_back({100 + radius_mm * std::cos(a), 100 + radius_mm * std::sin(a)});
  }
  return discretize_boundary(ClosedContour(v), 1000.0);
}

BoundaryMesh square_mesh(double x0, double x1, double target = kDefaultSegmentMm) {
  return discretize_boundary(ClosedContour::rectangle(x0, x0, x1, x1), target);
}

ViaLayout pair_at_center(double d_mm = 2.0) {
  ViaLayout l;
  l.positions = {{0.1 - 0.5e-3 * d_mm, 0.1}, {0.1 + 0.5e-3 * d_mm, 0.1}};
  l.radii = {kDefaultViaRadius, kDefaultViaRadius};
  l.reference_index = 1;
  return l;
}

// Random vias well inside a random outline, at least 3 mm apart.
ViaLayout random_layout(Rng& rng, const ClosedContour& c, int n) {
  const std::vector<Point> poly = c.vertices();
  ViaLayout l;
  while (static_cast<int>(l.size()) < n) {
    const Point p{rng.uniform(0, 200), rng.uniform(0, 200)};
    if (!contains(poly, p, 0.0) || boundary_distance(poly, p) < 2.0) continue;
    bool ok = true;
    for (Point q : l.positions) ok = ok && norm(1e-3 * p - q) > 3e-3;
    if (!ok) continue;
    l.positions.push_back(1e-3 * p);
    l.radii.push_back(kDefaultViaRadius);
  }
  return l;
}

}  // namespace

TEST(Boundary, CircleCenterSourceGivesConstantDensity) {
  const BoundaryMesh mesh = circle_mesh(80, 128);
  const BoundaryDensity d = solve_boundary(mesh, {0.1, 0.1});
  const auto [lo, hi] = std::minmax_element(d.sigma.begin(), d.sigma.end());
  EXPECT_LT((*hi - *lo) / std::abs(*hi), 1e-6);
}

TEST(Boundary, NetDensityIsMinusOne) {
  Rng rng(4);
  for (int i = 0; i < 10; ++i) {
    const ClosedContour c = generate_random_contour(rng);
    const BoundaryMesh mesh = discretize_boundary(c);
    const ViaLayout l = random_layout(rng, c, 1);
    const BoundaryDensity d = solve_boundary(mesh, l.positions[0]);
    double s = 0;
    for (std::size_t j = 0; j < mesh.size(); ++j) s += d.sigma[j] * mesh.segments[j].length;
    EXPECT_NEAR(s, -1.0, 1e-9);
  }
}

TEST(Boundary, MidpointResidualVanishes) {
  const BoundaryMesh mesh = square_mesh(0, 100);
  const BoundarySolver solver(mesh);
  const BoundaryDensity d = solver.solve({0.03, 0.055});
  double scale = 0;
  for (std::size_t j = 0; j < mesh.size(); ++j)
    scale = std::max(scale, std::abs(solver.incident_normal_derivative(d.source, j, 0.5)));
  for (std::size_t j = 0; j < mesh.size(); ++j) EXPECT_LT(std::abs(solver.normal_derivative(d, j, 0.5)), 1e-10 * scale);
}

TEST(Boundary, QuarterPointResidual) {
  const BoundaryMesh mesh = square_mesh(0, 100);
  const BoundarySolver solver(mesh);
  const BoundaryDensity d = solver.solve({0.03, 0.055});
  double scale = 0, worst = 0;
  for (std::size_t j = 0; j < mesh.size(); ++j)
    for (double t : {0.25, 0.75}) {
      scale = std::max(scale, std::abs(solver.incident_normal_derivative(d.source, j, t)));
      worst = std::max(worst, std::abs(solver.normal_derivative(d, j, t)));
    }
  RecordProperty("relative_quarter_point_residual", std::to_string(worst / scale));
  EXPECT_LT(worst, 1e-3 * scale);
}

TEST(Boundary, SourceOutsideIsPreconditionError) {
  EXPECT_THROW(solve_boundary(square_mesh(0, 100), {0.15, 0.05}), PreconditionError);
}

TEST(Inductance, TwoWireLoopMatchesClosedForm) {
  const UnitInductanceMatrix u = unit_inductance_matrix(square_mesh(0, 200), pair_at_center());
  ASSERT_EQ(u.lambda.rows(), 1);
  const double expected = 4e-7 * std::log(8.0);
  EXPECT_NEAR(u.lambda(0, 0), expected, 0.05 * expected);
  EXPECT_NEAR(u.lambda(0, 0), 8.32e-7, 0.05 * 8.32e-7);
}

TEST(Inductance, SymmetricAndPositiveDefinite) {
  Rng rng(21);
  for (int i = 0; i < 20; ++i) {
    const ClosedContour c = generate_random_contour(rng);
    ViaLayout l = random_layout(rng, c, 12);
    l.reference_index = rng.index(l.size());
    const UnitInductanceMatrix u = unit_inductance_matrix(discretize_boundary(c), l);
    EXPECT_EQ(u.lambda, u.lambda.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(u.lambda);
    EXPECT_EQ(llt.info(), Eigen::Success);
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(u.lambda).eigenvalues().minCoeff(), 0.0);
  }
}

TEST(Inductance, RelabelingPermutes) {
  Rng rng(8);
  const ClosedContour c = generate_random_contour(rng);
  const BoundaryMesh mesh = discretize_boundary(c);
  ViaLayout l = random_layout(rng, c, 6);
  l.reference_index = 0;
  const UnitInductanceMatrix a = unit_inductance_matrix(mesh, l);
  std::swap(l.positions[2], l.positions[4]);
  const UnitInductanceMatrix b = unit_inductance_matrix(mesh, l);
  // loops are vias 1..5, so vias 2 and 4 are loops 1 and 3
  Eigen::PermutationMatrix<Eigen::Dynamic> p(5);
  p.indices() << 0, 3, 2, 1, 4;
  const Eigen::MatrixXd permuted = p.transpose() * a.lambda * p;
  EXPECT_LT((permuted - b.lambda).cwiseAbs().maxCoeff(), 1e-12 * a.lambda.cwiseAbs().maxCoeff());
}

TEST(Inductance, SegmentDoublingChangesLessThanOnePercent) {
  // default pipeline on generated boards: base mesh at the default target,
  // near-via refinement, one extrapolation step
  Rng rng(33);
  for (int i = 0; i < 12; ++i) {
    const PhysicalBoard b = sample_physical_board(rng);
    const ViaLayout l = make_board_vias(b.ports, kDefaultViaRadius).layout;
    const BoundaryMesh base = discretize_boundary(b.contour, kDefaultSegmentMm);
    const Eigen::MatrixXd a = loop_inductance(refined_via_inductance(base, l), l.reference_index).lambda;
    const Eigen::MatrixXd c = loop_inductance(refined_via_inductance(split_segments(base), l), l.reference_index).lambda;
    EXPECT_LT(((c - a).array() / a.array()).abs().maxCoeff(), 0.01) << "board " << i;
  }
}

TEST(Inductance, RefinementBoundsElementLength) {
  Rng rng(2);
  const PhysicalBoard b = sample_physical_board(rng);
  const ViaLayout l = make_board_vias(b.ports, kDefaultViaRadius).layout;
  const BoundaryMesh base = discretize_boundary(b.contour);
  const BoundaryMesh m = refine_near_vias(base, l, 1.0);
  EXPECT_GE(m.size(), base.size());
  EXPECT_NEAR(m.perimeter(), base.perimeter(), 1e-12);
  for (const Segment& s : m.segments) {
    double d = INFINITY;
    for (Point p : l.positions) d = std::min(d, point_segment_distance(p, s.start, s.end));
    EXPECT_LE(s.length, d * (1 + 1e-9));
  }
  const BoundaryMesh h = split_segments(base);
  ASSERT_EQ(h.size(), 2 * base.size());
  EXPECT_NEAR(h.perimeter(), base.perimeter(), 1e-12);
}

TEST(Inductance, RefinedMatrixPositiveDefinite) {
  Rng rng(44);
  for (int i = 0; i < 5; ++i) {
    const PhysicalBoard b = sample_physical_board(rng);
    const ViaLayout l = make_board_vias(b.ports, kDefaultViaRadius).layout;
    const UnitInductanceMatrix u = loop_inductance(refined_via_inductance(discretize_boundary(b.contour), l), l.reference_index);
    EXPECT_EQ(Eigen::LLT<Eigen::MatrixXd>(u.lambda).info(), Eigen::Success);
  }
}

TEST(Inductance, GrowingBoardApproachesFreeSpace) {
  const double free_space = 4e-7 * std::log(8.0);
  double prev_gap = INFINITY;
  for (double half : {10.0, 20.0, 40.0, 70.0, 100.0}) {
    const UnitInductanceMatrix u = unit_inductance_matrix(square_mesh(100 - half, 100 + half, 2.0), pair_at_center());
    const double gap = std::abs(u.lambda(0, 0) - free_space);
    EXPECT_LT(gap, prev_gap) << "half side " << half;
    prev_gap = gap;
  }
}

TEST(Inductance, OverlappingViasRejected) {
  ViaLayout l = pair_at_center(0.4);
  EXPECT_THROW(unit_inductance_matrix(square_mesh(0, 200), l), PreconditionError);
}
