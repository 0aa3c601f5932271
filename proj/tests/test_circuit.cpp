#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "oracles/cavity_model.hpp"
#include "pdnforge/solver.hpp"
#include "support/brute_force.hpp"

using namespace pdnforge;

namespace {

Stackup four_layer() { return {{Net::ground, Net::power, Net::ground, Net::ground}, {0.3, 0.8, 0.5}, kEpsR}; }

PortSet rect_ports() {
  PortSet p;
  p.ic_cell = {3, 4};
  p.decap_ports = {{{2, 2}, Side::top}, {{4, 5}, Side::bottom}, {{1, 6}, Side::top}};
  return p;
}

double rel(cplx a, cplx b) { return std::abs(a - b) / std::abs(b); }

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Decap, SeriesResonanceGivesEsr) {
  for (const DecapModel& m : kDecapCatalog) EXPECT_NEAR(std::abs(decap_impedance(m, series_resonance(m))), m.esr, 1e-12 * m.esr + 1e-15);
}

TEST(Decap, CapacitiveRegime) {
  EXPECT_NEAR(std::abs(decap_impedance(decap_from_catalog(6), 1e4)), 1.0 / (2 * std::numbers::pi * 1e4 * 10e-6), 1e-3);
  EXPECT_NEAR(std::abs(decap_impedance(decap_from_catalog(6), 1e4)), 1.59, 0.01);
}

TEST(Decap, Number4ResonatesInBand) {
  const double f0 = series_resonance(decap_from_catalog(4));
  EXPECT_NEAR(f0, 1.0 / (2 * std::numbers::pi * std::sqrt(0.2e-9 * 2.2e-6)), 1e-6);
  EXPECT_NEAR(f0, 7.59e6, 0.01e6);
  EXPECT_GT(f0, kFreqStart);
  EXPECT_LT(f0, kFreqStop);
}

TEST(Decap, CatalogEnds) {
  EXPECT_EQ(decap_from_catalog(1).capacitance, 0.1e-6);
  EXPECT_EQ(decap_from_catalog(1).esl, 0.19e-9);
  EXPECT_EQ(decap_from_catalog(1).esr, 34.7e-3);
  EXPECT_EQ(decap_from_catalog(10).capacitance, 330e-6);
  EXPECT_EQ(decap_from_catalog(10).esl, 0.46e-9);
  EXPECT_EQ(decap_from_catalog(10).esr, 1.2e-3);
  EXPECT_THROW(decap_from_catalog(0), PreconditionError);
  EXPECT_THROW(decap_impedance(decap_from_catalog(1), 0.0), PreconditionError);
}

TEST(Cavity, ParallelPlate) {
  EXPECT_NEAR(cavity_capacitance(0.04, 1e-4), 15.58e-9, 0.01e-9);
  EXPECT_NEAR(cavity_capacitance(0.04, 2e-4), 0.5 * cavity_capacitance(0.04, 1e-4), 1e-20);
  EXPECT_THROW(cavity_capacitance(1e-9, 1e-4), PreconditionError);
}

TEST(Grid, LogSpaced132) {
  const FrequencyGrid g = make_frequency_grid();
  ASSERT_EQ(g.size(), 132u);
  EXPECT_EQ(g.points.front(), 1e4);
  EXPECT_EQ(g.points.back(), 2e7);
  const double ratio = g.points[1] / g.points[0];
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_NEAR(g.points[i] / g.points[i - 1], ratio, 1e-12);
}

TEST(Nodal, TwoLayerLumpedLimit) {
  // Single cavity, one via pair: the ground via's lower node floats, so the
  // port sees the power via's own inductance in series with the plates.
  const Stackup s{{Net::ground, Net::power}, {0.4}, kEpsR};
  PortSet p;
  p.ic_cell = {8, 8};
  const BoardVias vias = make_board_vias(p);
  const ClosedContour outline = ClosedContour::rectangle(20, 30, 180, 150);
  const Eigen::MatrixXd unit_l = via_inductance_matrix(discretize_boundary(outline), vias.layout);
  const double area = outline.area() * 1e-6;
  const FrequencyGrid grid = make_frequency_grid(20, 1e4, 1e6);
  const ZMatrixSet z = assemble_and_solve(area, s, vias, unit_l, grid);
  const double l = 0.4e-3 * unit_l(0, 0), c = cavity_capacitance(area, 0.4e-3);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double w = 2 * std::numbers::pi * grid.points[i];
    const cplx expected = cplx(0, w * l) + 1.0 / cplx(0, w * c);
    EXPECT_LT(std::abs(std::abs(z.z[i](0, 0)) - std::abs(expected)), 0.01 * std::abs(expected));
  }
}

TEST(Nodal, ReciprocityAndPassivity) {
  Rng rng(12);
  for (int i = 0; i < 5; ++i) {
    const BoardCase c = sample_board_case(rng, 12, i);
    const ZMatrixSet z = solve_board(c.contour, c.stackup, c.ports, make_frequency_grid());
    EXPECT_LT(z.max_asymmetry, 1e-9);
    for (const auto& m : z.z) {
      EXPECT_EQ(m, m.transpose());
      for (Eigen::Index k = 0; k < m.rows(); ++k) EXPECT_GE(m(k, k).real(), -1e-12);
    }
    const ImpedanceCurve curve = attach_decaps(z, assignment_from_indices(c.decap_indices));
    for (cplx v : curve.z) EXPECT_GE(v.real(), -1e-9);
  }
}

TEST(Nodal, RectangularBoardMatchesCavityModel) {
  const double a = 0.15, b = 0.1;
  const ClosedContour outline = ClosedContour::rectangle(0, 0, 1e3 * a, 1e3 * b);
  const Stackup s = four_layer();
  const BoardVias vias = make_board_vias(rect_ports());
  const FrequencyGrid grid = make_frequency_grid();
  const double area = a * b;
  const Eigen::MatrixXd unit_l = refined_via_inductance(discretize_boundary(outline), vias.layout);
  const ZMatrixSet bem = assemble_and_solve(area, s, vias, unit_l, grid);

  const oracle::RectangularCavity cav(a, b);
  const NodalNetwork net(s, vias, area);
  const ZMatrixSet ref = solve_ports(
      net, [&](double f) { return invert_unit_inductance(cav.unit_inductance(vias.layout, f)); }, grid);
  double worst = 0;
  for (std::size_t i = 0; i < grid.size(); ++i)
    worst = std::max(worst, std::abs(to_db(bem.z[i](0, 0)) - to_db(ref.z[i](0, 0))));
  RecordProperty("worst_db_error", std::to_string(worst));
  EXPECT_LT(worst, 0.5);
}

TEST(Attach, AllOpenLeavesIcUnchanged) {
  Rng rng(1);
  const BoardCase c = sample_board_case(rng, 0, 1);
  const ZMatrixSet z = solve_board(c.contour, c.stackup, c.ports, make_frequency_grid());
  const ImpedanceCurve curve = attach_decaps(z, DecapAssignment(z.ports() - 1));
  for (std::size_t i = 0; i < z.grid.size(); ++i) EXPECT_EQ(curve.z[i], z.z[i](0, 0));
}

TEST(Attach, HugeEsrActsOpen) {
  // Full-size board with thin gaps: the bare-board impedance stays well
  // below 1 kOhm, so a 1 GOhm decap must leave Z_ic alone to 1e-6.
  BoardCase c;
  c.contour = ClosedContour::rectangle(0, 0, 200, 200);
  c.mask = rasterize_contour(c.contour);
  c.stackup = {{Net::ground, Net::power, Net::ground, Net::ground}, {0.1, 0.1, 0.8}, kEpsR};
  Rng rng(2);
  c.ports = place_ports(rng, c.mask, 6);
  const ZMatrixSet z = solve_board(c.contour, c.stackup, c.ports, make_frequency_grid());
  DecapAssignment a(z.ports() - 1);
  a[3] = DecapModel{1e-6, 0.2e-9, 1e9};
  const ImpedanceCurve curve = attach_decaps(z, a);
  for (std::size_t i = 0; i < z.grid.size(); ++i)
    EXPECT_LT(std::abs(curve.z[i] - z.z[i](0, 0)), 1e-6 * std::abs(z.z[i](0, 0)));
}

TEST(Attach, HugeEsrPerturbationScalesAsCouplingSquaredOverR) {
  // On small boards the bare impedance reaches kOhms at 10 kHz, so the
  // residual effect is bounded by |z_pd|^2 / R rather than by 1e-6 |z_pp|.
  Rng rng(2);
  const BoardCase c = sample_board_case(rng, 0, 2);
  const ZMatrixSet z = solve_board(c.contour, c.stackup, c.ports, make_frequency_grid());
  DecapAssignment a(z.ports() - 1);
  a[3] = DecapModel{1e-6, 0.2e-9, 1e9};
  const ImpedanceCurve curve = attach_decaps(z, a);
  for (std::size_t i = 0; i < z.grid.size(); ++i) {
    const double zpd = std::abs(z.z[i](0, 4)), zdd = std::abs(z.z[i](4, 4));
    EXPECT_LE(std::abs(curve.z[i] - z.z[i](0, 0)), 1.0001 * zpd * zpd / (1e9 - zdd));
  }
}

TEST(Attach, MatchesFullNodalResolve) {
  Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    const BoardCase c = sample_board_case(rng, 5 + 7 * trial, trial);
    const BoardVias vias = make_board_vias(c.ports);
    const Eigen::MatrixXd unit_l = refined_via_inductance(discretize_boundary(c.contour), vias.layout);
    const double area = c.contour.area() * 1e-6;
    const FrequencyGrid grid = make_frequency_grid();
    const DecapAssignment a = assignment_from_indices(c.decap_indices);
    const ImpedanceCurve curve = attach_decaps(assemble_and_solve(area, c.stackup, vias, unit_l, grid), a);
    const NodalNetwork net(c.stackup, vias, area);
    const std::vector<cplx> ref = pdnforge::testing::brute_force_ic(net, invert_unit_inductance(unit_l), grid, a);
    for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_LT(rel(curve.z[i], ref[i]), 1e-9) << "f index " << i;
  }
}

TEST(Attach, WrongLengthIsPreconditionError) {
  Rng rng(4);
  const BoardCase c = sample_board_case(rng, 3, 4);
  const ZMatrixSet z = solve_board(c.contour, c.stackup, c.ports, make_frequency_grid(4));
  EXPECT_THROW(attach_decaps(z, DecapAssignment(3)), PreconditionError);
}

TEST(Attach, AddingDecapShuntsAtItsResonance) {
  Rng rng(5);
  for (int trial = 0; trial < 4; ++trial) {
    const BoardCase c = sample_board_case(rng, 6, trial);
    // pick an open port and a catalog entry, then evaluate at its resonance
    std::size_t port = 0;
    while (c.decap_indices[port] != 0) ++port;
    const int number = 1 + trial * 3;
    const FrequencyGrid at_f0{{series_resonance(decap_from_catalog(number))}};
    const ZMatrixSet z = solve_board(c.contour, c.stackup, c.ports, at_f0);
    DecapAssignment a = assignment_from_indices(c.decap_indices);
    const double before = std::abs(attach_decaps(z, a).z[0]);
    a[port] = decap_from_catalog(number);
    const double after = std::abs(attach_decaps(z, a).z[0]);
    EXPECT_LE(after, before + 1e-9);
  }
}

TEST(Grid, DenseGridReproducesSharedPoints) {
  // 263 points put every other point on the 132-point grid (264 points
  // would share only the end points).
  Rng rng(6);
  const BoardCase c = sample_board_case(rng, 9, 6);
  const FrequencyGrid g132 = make_frequency_grid(), g263 = make_frequency_grid(263);
  for (std::size_t i = 0; i < g132.size(); ++i) ASSERT_EQ(g263.points[2 * i], g132.points[i]);
  const ImpedanceCurve a = solve_case(c, g132), b = solve_case(c, g263);
  for (std::size_t i = 0; i < g132.size(); ++i) {
    EXPECT_EQ(a.z[i], b.z[2 * i]);
    EXPECT_EQ(a.db[i], b.db[2 * i]);
  }
}

TEST(Db, RoundTrip) {
  for (double m : {1e-6, 3.3e-3, 0.5, 1.0, 42.0, 1e5}) {
    EXPECT_NEAR(from_db(to_db(cplx(m, 0))), m, 1e-12 * m);
    EXPECT_NEAR(from_db(to_db(cplx(0, -m))), m, 1e-12 * m);
  }
  EXPECT_EQ(to_db(cplx(1, 0)), 0.0);
  EXPECT_NEAR(to_db(cplx(0.1, 0)), -20.0, 1e-12);
  EXPECT_THROW(make_curve(make_frequency_grid(2), {cplx(0), cplx(1)}), NumericalError);
}

namespace {

ZMatrixSet small_set(int np) {
  ZMatrixSet z;
  z.grid.points = {1e4, 2.5e6};
  for (int fi = 0; fi < 2; ++fi) {
    Eigen::MatrixXcd m(np, np);
    for (int r = 0; r < np; ++r)
      for (int c = 0; c < np; ++c) m(r, c) = {0.125 * (r + 1) + fi, -0.5 * (c + 1) - 0.25 * r + 1e-3 * fi};
    z.z.push_back(m);
  }
  return z;
}

}  // namespace

TEST(Touchstone, GoldenFiles) {
  for (int np : {1, 2, 5}) {
    std::ostringstream os;
    write_touchstone(os, small_set(np));
    EXPECT_EQ(os.str(), slurp(std::string(PDNFORGE_GOLDEN_DIR) + "/small.z" + std::to_string(np) + "p")) << np;
  }
}

TEST(Touchstone, RoundTrip) {
  for (int np : {1, 2, 5}) {
    const ZMatrixSet z = small_set(np);
    std::ostringstream os;
    write_touchstone(os, z);
    std::istringstream is(os.str());
    const ZMatrixSet back = read_touchstone(is, static_cast<std::size_t>(np));
    EXPECT_EQ(back.grid.points, z.grid.points);
    for (std::size_t i = 0; i < z.z.size(); ++i) EXPECT_EQ(back.z[i], z.z[i]);
  }
}

TEST(Touchstone, SolvedBoardRowsAscending) {
  Rng rng(7);
  const BoardCase c = sample_board_case(rng, 4, 7);
  const ZMatrixSet z = solve_board(c.contour, c.stackup, c.ports, make_frequency_grid());
  std::ostringstream os;
  write_touchstone(os, z);
  std::istringstream is(os.str());
  const ZMatrixSet back = read_touchstone(is, z.ports());
  ASSERT_EQ(back.grid.size(), 132u);
  for (std::size_t i = 1; i < back.grid.size(); ++i) EXPECT_GT(back.grid.points[i], back.grid.points[i - 1]);
  std::istringstream bad("# GHz S MA R 50\n1 2 3\n");
  EXPECT_THROW(read_touchstone(bad, 1), FormatError);
}

TEST(CurveCsv, GoldenAndRoundTrip) {
  ImpedanceCurve c = make_curve(FrequencyGrid{{1e4, 1e5, 2e7}}, {cplx(0.5, -1.25), cplx(1e-3, 2e-3), cplx(-0.0, 3.0)});
  std::ostringstream os;
  write_curve_csv(os, c);
  EXPECT_EQ(os.str(), slurp(std::string(PDNFORGE_GOLDEN_DIR) + "/curve.csv"));
  std::istringstream is(os.str());
  const ImpedanceCurve back = read_curve_csv(is);
  EXPECT_EQ(back.grid.points, c.grid.points);
  EXPECT_EQ(back.z, c.z);
  EXPECT_EQ(back.db, c.db);
}
