#pragma once

#include <chrono>

#include "pdnforge/bem.hpp"
#include "pdnforge/boardgen.hpp"
#include "pdnforge/circuit.hpp"

namespace pdnforge {

inline constexpr const char* kSolverVersion = "pdnforge-bem-nodal-2";

struct SolveOptions {
  double segment_mm = kDefaultSegmentMm;
  double via_radius = kDefaultViaRadius;
  BemOptions bem;
};

struct SolveTimings {
  double bem_s = 0.0;
  double nodal_s = 0.0;
};

/// Port Z-parameters of a physical board (IC + every candidate decap port).
inline ZMatrixSet solve_board(const ClosedContour& contour, const Stackup& stackup, const PortSet& ports,
                              const FrequencyGrid& grid, const SolveOptions& opt = {},
                              SolveTimings* timings = nullptr) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const BoardVias vias = make_board_vias(ports, opt.via_radius);
  const BoundaryMesh mesh = discretize_boundary(contour, opt.segment_mm);
  const Eigen::MatrixXd unit_l = refined_via_inductance(mesh, vias.layout, opt.bem);
  const auto t1 = clock::now();
  ZMatrixSet z = assemble_and_solve(mesh.area, stackup, vias, unit_l, grid);
  const auto t2 = clock::now();
  if (timings) {
    timings->bem_s += std::chrono::duration<double>(t1 - t0).count();
    timings->nodal_s += std::chrono::duration<double>(t2 - t1).count();
  }
  return z;
}

inline ZMatrixSet solve_board(const PhysicalBoard& b, const FrequencyGrid& grid, const SolveOptions& opt = {},
                              SolveTimings* timings = nullptr) {
  return solve_board(b.contour, b.stackup, b.ports, grid, opt, timings);
}

/// IC-port impedance curve of a board case.
inline ImpedanceCurve solve_case(const BoardCase& c, const FrequencyGrid& grid, const SolveOptions& opt = {}) {
  const ZMatrixSet z = solve_board(c.contour, c.stackup, c.ports, grid, opt);
  return attach_decaps(z, assignment_from_indices(c.decap_indices));
}

}  // namespace pdnforge
