#pragma once

// Multi-layer equivalent circuit and port impedances.
//
// Nodes: one per (via, layer); a via node merges into that layer's plane node
// when the via and the layer share a net. Each cavity contributes coupled
// inductive branches, one per via between its nodes on the two bounding
// layers (inductance = gap * per-via unit matrix), and the parallel-plate
// capacitance between the two plane nodes. The top plane is the reference.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pdnforge/bem.hpp"
#include "pdnforge/error.hpp"
#include "pdnforge/geometry.hpp"

namespace pdnforge {

using cplx = std::complex<double>;

inline constexpr double kEps0 = 8.854e-12;
inline constexpr double kEpsR = 4.4;
inline constexpr int kFrequencyPoints = 132;
inline constexpr double kFreqStart = 1.0e4;
inline constexpr double kFreqStop = 2.0e7;

// ---------------------------------------------------------------------------
// Stackup

enum class Net : std::uint8_t { ground = 1, power = 2 };

struct Stackup {
  std::vector<Net> layer_nets;  // top to bottom
  std::vector<double> gaps_mm;  // size layers - 1
  double eps_r = kEpsR;

  std::size_t layers() const { return layer_nets.size(); }
  double total_thickness_mm() const {
    double t = 0.0;
    for (double g : gaps_mm) t += g;
    return t;
  }
  std::size_t power_layer() const {
    for (std::size_t i = 0; i < layer_nets.size(); ++i)
      if (layer_nets[i] == Net::power) return i;
    return layer_nets.size();
  }

  friend bool operator==(const Stackup&, const Stackup&) = default;
};

inline constexpr int kMinLayers = 4;
inline constexpr int kMaxLayers = 9;
inline constexpr double kMinGapMm = 0.1;
inline constexpr double kMinThicknessMm = 1.0;
inline constexpr double kMaxThicknessMm = 10.0;

/// Checks the sampling contract: 4-9 layers, one interior power layer,
/// gaps >= 0.1 mm summing to 1-10 mm.
inline bool stackup_is_valid(const Stackup& s, std::string* why = nullptr) {
  auto fail = [why](const char* m) {
    if (why) *why = m;
    return false;
  };
  const auto n = s.layers();
  if (n < static_cast<std::size_t>(kMinLayers) || n > static_cast<std::size_t>(kMaxLayers))
    return fail("layer count outside [4, 9]");
  if (s.gaps_mm.size() + 1 != n) return fail("gap count must be layers - 1");
  int power = 0;
  for (Net net : s.layer_nets) power += net == Net::power;
  if (power != 1) return fail("exactly one power layer required");
  const auto p = s.power_layer();
  if (p == 0 || p + 1 == n) return fail("power layer must be interior");
  for (double g : s.gaps_mm)
    if (!(g >= kMinGapMm - 1e-12)) return fail("gap below 0.1 mm");
  const double t = s.total_thickness_mm();
  if (t < kMinThicknessMm - 1e-9 || t > kMaxThicknessMm + 1e-9) return fail("total thickness outside [1, 10] mm");
  return true;
}

// ---------------------------------------------------------------------------
// Decaps

struct DecapModel {
  double capacitance;  // F
  double esl;          // H
  double esr;          // ohm
};

/// Decap catalog, indexed 1..10 in encodings (entry 0 here is decap #1).
inline constexpr std::array<DecapModel, 10> kDecapCatalog = {{
    {0.1e-6, 0.19e-9, 34.7e-3},
    {0.47e-6, 0.18e-9, 18.3e-3},
    {1.0e-6, 0.22e-9, 15.2e-3},
    {2.2e-6, 0.20e-9, 7.2e-3},
    {4.7e-6, 0.28e-9, 7.1e-3},
    {10.0e-6, 0.26e-9, 5.2e-3},
    {22.0e-6, 0.27e-9, 4.0e-3},
    {47.0e-6, 0.15e-9, 2.9e-3},
    {220.0e-6, 0.41e-9, 1.9e-3},
    {330.0e-6, 0.46e-9, 1.2e-3},
}};

inline const DecapModel& decap_from_catalog(int number) {
  require(number >= 1 && number <= 10, "decap number must be in [1, 10]");
  return kDecapCatalog[static_cast<std::size_t>(number - 1)];
}

/// Series RLC impedance.
inline cplx decap_impedance(const DecapModel& m, double f) {
  require(f > 0.0, "decap_impedance: frequency must be positive");
  const double w = 2.0 * std::numbers::pi * f;
  return {m.esr, w * m.esl - 1.0 / (w * m.capacitance)};
}

inline double series_resonance(const DecapModel& m) {
  return 1.0 / (2.0 * std::numbers::pi * std::sqrt(m.esl * m.capacitance));
}

/// Parallel-plate capacitance of one cavity (area in m^2, gap in m).
inline double cavity_capacitance(double area_m2, double gap_m, double eps_r = kEpsR) {
  require(area_m2 >= 1e-8, "cavity_capacitance: area must be at least 1e-8 m^2");
  require(gap_m > 0.0, "cavity_capacitance: gap must be positive");
  return kEps0 * eps_r * area_m2 / gap_m;
}

// ---------------------------------------------------------------------------
// Frequency grid and results

struct FrequencyGrid {
  std::vector<double> points;  // Hz, ascending
  std::size_t size() const { return points.size(); }
};

/// Log-spaced grid with exact end points.
inline FrequencyGrid make_frequency_grid(int n = kFrequencyPoints, double f0 = kFreqStart,
                                         double f1 = kFreqStop) {
  require(n >= 2 && f0 > 0.0 && f1 > f0, "make_frequency_grid: bad arguments");
  FrequencyGrid g;
  g.points.resize(static_cast<std::size_t>(n));
  const double l0 = std::log10(f0), l1 = std::log10(f1);
  for (int i = 0; i < n; ++i) g.points[static_cast<std::size_t>(i)] = std::pow(10.0, l0 + (l1 - l0) * i / (n - 1));
  g.points.front() = f0;
  g.points.back() = f1;
  return g;
}

/// Port Z-matrix per frequency; port 0 is the IC, then decap ports.
struct ZMatrixSet {
  FrequencyGrid grid;
  std::vector<Eigen::MatrixXcd> z;
  double max_asymmetry = 0.0;  // relative, before symmetrization

  // Set by the nodal solver: z = sign sign^T / plane_admittance + rest. At low
  // frequency the plane term dwarfs everything else, so decap attachment works
  // on the parts instead of on z. Empty for matrices read from files.
  std::vector<cplx> plane_admittance;  // j w C_total
  std::vector<Eigen::MatrixXcd> rest;
  Eigen::VectorXd port_sign;

  std::size_t ports() const { return z.empty() ? 0 : static_cast<std::size_t>(z.front().rows()); }
  bool has_split() const { return !rest.empty() && rest.size() == z.size(); }
};

inline double to_db(cplx z) { return 20.0 * std::log10(std::abs(z)); }
inline double from_db(double db) { return std::pow(10.0, db / 20.0); }

struct ImpedanceCurve {
  FrequencyGrid grid;
  std::vector<cplx> z;
  std::vector<double> db;  // dB ohm
};

inline ImpedanceCurve make_curve(FrequencyGrid grid, std::vector<cplx> z) {
  ImpedanceCurve c{std::move(grid), std::move(z), {}};
  c.db.reserve(c.z.size());
  for (cplx v : c.z) {
    if (!(std::abs(v) > 0.0) || !std::isfinite(std::abs(v)))
      throw NumericalError("impedance magnitude is zero or non-finite");
    c.db.push_back(to_db(v));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Board vias

/// Via pairs for a port set. Ports sharing a cell (top and bottom decap, or a
/// bottom decap under the IC) share one through-hole pair. Vias are ordered
/// pair-major: power via 2p, ground via 2p+1; pair 0 is the IC cell, so the
/// IC ground via (index 1) is the reference.
struct BoardVias {
  ViaLayout layout;
  std::vector<Cell> pair_cells;
  std::vector<std::size_t> port_pair;  // IC first, then decaps in placement order
  std::vector<Side> port_side;

  std::size_t power_via(std::size_t pair) const { return 2 * pair; }
  std::size_t ground_via(std::size_t pair) const { return 2 * pair + 1; }
  std::size_t ports() const { return port_pair.size(); }
};

inline BoardVias make_board_vias(const PortSet& ports, double via_radius = kDefaultViaRadius) {
  BoardVias bv;
  auto pair_of = [&bv](Cell c) {
    for (std::size_t i = 0; i < bv.pair_cells.size(); ++i)
      if (bv.pair_cells[i] == c) return i;
    bv.pair_cells.push_back(c);
    return bv.pair_cells.size() - 1;
  };
  bv.port_pair.push_back(pair_of(ports.ic_cell));
  bv.port_side.push_back(Side::top);
  for (const DecapPort& d : ports.decap_ports) {
    bv.port_pair.push_back(pair_of(d.cell));
    bv.port_side.push_back(d.side);
  }
  constexpr double mm = 1e-3;
  for (Cell c : bv.pair_cells) {
    bv.layout.positions.push_back(mm * PortSet::power_via_mm(c));
    bv.layout.positions.push_back(mm * PortSet::ground_via_mm(c));
  }
  bv.layout.radii.assign(bv.layout.positions.size(), via_radius);
  bv.layout.reference_index = 1;
  return bv;
}

// ---------------------------------------------------------------------------
// Nodal network

/// Node numbering and port terminals for one board; frequency-independent.
class NodalNetwork {
 public:
  static constexpr std::ptrdiff_t kGround = -1;

  NodalNetwork(const Stackup& stackup, const BoardVias& vias, double area_m2)
      : stackup_(stackup), vias_(vias) {
    const std::size_t nl = stackup.layers();
    require(nl >= 2 && stackup.gaps_mm.size() + 1 == nl, "nodal network: inconsistent stackup");
    for (double g : stackup.gaps_mm) require(g > 0.0, "nodal network: gaps must be positive");
    require(stackup.power_layer() < nl, "nodal network: stackup has no power layer");
    const std::size_t nv = vias.layout.size();
    require(nv >= 2 && nv % 2 == 0, "nodal network: vias must come in power/ground pairs");

    // Plane k>0 gets unknown k-1; plane 0 is the reference.
    std::ptrdiff_t next = static_cast<std::ptrdiff_t>(nl) - 1;
    node_.assign(nv, std::vector<std::ptrdiff_t>(nl));
    for (std::size_t v = 0; v < nv; ++v) {
      const Net net = v % 2 == 0 ? Net::power : Net::ground;
      for (std::size_t k = 0; k < nl; ++k)
        node_[v][k] = stackup.layer_nets[k] == net ? plane(k) : next++;
    }
    unknowns_ = static_cast<std::size_t>(next);
    for (std::size_t k = 0; k + 1 < nl; ++k)
      capacitance_.push_back(cavity_capacitance(area_m2, stackup.gaps_mm[k] * 1e-3, stackup.eps_r));
    for (std::size_t p = 0; p < vias.ports(); ++p) {
      const std::size_t layer = vias.port_side[p] == Side::top ? 0 : nl - 1;
      port_pos_.push_back(node_[vias.power_via(vias.port_pair[p])][layer]);
      port_neg_.push_back(plane(layer));
    }

    // Common mode: every node on the net opposite the reference plane moves
    // together. No via current flows in it, only plane displacement current.
    const Net ref_net = stackup.layer_nets[0];
    common_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(unknowns_));
    for (std::size_t v = 0; v < nv; ++v)
      if ((v % 2 == 0 ? Net::power : Net::ground) != ref_net)
        for (std::size_t k = 0; k < nl; ++k) common_(node_[v][k]) = 1.0;
    for (std::size_t k = 1; k < nl; ++k)
      if (stackup.layer_nets[k] != ref_net) {
        common_(plane(k)) = 1.0;
        if (pivot_ == kGround) pivot_ = plane(k);
      }
    require(pivot_ != kGround, "nodal network: stackup needs planes on both nets");
    cap_common_ = Eigen::VectorXd::Zero(common_.size());
    for (std::size_t k = 0; k + 1 < nl; ++k) {
      const std::ptrdiff_t a = plane(k), b = plane(k + 1);
      const double d = at(common_, a) - at(common_, b);
      if (a != kGround) cap_common_(a) += capacitance_[k] * d;
      if (b != kGround) cap_common_(b) -= capacitance_[k] * d;
      total_capacitance_ += capacitance_[k] * d * d;
    }
    port_sign_.resize(static_cast<Eigen::Index>(ports()));
    for (std::size_t p = 0; p < ports(); ++p)
      port_sign_(static_cast<Eigen::Index>(p)) = at(common_, port_pos_[p]) - at(common_, port_neg_[p]);
  }

  std::size_t unknowns() const { return unknowns_; }
  std::size_t ports() const { return port_pos_.size(); }
  std::ptrdiff_t port_pos(std::size_t p) const { return port_pos_[p]; }
  std::ptrdiff_t port_neg(std::size_t p) const { return port_neg_[p]; }
  std::ptrdiff_t node(std::size_t via, std::size_t layer) const { return node_[via][layer]; }
  std::ptrdiff_t plane(std::size_t layer) const { return static_cast<std::ptrdiff_t>(layer) - 1; }
  const Stackup& stackup() const { return stackup_; }
  double cavity_capacitance_at(std::size_t k) const { return capacitance_[k]; }

  /// Nodal admittance at frequency f. `inverse_unit_l` is the inverse of the
  /// per-via unit inductance matrix (1/(H/m)); cavity k scales it by 1/gap.
  Eigen::MatrixXcd admittance(double f, const Eigen::MatrixXd& inverse_unit_l) const {
    const double w = 2.0 * std::numbers::pi * f;
    const auto n = static_cast<Eigen::Index>(unknowns_);
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
    const std::size_t nv = node_.size();
    for (std::size_t k = 0; k + 1 < stackup_.layers(); ++k) {
      const cplx scale = 1.0 / (cplx(0.0, w) * (stackup_.gaps_mm[k] * 1e-3));
      for (std::size_t a = 0; a < nv; ++a) {
        const std::ptrdiff_t a0 = node_[a][k], a1 = node_[a][k + 1];
        for (std::size_t b = 0; b < nv; ++b) {
          const cplx g = scale * inverse_unit_l(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
          const std::ptrdiff_t b0 = node_[b][k], b1 = node_[b][k + 1];
          add(y, a0, b0, g);
          add(y, a0, b1, -g);
          add(y, a1, b0, -g);
          add(y, a1, b1, g);
        }
      }
      stamp_two_terminal(y, plane(k), plane(k + 1), cplx(0.0, w * capacitance_[k]));
    }
    return y;
  }

  static void stamp_two_terminal(Eigen::MatrixXcd& y, std::ptrdiff_t a, std::ptrdiff_t b, cplx g) {
    add(y, a, a, g);
    add(y, b, b, g);
    add(y, a, b, -g);
    add(y, b, a, -g);
  }

  struct PortImpedance {
    cplx plane_admittance;  // j w C_total
    Eigen::MatrixXcd rest;   // z minus the plane term, not symmetrized
  };

  /// Port Z-matrix as sign sign^T / (j w C_total) + rest. The pivot plane's
  /// unknown is swapped for the common-mode amplitude, whose row and column
  /// are purely capacitive and are eliminated in closed form; what remains
  /// is solved at the inductive scale, so `rest` keeps full precision even
  /// where the plane term is eight orders larger.
  PortImpedance port_impedance(const Eigen::MatrixXcd& y, double f) const {
    const double w = 2.0 * std::numbers::pi * f;
    const auto n = static_cast<Eigen::Index>(unknowns_);
    const auto np = static_cast<Eigen::Index>(ports());
    std::vector<Eigen::Index> keep;
    keep.reserve(static_cast<std::size_t>(n - 1));
    for (Eigen::Index i = 0; i < n; ++i)
      if (i != pivot_) keep.push_back(i);
    const auto m = static_cast<Eigen::Index>(keep.size());

    Eigen::MatrixXcd j = Eigen::MatrixXcd::Zero(m, np);
    std::vector<Eigen::Index> row(static_cast<std::size_t>(n), -1);
    for (Eigen::Index i = 0; i < m; ++i) row[static_cast<std::size_t>(keep[static_cast<std::size_t>(i)])] = i;
    for (Eigen::Index p = 0; p < np; ++p) {
      const std::ptrdiff_t a = port_pos_[static_cast<std::size_t>(p)], b = port_neg_[static_cast<std::size_t>(p)];
      if (a != kGround && a != pivot_) j(row[static_cast<std::size_t>(a)], p) += 1.0;
      if (b != kGround && b != pivot_) j(row[static_cast<std::size_t>(b)], p) -= 1.0;
    }
    const Eigen::VectorXcd g = cap_common_(keep).cast<cplx>();
    const Eigen::VectorXcd s = port_sign_.cast<cplx>();
    Eigen::MatrixXcd d = y(keep, keep);
    d.noalias() -= cplx(0.0, w / total_capacitance_) * g * g.transpose();
    const Eigen::MatrixXcd rhs = j - (g / total_capacitance_) * s.transpose();

    const Eigen::PartialPivLU<Eigen::MatrixXcd> lu(d);
    const double rc = lu.rcond();
    if (!(rc > 1e-16))
      throw NumericalError("singular nodal admittance at " + std::to_string(f) + " Hz (rcond " +
                           std::to_string(rc) + ")");
    const Eigen::MatrixXcd v = lu.solve(rhs);
    const Eigen::RowVectorXcd shift = -(g.transpose() * v) / total_capacitance_;
    PortImpedance out{cplx(0.0, w * total_capacitance_), j.transpose() * v + s * shift};
    if (!out.rest.allFinite()) throw NumericalError("non-finite port impedance at " + std::to_string(f) + " Hz");
    return out;
  }

  const Eigen::VectorXd& port_sign() const { return port_sign_; }
  double total_capacitance() const { return total_capacitance_; }

 private:
  static void add(Eigen::MatrixXcd& y, std::ptrdiff_t r, std::ptrdiff_t c, cplx g) {
    if (r != kGround && c != kGround) y(r, c) += g;
  }
  static double at(const Eigen::VectorXd& v, std::ptrdiff_t node) { return node == kGround ? 0.0 : v(node); }

  Stackup stackup_;
  BoardVias vias_;
  std::vector<std::vector<std::ptrdiff_t>> node_;
  std::vector<double> capacitance_;
  std::vector<std::ptrdiff_t> port_pos_, port_neg_;
  std::size_t unknowns_ = 0;
  Eigen::VectorXd common_, cap_common_, port_sign_;
  double total_capacitance_ = 0.0;
  std::ptrdiff_t pivot_ = kGround;
};

/// Inverse unit-inductance provider: f -> inverse of the per-via H/m matrix.
using InverseInductanceFn = std::function<Eigen::MatrixXd(double)>;

inline ZMatrixSet solve_ports(const NodalNetwork& net, const InverseInductanceFn& inverse_l,
                              const FrequencyGrid& grid) {
  ZMatrixSet out;
  out.grid = grid;
  out.port_sign = net.port_sign();
  out.z.reserve(grid.size());
  const Eigen::MatrixXcd common = (net.port_sign() * net.port_sign().transpose()).cast<cplx>();
  for (double f : grid.points) {
    const auto [yc, rest] = net.port_impedance(net.admittance(f, inverse_l(f)), f);
    const Eigen::MatrixXcd sym = 0.5 * (rest + rest.transpose());
    Eigen::MatrixXcd z = sym + common / yc;
    const double scale = std::max(z.cwiseAbs().maxCoeff(), 1e-300);
    out.max_asymmetry = std::max(out.max_asymmetry, (rest - rest.transpose()).cwiseAbs().maxCoeff() / scale);
    out.z.push_back(std::move(z));
    out.rest.push_back(sym);
    out.plane_admittance.push_back(yc);
  }
  return out;
}

inline Eigen::MatrixXd invert_unit_inductance(const Eigen::MatrixXd& unit_l) {
  const Eigen::LLT<Eigen::MatrixXd> llt(unit_l);
  if (llt.info() == Eigen::Success)
    return llt.solve(Eigen::MatrixXd::Identity(unit_l.rows(), unit_l.cols()));
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(unit_l);
  if (!(lu.rcond() > 1e-14))
    throw NumericalError("per-via inductance matrix is singular (rcond " + std::to_string(lu.rcond()) + ")");
  return lu.inverse();
}

/// Port Z-parameters of the board from its per-via unit inductance matrix.
inline ZMatrixSet assemble_and_solve(double area_m2, const Stackup& stackup, const BoardVias& vias,
                                     const Eigen::MatrixXd& unit_l, const FrequencyGrid& grid) {
  require(unit_l.rows() == static_cast<Eigen::Index>(vias.layout.size()) && unit_l.cols() == unit_l.rows(),
          "assemble_and_solve: inductance matrix does not match via count");
  const NodalNetwork net(stackup, vias, area_m2);
  const Eigen::MatrixXd inv = invert_unit_inductance(unit_l);
  return solve_ports(net, [&inv](double) { return inv; }, grid);
}

// ---------------------------------------------------------------------------
// Decap attachment

/// Per decap port: a decap model, or nullopt for an unpopulated (open) port.
using DecapAssignment = std::vector<std::optional<DecapModel>>;

/// IC-port impedance with decaps terminating the populated decap ports.
inline ImpedanceCurve attach_decaps(const ZMatrixSet& zset, const DecapAssignment& assignment) {
  const std::size_t nd = zset.ports() - 1;
  require(assignment.size() == nd, "attach_decaps: assignment length must equal decap port count");
  std::vector<Eigen::Index> used;
  for (std::size_t i = 0; i < nd; ++i)
    if (assignment[i]) used.push_back(static_cast<Eigen::Index>(i + 1));
  const auto m = static_cast<Eigen::Index>(used.size());
  std::vector<cplx> zic;
  zic.reserve(zset.grid.size());
  for (std::size_t fi = 0; fi < zset.grid.size(); ++fi) {
    const Eigen::MatrixXcd& z = zset.z[fi];
    if (m == 0) {
      zic.push_back(z(0, 0));
      continue;
    }
    const double f = zset.grid.points[fi];
    auto zdec = [&](Eigen::Index a) { return decap_impedance(*assignment[static_cast<std::size_t>(used[a] - 1)], f); };
    if (zset.has_split()) {
      // Unknowns: decap currents, then t = plane voltage. The last row is
      // current balance on the plane capacitance.
      const Eigen::MatrixXcd& r = zset.rest[fi];
      const Eigen::VectorXd& s = zset.port_sign;
      Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(m + 1, m + 1);
      Eigen::VectorXcd rhs(m + 1);
      for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index k = 0; k < m; ++k) a(i, k) = r(used[i], used[k]);
        a(i, i) += zdec(i);
        a(i, m) = -s(used[i]);
        a(m, i) = s(used[i]);
        rhs(i) = r(used[i], 0);
      }
      a(m, m) = zset.plane_admittance[fi];
      rhs(m) = s(0);
      const Eigen::PartialPivLU<Eigen::MatrixXcd> lu(a);
      if (!(lu.rcond() > 1e-16))
        throw NumericalError("attach_decaps: singular decap block at frequency index " + std::to_string(fi));
      const Eigen::VectorXcd x = lu.solve(rhs);
      cplx v = s(0) * x(m) + r(0, 0);
      for (Eigen::Index i = 0; i < m; ++i) v -= r(0, used[i]) * x(i);
      zic.push_back(v);
      continue;
    }
    Eigen::MatrixXcd zdd(m, m);
    Eigen::VectorXcd zpd(m), zdp(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      zpd(a) = z(0, used[a]);
      zdp(a) = z(used[a], 0);
      for (Eigen::Index b = 0; b < m; ++b) zdd(a, b) = z(used[a], used[b]);
      zdd(a, a) += zdec(a);
    }
    const Eigen::PartialPivLU<Eigen::MatrixXcd> lu(zdd);
    if (!(lu.rcond() > 1e-16))
      throw NumericalError("attach_decaps: singular decap block at frequency index " + std::to_string(fi));
    zic.push_back(z(0, 0) - (zpd.transpose() * lu.solve(zdp))(0));
  }
  return make_curve(zset.grid, std::move(zic));
}

/// Assignment from catalog numbers (0 = open).
inline DecapAssignment assignment_from_indices(const std::vector<int>& indices) {
  DecapAssignment a;
  a.reserve(indices.size());
  for (int idx : indices) {
    if (idx == 0)
      a.emplace_back(std::nullopt);
    else
      a.emplace_back(decap_from_catalog(idx));
  }
  return a;
}

// ---------------------------------------------------------------------------
// Export formats

namespace io_detail {
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", v);
  return buf;
}
}  // namespace io_detail

/// Touchstone v1 Z-parameters, real/imaginary, one block per frequency.
/// Two-port data uses the N11 N21 N12 N22 order; larger matrices are written
/// row by row with at most four pairs per line.
inline void write_touchstone(std::ostream& os, const ZMatrixSet& zset) {
  const std::size_t np = zset.ports();
  os << "! pdnforge port Z-parameters, " << np << " ports\n";
  os << "# Hz Z RI R 50\n";
  for (std::size_t fi = 0; fi < zset.grid.size(); ++fi) {
    const Eigen::MatrixXcd& z = zset.z[fi];
    os << io_detail::fmt(zset.grid.points[fi]);
    auto pair = [&os, &z](Eigen::Index r, Eigen::Index c) {
      os << ' ' << io_detail::fmt(z(r, c).real()) << ' ' << io_detail::fmt(z(r, c).imag());
    };
    if (np <= 2) {
      if (np == 1) {
        pair(0, 0);
      } else {
        pair(0, 0), pair(1, 0), pair(0, 1), pair(1, 1);
      }
      os << '\n';
      continue;
    }
    for (std::size_t r = 0; r < np; ++r) {
      for (std::size_t c = 0; c < np; ++c) {
        if (c > 0 && c % 4 == 0) os << "\n";
        pair(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      }
      os << '\n';
    }
  }
}

/// Reads a file produced by write_touchstone (port count must be given, as
/// Touchstone v1 encodes it only in the file extension).
inline ZMatrixSet read_touchstone(std::istream& is, std::size_t np) {
  require(np >= 1, "read_touchstone: port count must be positive");
  std::vector<double> values;
  std::string line;
  bool option_seen = false;
  while (std::getline(is, line)) {
    if (auto bang = line.find('!'); bang != std::string::npos) line.erase(bang);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line.find('#') != std::string::npos) {
      std::istringstream opt(line.substr(line.find('#') + 1));
      std::string unit, param, fmt, r;
      double ref = 0;
      opt >> unit >> param >> fmt >> r >> ref;
      if (unit != "Hz" || param != "Z" || fmt != "RI")
        throw FormatError("read_touchstone: unsupported option line '" + line + "'");
      option_seen = true;
      continue;
    }
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      try {
        values.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw FormatError("read_touchstone: bad number '" + tok + "'");
      }
    }
  }
  if (!option_seen) throw FormatError("read_touchstone: missing option line");
  const std::size_t per = 1 + 2 * np * np;
  if (values.empty() || values.size() % per != 0)
    throw FormatError("read_touchstone: value count does not match port count");
  ZMatrixSet out;
  for (std::size_t off = 0; off < values.size(); off += per) {
    out.grid.points.push_back(values[off]);
    Eigen::MatrixXcd z(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(np));
    std::size_t k = off + 1;
    for (std::size_t a = 0; a < np; ++a)
      for (std::size_t b = 0; b < np; ++b, k += 2) {
        // two-port order is column-major (N11 N21 N12 N22)
        const std::size_t r = np == 2 ? b : a, c = np == 2 ? a : b;
        z(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = {values[k], values[k + 1]};
      }
    out.z.push_back(std::move(z));
  }
  return out;
}

inline void write_curve_csv(std::ostream& os, const ImpedanceCurve& c) {
  os << "freq_hz,re_z,im_z,db\n";
  for (std::size_t i = 0; i < c.grid.size(); ++i)
    os << io_detail::fmt(c.grid.points[i]) << ',' << io_detail::fmt(c.z[i].real()) << ','
       << io_detail::fmt(c.z[i].imag()) << ',' << io_detail::fmt(c.db[i]) << '\n';
}

inline ImpedanceCurve read_curve_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("freq_hz,re_z,im_z,db", 0) != 0)
    throw FormatError("curve csv: missing header");
  ImpedanceCurve c;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b, d, e;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, d, ',') ||
        !std::getline(ls, e))
      throw FormatError("curve csv: malformed row '" + line + "'");
    c.grid.points.push_back(std::stod(a));
    c.z.emplace_back(std::stod(b), std::stod(d));
    c.db.push_back(std::stod(e));
  }
  return c;
}

}  // namespace pdnforge
