#pragma once

// Random board cases and their network-input encodings:
//   placement  3x16x16 : [0] 1 = board cell, 2 = IC cell; [1] top decap
//                        numbers; [2] bottom decap numbers (0 = none)
//   stackup    1x17    : 9 layer codes (1 ground, 2 power, 0 empty), then
//                        8 gap thicknesses in mm (0 = empty)

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "pdnforge/circuit.hpp"
#include "pdnforge/error.hpp"
#include "pdnforge/geometry.hpp"
#include "pdnforge/rng.hpp"

namespace pdnforge {

inline constexpr std::size_t kPlacementSize = 3 * kGridSize * kGridSize;
inline constexpr std::size_t kStackupVecSize = 17;
inline constexpr std::size_t kLayerSlots = 9;
inline constexpr std::size_t kGapSlots = 8;
inline constexpr double kViaEdgeClearanceMm = 1.0;

/// Stackup with uniform layer count, uniform total thickness and Dirichlet
/// gap fractions (rejecting gaps under 0.1 mm).
inline Stackup sample_stackup(Rng& rng) {
  Stackup s;
  const auto layers = static_cast<std::size_t>(rng.uniform_int(kMinLayers, kMaxLayers));
  const std::size_t gaps = layers - 1;
  for (;;) {
    const double total = rng.uniform(kMinThicknessMm, kMaxThicknessMm);
    for (int attempt = 0; attempt < 1000; ++attempt) {
      std::vector<double> e(gaps);
      double sum = 0.0;
      for (auto& v : e) sum += (v = rng.exponential());
      bool ok = sum > 0.0;
      for (auto& v : e) {
        v *= total / sum;
        ok = ok && v >= kMinGapMm;
      }
      if (!ok) continue;
      s.gaps_mm = std::move(e);
      s.layer_nets.assign(layers, Net::ground);
      s.layer_nets[static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(layers) - 2))] = Net::power;
      return s;
    }
  }
}

/// The physical part of a board, shared by all of its decap scenarios.
struct PhysicalBoard {
  ClosedContour contour;
  BoardMask mask;
  Stackup stackup;
  PortSet ports;  // IC + candidate decap ports
};

struct BoardCase {
  ClosedContour contour;
  BoardMask mask;
  Stackup stackup;
  PortSet ports;
  std::vector<int> decap_indices;  // per decap port, 0..10 (0 = unpopulated)
  std::uint64_t seed = 0;
};

struct EncodedSample {
  std::array<std::uint8_t, kPlacementSize> placement{};
  std::array<double, kStackupVecSize> stackup_vec{};
  std::vector<float> label;  // 132 dB ohm values once solved

  std::uint8_t at(int channel, int row, int col) const {
    return placement[static_cast<std::size_t>((channel * kGridSize + row) * kGridSize + col)];
  }
  friend bool operator==(const EncodedSample&, const EncodedSample&) = default;
};

inline std::size_t placement_index(int channel, Cell c) {
  return static_cast<std::size_t>((channel * kGridSize + c.row) * kGridSize + c.col);
}

/// True when both vias of every port keep the edge clearance.
inline bool ports_clear_edges(const ClosedContour& contour, const PortSet& ports,
                              double clearance_mm = kViaEdgeClearanceMm) {
  auto ok = [&](Cell c) {
    for (Point p : {PortSet::power_via_mm(c), PortSet::ground_via_mm(c)})
      if (!contour.contains(p) || boundary_distance(contour.vertices(), p) < clearance_mm) return false;
    return true;
  };
  if (!ok(ports.ic_cell)) return false;
  for (const auto& d : ports.decap_ports)
    if (!ok(d.cell)) return false;
  return true;
}

/// Outline, mask, stackup and `n_ports` candidate decap ports. Capacity or
/// degenerate-geometry failures resample the whole board (bounded).
inline PhysicalBoard sample_physical_board(Rng& rng, int n_ports = kMaxDecaps) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    try {
      PhysicalBoard b;
      b.contour = generate_random_contour(rng);
      b.mask = rasterize_contour(b.contour);
      b.stackup = sample_stackup(rng);
      bool placed = false;
      for (int p = 0; p < 20 && !placed; ++p) {
        b.ports = place_ports(rng, b.mask, n_ports);
        placed = ports_clear_edges(b.contour, b.ports);
      }
      if (placed) return b;
    } catch (const CapacityError&) {
    } catch (const DegenerateGeometryError&) {
    }
  }
  throw DegenerateGeometryError("sample_physical_board: no usable board after 1000 attempts");
}

/// Populates `n_populated` of the ports, chosen uniformly, with uniform
/// catalog numbers 1..10; the rest get 0.
inline std::vector<int> sample_decap_indices(Rng& rng, std::size_t n_ports, int n_populated) {
  require(n_populated >= 0 && static_cast<std::size_t>(n_populated) <= n_ports,
          "sample_decap_indices: populated count exceeds port count");
  std::vector<std::size_t> order(n_ports);
  for (std::size_t i = 0; i < n_ports; ++i) order[i] = i;
  std::vector<int> idx(n_ports, 0);
  for (std::size_t k = 0; k < static_cast<std::size_t>(n_populated); ++k) {
    std::swap(order[k], order[k + rng.index(n_ports - k)]);
    idx[order[k]] = static_cast<int>(rng.uniform_int(1, 10));
  }
  return idx;
}

inline BoardCase make_case(const PhysicalBoard& b, std::vector<int> indices, std::uint64_t seed) {
  return {b.contour, b.mask, b.stackup, b.ports, std::move(indices), seed};
}

/// Full random case: a physical board with 19 candidate ports, of which
/// `scenario_decaps` are populated.
inline BoardCase sample_board_case(Rng& rng, int scenario_decaps, std::uint64_t seed = 0) {
  require(scenario_decaps >= 0 && scenario_decaps <= kMaxDecaps, "sample_board_case: decaps must be in [0, 19]");
  const PhysicalBoard b = sample_physical_board(rng);
  return make_case(b, sample_decap_indices(rng, b.ports.decap_ports.size(), scenario_decaps), seed);
}

inline bool board_case_is_valid(const BoardCase& c) {
  if (c.decap_indices.size() != c.ports.decap_ports.size()) return false;
  for (int v : c.decap_indices)
    if (v < 0 || v > 10) return false;
  return true;
}

inline std::array<double, kStackupVecSize> encode_stackup(const Stackup& s) {
  require(s.layers() <= kLayerSlots && s.gaps_mm.size() <= kGapSlots, "encode_stackup: too many layers");
  std::array<double, kStackupVecSize> v{};
  for (std::size_t i = 0; i < s.layers(); ++i) v[i] = static_cast<double>(s.layer_nets[i]);
  for (std::size_t i = 0; i < s.gaps_mm.size(); ++i) v[kLayerSlots + i] = s.gaps_mm[i];
  return v;
}

inline EncodedSample encode_board(const BoardCase& c) {
  require(board_case_is_valid(c), "encode_board: invalid board case");
  EncodedSample e;
  for (const Cell cell : c.mask.board_cells()) e.placement[placement_index(0, cell)] = 1;
  e.placement[placement_index(0, c.ports.ic_cell)] = 2;
  for (std::size_t i = 0; i < c.ports.decap_ports.size(); ++i) {
    const DecapPort& d = c.ports.decap_ports[i];
    if (c.decap_indices[i] == 0) continue;
    e.placement[placement_index(d.side == Side::top ? 1 : 2, d.cell)] = static_cast<std::uint8_t>(c.decap_indices[i]);
  }
  e.stackup_vec = encode_stackup(c.stackup);
  return e;
}

/// What an encoding determines.
struct DecodedBoard {
  BoardMask mask;
  Cell ic_cell;
  std::array<std::array<std::uint8_t, kGridSize>, kGridSize> top{}, bottom{};
  Stackup stackup;
};

/// Inverse of encode_board on the encoded degrees of freedom.
inline DecodedBoard decode_board(const EncodedSample& e) {
  DecodedBoard d;
  int ics = 0;
  for (int r = 0; r < kGridSize; ++r)
    for (int c = 0; c < kGridSize; ++c) {
      const auto v = e.at(0, r, c);
      if (v > 2) throw FormatError("decode_board: invalid board code");
      d.mask.set(r, c, v != 0 ? 1 : 0);
      if (v == 2) {
        d.ic_cell = {r, c};
        ++ics;
      }
      d.top[r][c] = e.at(1, r, c);
      d.bottom[r][c] = e.at(2, r, c);
    }
  if (ics != 1) throw FormatError("decode_board: expected exactly one IC cell");
  for (std::size_t i = 0; i < kLayerSlots && e.stackup_vec[i] != 0.0; ++i)
    d.stackup.layer_nets.push_back(e.stackup_vec[i] == 2.0 ? Net::power : Net::ground);
  for (std::size_t i = 0; i < kGapSlots && e.stackup_vec[kLayerSlots + i] != 0.0; ++i)
    d.stackup.gaps_mm.push_back(e.stackup_vec[kLayerSlots + i]);
  return d;
}

/// Checks the encoding invariants; returns an empty string when valid.
inline std::string encoded_sample_violation(const EncodedSample& e) {
  int ics = 0;
  for (int r = 0; r < kGridSize; ++r)
    for (int c = 0; c < kGridSize; ++c) {
      const auto b = e.at(0, r, c);
      if (b > 2) return "board code out of range";
      ics += b == 2;
      for (int ch = 1; ch < 3; ++ch) {
        const auto v = e.at(ch, r, c);
        if (v > 10) return "decap code out of range";
        if (v != 0 && b == 0) return "decap outside the board";
      }
    }
  if (ics != 1) return "IC count is not one";
  int layers = 0, power = 0;
  bool ended = false;
  for (std::size_t i = 0; i < kLayerSlots; ++i) {
    const double v = e.stackup_vec[i];
    if (v == 0.0) {
      ended = true;
      continue;
    }
    if (ended) return "layer codes have a zero gap";
    if (v != 1.0 && v != 2.0) return "layer code out of range";
    ++layers;
    power += v == 2.0;
  }
  if (power != 1) return "power layer count is not one";
  int gaps = 0;
  ended = false;
  for (std::size_t i = 0; i < kGapSlots; ++i) {
    const double v = e.stackup_vec[kLayerSlots + i];
    if (v == 0.0) {
      ended = true;
      continue;
    }
    if (ended) return "gap entries have a zero gap";
    if (!(v > 0.0)) return "gap is negative";
    ++gaps;
  }
  if (gaps != layers - 1) return "gap count is not layer count - 1";
  if (!e.label.empty()) {
    if (e.label.size() != static_cast<std::size_t>(kFrequencyPoints)) return "label length is not 132";
    for (float v : e.label)
      if (!std::isfinite(v)) return "label is not finite";
  }
  return {};
}

}  // namespace pdnforge
