#pragma once

// JSON board files: everything a BoardCase holds, with coordinates in mm.
// Doubles are written shortest-round-trip, so load(save(c)) == c.

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "pdnforge/boardgen.hpp"
#include "pdnforge/error.hpp"

namespace pdnforge {

inline constexpr const char* kBoardFormat = "pdnforge-board-1";

inline nlohmann::json board_to_json(const BoardCase& c) {
  nlohmann::json j;
  j["format"] = kBoardFormat;
  j["seed"] = c.seed;
  nlohmann::json verts = nlohmann::json::array();
  for (Point p : c.contour.vertices()) verts.push_back({p.x, p.y});
  j["contour_mm"] = verts;
  nlohmann::json mask = nlohmann::json::array();
  for (int r = 0; r < kGridSize; ++r) {
    std::string row;
    for (int col = 0; col < kGridSize; ++col) row += c.mask.at(r, col) ? '1' : '0';
    mask.push_back(row);
  }
  j["mask_rows"] = mask;
  nlohmann::json nets = nlohmann::json::array();
  for (Net n : c.stackup.layer_nets) nets.push_back(static_cast<int>(n));
  j["stackup"] = {{"layer_nets", nets}, {"gaps_mm", c.stackup.gaps_mm}, {"eps_r", c.stackup.eps_r}};
  j["ic_cell"] = {c.ports.ic_cell.row, c.ports.ic_cell.col};
  nlohmann::json ports = nlohmann::json::array();
  for (std::size_t i = 0; i < c.ports.decap_ports.size(); ++i) {
    const DecapPort& d = c.ports.decap_ports[i];
    ports.push_back({{"cell", {d.cell.row, d.cell.col}},
                     {"side", d.side == Side::top ? "top" : "bottom"},
                     {"decap", c.decap_indices.at(i)}});
  }
  j["decap_ports"] = ports;
  return j;
}

inline BoardCase board_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kBoardFormat) throw FormatError("board file: unknown format tag");
    BoardCase c;
    c.seed = j.at("seed").get<std::uint64_t>();
    std::vector<Point> verts;
    for (const auto& v : j.at("contour_mm")) verts.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
    c.contour = ClosedContour(std::move(verts));
    const auto rows = j.at("mask_rows").get<std::vector<std::string>>();
    if (rows.size() != static_cast<std::size_t>(kGridSize)) throw FormatError("board file: mask must have 16 rows");
    for (int r = 0; r < kGridSize; ++r) {
      if (rows[static_cast<std::size_t>(r)].size() != static_cast<std::size_t>(kGridSize))
        throw FormatError("board file: mask rows must have 16 cells");
      for (int col = 0; col < kGridSize; ++col) c.mask.set(r, col, rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)] == '1');
    }
    const auto& s = j.at("stackup");
    for (int n : s.at("layer_nets").get<std::vector<int>>()) {
      if (n != 1 && n != 2) throw FormatError("board file: layer net must be 1 or 2");
      c.stackup.layer_nets.push_back(static_cast<Net>(n));
    }
    c.stackup.gaps_mm = s.at("gaps_mm").get<std::vector<double>>();
    c.stackup.eps_r = s.at("eps_r").get<double>();
    c.ports.ic_cell = {j.at("ic_cell").at(0).get<int>(), j.at("ic_cell").at(1).get<int>()};
    for (const auto& p : j.at("decap_ports")) {
      DecapPort d;
      d.cell = {p.at("cell").at(0).get<int>(), p.at("cell").at(1).get<int>()};
      const auto side = p.at("side").get<std::string>();
      if (side != "top" && side != "bottom") throw FormatError("board file: side must be top or bottom");
      d.side = side == "top" ? Side::top : Side::bottom;
      c.ports.decap_ports.push_back(d);
      c.decap_indices.push_back(p.at("decap").get<int>());
    }
    auto in_grid = [](Cell x) { return x.row >= 0 && x.row < kGridSize && x.col >= 0 && x.col < kGridSize; };
    if (!in_grid(c.ports.ic_cell)) throw FormatError("board file: IC cell outside the grid");
    for (const auto& d : c.ports.decap_ports)
      if (!in_grid(d.cell)) throw FormatError("board file: decap cell outside the grid");
    if (!board_case_is_valid(c)) throw FormatError("board file: decap numbers must be 0..10");
    if (!stackup_is_valid(c.stackup)) throw FormatError("board file: invalid stackup");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("board file: ") + e.what());
  } catch (const PreconditionError& e) {
    throw FormatError(std::string("board file: ") + e.what());
  }
}

inline void save_board(const std::filesystem::path& path, const BoardCase& c) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << board_to_json(c).dump(2) << '\n';
}

inline BoardCase load_board(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return board_from_json(j);
}

/// Human-readable dump of the two network inputs.
inline void write_encoding_text(std::ostream& os, const EncodedSample& e) {
  static const char* names[3] = {"board (1 = board, 2 = IC)", "top decaps", "bottom decaps"};
  for (int ch = 0; ch < 3; ++ch) {
    os << "# channel " << ch << ": " << names[ch] << ", row 0 = lowest y\n";
    for (int r = 0; r < kGridSize; ++r) {
      for (int col = 0; col < kGridSize; ++col) os << (col ? " " : "") << static_cast<int>(e.at(ch, r, col));
      os << '\n';
    }
  }
  os << "# stackup: 9 layer codes (1 ground, 2 power, 0 empty), 8 gaps in mm\n";
  for (std::size_t i = 0; i < e.stackup_vec.size(); ++i) os << (i ? " " : "") << e.stackup_vec[i];
  os << '\n';
}

}  // namespace pdnforge
