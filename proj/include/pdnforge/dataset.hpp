#pragma once

// Labeled dataset generation and the binary record format.
//
// File layout: magic "PDN1", then records of 1438 bytes each:
//   u16   grid dimension (16)
//   u8    placement[3*16*16]
//   f64   stackup_vec[17]        little-endian
//   f32   label[132]             little-endian, dB ohm
//   u32   CRC-32 of the preceding bytes of this record

#include <zlib.h>

#include <atomic>
#include <bit>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pdnforge/boardgen.hpp"
#include "pdnforge/circuit.hpp"
#include "pdnforge/error.hpp"
#include "pdnforge/rng.hpp"
#include "pdnforge/solver.hpp"

namespace pdnforge {

inline constexpr char kDatasetMagic[4] = {'P', 'D', 'N', '1'};
inline constexpr std::size_t kRecordBytes = 2 + kPlacementSize + 8 * kStackupVecSize + 4 * kFrequencyPoints + 4;

struct DatasetRecord {
  EncodedSample sample;
  std::uint64_t board_seed = 0;
  std::uint32_t scenario = 0;
  std::uint64_t record_index = 0;
};

// ---------------------------------------------------------------------------
// Encoding

namespace record_detail {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  const U u = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

template <class T>
T get_le(const std::uint8_t* p) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return std::bit_cast<T>(u);
}

inline std::uint32_t crc(const std::uint8_t* p, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
}

}  // namespace record_detail

inline std::vector<std::uint8_t> encode_record(const EncodedSample& s) {
  require(s.label.size() == static_cast<std::size_t>(kFrequencyPoints), "encode_record: label must have 132 values");
  std::vector<std::uint8_t> out;
  out.reserve(kRecordBytes);
  record_detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(kGridSize));
  out.insert(out.end(), s.placement.begin(), s.placement.end());
  for (double v : s.stackup_vec) record_detail::put_le<double>(out, v);
  for (float v : s.label) record_detail::put_le<float>(out, v);
  record_detail::put_le<std::uint32_t>(out, record_detail::crc(out.data(), out.size()));
  return out;
}

/// Decodes one record; throws FormatError naming `index` and `offset`.
inline EncodedSample decode_record(const std::uint8_t* p, std::uint64_t index, std::uint64_t offset) {
  auto fail = [&](const std::string& why) {
    return FormatError("corrupt record " + std::to_string(index) + " at byte offset " + std::to_string(offset) +
                       ": " + why);
  };
  const std::uint32_t stored = record_detail::get_le<std::uint32_t>(p + kRecordBytes - 4);
  if (stored != record_detail::crc(p, kRecordBytes - 4)) throw fail("checksum mismatch");
  if (record_detail::get_le<std::uint16_t>(p) != kGridSize) throw fail("unexpected grid dimension");
  EncodedSample s;
  std::size_t off = 2;
  std::memcpy(s.placement.data(), p + off, kPlacementSize);
  off += kPlacementSize;
  for (auto& v : s.stackup_vec) {
    v = record_detail::get_le<double>(p + off);
    off += 8;
  }
  s.label.resize(kFrequencyPoints);
  for (auto& v : s.label) {
    v = record_detail::get_le<float>(p + off);
    off += 4;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Reading and writing

class RecordWriter {
 public:
  explicit RecordWriter(const std::filesystem::path& path) : os_(path, std::ios::binary | std::ios::trunc) {
    if (!os_) throw Error("cannot open " + path.string() + " for writing");
    os_.write(kDatasetMagic, 4);
  }
  void write(const EncodedSample& s) {
    const auto bytes = encode_record(s);
    os_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os_) throw Error("write failed");
    ++count_;
  }
  std::uint64_t count() const { return count_; }
  void close() { os_.close(); }

 private:
  std::ofstream os_;
  std::uint64_t count_ = 0;
};

/// Streaming reader; holds one record at a time.
class RecordReader {
 public:
  explicit RecordReader(const std::filesystem::path& path) : is_(path, std::ios::binary) {
    if (!is_) throw Error("cannot open " + path.string());
    char magic[4] = {};
    is_.read(magic, 4);
    if (is_.gcount() != 4 || std::memcmp(magic, kDatasetMagic, 4) != 0)
      throw FormatError(path.string() + ": missing PDN1 header");
  }

  std::optional<DatasetRecord> next() {
    std::vector<std::uint8_t> buf(kRecordBytes);
    const std::uint64_t offset = 4 + index_ * kRecordBytes;
    is_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(kRecordBytes));
    const auto got = static_cast<std::size_t>(is_.gcount());
    if (got == 0) return std::nullopt;
    if (got != kRecordBytes) {
      throw FormatError("truncated record " + std::to_string(index_) + " at byte offset " + std::to_string(offset) +
                        " (" + std::to_string(got) + " of " + std::to_string(kRecordBytes) +
                        " bytes); last valid record index " +
                        (index_ == 0 ? std::string("none") : std::to_string(index_ - 1)));
    }
    DatasetRecord r;
    r.sample = decode_record(buf.data(), index_, offset);
    r.record_index = index_++;
    return r;
  }

 private:
  std::ifstream is_;
  std::uint64_t index_ = 0;
};

inline std::vector<DatasetRecord> read_records(const std::filesystem::path& path) {
  RecordReader reader(path);
  std::vector<DatasetRecord> out;
  while (auto r = reader.next()) out.push_back(std::move(*r));
  return out;
}

inline void write_records(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
  RecordWriter w(path);
  for (const auto& r : records) w.write(r.sample);
}

/// One JSON object per line, for debugging.
inline void export_jsonl(std::ostream& os, const std::vector<DatasetRecord>& records) {
  for (const auto& r : records) {
    nlohmann::json j;
    j["record"] = r.record_index;
    j["board_seed"] = r.board_seed;
    j["scenario"] = r.scenario;
    j["placement"] = r.sample.placement;
    j["stackup"] = r.sample.stackup_vec;
    j["label_db"] = r.sample.label;
    os << j.dump() << '\n';
  }
}

/// Seeded permutation split into (train, test) index lists.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split(std::size_t total, std::size_t test_count,
                                                                           std::uint64_t seed) {
  require(test_count < total, "split: test count must be smaller than the dataset");
  std::vector<std::size_t> perm(total);
  for (std::size_t i = 0; i < total; ++i) perm[i] = i;
  Rng rng(seed);
  for (std::size_t i = total - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
  std::vector<std::size_t> test(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(test_count));
  std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(test_count), perm.end());
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Generation

struct GenerationConfig {
  std::uint64_t n_boards = 1;
  std::uint32_t scenarios_per_board = 1;
  std::uint64_t seed = 0;
  unsigned worker_count = 1;
  std::filesystem::path output;  // directory
  SolveOptions solve{};
};

struct BoardFailure {
  std::uint64_t board = 0;
  std::uint32_t attempt = 0;
  std::uint64_t seed = 0;
  std::string message;
};

struct GenerationReport {
  std::uint64_t records = 0;
  std::uint64_t solver_calls = 0;
  std::vector<std::uint64_t> board_seeds;
  std::vector<BoardFailure> failures;
  double wall_s = 0.0, sample_s = 0.0, bem_s = 0.0, nodal_s = 0.0, attach_s = 0.0, write_s = 0.0;
  std::filesystem::path dataset_path, manifest_path;
};

/// Seed of attempt `attempt` for board `board`; failed boards are replaced by
/// the next attempt's draw.
inline std::uint64_t board_seed(std::uint64_t seed, std::uint64_t board, std::uint32_t attempt) {
  return derive_seed(seed, (board << 8) | attempt);
}

namespace dataset_detail {

struct BoardResult {
  std::uint64_t seed = 0;
  std::vector<EncodedSample> samples;
  std::vector<BoardFailure> failures;
  double sample_s = 0, bem_s = 0, nodal_s = 0, attach_s = 0;
};

inline BoardResult generate_board(const GenerationConfig& cfg, std::uint64_t board, const FrequencyGrid& grid,
                                  std::atomic<std::uint64_t>& solver_calls) {
  using clock = std::chrono::steady_clock;
  BoardResult res;
  for (std::uint32_t attempt = 0; attempt < 256; ++attempt) {
    const std::uint64_t seed = board_seed(cfg.seed, board, attempt);
    try {
      const auto t0 = clock::now();
      Rng rng(seed);
      const PhysicalBoard pb = sample_physical_board(rng);
      const auto t1 = clock::now();
      SolveTimings st;
      ++solver_calls;
      const ZMatrixSet z = solve_board(pb, grid, cfg.solve, &st);
      const auto t2 = clock::now();
      std::vector<EncodedSample> samples;
      for (std::uint32_t s = 0; s < cfg.scenarios_per_board; ++s) {
        Rng srng(derive_seed(seed, s));
        const int populated = static_cast<int>(srng.uniform_int(0, kMaxDecaps));
        const BoardCase c = make_case(pb, sample_decap_indices(srng, pb.ports.decap_ports.size(), populated), seed);
        const ImpedanceCurve curve = attach_decaps(z, assignment_from_indices(c.decap_indices));
        EncodedSample e = encode_board(c);
        e.label.assign(curve.db.begin(), curve.db.end());
        samples.push_back(std::move(e));
      }
      const auto t3 = clock::now();
      res.seed = seed;
      res.samples = std::move(samples);
      res.sample_s = std::chrono::duration<double>(t1 - t0).count();
      res.bem_s = st.bem_s;
      res.nodal_s = st.nodal_s;
      res.attach_s = std::chrono::duration<double>(t3 - t2).count();
      return res;
    } catch (const Error& e) {
      res.failures.push_back({board, attempt, seed, e.what()});
    }
  }
  throw NumericalError("board " + std::to_string(board) + ": no successful solve in 256 attempts");
}

}  // namespace dataset_detail

/// Generates `n_boards * scenarios_per_board` records into
/// <output>/dataset.pdn plus <output>/manifest.json. One Z-parameter solve per
/// board; scenarios only re-terminate the decap ports. Records are written in
/// (board, scenario) order whatever the worker count.
inline GenerationReport generate_dataset(const GenerationConfig& cfg) {
  require(cfg.n_boards >= 1 && cfg.scenarios_per_board >= 1, "generate_dataset: counts must be >= 1");
  require(cfg.scenarios_per_board <= 255 * 255, "generate_dataset: too many scenarios");
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  std::filesystem::create_directories(cfg.output);
  GenerationReport rep;
  rep.dataset_path = cfg.output / "dataset.pdn";
  rep.manifest_path = cfg.output / "manifest.json";
  const FrequencyGrid grid = make_frequency_grid();

  RecordWriter writer(rep.dataset_path);
  std::atomic<std::uint64_t> next_board{0}, solver_calls{0};
  std::mutex mu;
  std::condition_variable cv;
  std::map<std::uint64_t, dataset_detail::BoardResult> done;
  std::uint64_t written = 0;
  std::exception_ptr error;
  const unsigned workers = std::max(1u, cfg.worker_count);
  const std::uint64_t window = 2ull * workers;

  auto work = [&] {
    for (;;) {
      const std::uint64_t b = next_board++;
      if (b >= cfg.n_boards) return;
      {
        std::unique_lock lk(mu);
        cv.wait(lk, [&] { return b < written + window || error; });
        if (error) return;
      }
      try {
        auto r = dataset_detail::generate_board(cfg, b, grid, solver_calls);
        std::lock_guard lk(mu);
        done.emplace(b, std::move(r));
      } catch (...) {
        std::lock_guard lk(mu);
        if (!error) error = std::current_exception();
      }
      cv.notify_all();
    }
  };

  std::vector<std::thread> pool;
  for (unsigned i = 0; i < workers; ++i) pool.emplace_back(work);
  while (written < cfg.n_boards) {
    dataset_detail::BoardResult r;
    {
      std::unique_lock lk(mu);
      cv.wait(lk, [&] { return done.count(written) || error; });
      if (error) break;
      r = std::move(done.at(written));
      done.erase(written);
    }
    const auto tw = clock::now();
    for (const auto& s : r.samples) writer.write(s);
    rep.write_s += std::chrono::duration<double>(clock::now() - tw).count();
    rep.board_seeds.push_back(r.seed);
    rep.failures.insert(rep.failures.end(), r.failures.begin(), r.failures.end());
    rep.sample_s += r.sample_s;
    rep.bem_s += r.bem_s;
    rep.nodal_s += r.nodal_s;
    rep.attach_s += r.attach_s;
    {
      std::lock_guard lk(mu);
      ++written;
    }
    cv.notify_all();
  }
  for (auto& t : pool) t.join();
  writer.close();
  rep.records = writer.count();
  rep.solver_calls = solver_calls.load();
  rep.wall_s = std::chrono::duration<double>(clock::now() - start).count();

  nlohmann::json m;
  m["tool"] = "pdnforge";
  m["solver_version"] = kSolverVersion;
  m["status"] = error ? "failed" : "ok";
  m["config"] = {{"n_boards", cfg.n_boards},
                 {"scenarios_per_board", cfg.scenarios_per_board},
                 {"seed", cfg.seed},
                 {"worker_count", workers},
                 {"segment_mm", cfg.solve.segment_mm},
                 {"via_radius_m", cfg.solve.via_radius}};
  m["record_format"] = {{"magic", "PDN1"}, {"record_bytes", kRecordBytes}, {"label", "dB ohm, 132 log-spaced points 1e4..2e7 Hz"}};
  m["counts"] = {{"records", rep.records}, {"boards", rep.board_seeds.size()}, {"solver_calls", rep.solver_calls},
                 {"failures", rep.failures.size()}};
  m["timing_s"] = {{"wall", rep.wall_s},  {"sample", rep.sample_s}, {"bem", rep.bem_s},
                   {"nodal", rep.nodal_s}, {"attach", rep.attach_s}, {"write", rep.write_s}};
  m["board_seeds"] = rep.board_seeds;
  nlohmann::json fails = nlohmann::json::array();
  for (const auto& f : rep.failures)
    fails.push_back({{"board", f.board}, {"attempt", f.attempt}, {"seed", f.seed}, {"error", f.message}});
  m["failures"] = fails;
  std::ofstream(rep.manifest_path) << m.dump(2) << '\n';
  if (error) std::rethrow_exception(error);
  return rep;
}

/// Fills board seed and scenario of each record from a generation manifest.
inline void attach_provenance(std::vector<DatasetRecord>& records, const nlohmann::json& manifest) {
  const auto seeds = manifest.at("board_seeds").get<std::vector<std::uint64_t>>();
  const auto per = manifest.at("config").at("scenarios_per_board").get<std::uint64_t>();
  for (auto& r : records) {
    const std::uint64_t b = r.record_index / per;
    if (b >= seeds.size()) throw FormatError("record " + std::to_string(r.record_index) + " not covered by manifest");
    r.board_seed = seeds[b];
    r.scenario = static_cast<std::uint32_t>(r.record_index % per);
  }
}

}  // namespace pdnforge
