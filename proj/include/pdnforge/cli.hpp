#pragma once

// pdnforge command line: gen-board, solve, gen-dataset, train, predict,
// compare, bench. Exit codes: 0 ok, 1 numerical failure, 2 usage error.
// PDNFORGE_LOG=error|info|debug sets stderr verbosity (default info).

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pdnforge/board_io.hpp"
#include "pdnforge/boardgen.hpp"
#include "pdnforge/circuit.hpp"
#include "pdnforge/dataset.hpp"
#include "pdnforge/error.hpp"
#include "pdnforge/solver.hpp"
#include "pdnforge/surrogate.hpp"

namespace pdnforge::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level_from_env() {
  const char* v = std::getenv("PDNFORGE_LOG");
  if (!v) return LogLevel::info;
  const std::string s(v);
  if (s == "error") return LogLevel::error;
  if (s == "debug") return LogLevel::debug;
  return LogLevel::info;
}

class Logger {
 public:
  Logger(std::ostream& os, LogLevel level) : os_(os), level_(level) {}
  void error(const std::string& m) const { write(LogLevel::error, "error", m); }
  void info(const std::string& m) const { write(LogLevel::info, "info", m); }
  void debug(const std::string& m) const { write(LogLevel::debug, "debug", m); }

 private:
  void write(LogLevel l, const char* tag, const std::string& m) const {
    if (static_cast<int>(l) <= static_cast<int>(level_)) os_ << "pdnforge [" << tag << "] " << m << '\n';
  }
  std::ostream& os_;
  LogLevel level_;
};

/// Bad flags or missing inputs (exit 2).
class UsageError : public Error {
 public:
  using Error::Error;
};

namespace detail {

using clock = std::chrono::steady_clock;

inline double seconds_since(clock::time_point t0) { return std::chrono::duration<double>(clock::now() - t0).count(); }

/// One manifest per run, written to <out>/manifest.json.
struct RunManifest {
  nlohmann::json j;
  std::filesystem::path dir;

  RunManifest(const std::string& subcommand, std::filesystem::path out) : dir(std::move(out)) {
    j["tool"] = "pdnforge";
    j["tool_version"] = kToolVersion;
    j["solver_version"] = kSolverVersion;
    j["subcommand"] = subcommand;
    j["config"] = nlohmann::json::object();
    j["seeds"] = nlohmann::json::object();
    j["timings_s"] = nlohmann::json::object();
    j["outputs"] = nlohmann::json::array();
    j["status"] = "running";
  }
  void output(const std::filesystem::path& p) { j["outputs"].push_back(p.string()); }
  void write(std::ostream* fallback = nullptr) const {
    if (!dir.empty()) {
      std::filesystem::create_directories(dir);
      std::ofstream os(dir / "manifest.json");
      os << j.dump(2) << '\n';
    } else if (fallback) {
      *fallback << j.dump(2) << '\n';
    }
  }
};

inline void prepare_out(const std::filesystem::path& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec || !std::filesystem::is_directory(out)) throw UsageError("cannot create output directory " + out.string());
}

template <class Stream>
Stream open_out(const std::filesystem::path& p, std::ios::openmode mode = std::ios::out) {
  Stream s(p, mode);
  if (!s) throw Error("cannot open " + p.string() + " for writing");
  return s;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::filesystem::path dataset_file(const std::filesystem::path& p) {
  return std::filesystem::is_directory(p) ? p / "dataset.pdn" : p;
}

inline std::string touchstone_name(std::size_t ports) { return "board.z" + std::to_string(ports) + "p"; }

struct BemRun {
  ZMatrixSet z;
  ImpedanceCurve curve;
  SolveTimings timings;
  double attach_s = 0.0, total_s = 0.0;
};

inline BemRun bem_solve(const BoardCase& c, const SolveOptions& opt) {
  const auto t0 = clock::now();
  BemRun r;
  const FrequencyGrid grid = make_frequency_grid();
  r.z = solve_board(c.contour, c.stackup, c.ports, grid, opt, &r.timings);
  const auto t1 = clock::now();
  r.curve = attach_decaps(r.z, assignment_from_indices(c.decap_indices));
  r.attach_s = seconds_since(t1);
  r.total_s = seconds_since(t0);
  return r;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------

inline void gen_board(RunManifest& m, const Logger& log, std::uint64_t seed, int decaps) {
  const auto t0 = clock::now();
  Rng rng(seed);
  if (decaps < 0) decaps = static_cast<int>(Rng(derive_seed(seed, 1)).index(kMaxDecaps + 1));
  const BoardCase c = sample_board_case(rng, decaps, seed);
  EncodedSample e = encode_board(c);
  e.label.assign(kFrequencyPoints, 0.0f);
  m.j["timings_s"]["sample"] = seconds_since(t0);
  save_board(m.dir / "board.json", c);
  m.output(m.dir / "board.json");
  {
    auto os = open_out<std::ofstream>(m.dir / "encoded.txt");
    write_encoding_text(os, e);
  }
  m.output(m.dir / "encoded.txt");
  {
    RecordWriter w(m.dir / "encoded.pdn");
    w.write(e);
  }
  m.output(m.dir / "encoded.pdn");
  m.j["config"] = {{"seed", seed}, {"decaps", decaps}};
  m.j["seeds"]["board"] = seed;
  m.j["board"] = {{"area_mm2", c.contour.area()},
                  {"board_cells", c.mask.count()},
                  {"layers", c.stackup.layers()},
                  {"total_thickness_mm", c.stackup.total_thickness_mm()},
                  {"ports", c.ports.decap_ports.size() + 1},
                  {"encoded_pdn_label", "unset (zeros); run solve for labels"}};
  log.info("board with " + std::to_string(c.mask.count()) + " cells, " + std::to_string(c.stackup.layers()) +
           " layers written to " + m.dir.string());
}

inline void solve(RunManifest& m, const Logger& log, const std::filesystem::path& board, const SolveOptions& opt) {
  const BoardCase c = load_board(board);
  m.j["config"] = {{"board", board.string()}, {"segment_mm", opt.segment_mm}, {"via_radius_m", opt.via_radius}};
  m.j["seeds"]["board"] = c.seed;
  const BemRun r = bem_solve(c, opt);
  m.j["timings_s"] = {{"bem", r.timings.bem_s}, {"nodal", r.timings.nodal_s}, {"attach", r.attach_s}, {"total", r.total_s}};
  m.j["ports"] = r.z.ports();
  m.j["max_asymmetry"] = r.z.max_asymmetry;
  const auto ts = m.dir / touchstone_name(r.z.ports());
  {
    auto os = open_out<std::ofstream>(ts);
    write_touchstone(os, r.z);
  }
  m.output(ts);
  {
    auto os = open_out<std::ofstream>(m.dir / "curve.csv");
    write_curve_csv(os, r.curve);
  }
  m.output(m.dir / "curve.csv");
  log.info("solved " + std::to_string(r.z.ports()) + " ports in " + fmt(r.total_s) + " s");
}

inline void gen_dataset(RunManifest& m, const Logger& log, const GenerationConfig& cfg) {
  m.j["config"] = {{"boards", cfg.n_boards}, {"scenarios", cfg.scenarios_per_board}, {"seed", cfg.seed},
                   {"workers", cfg.worker_count}};
  m.j["seeds"]["dataset"] = cfg.seed;
  log.info("generating " + std::to_string(cfg.n_boards) + " boards x " + std::to_string(cfg.scenarios_per_board) +
           " scenarios");
  const GenerationReport rep = generate_dataset(cfg);
  // Fold the generation manifest into the run manifest (one file per run).
  std::ifstream is(rep.manifest_path);
  const nlohmann::json gen = nlohmann::json::parse(is);
  for (auto it = gen.begin(); it != gen.end(); ++it)
    if (!m.j.contains(it.key()) || it.key() == "timing_s") m.j[it.key()] = it.value();
  m.j["timings_s"] = gen.at("timing_s");
  m.j.erase("timing_s");
  m.j["generation"] = {{"records", rep.records}, {"solver_calls", rep.solver_calls}, {"failures", rep.failures.size()}};
  m.output(rep.dataset_path);
  log.info("wrote " + std::to_string(rep.records) + " records in " + fmt(rep.wall_s) + " s");
}

struct TrainArgs {
  std::filesystem::path dataset;
  std::size_t test_count = 0;
  nn::TrainConfig train;
};

inline void train(RunManifest& m, const Logger& log, const TrainArgs& a) {
  const auto t0 = clock::now();
  const auto path = dataset_file(a.dataset);
  const auto records = read_records(path);
  if (records.empty()) throw UsageError("dataset " + path.string() + " has no records");
  if (a.test_count >= records.size()) throw UsageError("--test-count must be smaller than the record count");
  const auto [train_idx, test_idx] = split(records.size(), a.test_count, a.train.seed);
  const auto train_set = nn::make_sample_set<float>(records, train_idx);
  const auto test_set = nn::make_sample_set<float>(records, test_idx);
  m.j["timings_s"]["load"] = seconds_since(t0);
  const nn::ModelConfig mcfg;
  m.j["config"] = {{"dataset", path.string()}, {"test_count", a.test_count}, {"train", a.train}, {"model", mcfg}};
  m.j["seeds"]["train"] = a.train.seed;
  m.j["counts"] = {{"records", records.size()}, {"train", train_idx.size()}, {"test", test_idx.size()}};

  const auto hist_path = m.dir / "loss_history.csv";
  {
    auto os = open_out<std::ofstream>(hist_path);
    os << "epoch,train_rmse_db,test_rmse_db,seconds\n";
  }
  nn::TrainOptions opt;
  opt.checkpoint = m.dir / "model.ckpt";
  opt.on_epoch = [&](const nn::EpochRecord& r) {
    std::ofstream os(hist_path, std::ios::app);
    os << r.epoch << ',' << fmt(r.train_loss) << ',' << (std::isnan(r.test_loss) ? "" : fmt(r.test_loss)) << ','
       << fmt(r.seconds) << '\n';
    log.info("epoch " + std::to_string(r.epoch) + ": train " + fmt(r.train_loss) + " dB, test " + fmt(r.test_loss) +
             " dB, " + fmt(r.seconds) + " s");
  };
  m.output(*opt.checkpoint);
  m.output(hist_path);
  const auto t1 = clock::now();
  const auto res = nn::train<float>(a.train, mcfg, train_set, test_idx.empty() ? nullptr : &test_set, opt);
  m.j["timings_s"]["train"] = seconds_since(t1);
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : res.history)
    hist.push_back({{"epoch", r.epoch},
                    {"train_rmse_db", r.train_loss},
                    {"test_rmse_db", std::isnan(r.test_loss) ? nlohmann::json(nullptr) : nlohmann::json(r.test_loss)},
                    {"seconds", r.seconds}});
  m.j["history"] = hist;
  if (!res.history.empty() && !std::isnan(res.history.back().test_loss))
    m.j["final_test_rmse_db"] = res.history.back().test_loss;
}

inline void write_predicted_csv(std::ostream& os, const ImpedanceCurve& c) {
  os << "freq_hz,db\n";
  for (std::size_t i = 0; i < c.grid.size(); ++i) os << io_detail::fmt(c.grid.points[i]) << ',' << io_detail::fmt(c.db[i]) << '\n';
}

inline void predict(RunManifest& m, const Logger& log, const std::filesystem::path& ckpt,
                    const std::filesystem::path& board) {
  const auto t0 = clock::now();
  const auto params = nn::load_checkpoint<float>(ckpt);
  const BoardCase c = load_board(board);
  m.j["timings_s"]["load"] = seconds_since(t0);
  m.j["config"] = {{"checkpoint", ckpt.string()}, {"board", board.string()}};
  m.j["seeds"]["board"] = c.seed;
  const auto t1 = clock::now();
  const ImpedanceCurve curve = nn::predict(params, encode_board(c));
  m.j["timings_s"]["inference"] = seconds_since(t1);
  {
    auto os = open_out<std::ofstream>(m.dir / "predicted.csv");
    write_predicted_csv(os, curve);
  }
  m.output(m.dir / "predicted.csv");
  log.info("prediction written to " + (m.dir / "predicted.csv").string());
}

inline void compare(RunManifest& m, const Logger& log, const std::filesystem::path& ckpt,
                    const std::filesystem::path& board, const SolveOptions& opt) {
  const auto params = nn::load_checkpoint<float>(ckpt);
  const BoardCase c = load_board(board);
  m.j["config"] = {{"checkpoint", ckpt.string()}, {"board", board.string()}, {"segment_mm", opt.segment_mm}};
  m.j["seeds"]["board"] = c.seed;
  const BemRun bem = bem_solve(c, opt);
  const auto t1 = clock::now();
  const ImpedanceCurve dnn = nn::predict(params, encode_board(c));
  const double dnn_s = seconds_since(t1);
  double ss = 0.0, worst = 0.0;
  {
    auto os = open_out<std::ofstream>(m.dir / "compare.csv");
    os << "freq_hz,db_bem,db_dnn,abs_diff_db\n";
    for (std::size_t i = 0; i < bem.curve.grid.size(); ++i) {
      const double d = std::abs(bem.curve.db[i] - dnn.db[i]);
      ss += d * d;
      worst = std::max(worst, d);
      os << io_detail::fmt(bem.curve.grid.points[i]) << ',' << io_detail::fmt(bem.curve.db[i]) << ','
         << io_detail::fmt(dnn.db[i]) << ',' << io_detail::fmt(d) << '\n';
    }
  }
  const double rmse = std::sqrt(ss / static_cast<double>(bem.curve.grid.size()));
  const nlohmann::json summary = {{"rmse_db", rmse},
                                  {"max_abs_error_db", worst},
                                  {"bem_wall_s", bem.total_s},
                                  {"dnn_wall_s", dnn_s},
                                  {"speedup", bem.total_s / dnn_s}};
  {
    auto os = open_out<std::ofstream>(m.dir / "summary.json");
    os << summary.dump(2) << '\n';
  }
  m.output(m.dir / "compare.csv");
  m.output(m.dir / "summary.json");
  m.j["summary"] = summary;
  m.j["timings_s"] = {{"bem", bem.total_s}, {"dnn", dnn_s}};
  log.info("RMSE " + fmt(rmse) + " dB, max " + fmt(worst) + " dB, BEM " + fmt(bem.total_s) + " s, DNN " +
           fmt(dnn_s) + " s");
}

struct BenchArgs {
  std::filesystem::path board, checkpoint;
  int bem_repeats = 3;
  int dnn_repeats = 50;
};

inline void bench(RunManifest& m, const Logger& log, const BenchArgs& a, const SolveOptions& opt, std::ostream& out) {
  const BoardCase c = load_board(a.board);
  const auto t0 = clock::now();
  const auto params = nn::load_checkpoint<float>(a.checkpoint);
  const double load_s = seconds_since(t0);
  m.j["config"] = {{"board", a.board.string()},
                   {"checkpoint", a.checkpoint.string()},
                   {"bem_repeats", a.bem_repeats},
                   {"dnn_repeats", a.dnn_repeats},
                   {"segment_mm", opt.segment_mm}};
  m.j["seeds"]["board"] = c.seed;

  std::vector<double> bem_t, dnn_t;
  for (int i = 0; i < a.bem_repeats; ++i) {
    bem_t.push_back(bem_solve(c, opt).total_s);
    log.debug("BEM run " + std::to_string(i) + ": " + fmt(bem_t.back()) + " s");
  }
  for (int i = 0; i < 3; ++i) (void)nn::predict(params, encode_board(c));  // warm-up
  for (int i = 0; i < a.dnn_repeats; ++i) {
    const auto t = clock::now();
    const auto curve = nn::predict(params, encode_board(c));
    dnn_t.push_back(seconds_since(t));
    if (curve.db.empty()) throw NumericalError("empty prediction");
  }
  const double bem = median(bem_t), dnn = median(dnn_t);
  const nlohmann::json result = {{"bem_median_s", bem},
                                 {"bem_min_s", *std::min_element(bem_t.begin(), bem_t.end())},
                                 {"dnn_median_s", dnn},
                                 {"dnn_min_s", *std::min_element(dnn_t.begin(), dnn_t.end())},
                                 {"dnn_checkpoint_load_s", load_s},
                                 {"speedup", bem / dnn}};
  m.j["bench"] = result;
  m.j["timings_s"] = {{"bem", bem}, {"dnn", dnn}};
  out << std::left << std::setw(22) << "method" << "wall-clock per board\n";
  out << std::setw(22) << "BEM + nodal (median)" << fmt(bem) << " s\n";
  out << std::setw(22) << "DNN (median)" << fmt(dnn) << " s\n";
  out << std::setw(22) << "speedup" << fmt(bem / dnn) << "x\n";
  if (!m.dir.empty()) {
    auto os = open_out<std::ofstream>(m.dir / "bench.json");
    os << result.dump(2) << '\n';
    m.output(m.dir / "bench.json");
  }
}

}  // namespace detail

/// Runs one subcommand; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  const Logger log(err, log_level_from_env());
  CLI::App app{"pdnforge: PDN impedance solver, dataset generator and CNN surrogate", "pdnforge"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  std::filesystem::path out_dir, board, checkpoint, dataset;
  std::uint64_t seed = 0;
  int decaps = -1;
  SolveOptions sopt;

  auto* gb = app.add_subcommand("gen-board", "sample a random board case");
  gb->add_option("--seed", seed, "random seed")->required();
  gb->add_option("--decaps", decaps, "populated decap ports (default: drawn from the seed)")
      ->check(CLI::Range(0, kMaxDecaps));
  gb->add_option("--out", out_dir, "output directory")->required();

  auto* sv = app.add_subcommand("solve", "Z-parameters and IC impedance of a board file");
  sv->add_option("--board", board, "board JSON from gen-board")->required()->check(CLI::ExistingFile);
  sv->add_option("--out", out_dir, "output directory")->required();
  sv->add_option("--segment-mm", sopt.segment_mm, "boundary segment length")->check(CLI::Range(0.05, 50.0));

  GenerationConfig gcfg;
  auto* gd = app.add_subcommand("gen-dataset", "generate a labeled dataset");
  gd->add_option("--boards", gcfg.n_boards, "number of boards")->required()->check(CLI::PositiveNumber);
  gd->add_option("--scenarios", gcfg.scenarios_per_board, "decap scenarios per board")
      ->required()
      ->check(CLI::Range(1u, 65025u));
  gd->add_option("--seed", gcfg.seed, "random seed")->required();
  gd->add_option("--workers", gcfg.worker_count, "worker threads")->check(CLI::Range(1u, 256u));
  gd->add_option("--out", out_dir, "output directory")->required();

  detail::TrainArgs targs;
  auto* tr = app.add_subcommand("train", "train the surrogate");
  tr->add_option("--dataset", dataset, "dataset file or directory")->required()->check(CLI::ExistingPath);
  tr->add_option("--test-count", targs.test_count, "held-out records")->required();
  tr->add_option("--epochs", targs.train.epochs, "epochs")->required()->check(CLI::PositiveNumber);
  tr->add_option("--out", out_dir, "output directory")->required();
  tr->add_option("--seed", targs.train.seed, "split, init and shuffle seed");
  tr->add_option("--batch-size", targs.train.batch_size, "batch size")->check(CLI::PositiveNumber);
  tr->add_option("--learning-rate", targs.train.learning_rate, "Adam step size")->check(CLI::PositiveNumber);

  auto* pr = app.add_subcommand("predict", "surrogate prediction for a board file");
  pr->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  pr->add_option("--board", board, "board JSON")->required()->check(CLI::ExistingFile);
  pr->add_option("--out", out_dir, "output directory")->required();

  auto* cp = app.add_subcommand("compare", "solver vs surrogate on one board");
  cp->add_option("--board", board, "board JSON")->required()->check(CLI::ExistingFile);
  cp->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  cp->add_option("--out", out_dir, "output directory")->required();
  cp->add_option("--segment-mm", sopt.segment_mm, "boundary segment length")->check(CLI::Range(0.05, 50.0));

  detail::BenchArgs bargs;
  auto* bn = app.add_subcommand("bench", "latency table: solver vs surrogate");
  bn->add_option("--board", bargs.board, "board JSON")->required()->check(CLI::ExistingFile);
  bn->add_option("--checkpoint", bargs.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  bn->add_option("--out", out_dir, "optional output directory (manifest goes to stdout otherwise)");
  bn->add_option("--bem-repeats", bargs.bem_repeats, "solver timing runs")->check(CLI::Range(1, 1000));
  bn->add_option("--dnn-repeats", bargs.dnn_repeats, "surrogate timing runs")->check(CLI::Range(1, 100000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "pdnforge: " << e.what() << '\n';
    if (const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front())
      err << "run '" << "pdnforge " << sub->get_name() << " --help' for usage\n";
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  detail::RunManifest man(name, out_dir);
  const auto t0 = detail::clock::now();
  int code = 0;
  try {
    if (!out_dir.empty()) detail::prepare_out(out_dir);
    if (name == "gen-board") {
      detail::gen_board(man, log, seed, decaps);
    } else if (name == "solve") {
      detail::solve(man, log, board, sopt);
    } else if (name == "gen-dataset") {
      gcfg.output = out_dir;
      detail::gen_dataset(man, log, gcfg);
    } else if (name == "train") {
      targs.dataset = dataset;
      detail::train(man, log, targs);
    } else if (name == "predict") {
      detail::predict(man, log, checkpoint, board);
    } else if (name == "compare") {
      detail::compare(man, log, checkpoint, board, sopt);
    } else if (name == "bench") {
      detail::bench(man, log, bargs, sopt, out);
    }
    man.j["status"] = "ok";
  } catch (const UsageError& e) {
    code = 2;
    log.error(e.what());
    man.j["status"] = "failed";
    man.j["error"] = e.what();
  } catch (const FormatError& e) {
    code = 2;
    log.error(e.what());
    man.j["status"] = "failed";
    man.j["error"] = e.what();
  } catch (const PreconditionError& e) {
    code = 2;
    log.error(e.what());
    man.j["status"] = "failed";
    man.j["error"] = e.what();
  } catch (const std::exception& e) {
    code = 1;
    log.error(e.what());
    man.j["status"] = "failed";
    man.j["error"] = e.what();
  }
  man.j["timings_s"]["wall"] = detail::seconds_since(t0);
  try {
    man.write(name == "bench" ? &out : nullptr);
  } catch (const std::exception& e) {
    log.error(std::string("could not write manifest: ") + e.what());
    if (code == 0) code = 1;
  }
  return code;
}

}  // namespace pdnforge::cli
