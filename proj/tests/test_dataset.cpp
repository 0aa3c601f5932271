#include <gtest/gtest.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "pdnforge/dataset.hpp"

using namespace pdnforge;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pdnforge_test_dataset_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                           static_cast<std::streamsize>(bytes.size()));
}

GenerationConfig small_config(const fs::path& out, std::uint64_t boards = 2, std::uint32_t scenarios = 3) {
  GenerationConfig c;
  c.n_boards = boards;
  c.scenarios_per_board = scenarios;
  c.seed = 7;
  c.output = out;
  return c;
}

EncodedSample golden_sample() {
  EncodedSample s;
  for (std::size_t i = 0; i < s.placement.size(); ++i) s.placement[i] = static_cast<std::uint8_t>((7 * i) % 11);
  for (std::size_t k = 0; k < s.stackup_vec.size(); ++k) s.stackup_vec[k] = 0.25 * static_cast<double>(k) + 1.0 / 3.0;
  for (int i = 0; i < kFrequencyPoints; ++i) s.label.push_back(static_cast<float>(-20.0 + 0.5 * i));
  return s;
}

std::vector<DatasetRecord> synthetic_records(int n) {
  Rng rng(5);
  std::vector<DatasetRecord> out;
  for (int i = 0; i < n; ++i) {
    Rng case_rng(rng.next());
    const BoardCase c = sample_board_case(case_rng, static_cast<int>(case_rng.uniform_int(0, kMaxDecaps)));
    DatasetRecord r;
    r.sample = encode_board(c);
    for (int k = 0; k < kFrequencyPoints; ++k) r.sample.label.push_back(static_cast<float>(rng.uniform(-60, 20)));
    r.record_index = static_cast<std::uint64_t>(i);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

TEST(Record, SizeIsFixed) {
  EXPECT_EQ(kRecordBytes, 1438u);
  EXPECT_EQ(encode_record(golden_sample()).size(), kRecordBytes);
}

TEST(Record, MatchesGoldenBytes) {
  const auto golden = slurp(fs::path(PDNFORGE_GOLDEN_DIR) / "record.pdn");
  ASSERT_EQ(golden.size(), 4 + kRecordBytes);
  const fs::path dir = scratch("golden");
  RecordWriter w(dir / "one.pdn");
  w.write(golden_sample());
  w.close();
  EXPECT_EQ(slurp(dir / "one.pdn"), golden);
  const auto back = read_records(fs::path(PDNFORGE_GOLDEN_DIR) / "record.pdn");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].sample, golden_sample());
}

TEST(Record, RejectsWrongLabelLength) {
  EncodedSample s = golden_sample();
  s.label.pop_back();
  EXPECT_THROW(encode_record(s), PreconditionError);
}

TEST(Record, RoundTripFieldExact) {
  const fs::path dir = scratch("roundtrip");
  const auto records = synthetic_records(25);
  write_records(dir / "d.pdn", records);
  EXPECT_EQ(fs::file_size(dir / "d.pdn"), 4 + 25 * kRecordBytes);
  const auto back = read_records(dir / "d.pdn");
  ASSERT_EQ(back.size(), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(back[i].sample, records[i].sample) << i;
    EXPECT_EQ(back[i].record_index, i);
  }
}

TEST(Record, TruncationNamesLastValidRecord) {
  const fs::path dir = scratch("trunc");
  write_records(dir / "d.pdn", synthetic_records(4));
  auto bytes = slurp(dir / "d.pdn");
  bytes.resize(4 + 2 * kRecordBytes + 100);
  spit(dir / "t.pdn", bytes);
  try {
    read_records(dir / "t.pdn");
    FAIL() << "no error";
  } catch (const FormatError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("last valid record index 1"), std::string::npos) << m;
    EXPECT_NE(m.find("offset " + std::to_string(4 + 2 * kRecordBytes)), std::string::npos) << m;
  }
}

TEST(Record, CorruptionNamesIndexAndOffset) {
  const fs::path dir = scratch("corrupt");
  write_records(dir / "d.pdn", synthetic_records(4));
  auto bytes = slurp(dir / "d.pdn");
  bytes[4 + 2 * kRecordBytes + 500] ^= 0x40;
  spit(dir / "c.pdn", bytes);
  RecordReader r(dir / "c.pdn");
  EXPECT_TRUE(r.next());
  EXPECT_TRUE(r.next());
  try {
    r.next();
    FAIL() << "no error";
  } catch (const FormatError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("record 2"), std::string::npos) << m;
    EXPECT_NE(m.find("offset " + std::to_string(4 + 2 * kRecordBytes)), std::string::npos) << m;
  }
}

TEST(Record, MissingMagicIsFormatError) {
  const fs::path dir = scratch("magic");
  spit(dir / "m.pdn", {'P', 'D', 'N', '2'});
  EXPECT_THROW(RecordReader(dir / "m.pdn"), FormatError);
}

TEST(Split, SizesAndDisjoint) {
  const auto [train, test] = split(100, 10, 3);
  EXPECT_EQ(train.size(), 90u);
  EXPECT_EQ(test.size(), 10u);
  std::set<std::size_t> all(train.begin(), train.end());
  for (auto i : test) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), 100u);
  EXPECT_EQ(*all.rbegin(), 99u);
}

TEST(Split, SeededPermutation) {
  EXPECT_EQ(split(100, 10, 3), split(100, 10, 3));
  EXPECT_NE(split(100, 10, 3).second, split(100, 10, 4).second);
  EXPECT_THROW(split(10, 10, 0), PreconditionError);
}

TEST(Generate, CountsAndInvariants) {
  const fs::path dir = scratch("counts");
  const GenerationReport rep = generate_dataset(small_config(dir, 2, 3));
  EXPECT_EQ(rep.records, 6u);
  const auto records = read_records(rep.dataset_path);
  ASSERT_EQ(records.size(), 6u);
  for (const auto& r : records) EXPECT_EQ(encoded_sample_violation(r.sample), "");
  // scenarios of one board share the physical encoding except the decap maps
  for (int s = 1; s < 3; ++s) {
    EXPECT_EQ(records[s].sample.stackup_vec, records[0].sample.stackup_vec);
    for (int r = 0; r < kGridSize; ++r)
      for (int c = 0; c < kGridSize; ++c) EXPECT_EQ(records[s].sample.at(0, r, c), records[0].sample.at(0, r, c));
  }
}

TEST(Generate, ByteIdenticalRerun) {
  const fs::path a = scratch("run_a"), b = scratch("run_b");
  generate_dataset(small_config(a));
  generate_dataset(small_config(b));
  EXPECT_EQ(slurp(a / "dataset.pdn"), slurp(b / "dataset.pdn"));
  // the manifest differs only in its timing block
  auto ma = nlohmann::json::parse(std::ifstream(a / "manifest.json"));
  auto mb = nlohmann::json::parse(std::ifstream(b / "manifest.json"));
  ma.erase("timing_s");
  mb.erase("timing_s");
  EXPECT_EQ(ma, mb);
}

TEST(Generate, WorkerCountDoesNotChangeOutput) {
  const fs::path a = scratch("w1"), b = scratch("w3");
  GenerationConfig ca = small_config(a, 4, 2), cb = small_config(b, 4, 2);
  cb.worker_count = 3;
  generate_dataset(ca);
  generate_dataset(cb);
  EXPECT_EQ(slurp(a / "dataset.pdn"), slurp(b / "dataset.pdn"));
}

TEST(Generate, OneSolvePerBoardWhateverTheScenarioCount) {
  const fs::path a = scratch("one"), b = scratch("many");
  const GenerationReport ra = generate_dataset(small_config(a, 3, 1));
  const GenerationReport rb = generate_dataset(small_config(b, 3, 40));
  EXPECT_EQ(ra.solver_calls, 3u + ra.failures.size());
  EXPECT_EQ(rb.solver_calls, ra.solver_calls);
  EXPECT_EQ(rb.records, 120u);
}

TEST(Generate, ProvenanceFromManifestAlone) {
  const fs::path dir = scratch("prov");
  const GenerationReport rep = generate_dataset(small_config(dir, 2, 3));
  auto records = read_records(rep.dataset_path);
  attach_provenance(records, nlohmann::json::parse(std::ifstream(rep.manifest_path)));
  for (const auto& r : records) {
    // rebuild the record from (board seed, scenario) the way generation does
    Rng rng(r.board_seed);
    const PhysicalBoard pb = sample_physical_board(rng);
    Rng srng(derive_seed(r.board_seed, r.scenario));
    const int populated = static_cast<int>(srng.uniform_int(0, kMaxDecaps));
    const BoardCase c = make_case(pb, sample_decap_indices(srng, pb.ports.decap_ports.size(), populated), r.board_seed);
    const EncodedSample e = encode_board(c);
    EXPECT_EQ(e.placement, r.sample.placement);
    EXPECT_EQ(e.stackup_vec, r.sample.stackup_vec);
  }
}

TEST(Generate, ManifestFields) {
  const fs::path dir = scratch("manifest");
  generate_dataset(small_config(dir, 1, 2));
  const auto m = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
  EXPECT_EQ(m.at("status"), "ok");
  EXPECT_EQ(m.at("config").at("seed"), 7);
  EXPECT_EQ(m.at("counts").at("records"), 2);
  EXPECT_EQ(m.at("board_seeds").size(), 1u);
  for (const char* k : {"wall", "sample", "bem", "nodal", "attach", "write"}) EXPECT_TRUE(m.at("timing_s").contains(k));
}

TEST(Export, JsonLinesOneObjectPerRecord) {
  const auto records = synthetic_records(3);
  std::ostringstream os;
  export_jsonl(os, records);
  std::istringstream is(os.str());
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("label_db").size(), 132u);
    EXPECT_EQ(j.at("placement").size(), kPlacementSize);
    EXPECT_EQ(j.at("stackup").size(), kStackupVecSize);
    EXPECT_EQ(j.at("record"), n);
    ++n;
  }
  EXPECT_EQ(n, 3);
}

// Peak RSS of a child running one generation.
long child_peak_rss_kb(const GenerationConfig& cfg) {
  const pid_t pid = ::fork();
  if (pid == 0) {
    try {
      generate_dataset(cfg);
    } catch (...) {
      ::_exit(1);
    }
    ::_exit(0);
  }
  int status = 0;
  rusage ru{};
  ::wait4(pid, &status, 0, &ru);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return -1;
  return ru.ru_maxrss;
}

TEST(Generate, MemoryDoesNotGrowWithRecordCount) {
  // 400 vs 4800 records: buffering the whole dataset would add about 6 MB
  const long small = child_peak_rss_kb(small_config(scratch("rss_small"), 1, 400));
  const long large = child_peak_rss_kb(small_config(scratch("rss_large"), 12, 400));
  ASSERT_GT(small, 0);
  ASSERT_GT(large, 0);
  RecordProperty("rss_small_kb", std::to_string(small));
  RecordProperty("rss_large_kb", std::to_string(large));
  EXPECT_LT(large - small, 2048) << small << " kB vs " << large << " kB";
}
