#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hil/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "hil");
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  Run r;
  r.code = hil::run_cli(args);
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream in(line);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// column `name` of data row `row` (0 = first row after the header)
std::string cell(const fs::path& csv, std::size_t row, const std::string& name) {
  const auto ls = lines(slurp(csv));
  REQUIRE(ls.size() > row + 1);
  const auto header = split(ls[0]);
  const auto values = split(ls[row + 1]);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) {
      REQUIRE(i < values.size());
      return values[i];
    }
  }
  FAIL("no column " << name << " in " << csv);
  return {};
}

std::size_t data_rows(const fs::path& csv) { return lines(slurp(csv)).size() - 1; }

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("hil_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

// Clean data: at d=128 random prototypes sit far apart in cosine distance, so
// each identity is its own DBSCAN cluster at eps 0.6.
std::string clean_dataset(const TempDir& dir, const std::string& seed = "3") {
  const auto path = dir / ("clean" + seed + ".jsonl");
  REQUIRE(run({"synth", "--ids", "20", "--per", "8", "--dim", "128", "--sigma-noise", "0.05", "--sigma-mod", "0.3",
               "--seed", seed, "-o", path})
              .code == 0);
  return path;
}

std::string default_dataset(const TempDir& dir) {
  const auto path = dir / "data.jsonl";
  REQUIRE(run({"synth", "--ids", "20", "--per", "8", "--dim", "32", "--seed", "1", "-o", path}).code == 0);
  return path;
}

}  // namespace

TEST_CASE("synth writes the requested records reproducibly") {
  TempDir dir("synth");
  const auto a = dir / "a.jsonl", b = dir / "b.jsonl";
  const auto r = run({"synth", "--ids", "20", "--per", "8", "--dim", "32", "--seed", "1", "-o", a});
  REQUIRE(r.code == 0);
  CHECK(r.out.empty());
  CHECK(r.err.find("320 records") != std::string::npos);
  CHECK(lines(slurp(a)).size() == 320);
  REQUIRE(run({"synth", "--ids", "20", "--per", "8", "--dim", "32", "--seed", "1", "-o", b}).code == 0);
  CHECK(slurp(a) == slurp(b));
  REQUIRE(run({"synth", "--seed", "2", "-o", b}).code == 0);
  CHECK(slurp(a) != slurp(b));
}

TEST_CASE("synth rejects noise at or above the identity scale") {
  TempDir dir("synth_bad");
  for (const char* noise : {"1", "2"}) {
    const auto r = run({"synth", "--sigma-noise", noise, "-o", dir / "x.jsonl"});
    CHECK(r.code != 0);
    CHECK(r.err.find("sigma_noise") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "x.jsonl"));
  }
}

TEST_CASE("config files: unknown keys rejected, precedence defaults < preset < file < flags") {
  TempDir dir("config");
  const auto data = default_dataset(dir);
  const auto bad = dir / "bad.json";
  write_file(bad, R"({"gamma": 0.5, "bogus": 1})");
  const auto r = run({"cluster", "-i", data, "-o", dir / "c", "--config", bad});
  CHECK(r.code != 0);
  CHECK(r.err.find("bogus") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "c"));

  // keys of other commands are accepted and ignored
  const auto shared = dir / "shared.json";
  write_file(shared, R"({"ids": 20, "epochs": 3})");
  CHECK(run({"cluster", "-i", data, "-o", dir / "c", "--config", shared}).code == 0);

  const auto cfg = dir / "cfg.json";
  write_file(cfg, R"({"preset": "regdb", "gamma": 0.6, "lr": 0.001, "tau": 0.07})");
  REQUIRE(run({"train", "-i", data, "-o", dir / "t", "--epochs", "0", "--config", cfg, "--lr", "0.002", "--seed",
               "5"})
              .code == 0);
  const auto state = json::parse(slurp(dir.path / "t" / "checkpoint" / "state.json"));
  const auto& c = state.at("config");
  CHECK(c.at("K") == 2);            // preset
  CHECK(c.at("gamma") == 0.6);      // file over preset
  CHECK(c.at("tau") == 0.07);       // file over default
  CHECK(c.at("lr") == 0.002);       // flag over file
  CHECK(c.at("lambda1") == 0.1);    // default
  CHECK(c.at("seed") == 5);
  CHECK(data_rows(dir.path / "t" / "train_log.csv") == 0);

  // a flag for the preset wins over the file's preset
  REQUIRE(run({"train", "-i", data, "-o", dir / "t2", "--epochs", "0", "--config", cfg, "--preset", "default"}).code ==
          0);
  const auto c2 = json::parse(slurp(dir.path / "t2" / "checkpoint" / "state.json")).at("config");
  CHECK(c2.at("K") == 9);
  CHECK(c2.at("gamma") == 0.6);

  CHECK(run({"cluster", "-i", data, "-o", dir / "c3", "--preset", "sysu"}).code != 0);
}

TEST_CASE("help documents every default") {
  const auto r = run({"train", "--help"});
  CHECK(r.code == 0);
  for (const char* s : {"[0.05]", "[3.5e-05]", "[0.6]", "[4]", "[9]", "[0.5]", "[0.1]", "[8]", "[16]", "[default]",
                        "[dataset]", "[1]"}) {
    CHECK_MESSAGE(r.out.find(s) != std::string::npos, s);
  }
  // every option line of every command shows a default
  for (const char* cmd : {"synth", "cluster", "associate", "train", "eval"}) {
    const auto h = run({cmd, "--help"}).out;
    for (const auto& l : lines(h)) {
      if (l.find("[key:") == std::string::npos) continue;
      const bool has_default = l.find(" [") < l.find("[key:");
      CHECK_MESSAGE(has_default, cmd << ": " << l);
    }
  }
}

TEST_CASE("cluster on clean data finds one cluster per identity") {
  TempDir dir("cluster");
  const auto data = clean_dataset(dir);
  const auto r = run({"cluster", "-i", data, "-o", dir / "c", "--seed", "11"});
  REQUIRE(r.code == 0);
  const auto q = dir.path / "c" / "quality.csv";
  REQUIRE(data_rows(q) == 2);
  for (std::size_t row : {0, 1}) {
    CHECK(cell(q, row, "seed") == "11");
    CHECK(cell(q, row, "M") == "20");
    CHECK(cell(q, row, "outliers") == "0");
    CHECK(cell(q, row, "ari") == "1");
  }
  const auto labels = json::parse(slurp(dir.path / "c" / "labels_vis.json"));
  CHECK(labels.at("seed") == 11);
  CHECK(labels.at("M") == 20);
}

TEST_CASE("cluster with min_pts above N reports all outliers and succeeds") {
  TempDir dir("cluster_outliers");
  const auto data = default_dataset(dir);
  const auto r = run({"cluster", "-i", data, "-o", dir / "c", "--min-pts", "500"});
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);
  const auto q = dir.path / "c" / "quality.csv";
  for (std::size_t row : {0, 1}) {
    CHECK(cell(q, row, "M") == "0");
    CHECK(cell(q, row, "outliers") == "160");
  }
}

TEST_CASE("missing input fails without leaving outputs") {
  TempDir dir("missing");
  for (const char* cmd : {"cluster", "associate", "train", "eval"}) {
    const auto r = run({cmd, "-i", dir / "nope.jsonl", "-o", dir / "out"});
    CHECK(r.code != 0);
    CHECK(r.err.find("error") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "out"));
  }
  const auto data = default_dataset(dir);
  CHECK(run({"eval", "-i", data, "-o", dir / "out", "--checkpoint", dir / "nowhere"}).code != 0);
  CHECK_FALSE(fs::exists(dir / "out"));
}

TEST_CASE("associate: gamma 0 matches everything, clean data maps identities correctly") {
  TempDir dir("associate");
  const auto data = clean_dataset(dir);
  REQUIRE(run({"cluster", "-i", data, "-o", dir / "c"}).code == 0);
  for (const char* direction : {"VIS->IR", "IR->VIS"}) {
    const auto out = dir / (std::string("a") + direction[0]);
    REQUIRE(run({"associate", "-i", data, "--labels", dir / "c", "--gamma", "0", "--direction", direction, "-o", out})
                .code == 0);
    const auto s = fs::path(out) / "association.csv";
    CHECK(cell(s, 0, "direction") == direction);
    CHECK(cell(s, 0, "match_rate") == "1");
    CHECK(cell(s, 0, "precision") == "1");
    CHECK(cell(s, 0, "cluster_precision") == "1");
    CHECK(data_rows(fs::path(out) / "brst.csv") == 160);
    CHECK(data_rows(fs::path(out) / "brst_clusters.csv") == 20);
  }
  // without --labels the command clusters on its own and agrees
  REQUIRE(run({"associate", "-i", data, "--gamma", "0", "-o", dir / "b"}).code == 0);
  CHECK(slurp(dir.path / "b" / "brst.csv") == slurp(dir.path / "aV" / "brst.csv"));
}

TEST_CASE("associate: a stricter gamma never matches more") {
  TempDir dir("associate_gamma");
  const auto data = default_dataset(dir);
  for (const char* seed : {"0", "1", "2"}) {
    double rate[2];
    int k = 0;
    for (const char* gamma : {"0.5", "1.0"}) {
      const auto out = dir / (std::string("g") + seed + gamma);
      REQUIRE(run({"associate", "-i", data, "--gamma", gamma, "--seed", seed, "-o", out}).code == 0);
      rate[k++] = std::stod(cell(fs::path(out) / "association.csv", 0, "match_rate"));
    }
    CHECK(rate[1] <= rate[0]);
  }
}

TEST_CASE("train logs one row per epoch and gamma is monotone in the first epoch") {
  TempDir dir("train");
  const auto data = default_dataset(dir);
  const auto r = run({"train", "-i", data, "-o", dir / "t", "--epochs", "15", "--seed", "4"});
  REQUIRE(r.code == 0);
  const auto log = dir.path / "t" / "train_log.csv";
  REQUIRE(data_rows(log) == 15);
  for (std::size_t e = 0; e < 15; ++e) {
    CHECK(cell(log, e, "epoch") == std::to_string(e));
    CHECK(cell(log, e, "seed") == "4");
    CHECK(cell(log, e, "direction") == (e % 2 == 0 ? "VIS->IR" : "IR->VIS"));
  }
  CHECK(data_rows(dir.path / "t" / "loss_log.csv") == 30);

  // The encoder is identical before the first association, so epoch 0 is
  // the same-seed comparison of the two thresholds.
  REQUIRE(run({"train", "-i", data, "-o", dir / "g", "--epochs", "1", "--seed", "4", "--gamma", "1.0"}).code == 0);
  CHECK(std::stod(cell(dir.path / "g" / "train_log.csv", 0, "match_rate")) <= std::stod(cell(log, 0, "match_rate")));
}

TEST_CASE("train resume reproduces the uninterrupted run") {
  TempDir dir("resume");
  const auto data = default_dataset(dir);
  REQUIRE(run({"train", "-i", data, "-o", dir / "full", "--epochs", "6", "--seed", "9"}).code == 0);
  REQUIRE(run({"train", "-i", data, "-o", dir / "split", "--epochs", "3", "--seed", "9"}).code == 0);
  // configuration comes from the checkpoint, only the epoch count is taken
  const auto r = run({"train", "-i", data, "-o", dir / "split", "--epochs", "6", "--resume", "--seed", "123"});
  REQUIRE(r.code == 0);
  CHECK(r.err.find("resuming at epoch 3") != std::string::npos);
  for (const char* f : {"train_log.csv", "loss_log.csv", "checkpoint/encoder.jsonl", "checkpoint/memory.jsonl",
                        "checkpoint/state.json"}) {
    CHECK_MESSAGE(slurp(dir.path / "full" / f) == slurp(dir.path / "split" / f), f);
  }
  CHECK(run({"train", "-i", data, "-o", dir / "fresh", "--resume"}).code != 0);
}

TEST_CASE("results do not depend on the thread count") {
  TempDir dir("threads");
  const auto data = default_dataset(dir);
  for (const char* t : {"1", "4"}) {
    REQUIRE(run({"train", "-i", data, "-o", dir / (std::string("t") + t), "--epochs", "3", "--threads", t}).code == 0);
    REQUIRE(run({"eval", "-i", data, "--checkpoint", dir / (std::string("t") + t + "/checkpoint"), "-o",
                 dir / (std::string("e") + t), "--threads", t})
                .code == 0);
  }
  CHECK(slurp(dir.path / "t1" / "train_log.csv") == slurp(dir.path / "t4" / "train_log.csv"));
  CHECK(slurp(dir.path / "e1" / "metrics.csv") == slurp(dir.path / "e4" / "metrics.csv"));
}

TEST_CASE("a non-finite training step fails and leaves no outputs") {
  TempDir dir("nonfinite");
  const auto data = default_dataset(dir);
  const auto r = run({"train", "-i", data, "-o", dir / "t", "--epochs", "2", "--lr", "1e308"});
  CHECK(r.code != 0);
  CHECK(r.err.find("NonFinite") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "t"));
}

// Near-chance retrieval needs a modality gap well above the identity scale;
// at sigma_mod = sigma_id the two modality centres of an identity still
// correlate at 0.5 and an untrained encoder retrieves far above chance.
TEST_CASE("eval emits both directions and an untrained encoder sits near chance") {
  TempDir dir("eval");
  const auto data = dir / "gap.jsonl";
  REQUIRE(run({"synth", "--sigma-mod", "3", "--seed", "1", "-o", data}).code == 0);
  REQUIRE(run({"eval", "-i", data, "-o", dir / "e", "--seed", "6"}).code == 0);
  const auto csv = dir.path / "e" / "metrics.csv";
  REQUIRE(data_rows(csv) == 2);
  CHECK(cell(csv, 0, "direction") == "VIS->IR");
  CHECK(cell(csv, 1, "direction") == "IR->VIS");
  for (std::size_t row : {0, 1}) {
    CHECK(cell(csv, row, "seed") == "6");
    CHECK(std::stod(cell(csv, row, "rank1")) <= 2.0 / 20 * 3);
  }
  const auto j = json::parse(slurp(dir.path / "e" / "metrics.json"));
  CHECK(j.at("seed") == 6);
  CHECK(j.at("directions").size() == 2);
}

TEST_CASE("usage errors exit nonzero") {
  CHECK(run({"train", "--epochs", "notanumber"}).code != 0);
  CHECK(run({"frobnicate"}).code != 0);
  CHECK(run({"cluster", "--threads", "0", "-i", "x", "-o", "y"}).code != 0);
}
