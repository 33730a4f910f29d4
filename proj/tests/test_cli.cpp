#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "manifest.hpp"
#include "nowcast/checkpoint.hpp"
#include "nowcast/grid.hpp"
#include "nowcast/models.hpp"

using namespace nowcast;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) : path_(fs::temp_directory_path() / ("nowcast_cli_" + tag)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

int run(std::vector<std::string> args) { return cli::run(args); }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  for (std::string f; std::getline(is, f, ',');) out.push_back(f);
  return out;
}

std::string manifest_value(const std::string& path, const std::string& key) {
  for (const auto& l : lines(slurp(path))) {
    const auto eq = l.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = l.substr(0, eq);
    if (k == key || k == "config." + key) return l.substr(eq + 1);
  }
  return {};
}

void synth(const TempDir& dir, const std::string& name, std::size_t frames, std::uint64_t seed, std::size_t hw = 16) {
  REQUIRE(run({"synth", "--h", std::to_string(hw), "--w", std::to_string(hw), "--frames", std::to_string(frames),
               "--seed", std::to_string(seed), "--out", dir / name}) == cli::kOk);
}

std::vector<std::string> tiny_net() { return {"--base", "4", "--hidden", "4", "--batch", "4"}; }

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("synth is deterministic and writes a manifest") {
    TempDir dir("synth");
    synth(dir, "a.ncg", 12, 7);
    synth(dir, "b.ncg", 12, 7);
    synth(dir, "c.ncg", 12, 8);
    CHECK(cli::sha256_file(dir / "a.ncg") == cli::sha256_file(dir / "b.ncg"));
    CHECK(cli::sha256_file(dir / "a.ncg") != cli::sha256_file(dir / "c.ncg"));
    CHECK(cli::sha256_file(dir / "a.ncg").size() == 64);
    const Sequence seq = read_sequence(dir / "a.ncg");
    CHECK(seq.size() == 12);
    CHECK(seq.height() == 16);
    const std::string manifest = dir / "a.ncg.manifest";
    REQUIRE(fs::exists(manifest));
    CHECK(manifest_value(manifest, "seed") == "7");
    CHECK(manifest_value(manifest, "output.0.sha256") == cli::sha256_file(dir / "a.ncg"));
    CHECK_FALSE(manifest_value(manifest, "wall_seconds").empty());
  }

  TEST_CASE("usage errors exit with 2") {
    TempDir dir("usage");
    synth(dir, "d.ncg", 14, 1);
    CHECK(run({"synth", "--h", "8"}) == cli::kUsage);
    CHECK(run({"bogus"}) == cli::kUsage);
    CHECK(run({}) == cli::kUsage);
    CHECK(run({"train", "--model", "bm", "--data", dir / "d.ncg", "--out", dir / "x.ncp"}) == cli::kUsage);
    CHECK(run({"train", "--model", "cnn", "--data", dir / "d.ncg", "--out", dir / "x.ncp"}) == cli::kUsage);
    CHECK(run({"train", "--model", "cnc", "--data", dir / "d.ncg", "--out", dir / "x.ncp", "--batch", "0"}) ==
          cli::kUsage);
    CHECK(run({"evaluate", "--data", dir / "d.ncg", "--out", dir / "m.csv"}) == cli::kUsage);
    CHECK(run({"gradcheck", "--only", "nonsense"}) == cli::kUsage);
    CHECK(run({"--help"}) == cli::kOk);
  }

  TEST_CASE("data contract violations exit with 4") {
    TempDir dir("contract");
    synth(dir, "long.ncg", 30, 2);
    synth(dir, "nine.ncg", 9, 2);
    synth(dir, "ten.ncg", 10, 2);
    CHECK(run({"forecast", "--model", "bm", "--input", dir / "long.ncg", "--out", dir / "f.ncg"}) ==
          cli::kDataContract);
    CHECK(run({"forecast", "--model", "bm", "--input", dir / "ten.ncg", "--out", dir / "f.ncg"}) ==
          cli::kDataContract);
    CHECK(run({"evaluate", "--model", "bm", "--data", dir / "nine.ncg", "--out", dir / "m.csv"}) ==
          cli::kDataContract);
    std::ofstream(dir / "junk.ncg") << "not a grid";
    CHECK(run({"evaluate", "--model", "bm", "--data", dir / "junk.ncg", "--out", dir / "m.csv"}) ==
          cli::kDataContract);
    CHECK(run({"evaluate", "--checkpoint", dir / "absent.ncp", "--data", dir / "long.ncg", "--out", dir / "m.csv"}) ==
          cli::kDataContract);
  }

  TEST_CASE("zero epochs store the initial network") {
    TempDir dir("zero");
    synth(dir, "d.ncg", 14, 3);
    REQUIRE(run(std::vector<std::string>{"train", "--model", "cnc-d", "--data", dir / "d.ncg", "--out", dir / "m.ncp",
                                         "--epochs", "0", "--seed", "4"} +
                tiny_net()) == cli::kOk);
    const Checkpoint saved = read_checkpoint(dir / "m.ncp");
    ModelConfig mc = ModelConfig::from_text(saved.config);
    CHECK(mc.kind == ModelKind::CNC_D);
    CHECK(mc.seed == 4);
    Model fresh(mc);
    CHECK(to_checkpoint(fresh) == saved);
    CHECK(lines(slurp(dir / "m.ncp.history.csv")).size() == 1);
  }

  TEST_CASE("evaluation reproduces the validation loss of training") {
    TempDir dir("val");
    synth(dir, "d.ncg", 40, 5);
    const std::vector<std::string> split_flags{"--val-fraction", "0.25", "--seed", "9"};
    REQUIRE(run(std::vector<std::string>{"train", "--model", "cnc-r", "--data", dir / "d.ncg", "--out", dir / "m.ncp",
                                         "--epochs", "3"} +
                tiny_net() + split_flags) == cli::kOk);
    const auto hist = lines(slurp(dir / "m.ncp.history.csv"));
    REQUIRE(hist.size() == 4);
    double best = 1e300;
    for (std::size_t i = 1; i < hist.size(); ++i) best = std::min(best, std::stod(split(hist[i])[2]));
    REQUIRE(run(std::vector<std::string>{"evaluate", "--checkpoint", dir / "m.ncp", "--data", dir / "d.ncg", "--out",
                                         dir / "val.csv", "--subset", "val"} +
                split_flags) == cli::kOk);
    const double mse = std::stod(manifest_value(dir / "val.csv.manifest", "model_space_mse"));
    CHECK(std::abs(mse - best) <= 1e-9);
  }

  TEST_CASE("evaluate emits one row per lead and optional frame dumps") {
    TempDir dir("leads");
    synth(dir, "d.ncg", 24, 6);
    REQUIRE(run({"evaluate", "--model", "bm", "--data", dir / "d.ncg", "--out", dir / "one.csv", "--feedback-cycles",
                 "1"}) == cli::kOk);
    const auto one = lines(slurp(dir / "one.csv"));
    CHECK(one.size() == 4);
    CHECK(one[0] == "lead_minutes,mse,bias,r2,cc,pod,far,hss,acc,n_samples");
    CHECK(split(one[3])[0] == "90");
    CHECK(fs::exists(dir / "one.csv.per_sample.csv"));
    REQUIRE(run({"evaluate", "--model", "bm", "--data", dir / "d.ncg", "--out", dir / "three.csv", "--feedback-cycles",
                 "3", "--dump-pgm", dir / "pgm"}) == cli::kOk);
    const auto three = lines(slurp(dir / "three.csv"));
    REQUIRE(three.size() == 10);
    CHECK(split(three[9])[0] == "270");
    CHECK(split(three[9]).back() == "7");  // 24 frames leave 7 windows with 9 targets
    CHECK(fs::exists(dir / "pgm/sample0_lead270.pgm"));
  }

  TEST_CASE("baselines train, reload and forecast") {
    TempDir dir("base");
    synth(dir, "d.ncg", 20, 7);
    synth(dir, "in.ncg", 9, 8);
    for (const std::string model : {"lr", "rf"}) {
      CAPTURE(model);
      REQUIRE(run({"train", "--model", model, "--data", dir / "d.ncg", "--out", dir / (model + ".ncp"), "--trees", "3",
                   "--max-depth", "4"}) == cli::kOk);
      CHECK(read_checkpoint(dir / (model + ".ncp")).kind == (model == "lr" ? "LR" : "RF"));
      CHECK(run({"forecast", "--checkpoint", dir / (model + ".ncp"), "--input", dir / "in.ncg", "--out",
                 dir / (model + ".out.ncg")}) == cli::kOk);
      CHECK(read_sequence(dir / (model + ".out.ncg")).size() == 3);
    }
  }

  TEST_CASE("persistence forecasts are idempotent under feedback") {
    TempDir dir("bm");
    synth(dir, "in.ncg", 9, 9);
    REQUIRE(run({"forecast", "--model", "bm", "--input", dir / "in.ncg", "--out", dir / "out.ncg", "--feedback-cycles",
                 "3"}) == cli::kOk);
    const Sequence in = read_sequence(dir / "in.ncg");
    const Sequence out = read_sequence(dir / "out.ncg");
    REQUIRE(out.size() == 9);
    for (const auto& f : out.frames) CHECK(f.values == in.frames[8].values);
  }

  TEST_CASE("gradcheck honours --only and is stable across seeds") {
    TempDir dir("grad");
    REQUIRE(run({"gradcheck", "--only", "convlstm", "--csv", dir / "g.csv"}) == cli::kOk);
    const auto rows = lines(slurp(dir / "g.csv"));
    REQUIRE(rows.size() > 1);
    CHECK(rows[0] == "family,target,checked,max_rel_error,tolerance,pass");
    for (std::size_t i = 1; i < rows.size(); ++i) {
      CHECK(split(rows[i])[0] == "convlstm");
      CHECK(split(rows[i]).back() == "true");
    }
    for (int seed = 0; seed < 5; ++seed) {
      CHECK(run({"gradcheck", "--seed", std::to_string(seed), "--only", "conv3d,maxpool,rnc"}) == cli::kOk);
    }
  }
}
