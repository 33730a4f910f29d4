#include <doctest.h>

#include <filesystem>

#include "nowcast/checkpoint.hpp"
#include "nowcast/errors.hpp"
#include "nowcast/models.hpp"

using namespace nowcast;

namespace {

ModelConfig tiny(ModelKind kind) {
  ModelConfig mc;
  mc.kind = kind;
  mc.base_channels = 4;
  mc.hidden_channels = 4;
  mc.height = mc.width = 16;
  mc.seed = 21;
  return mc;
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.kind = "CNC";
  c.config = "a=1\nb=two\n";
  c.entries.emplace_back("w", Tensor({2, 3}, {1, 2, 3, 4, 5, -6.5}));
  c.entries.emplace_back("scalar", Tensor({1}, {0.125}));
  return c;
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("NCP1 encoding round trips byte for byte") {
    const Checkpoint c = sample_checkpoint();
    const auto bytes = encode_checkpoint(c);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "NCP1");
    CHECK(bytes[4] == 1);
    CHECK(decode_checkpoint(bytes) == c);
    CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);
    CHECK(c.at("scalar")[0] == 0.125);
    CHECK_THROWS_AS(c.at("missing"), FormatError);
  }

  TEST_CASE("malformed NCP1 data is rejected") {
    auto bytes = encode_checkpoint(sample_checkpoint());
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad_magic), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_AS(decode_checkpoint(bad_version), FormatError);
    for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
      CAPTURE(cut);
      std::vector<std::uint8_t> shorter(bytes.begin(), bytes.begin() + static_cast<long>(cut));
      CHECK_THROWS_AS(decode_checkpoint(shorter), LengthError);
    }
    auto longer = bytes;
    longer.push_back(0);
    CHECK_THROWS_AS(decode_checkpoint(longer), LengthError);
    Checkpoint dup = sample_checkpoint();
    dup.entries.push_back(dup.entries.front());
    CHECK_THROWS_AS(decode_checkpoint(encode_checkpoint(dup)), FormatError);
  }

  TEST_CASE("network checkpoints restore parameters and running statistics") {
    const auto dir = std::filesystem::temp_directory_path() / "nowcast_ckpt_test";
    std::filesystem::create_directories(dir);
    Rng rng(2);
    Tensor x({2, 9, 16, 16, 1});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(0.0, 2.0);
    for (auto kind : {ModelKind::CNC_D, ModelKind::RNC_R}) {
      CAPTURE(to_string(kind));
      Model m(tiny(kind));
      ModelTape tape;
      m.forward(x, Mode::Train, tape);  // moves the batch-norm running averages
      const Checkpoint c = to_checkpoint(m);
      CHECK(c.kind == to_string(kind));
      const auto path = dir / "model.ncp";
      write_checkpoint(c, path);
      const Checkpoint back = read_checkpoint(path);
      CHECK(back == c);
      auto restored = model_from_checkpoint(back);
      CHECK(restored->config() == m.config());
      CHECK(restored->predict(x) == m.predict(x));
      CHECK(load_forecaster(back)->predict(x) == m.predict(x));
    }
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(read_checkpoint(dir / "absent.ncp"), IoError);
  }

  TEST_CASE("loading into a mismatched network fails") {
    Model cnc(tiny(ModelKind::CNC));
    Model cncr(tiny(ModelKind::CNC_R));
    CHECK_THROWS_AS(load_into(cncr, to_checkpoint(cnc)), FormatError);
    ModelConfig wider = tiny(ModelKind::CNC);
    wider.base_channels = 8;
    Model w(wider);
    CHECK_THROWS_AS(load_into(w, to_checkpoint(cnc)), FormatError);
    Checkpoint missing = to_checkpoint(cnc);
    missing.entries.pop_back();
    CHECK_THROWS_AS(load_into(cnc, missing), FormatError);
  }

  TEST_CASE("persistence checkpoints carry their frame counts") {
    const Checkpoint c = to_checkpoint(Persistence(9, 3));
    CHECK(c.kind == "BM");
    auto f = load_forecaster(decode_checkpoint(encode_checkpoint(c)));
    CHECK(f->name() == "BM");
    CHECK(f->n_in() == 9);
    CHECK(f->n_out() == 3);
    Checkpoint odd = c;
    odd.kind = "XYZ";
    CHECK_THROWS_AS(load_forecaster(odd), FormatError);
  }
}
