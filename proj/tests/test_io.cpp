#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "elsig/io.hpp"
#include "elsig/rng.hpp"
#include "helpers.hpp"

using namespace elsig;

namespace {

std::filesystem::path scratch_dir() {
  auto dir = std::filesystem::temp_directory_path() /
             ("elsig_io_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("matrix container round-trips bit for bit") {
  auto dir = scratch_dir();
  Rng rng(1);
  Matrix m = rng.gaussian_matrix(17, 5);
  write_matrix(dir / "m.mat", m);
  Matrix back = read_matrix(dir / "m.mat");
  REQUIRE(back.rows() == 17);
  REQUIRE(back.cols() == 5);
  CHECK((m - back).norm() == 0.0);

  // The header is the 8-byte magic plus two u32 sizes.
  CHECK(std::filesystem::file_size(dir / "m.mat") == 8 + 4 + 4 + 17 * 5 * 8);
  std::filesystem::remove_all(dir);
}

TEST_CASE("bad magic and missing files are reported") {
  auto dir = scratch_dir();
  std::ofstream(dir / "junk.mat") << "NOTMAGIC00000000";
  CHECK_THROWS_AS(read_matrix(dir / "junk.mat"), IoError);
  CHECK_THROWS_AS(read_matrix(dir / "absent.mat"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("model files round-trip every field") {
  auto dir = scratch_dir();
  FinalLayerParams p = synth_model(96, 12, NormKind::LayerNorm, 1e-5, 99);
  save_model(dir / "model.json", p);
  FinalLayerParams q = load_model(dir / "model.json");
  CHECK(q.vocab == p.vocab);
  CHECK(q.dim == p.dim);
  CHECK(q.norm == p.norm);
  CHECK(q.eps == p.eps);
  CHECK(q.seed == p.seed);
  CHECK((q.unembed - p.unembed).norm() == 0.0);
  CHECK((q.scale - p.scale).norm() == 0.0);
  CHECK((q.bias - p.bias).norm() == 0.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("logprob files carry token ids and the sample count") {
  auto dir = scratch_dir();
  FinalLayerParams p = synth_model(64, 8, NormKind::ScaledRms, 0.0, 100);
  LogprobMatrix m = sample_outputs(p, 9, 5);
  save_logprobs(dir / "lp.json", m);
  LogprobMatrix back = load_logprobs(dir / "lp.json");
  CHECK(back.vocab == 64);
  CHECK(back.count == 9);
  CHECK(back.token_ids == m.token_ids);
  CHECK((back.data - m.data).norm() == 0.0);
  std::filesystem::remove_all(dir);
}
