#include <cstdio>
#include <doctest.h>
#include <filesystem>

#include "mmdl/checkpoint.hpp"
#include "mmdl/rng.hpp"

using namespace mmdl;

namespace {

std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "mmdl_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST_CASE("checkpoint round-trips byte-exactly") {
  Rng rng(31);
  std::vector<NamedTensor> tensors;
  tensors.push_back({"weights.w", Tensor(Shape{3, 4}, 0.0)});
  tensors.push_back({"bias", Tensor(Shape{4}, 0.0)});
  tensors.push_back({"scalar", Tensor::scalar(0.0)});
  for (auto& nt : tensors)
    for (auto& v : nt.tensor.data()) v = rng.uniform(-10, 10);

  const std::string p1 = temp_path("ckpt_a.bin");
  const std::string p2 = temp_path("ckpt_b.bin");
  save_checkpoint(p1, tensors);
  auto loaded = load_checkpoint(p1);
  REQUIRE(loaded.size() == tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    REQUIRE(loaded[i].name == tensors[i].name);
    REQUIRE(loaded[i].tensor.shape() == tensors[i].tensor.shape());
    for (std::size_t j = 0; j < loaded[i].tensor.data().size(); ++j)
      REQUIRE(loaded[i].tensor.data()[j] == tensors[i].tensor.data()[j]);
  }
  save_checkpoint(p2, loaded);
  REQUIRE(wire::read_file(p1) == wire::read_file(p2));
}

TEST_CASE("checkpoint format errors") {
  const std::string p = temp_path("ckpt_bad.bin");

  // bad magic
  wire::write_file(p, {'X', 'X', 'X', 'X', 1, 0, 0, 0, 0, 0, 0, 0});
  REQUIRE_THROWS_AS(load_checkpoint(p), Error);

  // truncation mid-payload reports a format error with offset
  Rng rng(32);
  std::vector<NamedTensor> tensors{{"t", Tensor(Shape{8}, 1.5)}};
  const std::string full = temp_path("ckpt_full.bin");
  save_checkpoint(full, tensors);
  auto bytes = wire::read_file(full);
  bytes.resize(bytes.size() - 9);
  wire::write_file(p, bytes);
  try {
    load_checkpoint(p);
    FAIL("expected format error");
  } catch (const Error& e) {
    REQUIRE(e.category() == ErrorCategory::format);
    REQUIRE(std::string(e.what()).find("offset") != std::string::npos);
  }

  // trailing garbage is rejected
  bytes = wire::read_file(full);
  bytes.push_back(0);
  wire::write_file(p, bytes);
  REQUIRE_THROWS_AS(load_checkpoint(p), Error);

  // missing file is an io error
  try {
    load_checkpoint(temp_path("does_not_exist.bin"));
    FAIL("expected io error");
  } catch (const Error& e) {
    REQUIRE(e.category() == ErrorCategory::io);
  }
}
