#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rmn/param_store.hpp"

using namespace rmn;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const char* stem) {
  return (fs::temp_directory_path() / (std::string(stem) + "-" + std::to_string(::getpid()) + ".rmnc"))
      .string();
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::vector<char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>{});
}

}  // namespace

TEST_CASE("registration is ordered, unique, and seeded deterministically") {
  ParameterStore s1(42), s2(42), s3(43);
  auto w1 = s1.create("enc/w", {3, 4}, 3);
  auto w2 = s2.create("enc/w", {3, 4}, 3);
  auto w3 = s3.create("enc/w", {3, 4}, 3);
  CHECK(w1.data() == w2.data());
  CHECK(w1.data() != w3.data());
  CHECK(w1.requires_grad());

  s1.create("enc/b", {4}, 0);
  CHECK(s1.names() == std::vector<std::string>{"enc/w", "enc/b"});
  CHECK(s1.num_scalars() == 16);
  for (real v : s1.get("enc/b").data()) CHECK(v == 0.0);
  const real bound = 1.0 / std::sqrt(3.0);
  for (real v : w1.data()) {
    CHECK(v > -bound);
    CHECK(v < bound);
  }
  CHECK_THROWS_AS(s1.create("enc/w", {1}, 0), ValueError);
  CHECK_THROWS_AS(s1.get("nope"), ValueError);
}

TEST_CASE("store handles share storage with the store") {
  ParameterStore s(1);
  auto w = s.create("w", {2}, 2);
  w.data()[0] = 123.0;
  CHECK(s.get("w").data()[0] == 123.0);
}

TEST_CASE("checkpoint round trip is byte-exact") {
  const std::string path = temp_path("ckpt");
  const std::string path2 = temp_path("ckpt2");

  ParameterStore a(7);
  a.create("embed/table", {5, 3}, 3);
  a.create("head/b", {4}, 0);
  a.get("head/b").data() = {0.25, -1.5, 3.0, 0.0};  // exactly representable in f32
  a.save(path);

  ParameterStore b(999);  // different seed: values must come from the file
  b.load(path);
  CHECK(b.names() == a.names());
  CHECK(b.get("head/b").data() == a.get("head/b").data());
  CHECK(b.get("embed/table").shape() == Shape{5, 3});
  b.save(path2);
  CHECK(slurp(path) == slurp(path2));

  // load into a store that already has the entries: values replaced in place
  ParameterStore c(7);
  c.create("embed/table", {5, 3}, 3);
  c.create("head/b", {4}, 0);
  c.load(path);
  CHECK(c.get("head/b").data()[2] == 3.0);

  // shape mismatch is rejected
  ParameterStore d(7);
  d.create("embed/table", {5, 4}, 4);
  CHECK_THROWS_AS(d.load(path), IoError);

  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string path = temp_path("corrupt");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE";
  }
  ParameterStore s(0);
  CHECK_THROWS_AS(s.load(path), IoError);
  {
    std::ofstream os(path, std::ios::binary);
    os << "RMNC";  // magic only, then truncation
  }
  CHECK_THROWS_AS(s.load(path), IoError);
  CHECK_THROWS_AS(s.load("/nonexistent/dir/x.rmnc"), IoError);
  fs::remove(path);
}
