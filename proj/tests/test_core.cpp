#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "coda/config.hpp"
#include "coda/csv.hpp"
#include "coda/errors.hpp"
#include "coda/hash.hpp"
#include "coda/kernels.hpp"
#include "coda/rng.hpp"
#include "coda/tensor.hpp"

using namespace coda;

TEST_CASE("rng: determinism and stream independence") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng root(1);
  Rng s1 = root.child("render", 5);
  Rng s2 = root.child("render", 6);
  Rng s1b = root.child("render", 5);
  CHECK(s1.next_u64() == s1b.next_u64());
  CHECK(s1.next_u64() != s2.next_u64());

  // child derivation ignores parent consumption
  Rng r2(1);
  r2.next_u64();
  r2.next_u64();
  // note: child() is const and keyed off the stored state, so we compare
  // children of two equally-seeded parents instead
  Rng p1(99), p2(99);
  p2.next_u64();
  CHECK(p1.child("x").next_u64() != p2.child("x").next_u64());
}

TEST_CASE("rng: uniform range and normal moments") {
  Rng r(3);
  double mn = 1.0, mx = 0.0;
  for (int i = 0; i < 10000; ++i) {
    double u = r.uniform();
    mn = std::min(mn, u);
    mx = std::max(mx, u);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  CHECK(mn < 0.01);
  CHECK(mx > 0.99);

  double sum = 0.0, sum2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    sum += x;
    sum2 += x * x;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(std::abs(sum2 / n - 1.0) < 0.05);
}

TEST_CASE("rng: state round trip") {
  Rng r(11);
  r.next_u64();
  std::string hex = r.state_hex();
  Rng r2;
  r2.set_state_hex(hex);
  for (int i = 0; i < 16; ++i) CHECK(r.next_u64() == r2.next_u64());
}

TEST_CASE("kernels: serial and parallel variants are bitwise identical") {
  Rng rng(5);
  const int M = 37, K = 53, N = 41;
  Tensor A({M, K}), B({K, N}), Bt({N, K});
  for (auto& v : A.v) v = rng.uniform(-2, 2);
  for (auto& v : B.v) v = rng.uniform(-2, 2);
  for (auto& v : Bt.v) v = rng.uniform(-2, 2);

  Tensor C1({M, N}), C2({M, N});
  kern::matmul_nn_serial(A.data(), B.data(), C1.data(), M, K, N);
  kern::matmul_nn_par(A.data(), B.data(), C2.data(), M, K, N);
  CHECK(C1.v == C2.v);

  kern::matmul_nt_serial(A.data(), Bt.data(), C1.data(), M, K, N);
  kern::matmul_nt_par(A.data(), Bt.data(), C2.data(), M, K, N);
  CHECK(C1.v == C2.v);

  Tensor D1({K, N}), D2({K, N});
  Tensor R({M, K});
  for (auto& v : R.v) v = rng.uniform(-1, 1);
  Tensor Y({M, N});
  for (auto& v : Y.v) v = rng.uniform(-1, 1);
  kern::matmul_at_b_acc_serial(R.data(), Y.data(), D1.data(), M, K, N);
  kern::matmul_at_b_acc_par(R.data(), Y.data(), D2.data(), M, K, N);
  CHECK(D1.v == D2.v);

  Tensor img({3, 33, 29});
  for (auto& v : img.v) v = rng.uniform();
  Tensor o1, o2;
  kern::gaussian_blur_serial(img, o1, 1.3);
  kern::gaussian_blur_par(img, o2, 1.3);
  CHECK(o1.v == o2.v);
  kern::resize_bilinear_serial(img, o1, 17, 21);
  kern::resize_bilinear_par(img, o2, 17, 21);
  CHECK(o1.v == o2.v);
}

TEST_CASE("kernels: matmul agrees with a naive triple loop") {
  Rng rng(9);
  const int M = 13, K = 21, N = 17;
  Tensor A({M, K}), B({K, N});
  for (auto& v : A.v) v = rng.uniform(-1, 1);
  for (auto& v : B.v) v = rng.uniform(-1, 1);
  Tensor C({M, N});
  kern::matmul_nn(A.data(), B.data(), C.data(), M, K, N);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      double acc = 0.0;
      for (int k = 0; k < K; ++k) acc += A.at(i, k) * B.at(k, j);
      CHECK(C.at(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("kernels: blur identity at sigma 0, resize identity at same size") {
  Rng rng(2);
  Tensor img({2, 16, 16});
  for (auto& v : img.v) v = rng.uniform();
  Tensor out;
  kern::gaussian_blur(img, out, 0.0);
  CHECK(out.v == img.v);
  kern::resize_bilinear(img, out, 16, 16);
  CHECK(out.v == img.v);
}

TEST_CASE("kernels: blur preserves the mean of a constant image") {
  Tensor img({1, 24, 24});
  img.fill(0.37);
  Tensor out;
  kern::gaussian_blur(img, out, 2.0);
  for (double v : out.v) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("csv: round trip with quoting") {
  csv::Table t;
  t.header = {"a", "b", "c"};
  t.rows.push_back({"1", "x,y", "he said \"hi\""});
  t.rows.push_back({"2", "", "plain"});
  const std::string path = (std::filesystem::temp_directory_path() / "coda_csv_test.csv").string();
  csv::write_file(path, t);
  csv::Table r = csv::read_file(path);
  REQUIRE(r.header == t.header);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0] == t.rows[0]);
  CHECK(r.rows[1] == t.rows[1]);
  std::filesystem::remove(path);
}

TEST_CASE("config: parsing, sections, overrides, typed errors") {
  Config c = Config::from_text(
      "# comment\n"
      "top = 1\n"
      "[model]\n"
      "dim = 192\n"
      "name = deit\n"
      "[plan.pretrain]\n"
      "lr = 1e-4\n");
  CHECK(c.integer("top", 0) == 1);
  CHECK(c.integer("model.dim", 0) == 192);
  CHECK(c.str("model.name", "") == "deit");
  CHECK(c.number("plan.pretrain.lr", 0) == doctest::Approx(1e-4));

  c.apply_override("model.dim=64");
  CHECK(c.integer("model.dim", 0) == 64);

  CHECK_THROWS_AS((void)c.integer("model.name", 0), ConfigValidationError);
  CHECK_THROWS_AS((void)c.require_str("absent.key"), ConfigValidationError);
  CHECK_THROWS_AS(Config::from_text("bad line without equals\n"), ConfigValidationError);
  CHECK_THROWS_AS(c.apply_override("noequals"), ConfigValidationError);

  auto l = Config::from_text("ids = a, b , c\n").list("ids");
  REQUIRE(l.size() == 3);
  CHECK(l[1] == "b");
}

TEST_CASE("hash: file checksum is content-determined") {
  namespace fs = std::filesystem;
  const std::string p1 = (fs::temp_directory_path() / "coda_hash_a.bin").string();
  const std::string p2 = (fs::temp_directory_path() / "coda_hash_b.bin").string();
  std::ofstream(p1, std::ios::binary) << "identical payload";
  std::ofstream(p2, std::ios::binary) << "identical payload";
  CHECK(file_checksum(p1) == file_checksum(p2));
  std::ofstream(p2, std::ios::binary) << "different payload!";
  CHECK(file_checksum(p1) != file_checksum(p2));
  fs::remove(p1);
  fs::remove(p2);
}
