#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <vector>

#include "owodlab/kernels.hpp"

using namespace owodlab;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = (static_cast<double>(rng() >> 11) * 0x1.0p-53) * 2.0 - 1.0;
  return v;
}

}  // namespace

TEST_CASE("matmul matches naive triple loop") {
  std::mt19937_64 rng(3);
  const std::size_t n = 7, k = 5, m = 9;
  auto a = random_vec(n * k, rng);
  auto b = random_vec(k * m, rng);
  std::vector<double> expected(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t p = 0; p < k; ++p) expected[i * m + j] += a[i * k + p] * b[p * m + j];
  std::vector<double> got(n * m);
  kernels::serial::matmul(a.data(), b.data(), got.data(), n, k, m);
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("openmp kernels are bit-identical to serial") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 1 + rng() % 40, k = 1 + rng() % 40, m = 1 + rng() % 40;
    auto a = random_vec(n * k, rng);
    auto b = random_vec(k * m, rng);
    auto bt = random_vec(m * k, rng);

    std::vector<double> s(n * m), p(n * m);
    kernels::serial::matmul(a.data(), b.data(), s.data(), n, k, m);
    kernels::openmp::matmul(a.data(), b.data(), p.data(), n, k, m);
    CHECK(s == p);

    kernels::serial::matmul_nt(a.data(), bt.data(), s.data(), n, k, m);
    kernels::openmp::matmul_nt(a.data(), bt.data(), p.data(), n, k, m);
    CHECK(s == p);

    std::vector<double> s2(k * m), p2(k * m);
    auto b2 = random_vec(n * m, rng);
    kernels::serial::matmul_tn(a.data(), b2.data(), s2.data(), n, k, m);
    kernels::openmp::matmul_tn(a.data(), b2.data(), p2.data(), n, k, m);
    CHECK(s2 == p2);

    std::vector<double> ss(n * k), ps(n * k);
    kernels::serial::softmax_rows(a.data(), ss.data(), n, k);
    kernels::openmp::softmax_rows(a.data(), ps.data(), n, k);
    CHECK(ss == ps);
  }
}

TEST_CASE("matmul_nt and matmul_tn agree with explicit transposes") {
  std::mt19937_64 rng(23);
  const std::size_t n = 6, k = 4, m = 5;
  auto a = random_vec(n * k, rng);
  auto b = random_vec(m * k, rng);  // acts as B^T input for matmul_nt
  std::vector<double> bt(k * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) bt[j * m + i] = b[i * k + j];
  std::vector<double> via_nt(n * m), via_mm(n * m);
  kernels::matmul_nt(a.data(), b.data(), via_nt.data(), n, k, m);
  kernels::matmul(a.data(), bt.data(), via_mm.data(), n, k, m);
  for (std::size_t i = 0; i < via_nt.size(); ++i)
    CHECK(via_nt[i] == doctest::Approx(via_mm[i]).epsilon(1e-12));

  auto c = random_vec(n * m, rng);
  std::vector<double> at(k * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) at[j * n + i] = a[i * k + j];
  std::vector<double> via_tn(k * m), via_mm2(k * m);
  kernels::matmul_tn(a.data(), c.data(), via_tn.data(), n, k, m);
  kernels::matmul(at.data(), c.data(), via_mm2.data(), k, n, m);
  for (std::size_t i = 0; i < via_tn.size(); ++i)
    CHECK(via_tn[i] == doctest::Approx(via_mm2[i]).epsilon(1e-12));
}

TEST_CASE("softmax rows are normalized") {
  std::mt19937_64 rng(29);
  auto x = random_vec(8 * 13, rng);
  std::vector<double> y(x.size());
  kernels::softmax_rows(x.data(), y.data(), 8, 13);
  for (std::size_t r = 0; r < 8; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 13; ++j) {
      CHECK(y[r * 13 + j] > 0.0);
      s += y[r * 13 + j];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}
