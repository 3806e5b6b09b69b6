// Times the serial reference kernels against the OpenMP variants and checks
// that both produce bit-identical results on the same inputs.
#include <chrono>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <vector>

#include "owodlab/kernels.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto start = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto stop = Clock::now();
  return std::chrono::duration<double, std::milli>(stop - start).count() / reps;
}

std::vector<double> random_matrix(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> m(n);
  for (double& v : m) v = dist(rng);
  return m;
}

void report(const char* name, double serial_ms, double openmp_ms, bool identical) {
  std::cout << std::left << std::setw(14) << name << std::right << std::fixed
            << std::setprecision(3) << std::setw(10) << serial_ms << " ms" << std::setw(10)
            << openmp_ms << " ms" << std::setw(8) << std::setprecision(2)
            << serial_ms / openmp_ms << "x  " << (identical ? "bit-identical" : "MISMATCH")
            << "\n";
}

}  // namespace

int main() {
  namespace k = owodlab::kernels;
  std::mt19937_64 rng(12345);

  const std::size_t n = 256, kk = 256, m = 256;
  const auto a = random_matrix(n * kk, rng);
  const auto b = random_matrix(kk * m, rng);
  std::vector<double> cs(n * m), co(n * m);
  const int reps = 10;

  std::cout << std::left << std::setw(14) << "kernel" << std::right << std::setw(13) << "serial"
            << std::setw(13) << "openmp" << std::setw(9) << "speedup\n";

  const double s1 = time_ms([&] { k::serial::matmul(a.data(), b.data(), cs.data(), n, kk, m); }, reps);
  const double o1 = time_ms([&] { k::openmp::matmul(a.data(), b.data(), co.data(), n, kk, m); }, reps);
  report("matmul", s1, o1, std::memcmp(cs.data(), co.data(), cs.size() * sizeof(double)) == 0);

  const double s2 =
      time_ms([&] { k::serial::matmul_nt(a.data(), b.data(), cs.data(), n, kk, m); }, reps);
  const double o2 =
      time_ms([&] { k::openmp::matmul_nt(a.data(), b.data(), co.data(), n, kk, m); }, reps);
  report("matmul_nt", s2, o2, std::memcmp(cs.data(), co.data(), cs.size() * sizeof(double)) == 0);

  const double s3 =
      time_ms([&] { k::serial::matmul_tn(a.data(), b.data(), cs.data(), n, kk, m); }, reps);
  const double o3 =
      time_ms([&] { k::openmp::matmul_tn(a.data(), b.data(), co.data(), n, kk, m); }, reps);
  report("matmul_tn", s3, o3, std::memcmp(cs.data(), co.data(), cs.size() * sizeof(double)) == 0);

  const std::size_t rows = 4096, cols = 256;
  const auto x = random_matrix(rows * cols, rng);
  std::vector<double> ys(rows * cols), yo(rows * cols);
  const double s4 = time_ms([&] { k::serial::softmax_rows(x.data(), ys.data(), rows, cols); }, reps);
  const double o4 = time_ms([&] { k::openmp::softmax_rows(x.data(), yo.data(), rows, cols); }, reps);
  report("softmax_rows", s4, o4, std::memcmp(ys.data(), yo.data(), ys.size() * sizeof(double)) == 0);

  return 0;
}
