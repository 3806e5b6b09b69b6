#include "owodlab/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace owodlab::kernels {

Backend& active_backend() {
#ifdef _OPENMP
  static Backend backend = Backend::openmp;
#else
  static Backend backend = Backend::serial;
#endif
  return backend;
}

namespace serial {

void matmul(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    std::fill(ci, ci + m, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * m + j] = acc;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m) {
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < n; ++p) acc += a[p * k + i] * b[p * m + j];
      c[i * m + j] = acc;
    }
  }
}

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    double* yr = y + r * cols;
    double mx = xr[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < cols; ++j) yr[j] /= sum;
  }
}

}  // namespace serial

namespace openmp {

// Each parallel variant assigns whole output rows (or row/col blocks) to a
// single thread with the same inner summation order as the serial kernel,
// so results are bit-identical to the reference.

void matmul(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m) {
#pragma omp parallel for schedule(static) if (n * k * m > 4096)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    double* ci = c + static_cast<std::size_t>(i) * m;
    std::fill(ci, ci + m, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[static_cast<std::size_t>(i) * k + p];
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m) {
#pragma omp parallel for schedule(static) if (n * k * m > 4096)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[static_cast<std::size_t>(i) * m + j] = acc;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m) {
#pragma omp parallel for schedule(static) if (n * k * m > 4096)
  for (long long i = 0; i < static_cast<long long>(k); ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < n; ++p)
        acc += a[p * k + static_cast<std::size_t>(i)] * b[p * m + j];
      c[static_cast<std::size_t>(i) * m + j] = acc;
    }
  }
}

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols > 4096)
  for (long long r = 0; r < static_cast<long long>(rows); ++r) {
    const double* xr = x + static_cast<std::size_t>(r) * cols;
    double* yr = y + static_cast<std::size_t>(r) * cols;
    double mx = xr[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < cols; ++j) yr[j] /= sum;
  }
}

}  // namespace openmp

#define OWODLAB_DISPATCH(fn, ...)                  \
  if (active_backend() == Backend::openmp) {       \
    openmp::fn(__VA_ARGS__);                       \
  } else {                                         \
    serial::fn(__VA_ARGS__);                       \
  }

void matmul(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m) {
  OWODLAB_DISPATCH(matmul, a, b, c, n, k, m)
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m) {
  OWODLAB_DISPATCH(matmul_nt, a, b, c, n, k, m)
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m) {
  OWODLAB_DISPATCH(matmul_tn, a, b, c, n, k, m)
}

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
  OWODLAB_DISPATCH(softmax_rows, x, y, rows, cols)
}

#undef OWODLAB_DISPATCH

}  // namespace owodlab::kernels
