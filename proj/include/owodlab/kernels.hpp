#pragma once

#include <cstddef>

// Dense numeric kernels backing the tensor engine. Every kernel has a
// serial reference implementation and an OpenMP variant; a process-wide
// backend switch selects which one the dispatch functions run. Tests
// compare the two, the benchmark times them.
namespace owodlab::kernels {

enum class Backend { serial, openmp };

Backend& active_backend();

namespace serial {
// c[n,m] = a[n,k] * b[k,m]
void matmul(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m);
// c[n,m] = a[n,k] * b[m,k]^T
void matmul_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m);
// c[k,m] = a[n,k]^T * b[n,m]
void matmul_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m);
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);
}  // namespace serial

namespace openmp {
void matmul(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m);
void matmul_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m);
void matmul_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m);
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);
}  // namespace openmp

// Dispatch through the active backend.
void matmul(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m);
void matmul_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m);
void matmul_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m);
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);

}  // namespace owodlab::kernels
