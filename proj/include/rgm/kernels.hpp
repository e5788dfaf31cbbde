#pragma once

#include "rgm/matrix.hpp"

// Dense kernels behind the autodiff tape. Each kernel exists twice: a plain
// serial loop nest kept as the reference, and an OpenMP version that splits
// the output rows across threads. Every output element is reduced by one
// thread in the same order as the serial loop, so both produce bit-identical
// results and runs stay deterministic regardless of thread count.
namespace rgm::kernels {

namespace serial {
/// out = a * b
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
/// out = a^T * b
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out);
/// out = a * b^T
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out);
/// out(i, j) += bias(0, j)
void add_row_bias(Matrix& out, const Matrix& bias);
/// out(0, j) = sum_i a(i, j)
void column_sums(const Matrix& a, Matrix& out);
}  // namespace serial

namespace parallel {
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out);
void add_row_bias(Matrix& out, const Matrix& bias);
void column_sums(const Matrix& a, Matrix& out);
}  // namespace parallel

/// Work (multiply-adds) below which the parallel kernels stay on one thread.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

// Dispatching entry points used by the library: OpenMP when available.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
void add_row_bias(Matrix& out, const Matrix& bias);
Matrix column_sums(const Matrix& a);

bool openmp_enabled() noexcept;
int max_threads() noexcept;

}  // namespace rgm::kernels
