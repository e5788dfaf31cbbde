#include "rgm/kernels.hpp"

#include "rgm/error.hpp"

#ifdef RGM_HAVE_OPENMP
#include <omp.h>
#endif

namespace rgm::kernels {

namespace {

void check_matmul(const Matrix& a, const Matrix& b, std::size_t inner_a, std::size_t inner_b,
                  const char* name) {
  require(inner_a == inner_b, ErrorCode::kShapeMismatch,
          std::string(name) + ": " + a.shape_string() + " with " + b.shape_string());
}

}  // namespace

namespace serial {

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  check_matmul(a, b, a.cols(), b.rows(), "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  out = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      for (std::size_t j = 0; j < m; ++j) out(i, j) += aip * b(p, j);
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  check_matmul(a, b, a.rows(), b.rows(), "matmul_tn");
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  out = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double api = a(p, i);
      for (std::size_t j = 0; j < m; ++j) out(i, j) += api * b(p, j);
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  check_matmul(a, b, a.cols(), b.cols(), "matmul_nt");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  out = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a(i, p) * b(j, p);
      out(i, j) = s;
    }
  }
}

void add_row_bias(Matrix& out, const Matrix& bias) {
  require(bias.rows() == 1 && bias.cols() == out.cols(), ErrorCode::kShapeMismatch,
          "add_row_bias: bias " + bias.shape_string() + " for " + out.shape_string());
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bias(0, j);
}

void column_sums(const Matrix& a, Matrix& out) {
  out = Matrix(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) += a(i, j);
}

}  // namespace serial

namespace parallel {

// The loop bodies mirror the serial versions exactly; only the outer loop is
// distributed. Signed induction variables keep older OpenMP runtimes happy.

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  check_matmul(a, b, a.cols(), b.rows(), "matmul");
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(a.rows());
  const std::size_t k = a.cols(), m = b.cols();
  out = Matrix(a.rows(), m);
  const bool big = a.rows() * k * m >= kParallelThreshold;
  (void)big;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      for (std::size_t j = 0; j < m; ++j) out(i, j) += aip * b(p, j);
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  check_matmul(a, b, a.rows(), b.rows(), "matmul_tn");
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(a.cols());
  const std::size_t k = a.rows(), m = b.cols();
  out = Matrix(a.cols(), m);
  const bool big = a.cols() * k * m >= kParallelThreshold;
  (void)big;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double api = a(p, i);
      for (std::size_t j = 0; j < m; ++j) out(i, j) += api * b(p, j);
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  check_matmul(a, b, a.cols(), b.cols(), "matmul_nt");
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(a.rows());
  const std::size_t k = a.cols(), m = b.rows();
  out = Matrix(a.rows(), m);
  const bool big = a.rows() * k * m >= kParallelThreshold;
  (void)big;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a(i, p) * b(j, p);
      out(i, j) = s;
    }
  }
}

void add_row_bias(Matrix& out, const Matrix& bias) {
  require(bias.rows() == 1 && bias.cols() == out.cols(), ErrorCode::kShapeMismatch,
          "add_row_bias: bias " + bias.shape_string() + " for " + out.shape_string());
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(out.rows());
  const bool big = out.size() >= kParallelThreshold;
  (void)big;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bias(0, j);
}

void column_sums(const Matrix& a, Matrix& out) {
  // Parallel over columns: each column is summed top to bottom by one thread,
  // the same order the serial kernel uses.
  out = Matrix(1, a.cols());
  const std::ptrdiff_t m = static_cast<std::ptrdiff_t>(a.cols());
  const bool big = a.size() >= kParallelThreshold;
  (void)big;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, j);
    out(0, j) = s;
  }
}

}  // namespace parallel

#ifdef RGM_HAVE_OPENMP
namespace impl = parallel;
#else
namespace impl = serial;
#endif

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out;
  impl::matmul(a, b, out);
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix out;
  impl::matmul_tn(a, b, out);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix out;
  impl::matmul_nt(a, b, out);
  return out;
}

void add_row_bias(Matrix& out, const Matrix& bias) { impl::add_row_bias(out, bias); }

Matrix column_sums(const Matrix& a) {
  Matrix out;
  impl::column_sums(a, out);
  return out;
}

bool openmp_enabled() noexcept {
#ifdef RGM_HAVE_OPENMP
  return true;
#else
  return false;
#endif
}

int max_threads() noexcept {
#ifdef RGM_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace rgm::kernels
