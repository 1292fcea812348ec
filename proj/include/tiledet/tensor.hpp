#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace tiledet {

// Dense row-major matrix of doubles. Vectors are 1 x n.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}

  double& operator()(int r, int c) noexcept { return v[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const noexcept { return v[static_cast<std::size_t>(r) * cols + c]; }
  double* row(int r) noexcept { return v.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const noexcept { return v.data() + static_cast<std::size_t>(r) * cols; }
  std::size_t size() const noexcept { return v.size(); }
  void zero() noexcept { std::fill(v.begin(), v.end(), 0.0); }

  friend bool operator==(const Mat&, const Mat&) = default;
};

// Matrix kernels. `serial` is the reference; `omp` splits output rows across
// threads (each output element is computed by one thread with the same
// summation order, so both agree bitwise). The unqualified entry points pick
// omp for large problems when not already inside a parallel region.
namespace kernels {

namespace serial {
// C = A * B
void gemm(const Mat& A, const Mat& B, Mat& C);
// C = A * B^T
void gemm_nt(const Mat& A, const Mat& B, Mat& C);
// C += A^T * B
void gemm_tn_acc(const Mat& A, const Mat& B, Mat& C);
}  // namespace serial

namespace omp {
void gemm(const Mat& A, const Mat& B, Mat& C);
void gemm_nt(const Mat& A, const Mat& B, Mat& C);
void gemm_tn_acc(const Mat& A, const Mat& B, Mat& C);
}  // namespace omp

void gemm(const Mat& A, const Mat& B, Mat& C);
void gemm_nt(const Mat& A, const Mat& B, Mat& C);
void gemm_tn_acc(const Mat& A, const Mat& B, Mat& C);

// Threads used by the parallel paths (0 = runtime default).
void set_num_threads(int n);
int num_threads();

}  // namespace kernels
}  // namespace tiledet
