#include <omp.h>

#include <algorithm>
#include <cassert>

#include "tiledet/tensor.hpp"

namespace tiledet::kernels {

namespace {

constexpr int kRows = 4;   // rows of C per micro-tile
constexpr int kCols = 32;  // columns of C per micro-tile

// C[i0:i0+4, :] (+)= A[i0:i0+4, :] * B. A is m x k, B is k x n. The per-element
// summation runs over k in order, starting from zero (or from the old C value
// when accumulating), so results do not depend on how row blocks are split.
template <bool Acc>
void row_block(const double* A, int lda, const double* B, int n, int kdim, double* C, int rows) {
  for (int j0 = 0; j0 < n; j0 += kCols) {
    const int jb = std::min(kCols, n - j0);
    double acc[kRows][kCols];
    for (int r = 0; r < kRows; ++r)
      for (int j = 0; j < kCols; ++j) acc[r][j] = (Acc && r < rows && j < jb) ? C[r * n + j0 + j] : 0.0;
    if (jb == kCols && rows == kRows) {
      for (int k = 0; k < kdim; ++k) {
        const double* b = B + static_cast<std::size_t>(k) * n + j0;
        for (int r = 0; r < kRows; ++r) {
          const double a = A[r * lda + k];
#pragma omp simd
          for (int j = 0; j < kCols; ++j) acc[r][j] += a * b[j];
        }
      }
    } else {
      for (int k = 0; k < kdim; ++k) {
        const double* b = B + static_cast<std::size_t>(k) * n + j0;
        for (int r = 0; r < rows; ++r) {
          const double a = A[r * lda + k];
          for (int j = 0; j < jb; ++j) acc[r][j] += a * b[j];
        }
      }
    }
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < jb; ++j) C[r * n + j0 + j] = acc[r][j];
  }
}

template <bool Acc>
void block(const Mat& A, const Mat& B, Mat& C, int blk) {
  const int i0 = blk * kRows;
  const int rows = std::min(kRows, A.rows - i0);
  row_block<Acc>(A.row(i0), A.cols, B.v.data(), B.cols, A.cols, C.row(i0), rows);
}

int blocks(int rows) { return (rows + kRows - 1) / kRows; }

Mat transposed(const Mat& M) {
  Mat T(M.cols, M.rows);
  for (int i = 0; i < M.rows; ++i)
    for (int j = 0; j < M.cols; ++j) T(j, i) = M(i, j);
  return T;
}

int g_threads = 0;

bool want_parallel(std::size_t work) {
  return !omp_in_parallel() && num_threads() > 1 && work >= (1u << 18);
}

template <bool Acc>
void run_serial(const Mat& A, const Mat& B, Mat& C) {
  for (int b = 0; b < blocks(A.rows); ++b) block<Acc>(A, B, C, b);
}

template <bool Acc>
void run_omp(const Mat& A, const Mat& B, Mat& C) {
  const int nb = blocks(A.rows);
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (int b = 0; b < nb; ++b) block<Acc>(A, B, C, b);
}

}  // namespace

void set_num_threads(int n) { g_threads = std::max(0, n); }
int num_threads() { return g_threads > 0 ? g_threads : omp_get_max_threads(); }

namespace serial {

void gemm(const Mat& A, const Mat& B, Mat& C) {
  assert(A.cols == B.rows);
  if (C.rows != A.rows || C.cols != B.cols) C = Mat(A.rows, B.cols);
  run_serial<false>(A, B, C);
}

void gemm_nt(const Mat& A, const Mat& B, Mat& C) {
  assert(A.cols == B.cols);
  gemm(A, transposed(B), C);
}

void gemm_tn_acc(const Mat& A, const Mat& B, Mat& C) {
  assert(A.rows == B.rows && C.rows == A.cols && C.cols == B.cols);
  run_serial<true>(transposed(A), B, C);
}

}  // namespace serial

namespace omp {

void gemm(const Mat& A, const Mat& B, Mat& C) {
  assert(A.cols == B.rows);
  if (C.rows != A.rows || C.cols != B.cols) C = Mat(A.rows, B.cols);
  run_omp<false>(A, B, C);
}

void gemm_nt(const Mat& A, const Mat& B, Mat& C) {
  assert(A.cols == B.cols);
  gemm(A, transposed(B), C);
}

void gemm_tn_acc(const Mat& A, const Mat& B, Mat& C) {
  assert(A.rows == B.rows && C.rows == A.cols && C.cols == B.cols);
  run_omp<true>(transposed(A), B, C);
}

}  // namespace omp

void gemm(const Mat& A, const Mat& B, Mat& C) {
  if (want_parallel(static_cast<std::size_t>(A.rows) * A.cols * B.cols)) omp::gemm(A, B, C);
  else serial::gemm(A, B, C);
}

void gemm_nt(const Mat& A, const Mat& B, Mat& C) {
  if (want_parallel(static_cast<std::size_t>(A.rows) * A.cols * B.rows)) omp::gemm_nt(A, B, C);
  else serial::gemm_nt(A, B, C);
}

void gemm_tn_acc(const Mat& A, const Mat& B, Mat& C) {
  if (want_parallel(static_cast<std::size_t>(A.rows) * A.cols * B.cols)) omp::gemm_tn_acc(A, B, C);
  else serial::gemm_tn_acc(A, B, C);
}

}  // namespace tiledet::kernels
