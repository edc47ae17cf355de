#pragma once

#include <cstdint>

namespace gridshield {

// Number of threads the compute kernels may use. Results are bitwise
// identical for any thread count: every output element is owned by exactly
// one iteration and accumulated in a fixed order.
void set_compute_threads(int n);
int compute_threads();

struct ComputeThreadsGuard {
    explicit ComputeThreadsGuard(int n) : prev_(compute_threads()) { set_compute_threads(n); }
    ~ComputeThreadsGuard() { set_compute_threads(prev_); }
    ComputeThreadsGuard(const ComputeThreadsGuard&) = delete;
    ComputeThreadsGuard& operator=(const ComputeThreadsGuard&) = delete;

  private:
    int prev_;
};

// C[m x n] (+)= A[m x k] * B[k x n]
void gemm_nn(int m, int k, int n, const float* a, const float* b, float* c,
             bool accumulate = false);

// C[k x n] (+)= A^T * B with A[m x k], B[m x n]
void gemm_tn(int m, int k, int n, const float* a, const float* b, float* c,
             bool accumulate = false);

// C[m x n] (+)= A * B^T with A[m x k], B[n x k]
void gemm_nt(int m, int k, int n, const float* a, const float* b, float* c,
             bool accumulate = false);

// x[B,C,L] -> cols[(B*P) x (C*K)], P = (L-K)/stride + 1, col index = c*K + t
void im2col1d(const float* x, int batch, int channels, int length, int kernel, int stride,
              float* cols);

// scatter-add of dcols back onto dx (same indexing as im2col1d)
void col2im1d(const float* dcols, int batch, int channels, int length, int kernel, int stride,
              float* dx);

}  // namespace gridshield
