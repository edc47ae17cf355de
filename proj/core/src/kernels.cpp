#include "gridshield/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cstring>

namespace gridshield {

namespace {
std::atomic<int> g_threads{0};  // 0 = hardware default

int effective_threads() {
    int n = g_threads.load(std::memory_order_relaxed);
    return n > 0 ? n : omp_get_max_threads();
}
}  // namespace

void set_compute_threads(int n) { g_threads.store(n, std::memory_order_relaxed); }
int compute_threads() { return effective_threads(); }

namespace {

constexpr int kRowTile = 4;
constexpr int kColTile = 32;

// full 4x32 tile, fixed trip counts so the compiler can vectorize
inline void tile_nn(int k, int n, const float* a, int lda, const float* b, float* acc) {
    for (int kk = 0; kk < k; ++kk) {
        const float* brow = b + static_cast<std::size_t>(kk) * n;
        for (int r = 0; r < kRowTile; ++r) {
            const float av = a[r * lda + kk];
            float* arow = acc + r * kColTile;
            for (int c = 0; c < kColTile; ++c) arow[c] += av * brow[c];
        }
    }
}

inline void tile_nn_partial(int k, int n, int mr, int nr, const float* a, int lda, const float* b,
                            float* acc) {
    for (int kk = 0; kk < k; ++kk) {
        const float* brow = b + static_cast<std::size_t>(kk) * n;
        for (int r = 0; r < mr; ++r) {
            const float av = a[r * lda + kk];
            float* arow = acc + r * kColTile;
            for (int c = 0; c < nr; ++c) arow[c] += av * brow[c];
        }
    }
}

}  // namespace

void gemm_nn(int m, int k, int n, const float* a, const float* b, float* c, bool accumulate) {
    const int row_tiles = (m + kRowTile - 1) / kRowTile;
    const int col_tiles = (n + kColTile - 1) / kColTile;
    const int total = row_tiles * col_tiles;
    const int nthreads = effective_threads();

#pragma omp parallel for schedule(static) num_threads(nthreads)
    for (int t = 0; t < total; ++t) {
        const int it = t / col_tiles;
        const int jt = t % col_tiles;
        const int i0 = it * kRowTile;
        const int j0 = jt * kColTile;
        const int mr = std::min(kRowTile, m - i0);
        const int nr = std::min(kColTile, n - j0);

        float acc[kRowTile * kColTile] = {0.0f};
        const float* atile = a + static_cast<std::size_t>(i0) * k;
        const float* btile = b + j0;
        if (mr == kRowTile && nr == kColTile)
            tile_nn(k, n, atile, k, btile, acc);
        else
            tile_nn_partial(k, n, mr, nr, atile, k, btile, acc);

        for (int r = 0; r < mr; ++r) {
            float* crow = c + static_cast<std::size_t>(i0 + r) * n + j0;
            const float* arow = acc + r * kColTile;
            if (accumulate)
                for (int cc = 0; cc < nr; ++cc) crow[cc] += arow[cc];
            else
                for (int cc = 0; cc < nr; ++cc) crow[cc] = arow[cc];
        }
    }
}

void gemm_tn(int m, int k, int n, const float* a, const float* b, float* c, bool accumulate) {
    const int row_tiles = (k + kRowTile - 1) / kRowTile;
    const int col_tiles = (n + kColTile - 1) / kColTile;
    const int total = row_tiles * col_tiles;
    const int nthreads = effective_threads();

#pragma omp parallel for schedule(static) num_threads(nthreads)
    for (int t = 0; t < total; ++t) {
        const int it = t / col_tiles;
        const int jt = t % col_tiles;
        const int p0 = it * kRowTile;
        const int j0 = jt * kColTile;
        const int pr = std::min(kRowTile, k - p0);
        const int nr = std::min(kColTile, n - j0);

        float acc[kRowTile * kColTile] = {0.0f};
        if (pr == kRowTile && nr == kColTile) {
            for (int bb = 0; bb < m; ++bb) {
                const float* arow = a + static_cast<std::size_t>(bb) * k + p0;
                const float* brow = b + static_cast<std::size_t>(bb) * n + j0;
                for (int r = 0; r < kRowTile; ++r) {
                    const float av = arow[r];
                    float* dst = acc + r * kColTile;
                    for (int cc = 0; cc < kColTile; ++cc) dst[cc] += av * brow[cc];
                }
            }
        } else {
            for (int bb = 0; bb < m; ++bb) {
                const float* arow = a + static_cast<std::size_t>(bb) * k + p0;
                const float* brow = b + static_cast<std::size_t>(bb) * n + j0;
                for (int r = 0; r < pr; ++r) {
                    const float av = arow[r];
                    float* dst = acc + r * kColTile;
                    for (int cc = 0; cc < nr; ++cc) dst[cc] += av * brow[cc];
                }
            }
        }

        for (int r = 0; r < pr; ++r) {
            float* crow = c + static_cast<std::size_t>(p0 + r) * n + j0;
            const float* arow = acc + r * kColTile;
            if (accumulate)
                for (int cc = 0; cc < nr; ++cc) crow[cc] += arow[cc];
            else
                for (int cc = 0; cc < nr; ++cc) crow[cc] = arow[cc];
        }
    }
}

namespace {

// dot product with fixed-order partial accumulators
inline float dot_det(int k, const float* x, const float* y) {
    constexpr int kLanes = 16;
    float acc[kLanes] = {0.0f};
    int kk = 0;
    for (; kk + kLanes <= k; kk += kLanes)
        for (int l = 0; l < kLanes; ++l) acc[l] += x[kk + l] * y[kk + l];
    for (int l = 0; kk + l < k; ++l) acc[l] += x[kk + l] * y[kk + l];
    float s = 0.0f;
    for (int l = 0; l < kLanes; ++l) s += acc[l];
    return s;
}

}  // namespace

void gemm_nt(int m, int k, int n, const float* a, const float* b, float* c, bool accumulate) {
    const int nthreads = effective_threads();
    const int row_tiles = (m + kRowTile - 1) / kRowTile;
#pragma omp parallel for schedule(static) num_threads(nthreads)
    for (int it = 0; it < row_tiles; ++it) {
        const int i0 = it * kRowTile;
        const int mr = std::min(kRowTile, m - i0);
        for (int j = 0; j < n; ++j) {
            const float* brow = b + static_cast<std::size_t>(j) * k;
            if (mr == kRowTile) {
                constexpr int kLanes = 16;
                float acc[kRowTile][kLanes] = {};
                int kk = 0;
                for (; kk + kLanes <= k; kk += kLanes) {
                    for (int r = 0; r < kRowTile; ++r) {
                        const float* arow = a + static_cast<std::size_t>(i0 + r) * k + kk;
                        const float* bb = brow + kk;
                        for (int l = 0; l < kLanes; ++l) acc[r][l] += arow[l] * bb[l];
                    }
                }
                for (int r = 0; r < kRowTile; ++r)
                    for (int l = 0; kk + l < k; ++l)
                        acc[r][l] += a[static_cast<std::size_t>(i0 + r) * k + kk + l] * brow[kk + l];
                for (int r = 0; r < kRowTile; ++r) {
                    float s = 0.0f;
                    for (int l = 0; l < kLanes; ++l) s += acc[r][l];
                    float* cv = c + static_cast<std::size_t>(i0 + r) * n + j;
                    if (accumulate)
                        *cv += s;
                    else
                        *cv = s;
                }
            } else {
                for (int r = 0; r < mr; ++r) {
                    const float v = dot_det(k, a + static_cast<std::size_t>(i0 + r) * k, brow);
                    float* cv = c + static_cast<std::size_t>(i0 + r) * n + j;
                    if (accumulate)
                        *cv += v;
                    else
                        *cv = v;
                }
            }
        }
    }
}

void im2col1d(const float* x, int batch, int channels, int length, int kernel, int stride,
              float* cols) {
    const int out_len = (length - kernel) / stride + 1;
    const int row_w = channels * kernel;
    const int nthreads = effective_threads();
#pragma omp parallel for schedule(static) num_threads(nthreads)
    for (int bb = 0; bb < batch; ++bb) {
        const float* xb = x + static_cast<std::size_t>(bb) * channels * length;
        float* rb = cols + static_cast<std::size_t>(bb) * out_len * row_w;
        for (int p = 0; p < out_len; ++p) {
            float* row = rb + static_cast<std::size_t>(p) * row_w;
            for (int ch = 0; ch < channels; ++ch) {
                const float* src = xb + static_cast<std::size_t>(ch) * length + p * stride;
                float* dst = row + ch * kernel;
                for (int t = 0; t < kernel; ++t) dst[t] = src[t];
            }
        }
    }
}

void col2im1d(const float* dcols, int batch, int channels, int length, int kernel, int stride,
              float* dx) {
    const int out_len = (length - kernel) / stride + 1;
    const int row_w = channels * kernel;
    const int nthreads = effective_threads();
#pragma omp parallel for schedule(static) num_threads(nthreads)
    for (int bb = 0; bb < batch; ++bb) {
        const float* rb = dcols + static_cast<std::size_t>(bb) * out_len * row_w;
        float* xb = dx + static_cast<std::size_t>(bb) * channels * length;
        for (int p = 0; p < out_len; ++p) {
            const float* row = rb + static_cast<std::size_t>(p) * row_w;
            for (int ch = 0; ch < channels; ++ch) {
                float* dst = xb + static_cast<std::size_t>(ch) * length + p * stride;
                const float* src = row + ch * kernel;
                for (int t = 0; t < kernel; ++t) dst[t] += src[t];
            }
        }
    }
}

}  // namespace gridshield
