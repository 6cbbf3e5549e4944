// AVX2 kernel variants. Vectorization is across independent output elements
// only: every output accumulates over ascending k exactly like the scalar
// reference, using unfused _mm256_mul_pd + _mm256_add_pd. This keeps the two
// backends bit-identical while the 4-row x 8-column register blocking gives
// the throughput the training loop needs.

#include "mla/kernels.hpp"

#ifdef MLA_HAVE_AVX2

#include <immintrin.h>

#include <cstring>

namespace mla::kernels {
namespace {

// Accumulates R rows x 8 columns of C in registers over the whole k loop.
template <int R>
inline void block_rx8(const double* a, const double* b, double* c, int k, int n, int i, int j) {
    __m256d acc[R][2];
    for (int r = 0; r < R; ++r) {
        acc[r][0] = _mm256_setzero_pd();
        acc[r][1] = _mm256_setzero_pd();
    }
    for (int kk = 0; kk < k; ++kk) {
        const double* brow = b + static_cast<size_t>(kk) * n + j;
        const __m256d b0 = _mm256_loadu_pd(brow);
        const __m256d b1 = _mm256_loadu_pd(brow + 4);
        for (int r = 0; r < R; ++r) {
            const __m256d av = _mm256_set1_pd(a[static_cast<size_t>(i + r) * k + kk]);
            acc[r][0] = _mm256_add_pd(acc[r][0], _mm256_mul_pd(av, b0));
            acc[r][1] = _mm256_add_pd(acc[r][1], _mm256_mul_pd(av, b1));
        }
    }
    for (int r = 0; r < R; ++r) {
        double* crow = c + static_cast<size_t>(i + r) * n + j;
        _mm256_storeu_pd(crow, acc[r][0]);
        _mm256_storeu_pd(crow + 4, acc[r][1]);
    }
}

template <int R>
inline void block_rx4(const double* a, const double* b, double* c, int k, int n, int i, int j) {
    __m256d acc[R];
    for (int r = 0; r < R; ++r) acc[r] = _mm256_setzero_pd();
    for (int kk = 0; kk < k; ++kk) {
        const __m256d bv = _mm256_loadu_pd(b + static_cast<size_t>(kk) * n + j);
        for (int r = 0; r < R; ++r) {
            const __m256d av = _mm256_set1_pd(a[static_cast<size_t>(i + r) * k + kk]);
            acc[r] = _mm256_add_pd(acc[r], _mm256_mul_pd(av, bv));
        }
    }
    for (int r = 0; r < R; ++r) _mm256_storeu_pd(c + static_cast<size_t>(i + r) * n + j, acc[r]);
}

// Scalar column tail, same ascending-k accumulation.
template <int R>
inline void block_tail(const double* a, const double* b, double* c, int k, int n, int i, int j0) {
    for (int r = 0; r < R; ++r) {
        for (int j = j0; j < n; ++j) {
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk)
                acc += a[static_cast<size_t>(i + r) * k + kk] * b[static_cast<size_t>(kk) * n + j];
            c[static_cast<size_t>(i + r) * n + j] = acc;
        }
    }
}

template <int R>
inline void rows(const double* a, const double* b, double* c, int k, int n, int i) {
    int j = 0;
    for (; j + 8 <= n; j += 8) block_rx8<R>(a, b, c, k, n, i, j);
    if (j + 4 <= n) {
        block_rx4<R>(a, b, c, k, n, i, j);
        j += 4;
    }
    if (j < n) block_tail<R>(a, b, c, k, n, i, j);
}

void matmul_avx2(const double* a, const double* b, double* c, int m, int k, int n) {
    int i = 0;
    for (; i + 4 <= m; i += 4) rows<4>(a, b, c, k, n, i);
    switch (m - i) {
        case 3: rows<3>(a, b, c, k, n, i); break;
        case 2: rows<2>(a, b, c, k, n, i); break;
        case 1: rows<1>(a, b, c, k, n, i); break;
        default: break;
    }
}

void add_avx2(const double* a, const double* b, double* y, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

void acc_avx2(double* y, const double* a, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(a + i)));
    for (; i < n; ++i) y[i] += a[i];
}

void axpy_avx2(double alpha, const double* a, double* y, size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(a + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) y[i] += alpha * a[i];
}

void scale_avx2(double alpha, const double* a, double* y, size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_mul_pd(av, _mm256_loadu_pd(a + i)));
    for (; i < n; ++i) y[i] = alpha * a[i];
}

void mul_avx2(const double* a, const double* b, double* y, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) y[i] = a[i] * b[i];
}

void mul_acc_avx2(const double* a, const double* b, double* y, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) y[i] += a[i] * b[i];
}

}  // namespace

const KernelTable& avx2_table() {
    static const KernelTable t{matmul_avx2, add_avx2,  acc_avx2,    axpy_avx2,
                               scale_avx2,  mul_avx2,  mul_acc_avx2};
    return t;
}

}  // namespace mla::kernels

#endif  // MLA_HAVE_AVX2
