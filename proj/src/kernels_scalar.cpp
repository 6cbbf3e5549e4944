// Scalar reference kernels. These define the arithmetic contract: every
// output element is a sum over ascending k starting from exact 0.0, built
// from unfused mul + add. The AVX2 variants must match these bit for bit.

#include "mla/kernels.hpp"

#include <cstring>

namespace mla::kernels {
namespace {

void matmul_scalar(const double* a, const double* b, double* c, int m, int k, int n) {
    std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<size_t>(i) * n;
        const double* arow = a + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = b + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

void add_scalar(const double* a, const double* b, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void acc_scalar(double* y, const double* a, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a[i];
}

void axpy_scalar(double alpha, const double* a, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * a[i];
}

void scale_scalar(double alpha, const double* a, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = alpha * a[i];
}

void mul_scalar(const double* a, const double* b, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void mul_acc_scalar(const double* a, const double* b, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable t{matmul_scalar, add_scalar,   acc_scalar,    axpy_scalar,
                               scale_scalar,  mul_scalar,   mul_acc_scalar};
    return t;
}

void transpose(const double* in, double* out, int rows, int cols) {
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            out[static_cast<size_t>(j) * rows + i] = in[static_cast<size_t>(i) * cols + j];
}

}  // namespace mla::kernels
