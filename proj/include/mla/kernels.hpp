#pragma once

#include <cstddef>
#include <string>

namespace mla::kernels {

// Arithmetic inner loops live behind this table. Two implementations exist:
// a scalar reference and an AVX2 variant selected at runtime. Both compute
// every output element with the same IEEE operation sequence (the AVX2 code
// vectorizes across independent outputs and never reorders a reduction, and
// the build disables FP contraction), so the two backends are bit-identical
// and validated as such by tests/test_kernels.
struct KernelTable {
    // c[m,n] = a[m,k] * b[k,n], row-major; each c element accumulates over
    // ascending k from an exact 0.0.
    void (*matmul)(const double* a, const double* b, double* c, int m, int k, int n);
    // y[i] = a[i] + b[i]
    void (*add)(const double* a, const double* b, double* y, size_t n);
    // y[i] += a[i]
    void (*acc)(double* y, const double* a, size_t n);
    // y[i] += alpha * a[i]
    void (*axpy)(double alpha, const double* a, double* y, size_t n);
    // y[i] = alpha * a[i]
    void (*scale)(double alpha, const double* a, double* y, size_t n);
    // y[i] = a[i] * b[i]
    void (*mul)(const double* a, const double* b, double* y, size_t n);
    // y[i] += a[i] * b[i]
    void (*mul_acc)(const double* a, const double* b, double* y, size_t n);
};

enum class Backend { scalar, avx2 };

bool avx2_supported();

// Active backend: MLA_KERNEL_BACKEND=scalar|avx2 overrides, otherwise AVX2
// when the CPU has it.
Backend active_backend();
void set_backend(Backend b);

const KernelTable& table();
const KernelTable& table_for(Backend b);

std::string backend_name(Backend b);

// Data-movement helpers; order-only, shared by both backends.
void transpose(const double* in, double* out, int rows, int cols);

}  // namespace mla::kernels
