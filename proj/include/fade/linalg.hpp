#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace fade {

// Dense kernels shared by the denoiser and the probe classifier.
// Storage is Real (float in production); every reduction accumulates in
// double so gradient checks stay meaningful.

// y[n][o] = sum_i x[n][i] * w[o][i] + (b ? b[o] : 0)      (w is out x in, row-major)
template <typename Real>
void dense_forward(const Real* x, int n, int in, const Real* w, const Real* b, int out, Real* y) {
    for (int r = 0; r < n; ++r) {
        const Real* xr = x + static_cast<size_t>(r) * in;
        Real* yr = y + static_cast<size_t>(r) * out;
        for (int o = 0; o < out; ++o) {
            const Real* wo = w + static_cast<size_t>(o) * in;
            double acc = b ? static_cast<double>(b[o]) : 0.0;
            for (int i = 0; i < in; ++i) acc += static_cast<double>(wo[i]) * static_cast<double>(xr[i]);
            yr[o] = static_cast<Real>(acc);
        }
    }
}

// dw[o][i] += sum_n gy[n][o] * x[n][i]; db[o] += sum_n gy[n][o]
template <typename Real>
void dense_param_grad(const Real* gy, const Real* x, int n, int in, int out,
                      double* dw, double* db) {
    for (int o = 0; o < out; ++o) {
        double* dwo = dw + static_cast<size_t>(o) * in;
        double dbo = 0.0;
        for (int r = 0; r < n; ++r) {
            const double g = static_cast<double>(gy[static_cast<size_t>(r) * out + o]);
            dbo += g;
            const Real* xr = x + static_cast<size_t>(r) * in;
            for (int i = 0; i < in; ++i) dwo[i] += g * static_cast<double>(xr[i]);
        }
        if (db) db[o] += dbo;
    }
}

// dx[n][i] += sum_o gy[n][o] * w[o][i]
template <typename Real>
void dense_input_grad(const Real* gy, const Real* w, int n, int in, int out, Real* dx) {
    for (int r = 0; r < n; ++r) {
        const Real* gr = gy + static_cast<size_t>(r) * out;
        Real* dxr = dx + static_cast<size_t>(r) * in;
        for (int i = 0; i < in; ++i) {
            double acc = static_cast<double>(dxr[i]);
            for (int o = 0; o < out; ++o)
                acc += static_cast<double>(gr[o]) * static_cast<double>(w[static_cast<size_t>(o) * in + i]);
            dxr[i] = static_cast<Real>(acc);
        }
    }
}

template <typename Real>
Real silu(Real x) {
    const double xd = static_cast<double>(x);
    return static_cast<Real>(xd / (1.0 + std::exp(-xd)));
}

template <typename Real>
Real silu_grad(Real x) {
    const double xd = static_cast<double>(x);
    const double s = 1.0 / (1.0 + std::exp(-xd));
    return static_cast<Real>(s * (1.0 + xd * (1.0 - s)));
}

template <typename Real>
double dot_f64(const Real* a, const Real* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

template <typename Real>
double sum_sq_f64(const std::vector<Real>& v) {
    double acc = 0.0;
    for (Real x : v) acc += static_cast<double>(x) * static_cast<double>(x);
    return acc;
}

}  // namespace fade
