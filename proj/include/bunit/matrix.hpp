#pragma once

#include <cassert>
#include <vector>

namespace bunit {

// Small row-major double matrix. The training code needs hand-written
// backprop, so a transparent container beats an opaque BLAS wrapper here.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
    double* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }

    bool operator==(const Matrix& other) const = default;
};

} // namespace bunit
