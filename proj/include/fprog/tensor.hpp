#pragma once

#include <cstdint>
#include <vector>

namespace fprog {

// Row-major (h, w, c) value grid.  A "column" below means the c values at one
// spatial position (y, x) — the storage unit the fabric keeps per location.
struct Tensor {
    int h = 0, w = 0, c = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int h_, int w_, int c_) : h(h_), w(w_), c(c_), v(std::size_t(h_) * w_ * c_, 0.0) {}

    double& at(int y, int x, int ch) { return v[(std::size_t(y) * w + x) * c + ch]; }
    double at(int y, int x, int ch) const { return v[(std::size_t(y) * w + x) * c + ch]; }
    std::size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return h == o.h && w == o.w && c == o.c; }
};

// Coefficient grid produced by an enhancement unit: one value per mask cell.
// Cell (i, j) covers input columns [i*m, i*m+m) x [j*m, j*m+m), truncated at
// the lower/right edges when the extent is not a multiple of m.
struct CoeffGrid {
    int m = 1; // mask size
    int rows = 0, cols = 0;
    std::vector<double> v;

    CoeffGrid() = default;
    CoeffGrid(int m_, int rows_, int cols_)
        : m(m_), rows(rows_), cols(cols_), v(std::size_t(rows_) * cols_, 0.0) {}

    double& at(int i, int j) { return v[std::size_t(i) * cols + j]; }
    double at(int i, int j) const { return v[std::size_t(i) * cols + j]; }
};

} // namespace fprog
