#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "datqa/errors.hpp"

namespace datqa {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

// Dense row-major array of doubles. Rank 0 (scalar), 1 (vector) or 2 (matrix).
struct Array {
    Shape shape;
    std::vector<double> data;

    Array() = default;
    explicit Array(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
    Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw ShapeError("array data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    static Array scalar(double v) { return Array({}, {v}); }
    static Array vec(std::vector<double> d) {
        size_t n = d.size();
        return Array({n}, std::move(d));
    }
    static Array zeros(Shape s) { return Array(std::move(s)); }

    size_t numel() const { return data.size(); }
    size_t rank() const { return shape.size(); }
    size_t rows() const { return rank() == 2 ? shape[0] : (rank() == 1 ? shape[0] : 1); }
    size_t cols() const { return rank() == 2 ? shape[1] : 1; }

    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }
    double& at(size_t i, size_t j) { return data[i * shape[1] + j]; }
    double at(size_t i, size_t j) const { return data[i * shape[1] + j]; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Array& o) const { return shape == o.shape; }

    bool operator==(const Array& o) const { return shape == o.shape && data == o.data; }
};

// Identity matrix, handy for tests and Cholesky defaults.
inline Array eye(size_t n) {
    Array m({n, n});
    for (size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

// Packed row-major lower triangle: (0,0),(1,0),(1,1),(2,0),... length n(n+1)/2.
inline size_t tri_numel(size_t n) { return n * (n + 1) / 2; }
inline size_t tri_index(size_t i, size_t j) { return i * (i + 1) / 2 + j; }
inline bool tri_is_diag(size_t flat_index, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (flat_index == tri_index(i, i)) return true;
    return false;
}

// Expand a packed lower triangle into a dense n x n matrix (upper part zero).
inline Array tri_unpack(const Array& packed, size_t n) {
    if (packed.rank() != 1 || packed.numel() != tri_numel(n))
        throw ShapeError("packed triangle must have length n(n+1)/2 = " +
                         std::to_string(tri_numel(n)) + ", got " + shape_str(packed.shape));
    Array m({n, n});
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j <= i; ++j) m.at(i, j) = packed[tri_index(i, j)];
    return m;
}

}  // namespace datqa
