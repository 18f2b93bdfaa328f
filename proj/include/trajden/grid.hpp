#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "trajden/util.hpp"

namespace trajden {

// Dense row-major tensor of up to 4 dimensions. Used both as a plain raster
// container (map tiles, observations) and as the value type the autodiff tape
// operates on; `grad` is allocated lazily for parameters.
template <typename T>
struct BasicGrid {
    std::vector<int> shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;

    BasicGrid() = default;
    explicit BasicGrid(std::vector<int> shape_, T fill = T(0)) : shape(std::move(shape_)) {
        require(!shape.empty() && shape.size() <= 4, "grid rank must be 1..4");
        for (int d : shape) require(d > 0, "grid dims must be positive");
        data.assign(numel(), fill);
    }

    size_t numel() const {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return n;
    }
    int rank() const { return static_cast<int>(shape.size()); }

    T& at(int i) { return data[static_cast<size_t>(i)]; }
    T at(int i) const { return data[static_cast<size_t>(i)]; }
    T& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    T at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
    T& at(int i, int j, int k) {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    T at(int i, int j, int k) const {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    T& at(int i, int j, int k, int l) {
        return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    T at(int i, int j, int k, int l) const {
        return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() { grad.assign(data.size(), T(0)); }

    bool same_shape(const BasicGrid& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }

    template <typename U>
    BasicGrid<U> cast() const {
        BasicGrid<U> out(shape);
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Grid = BasicGrid<float>;
using Grid64 = BasicGrid<double>;

template <typename T>
inline void check_same_shape(const BasicGrid<T>& a, const BasicGrid<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw numeric_error(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                            b.shape_str());
}

// Bilinear lookup of one channel plane [H,W] at fractional (row, col) given in
// cell-center coordinates; outside the plane reads as zero.
template <typename T>
inline double bilinear_at(const BasicGrid<T>& g, int channel, double row, double col) {
    const int H = g.shape[g.rank() - 2], W = g.shape[g.rank() - 1];
    int r0 = static_cast<int>(std::floor(row));
    int c0 = static_cast<int>(std::floor(col));
    double fr = row - r0, fc = col - c0;
    auto sample = [&](int r, int c) -> double {
        if (r < 0 || r >= H || c < 0 || c >= W) return 0.0;
        return static_cast<double>(g.at(channel, r, c));
    };
    return (1 - fr) * ((1 - fc) * sample(r0, c0) + fc * sample(r0, c0 + 1)) +
           fr * ((1 - fc) * sample(r0 + 1, c0) + fc * sample(r0 + 1, c0 + 1));
}

}  // namespace trajden
