#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lungquant/errors.hpp"
#include "lungquant/types.hpp"

namespace lungquant::nn {

/// Dense feature map, layout [channel][z][y][x] with x fastest.
struct Tensor {
    int c = 0, z = 0, y = 0, x = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int c_, int z_, int y_, int x_, float fill = 0.0f)
        : c(c_), z(z_), y(y_), x(x_),
          v(static_cast<std::size_t>(c_) * z_ * y_ * x_, fill) {}

    std::size_t spatial() const { return static_cast<std::size_t>(z) * y * x; }
    std::size_t size() const { return static_cast<std::size_t>(c) * spatial(); }
    float* chan(int ci) { return v.data() + static_cast<std::size_t>(ci) * spatial(); }
    const float* chan(int ci) const { return v.data() + static_cast<std::size_t>(ci) * spatial(); }
    float& at(int ci, int zi, int yi, int xi) {
        return v[((static_cast<std::size_t>(ci) * z + zi) * y + yi) * x + xi];
    }
    float at(int ci, int zi, int yi, int xi) const {
        return v[((static_cast<std::size_t>(ci) * z + zi) * y + yi) * x + xi];
    }
    bool same_shape(const Tensor& o) const { return c == o.c && z == o.z && y == o.y && x == o.x; }
    std::string shape_str() const {
        return std::to_string(c) + "x" + std::to_string(z) + "x" + std::to_string(y) + "x" +
               std::to_string(x);
    }
    void release() { v.clear(); v.shrink_to_fit(); c = z = y = x = 0; }
};

/// Converts a grid with (x,y,z) dims into a single-channel tensor (same memory order).
inline Tensor tensor_from_grid(const Grid3<float>& g) {
    Tensor t(1, g.nz(), g.ny(), g.nx());
    t.v.assign(g.vec().begin(), g.vec().end());
    return t;
}

inline Grid3<float> grid_from_channel(const Tensor& t, int ci) {
    Grid3<float> g(t.x, t.y, t.z);
    const float* p = t.chan(ci);
    std::copy(p, p + t.spatial(), g.vec().begin());
    return g;
}

/// One trainable array and its gradient accumulator.
struct ParamView {
    std::string name;
    float* value = nullptr;
    float* grad = nullptr;
    std::size_t n = 0;
};

} // namespace lungquant::nn
