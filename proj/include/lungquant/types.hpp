#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

#include "lungquant/errors.hpp"

namespace lungquant {

/// Voxel counts per axis. Axis convention throughout the library:
/// x = left-right, y = anterior-posterior, z = cranio-caudal.
struct Dims3 {
    int x = 0;
    int y = 0;
    int z = 0;

    bool operator==(const Dims3&) const = default;
    std::size_t total() const { return static_cast<std::size_t>(x) * y * z; }
    std::string str() const {
        return std::to_string(x) + "x" + std::to_string(y) + "x" + std::to_string(z);
    }
};

/// Physical vector in mm, same axis convention as Dims3.
struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    bool operator==(const Vec3&) const = default;
};

/// Dense 3D grid, x fastest, then y, then z.
template <typename T>
class Grid3 {
public:
    Grid3() = default;
    Grid3(int nx, int ny, int nz, T fill = T{})
        : dims_{nx, ny, nz}, data_(check_total(nx, ny, nz), fill) {}
    explicit Grid3(Dims3 d, T fill = T{}) : Grid3(d.x, d.y, d.z, fill) {}

    int nx() const { return dims_.x; }
    int ny() const { return dims_.y; }
    int nz() const { return dims_.z; }
    Dims3 dims() const { return dims_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int x, int y, int z) { return data_[index(x, y, z)]; }
    const T& operator()(int x, int y, int z) const { return data_[index(x, y, z)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * dims_.y + y) * dims_.x + x;
    }
    bool in_bounds(int x, int y, int z) const {
        return x >= 0 && x < dims_.x && y >= 0 && y < dims_.y && z >= 0 && z < dims_.z;
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    bool same_dims(const Grid3& other) const { return dims_ == other.dims_; }

private:
    static std::size_t check_total(int nx, int ny, int nz) {
        if (nx < 1 || ny < 1 || nz < 1)
            throw Error("Grid3: all dims must be >= 1, got " + Dims3{nx, ny, nz}.str());
        return static_cast<std::size_t>(nx) * ny * nz;
    }

    Dims3 dims_{};
    std::vector<T> data_;
};

/// CT volume in Hounsfield units with physical geometry.
struct CtVolume {
    Grid3<float> voxels;
    Vec3 spacing{1.0, 1.0, 1.0}; // mm per voxel
    Vec3 origin{0.0, 0.0, 0.0};  // mm, world position of voxel (0,0,0)

    Dims3 dims() const { return voxels.dims(); }

    /// Enforces the type invariants: dims >= 1, spacing > 0, finite voxels.
    void validate(const std::string& what = "CtVolume") const;
};

/// Binary {0,1} mask geometrically paired with a CtVolume.
struct BinaryMask3D {
    Grid3<std::uint8_t> voxels;
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};

    Dims3 dims() const { return voxels.dims(); }

    std::size_t foreground_count() const {
        std::size_t n = 0;
        for (std::uint8_t v : voxels.vec()) n += v;
        return n;
    }

    void validate(const std::string& what = "BinaryMask3D") const;
};

inline void CtVolume::validate(const std::string& what) const {
    if (voxels.empty()) throw Error(what + ": empty voxel grid");
    if (!(spacing.x > 0.0 && spacing.y > 0.0 && spacing.z > 0.0))
        throw Error(what + ": spacing must be positive");
    for (float v : voxels.vec())
        if (!std::isfinite(v)) throw Error(what + ": non-finite voxel value");
}

inline void BinaryMask3D::validate(const std::string& what) const {
    if (voxels.empty()) throw Error(what + ": empty voxel grid");
    if (!(spacing.x > 0.0 && spacing.y > 0.0 && spacing.z > 0.0))
        throw Error(what + ": spacing must be positive");
    for (std::uint8_t v : voxels.vec())
        if (v > 1) throw Error(what + ": mask values must be exactly 0 or 1");
}

/// Physical volume of one voxel in ml (mm^3 / 1000).
inline double voxel_volume_ml(const Vec3& spacing) {
    return spacing.x * spacing.y * spacing.z / 1000.0;
}

} // namespace lungquant
