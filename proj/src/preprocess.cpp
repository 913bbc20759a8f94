#include "lungquant/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace lungquant::preprocess {

namespace {

// Grid centers are aligned: destination voxel centers map to
// (i + 0.5) * src/dst - 0.5 in source index space.
struct AxisMap {
    double scale;
    double src_of(int i) const { return (i + 0.5) * scale - 0.5; }
};

Vec3 rescaled_spacing(const Vec3& spacing, Dims3 src, Dims3 dst) {
    return {spacing.x * src.x / dst.x, spacing.y * src.y / dst.y, spacing.z * src.z / dst.z};
}

void check_target(Dims3 t) {
    if (t.x < 1 || t.y < 1 || t.z < 1)
        throw Error("resample: target dims must be >= 1, got " + t.str());
}

} // namespace

CtVolume window_and_normalize(const CtVolume& vol, const HuWindow& w) {
    w.validate();
    CtVolume out = vol;
    const float lo = static_cast<float>(w.lo);
    const float inv_range = static_cast<float>(1.0 / (w.hi - w.lo));
    for (auto& v : out.voxels.vec()) {
        const float c = std::clamp(v, lo, static_cast<float>(w.hi));
        v = (c - lo) * inv_range;
    }
    return out;
}

CtVolume resample(const CtVolume& vol, Dims3 target) {
    check_target(target);
    const Dims3 src = vol.dims();
    if (src == target) {
        return vol;
    }
    CtVolume out;
    out.voxels = Grid3<float>(target);
    out.spacing = rescaled_spacing(vol.spacing, src, target);
    out.origin = vol.origin;

    const AxisMap mx{static_cast<double>(src.x) / target.x};
    const AxisMap my{static_cast<double>(src.y) / target.y};
    const AxisMap mz{static_cast<double>(src.z) / target.z};
    const auto& g = vol.voxels;

    for (int z = 0; z < target.z; ++z) {
        const double fz = std::clamp(mz.src_of(z), 0.0, static_cast<double>(src.z - 1));
        const int z0 = static_cast<int>(fz);
        const int z1 = std::min(z0 + 1, src.z - 1);
        const float wz = static_cast<float>(fz - z0);
        for (int y = 0; y < target.y; ++y) {
            const double fy = std::clamp(my.src_of(y), 0.0, static_cast<double>(src.y - 1));
            const int y0 = static_cast<int>(fy);
            const int y1 = std::min(y0 + 1, src.y - 1);
            const float wy = static_cast<float>(fy - y0);
            for (int x = 0; x < target.x; ++x) {
                const double fx = std::clamp(mx.src_of(x), 0.0, static_cast<double>(src.x - 1));
                const int x0 = static_cast<int>(fx);
                const int x1 = std::min(x0 + 1, src.x - 1);
                const float wx = static_cast<float>(fx - x0);

                const float c00 = g(x0, y0, z0) * (1 - wx) + g(x1, y0, z0) * wx;
                const float c10 = g(x0, y1, z0) * (1 - wx) + g(x1, y1, z0) * wx;
                const float c01 = g(x0, y0, z1) * (1 - wx) + g(x1, y0, z1) * wx;
                const float c11 = g(x0, y1, z1) * (1 - wx) + g(x1, y1, z1) * wx;
                const float c0 = c00 * (1 - wy) + c10 * wy;
                const float c1 = c01 * (1 - wy) + c11 * wy;
                out.voxels(x, y, z) = c0 * (1 - wz) + c1 * wz;
            }
        }
    }
    return out;
}

BinaryMask3D resample(const BinaryMask3D& mask, Dims3 target) {
    check_target(target);
    const Dims3 src = mask.dims();
    if (src == target) {
        return mask;
    }
    BinaryMask3D out;
    out.voxels = Grid3<std::uint8_t>(target);
    out.spacing = rescaled_spacing(mask.spacing, src, target);
    out.origin = mask.origin;

    const AxisMap mx{static_cast<double>(src.x) / target.x};
    const AxisMap my{static_cast<double>(src.y) / target.y};
    const AxisMap mz{static_cast<double>(src.z) / target.z};
    auto nearest = [](const AxisMap& m, int i, int n) {
        return std::clamp(static_cast<int>(std::lround(m.src_of(i))), 0, n - 1);
    };

    for (int z = 0; z < target.z; ++z) {
        const int sz = nearest(mz, z, src.z);
        for (int y = 0; y < target.y; ++y) {
            const int sy = nearest(my, y, src.y);
            for (int x = 0; x < target.x; ++x)
                out.voxels(x, y, z) = mask.voxels(nearest(mx, x, src.x), sy, sz);
        }
    }
    return out;
}

BinaryMask3D resample_mask_to_original(const BinaryMask3D& mask, const CtVolume& reference) {
    BinaryMask3D out = resample(mask, reference.dims());
    out.spacing = reference.spacing;
    out.origin = reference.origin;
    return out;
}

} // namespace lungquant::preprocess
