#include "lungquant/classical_seg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "lungquant/errors.hpp"

namespace lungquant::classical {

namespace {

constexpr int kHistogramBins = 256;

void check_slice(const Grid3<float>& s, const char* who) {
    if (s.nz() != 1) throw Error(std::string(who) + ": expected a 2D slice (nz == 1)");
}

Grid3<float> axial_slice(const CtVolume& vol, int z) {
    Grid3<float> s(vol.dims().x, vol.dims().y, 1);
    for (int y = 0; y < vol.dims().y; ++y)
        for (int x = 0; x < vol.dims().x; ++x) s(x, y, 0) = vol.voxels(x, y, z);
    return s;
}

Grid3<float> coronal_slice(const CtVolume& vol, int y) {
    // axes of the slice: (x, z)
    Grid3<float> s(vol.dims().x, vol.dims().z, 1);
    for (int z = 0; z < vol.dims().z; ++z)
        for (int x = 0; x < vol.dims().x; ++x) s(x, z, 0) = vol.voxels(x, y, z);
    return s;
}

void remove_border_components_2d(Grid3<std::uint8_t>& m, BorderMode border) {
    const int nx = m.nx(), ny = m.ny();
    std::vector<std::size_t> stack;
    auto push_if_fg = [&](int x, int y) {
        if (x < 0 || x >= nx || y < 0 || y >= ny) return;
        const std::size_t i = m.index(x, y, 0);
        if (m[i] == 1) {
            m[i] = 2; // visited marker
            stack.push_back(i);
        }
    };
    if (border == BorderMode::AllEdges) {
        for (int x = 0; x < nx; ++x) {
            push_if_fg(x, 0);
            push_if_fg(x, ny - 1);
        }
    }
    for (int y = 0; y < ny; ++y) {
        push_if_fg(0, y);
        push_if_fg(nx - 1, y);
    }
    // 4-connected flood: the below-threshold region is background-like, and
    // diagonal contact must not let outside air tunnel through a thin body wall
    while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        const int y = static_cast<int>(i) / nx;
        const int x = static_cast<int>(i) % nx;
        push_if_fg(x - 1, y);
        push_if_fg(x + 1, y);
        push_if_fg(x, y - 1);
        push_if_fg(x, y + 1);
    }
    for (auto& v : m.vec()) v = (v == 1) ? 1 : 0;
}

} // namespace

double otsu_threshold(const Grid3<float>& slice) {
    check_slice(slice, "otsu_threshold");
    float lo = std::numeric_limits<float>::max();
    float hi = std::numeric_limits<float>::lowest();
    for (float v : slice.vec()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(lo < hi)) throw Error("otsu_threshold: constant slice");

    const double bin_width = (static_cast<double>(hi) - static_cast<double>(lo)) / kHistogramBins;
    std::vector<std::size_t> hist(kHistogramBins, 0);
    for (float v : slice.vec()) {
        int b = static_cast<int>((static_cast<double>(v) - lo) / bin_width);
        ++hist[std::clamp(b, 0, kHistogramBins - 1)];
    }

    const double total = static_cast<double>(slice.size());
    double sum_all = 0.0;
    for (int b = 0; b < kHistogramBins; ++b) sum_all += b * static_cast<double>(hist[b]);

    int best_cut = 0;
    double best_var = -1.0;
    double w0 = 0.0, sum0 = 0.0;
    for (int k = 0; k < kHistogramBins; ++k) {
        w0 += static_cast<double>(hist[k]);
        sum0 += k * static_cast<double>(hist[k]);
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (sum_all - sum0) / w1;
        const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best_cut = k;
        }
    }
    return static_cast<double>(lo) + (best_cut + 1) * bin_width;
}

Grid3<std::uint8_t> rough_lung_2d(const Grid3<float>& slice_hu, const preprocess::HuWindow& window,
                                  BorderMode border) {
    check_slice(slice_hu, "rough_lung_2d");
    window.validate();

    Grid3<float> windowed(slice_hu.dims());
    const float lo = static_cast<float>(window.lo);
    const float inv_range = static_cast<float>(1.0 / (window.hi - window.lo));
    for (std::size_t i = 0; i < slice_hu.size(); ++i)
        windowed[i] = (std::clamp(slice_hu[i], lo, static_cast<float>(window.hi)) - lo) * inv_range;

    Grid3<std::uint8_t> mask(slice_hu.dims());
    float wlo = windowed[0], whi = windowed[0];
    for (float v : windowed.vec()) {
        wlo = std::min(wlo, v);
        whi = std::max(whi, v);
    }
    if (!(wlo < whi)) return mask; // nothing to separate

    const double threshold = otsu_threshold(windowed);
    for (std::size_t i = 0; i < windowed.size(); ++i)
        mask[i] = windowed[i] < threshold ? 1 : 0;

    remove_border_components_2d(mask, border);
    return mask;
}

std::pair<int, int> axial_extent(const CtVolume& vol) {
    vol.validate("axial_extent input");
    const Grid3<float> cor = coronal_slice(vol, vol.dims().y / 2);
    // the second slice axis is cranio-caudal: scan cuts, not open air
    const Grid3<std::uint8_t> rough =
        rough_lung_2d(cor, preprocess::kLungWindow, BorderMode::FirstAxisOnly);

    int z_min = vol.dims().z, z_max = -1;
    for (int z = 0; z < vol.dims().z; ++z)
        for (int x = 0; x < vol.dims().x; ++x)
            if (rough(x, z, 0)) {
                z_min = std::min(z_min, z);
                z_max = std::max(z_max, z);
            }
    if (z_max < 0) throw Error("axial_extent: empty rough lung mask on the central coronal slice");
    return {z_min, z_max};
}

BinaryMask3D seed_mask_3d(const CtVolume& vol) {
    const auto [z_min, z_max] = axial_extent(vol);
    BinaryMask3D seed;
    seed.voxels = Grid3<std::uint8_t>(vol.dims());
    seed.spacing = vol.spacing;
    seed.origin = vol.origin;
    for (int z = z_min; z <= z_max; ++z) {
        const Grid3<std::uint8_t> rough = rough_lung_2d(axial_slice(vol, z));
        for (int y = 0; y < vol.dims().y; ++y)
            for (int x = 0; x < vol.dims().x; ++x) seed.voxels(x, y, z) = rough(x, y, 0);
    }
    return seed;
}

BinaryMask3D active_contour_segment(const CtVolume& vol, const BinaryMask3D& seed, int iterations) {
    if (!(vol.dims() == seed.dims())) throw Error("active_contour_segment: dims mismatch");
    if (seed.foreground_count() == 0) throw Error("active_contour_segment: empty seed");
    if (iterations < 0) throw Error("active_contour_segment: negative iteration count");

    const Dims3 d = vol.dims();
    const auto& img = vol.voxels;
    Grid3<std::uint8_t> u = seed.voxels;
    Grid3<std::uint8_t> next(d);

    const double tol = 1e-3;
    for (int it = 0; it < iterations; ++it) {
        // region means
        double sum1 = 0.0, sum0 = 0.0;
        std::size_t n1 = 0, n0 = 0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            if (u[i]) {
                sum1 += img[i];
                ++n1;
            } else {
                sum0 += img[i];
                ++n0;
            }
        }
        if (n1 == 0) throw Error("active_contour_segment: contour collapsed to the empty mask");
        if (n0 == 0) break; // mask fills the volume, nothing left to compete with
        const float c1 = static_cast<float>(sum1 / n1);
        const float c0 = static_cast<float>(sum0 / n0);

        // region competition, restricted to the contour neighborhood
        std::size_t changed = 0;
        for (int z = 0; z < d.z; ++z)
            for (int y = 0; y < d.y; ++y)
                for (int x = 0; x < d.x; ++x) {
                    const std::size_t i = u.index(x, y, z);
                    bool boundary = false;
                    const std::uint8_t self = u[i];
                    if (x > 0 && u(x - 1, y, z) != self) boundary = true;
                    else if (x + 1 < d.x && u(x + 1, y, z) != self) boundary = true;
                    else if (y > 0 && u(x, y - 1, z) != self) boundary = true;
                    else if (y + 1 < d.y && u(x, y + 1, z) != self) boundary = true;
                    else if (z > 0 && u(x, y, z - 1) != self) boundary = true;
                    else if (z + 1 < d.z && u(x, y, z + 1) != self) boundary = true;
                    if (!boundary) {
                        next[i] = self;
                        continue;
                    }
                    const float v = img[i];
                    const float d1 = (v - c1) * (v - c1);
                    const float d0 = (v - c0) * (v - c0);
                    const std::uint8_t want = d1 < d0 ? 1 : 0;
                    next[i] = want;
                    if (want != self) ++changed;
                }
        std::swap(u, next);

        // curvature-like smoothing: one 26-neighborhood majority pass
        for (int z = 0; z < d.z; ++z)
            for (int y = 0; y < d.y; ++y)
                for (int x = 0; x < d.x; ++x) {
                    int fg = 0, total = 0;
                    for (int dz = -1; dz <= 1; ++dz)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int xx = x + dx, yy = y + dy, zz = z + dz;
                                if (!u.in_bounds(xx, yy, zz)) continue;
                                ++total;
                                fg += u(xx, yy, zz);
                            }
                    const std::uint8_t sm = (2 * fg > total) ? 1 : 0;
                    const std::size_t i = u.index(x, y, z);
                    if (sm != u[i]) ++changed;
                    next[i] = sm;
                }
        std::swap(u, next);

        const std::size_t fg_now = [&] {
            std::size_t n = 0;
            for (auto v : u.vec()) n += v;
            return n;
        }();
        if (fg_now == 0) throw Error("active_contour_segment: contour collapsed to the empty mask");
        if (static_cast<double>(changed) / static_cast<double>(fg_now) < tol) break;
    }

    BinaryMask3D out;
    out.voxels = std::move(u);
    out.spacing = vol.spacing;
    out.origin = vol.origin;
    return out;
}

BinaryMask3D morphological_close_3d(const BinaryMask3D& mask, int radius_voxels) {
    if (radius_voxels < 0) throw Error("morphological_close_3d: negative radius");
    if (radius_voxels == 0) return mask;
    const int r = radius_voxels;
    const Dims3 d = mask.dims();

    // spherical structuring element offsets
    std::vector<std::array<int, 3>> ball;
    for (int dz = -r; dz <= r; ++dz)
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx)
                if (dx * dx + dy * dy + dz * dz <= r * r) ball.push_back({dx, dy, dz});

    // work in a grid padded by r so the closing matches the unbounded-domain result
    const Dims3 pd{d.x + 2 * r, d.y + 2 * r, d.z + 2 * r};
    Grid3<std::uint8_t> dilated(pd);
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                if (!mask.voxels(x, y, z)) continue;
                for (const auto& o : ball)
                    dilated(x + r + o[0], y + r + o[1], z + r + o[2]) = 1;
            }

    BinaryMask3D out;
    out.voxels = Grid3<std::uint8_t>(d);
    out.spacing = mask.spacing;
    out.origin = mask.origin;
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                bool all = true;
                for (const auto& o : ball) {
                    if (!dilated(x + r + o[0], y + r + o[1], z + r + o[2])) {
                        all = false;
                        break;
                    }
                }
                out.voxels(x, y, z) = all ? 1 : 0;
            }
    return out;
}

BinaryMask3D classical_lung_segmentation(const CtVolume& vol) {
    CtVolume windowed;
    try {
        windowed = preprocess::window_and_normalize(vol, preprocess::kLungWindow);
    } catch (const std::exception& e) {
        throw StageError("windowing", e.what());
    }

    BinaryMask3D seed;
    try {
        seed = seed_mask_3d(vol);
    } catch (const std::exception& e) {
        throw StageError("seed-mask", e.what());
    }
    if (seed.foreground_count() == 0) throw StageError("seed-mask", "empty 3D seed mask");

    BinaryMask3D contour;
    try {
        contour = active_contour_segment(windowed, seed);
    } catch (const std::exception& e) {
        throw StageError("active-contour", e.what());
    }

    try {
        return morphological_close_3d(contour);
    } catch (const std::exception& e) {
        throw StageError("closing", e.what());
    }
}

} // namespace lungquant::classical
