#include "lungquant/refine.hpp"

#include <algorithm>
#include <cmath>

#include "lungquant/errors.hpp"

namespace lungquant::refine {

ComponentLabels connected_components(const BinaryMask3D& mask) {
    const Dims3 d = mask.dims();
    ComponentLabels out;
    out.labels = Grid3<std::uint32_t>(d);

    std::vector<std::size_t> stack;
    std::uint32_t next_label = 0;
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                const std::size_t start = mask.voxels.index(x, y, z);
                if (!mask.voxels[start] || out.labels[start]) continue;
                ++next_label;
                out.labels[start] = next_label;
                std::size_t count = 0;
                stack.push_back(start);
                while (!stack.empty()) {
                    const std::size_t i = stack.back();
                    stack.pop_back();
                    ++count;
                    const int cz = static_cast<int>(i / (static_cast<std::size_t>(d.x) * d.y));
                    const int rem = static_cast<int>(i % (static_cast<std::size_t>(d.x) * d.y));
                    const int cy = rem / d.x;
                    const int cx = rem % d.x;
                    for (int dz = -1; dz <= 1; ++dz)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                if (!dz && !dy && !dx) continue;
                                const int nx = cx + dx, ny = cy + dy, nz = cz + dz;
                                if (!mask.voxels.in_bounds(nx, ny, nz)) continue;
                                const std::size_t ni = mask.voxels.index(nx, ny, nz);
                                if (mask.voxels[ni] && !out.labels[ni]) {
                                    out.labels[ni] = next_label;
                                    stack.push_back(ni);
                                }
                            }
                }
                out.components.push_back({next_label, count});
            }

    std::sort(out.components.begin(), out.components.end(),
              [](const Component& a, const Component& b) {
                  return a.voxel_count != b.voxel_count ? a.voxel_count > b.voxel_count
                                                        : a.label < b.label;
              });
    return out;
}

namespace {

BinaryMask3D keep_labels(const BinaryMask3D& src, const ComponentLabels& cl,
                         const std::vector<std::uint32_t>& labels) {
    BinaryMask3D out;
    out.voxels = Grid3<std::uint8_t>(src.dims());
    out.spacing = src.spacing;
    out.origin = src.origin;
    std::vector<std::uint8_t> wanted(cl.components.size() + 1, 0);
    for (std::uint32_t l : labels) wanted[l] = 1;
    for (std::size_t i = 0; i < out.voxels.size(); ++i)
        out.voxels[i] = cl.labels[i] ? wanted[cl.labels[i]] : 0;
    return out;
}

} // namespace

RefineResult refine_lung_mask(const BinaryMask3D& mask) {
    const std::size_t initial = mask.foreground_count();
    if (initial == 0) throw Error("refine_lung_mask: empty input mask");

    const ComponentLabels cl = connected_components(mask);

    auto retained_at = [&](double fraction) {
        const double threshold = fraction * static_cast<double>(initial);
        std::vector<std::uint32_t> keep;
        std::size_t kept = 0;
        for (const auto& c : cl.components)
            if (static_cast<double>(c.voxel_count) >= threshold) {
                keep.push_back(c.label);
                kept += c.voxel_count;
            }
        return std::pair{keep, kept};
    };

    RefineResult result;
    auto [keep40, kept40] = retained_at(0.40);
    if (static_cast<double>(kept40) >= 0.65 * static_cast<double>(initial)) {
        result.mask = keep_labels(mask, cl, keep40);
        return result;
    }

    auto [keep30, kept30] = retained_at(0.30);
    result.used_fallback_threshold = true;
    if (!keep30.empty()) {
        result.mask = keep_labels(mask, cl, keep30);
        return result;
    }

    // even the 30% pass removed everything; fall back to the largest component
    result.forced_largest_component = true;
    result.mask = keep_labels(mask, cl, {cl.components.front().label});
    return result;
}

BoundingBox bounding_box(const BinaryMask3D& mask, double padding_mm) {
    const Dims3 d = mask.dims();
    Dims3 lo{d.x, d.y, d.z}, hi{-1, -1, -1};
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x)
                if (mask.voxels(x, y, z)) {
                    lo.x = std::min(lo.x, x);
                    lo.y = std::min(lo.y, y);
                    lo.z = std::min(lo.z, z);
                    hi.x = std::max(hi.x, x);
                    hi.y = std::max(hi.y, y);
                    hi.z = std::max(hi.z, z);
                }
    if (hi.x < 0) throw Error("bounding_box: empty mask");

    const int px = static_cast<int>(std::lround(padding_mm / mask.spacing.x));
    const int py = static_cast<int>(std::lround(padding_mm / mask.spacing.y));
    const int pz = static_cast<int>(std::lround(padding_mm / mask.spacing.z));
    BoundingBox box;
    box.padding_mm = padding_mm;
    box.min_voxel = {std::max(0, lo.x - px), std::max(0, lo.y - py), std::max(0, lo.z - pz)};
    box.max_voxel = {std::min(d.x - 1, hi.x + px), std::min(d.y - 1, hi.y + py),
                     std::min(d.z - 1, hi.z + pz)};
    return box;
}

namespace {

void check_box(const BoundingBox& b, Dims3 d, const char* who) {
    if (b.min_voxel.x < 0 || b.min_voxel.y < 0 || b.min_voxel.z < 0 ||
        b.max_voxel.x >= d.x || b.max_voxel.y >= d.y || b.max_voxel.z >= d.z ||
        b.min_voxel.x > b.max_voxel.x || b.min_voxel.y > b.max_voxel.y ||
        b.min_voxel.z > b.max_voxel.z)
        throw Error(std::string(who) + ": box out of bounds for volume " + d.str());
}

template <typename T>
Grid3<T> crop_grid(const Grid3<T>& g, const BoundingBox& b) {
    const Dims3 e = b.extent();
    Grid3<T> out(e);
    for (int z = 0; z < e.z; ++z)
        for (int y = 0; y < e.y; ++y)
            for (int x = 0; x < e.x; ++x)
                out(x, y, z) = g(x + b.min_voxel.x, y + b.min_voxel.y, z + b.min_voxel.z);
    return out;
}

} // namespace

CtVolume crop(const CtVolume& vol, const BoundingBox& box) {
    check_box(box, vol.dims(), "crop");
    CtVolume out;
    out.voxels = crop_grid(vol.voxels, box);
    out.spacing = vol.spacing;
    out.origin = {vol.origin.x + box.min_voxel.x * vol.spacing.x,
                  vol.origin.y + box.min_voxel.y * vol.spacing.y,
                  vol.origin.z + box.min_voxel.z * vol.spacing.z};
    return out;
}

BinaryMask3D crop(const BinaryMask3D& mask, const BoundingBox& box) {
    check_box(box, mask.dims(), "crop");
    BinaryMask3D out;
    out.voxels = crop_grid(mask.voxels, box);
    out.spacing = mask.spacing;
    out.origin = {mask.origin.x + box.min_voxel.x * mask.spacing.x,
                  mask.origin.y + box.min_voxel.y * mask.spacing.y,
                  mask.origin.z + box.min_voxel.z * mask.spacing.z};
    return out;
}

BinaryMask3D uncrop_mask(const BinaryMask3D& cropped, const BoundingBox& box, Dims3 original_dims) {
    check_box(box, original_dims, "uncrop_mask");
    if (!(cropped.dims() == box.extent()))
        throw Error("uncrop_mask: cropped dims " + cropped.dims().str() +
                    " do not match box extent " + box.extent().str());
    BinaryMask3D out;
    out.voxels = Grid3<std::uint8_t>(original_dims);
    out.spacing = cropped.spacing;
    out.origin = {cropped.origin.x - box.min_voxel.x * cropped.spacing.x,
                  cropped.origin.y - box.min_voxel.y * cropped.spacing.y,
                  cropped.origin.z - box.min_voxel.z * cropped.spacing.z};
    const Dims3 e = cropped.dims();
    for (int z = 0; z < e.z; ++z)
        for (int y = 0; y < e.y; ++y)
            for (int x = 0; x < e.x; ++x)
                out.voxels(x + box.min_voxel.x, y + box.min_voxel.y, z + box.min_voxel.z) =
                    cropped.voxels(x, y, z);
    return out;
}

} // namespace lungquant::refine
