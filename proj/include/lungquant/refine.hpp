#pragma once

#include <cstdint>
#include <vector>

#include "lungquant/types.hpp"

namespace lungquant::refine {

/// Axis-aligned voxel-space crop region, corners inclusive.
struct BoundingBox {
    Dims3 min_voxel;
    Dims3 max_voxel;
    double padding_mm = 25.0;

    Dims3 extent() const {
        return {max_voxel.x - min_voxel.x + 1, max_voxel.y - min_voxel.y + 1,
                max_voxel.z - min_voxel.z + 1};
    }
};

struct Component {
    std::uint32_t label = 0;
    std::size_t voxel_count = 0;
};

struct ComponentLabels {
    Grid3<std::uint32_t> labels;       // 0 = background, 1.. = component ids
    std::vector<Component> components; // sorted by voxel count, descending
};

/// Partition of the foreground into maximal 26-connected components.
ComponentLabels connected_components(const BinaryMask3D& mask);

struct RefineResult {
    BinaryMask3D mask;
    bool used_fallback_threshold = false; // 40% pass kept < 65%, redone at 30%
    bool forced_largest_component = false; // even 30% removed everything
};

/// Drops components below 40% of the initial foreground; if that leaves
/// less than 65% of the initial foreground, redoes the pass at 30%. If even
/// that removes everything, returns the largest component with a warning flag.
RefineResult refine_lung_mask(const BinaryMask3D& mask);

/// Tight box around the foreground expanded by round(padding_mm / spacing)
/// voxels per side and clipped to the volume bounds.
BoundingBox bounding_box(const BinaryMask3D& mask, double padding_mm = 25.0);

CtVolume crop(const CtVolume& vol, const BoundingBox& box);
BinaryMask3D crop(const BinaryMask3D& mask, const BoundingBox& box);

/// Pastes a cropped mask back at the box offset into a zero field.
BinaryMask3D uncrop_mask(const BinaryMask3D& cropped, const BoundingBox& box, Dims3 original_dims);

} // namespace lungquant::refine
