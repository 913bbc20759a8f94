#pragma once

#include <utility>

#include "lungquant/preprocess.hpp"
#include "lungquant/types.hpp"

namespace lungquant::classical {

/// 2D slices are Grid3 objects with nz == 1; axial slices carry (x, y),
/// coronal slices carry (x, z) on their two axes.

/// Otsu threshold over a 256-bin histogram, maximizing between-class
/// variance. Returns the cut value in the slice's intensity units.
/// Throws on constant slices.
double otsu_threshold(const Grid3<float>& slice);

/// Which slice edges count as contact with the outside air. Coronal slices
/// keep their top/bottom rows: those are scan cut planes, not open air, and
/// lungs may legitimately reach the first or last axial slice.
enum class BorderMode { AllEdges, FirstAxisOnly };

/// Rough 2D lung segmentation: window, Otsu, keep the below-threshold
/// (air-like) region, drop components touching the image border (8-connected).
Grid3<std::uint8_t> rough_lung_2d(const Grid3<float>& slice_hu,
                                  const preprocess::HuWindow& window = preprocess::kLungWindow,
                                  BorderMode border = BorderMode::AllEdges);

/// Min and max axial coordinates of the lung region, read off the rough
/// segmentation of the central coronal slice.
std::pair<int, int> axial_extent(const CtVolume& vol);

/// Stack of rough 2D segmentations over the axial slices within the
/// axial extent; zero outside it.
BinaryMask3D seed_mask_3d(const CtVolume& vol);

/// Region-based (Chan-Vese-type) active contour evolved from the seed,
/// iteration-capped with a relative-change convergence test.
BinaryMask3D active_contour_segment(const CtVolume& vol, const BinaryMask3D& seed,
                                    int iterations = 100);

/// Morphological closing (dilation then erosion) with a spherical
/// structuring element; fills holes narrower than the element.
BinaryMask3D morphological_close_3d(const BinaryMask3D& mask, int radius_voxels = 3);

/// The full five-step reference segmentation: window, axial extent, seed,
/// active contour, closing. Errors carry the failing stage name.
BinaryMask3D classical_lung_segmentation(const CtVolume& vol);

} // namespace lungquant::classical
