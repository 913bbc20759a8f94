#pragma once

#include <string>

#include "lungquant/types.hpp"

namespace lungquant::io {

/// Loads a NIfTI-1 CT volume (.nii or .nii.gz). Voxel values are converted to
/// HU with the header scale/intercept and the grid is reoriented to the
/// canonical axis order (x left-right, y anterior-posterior, z cranio-caudal).
///
/// Throws ParseError on malformed files and UnsupportedInputError on 8-bit
/// intensity data, which is excluded rather than rescaled.
CtVolume load_volume(const std::string& path);

/// Loads a NIfTI-1 mask; integer voxel types are accepted and any nonzero
/// value maps to 1. Same reorientation rules as load_volume.
BinaryMask3D load_mask(const std::string& path);

/// Writes a volume as NIfTI-1 float32, gzip-compressed when the path ends in .gz.
void save_volume(const CtVolume& vol, const std::string& path);

/// Writes a mask as NIfTI-1 unsigned 8-bit with values {0,1}.
void save_mask(const BinaryMask3D& mask, const std::string& path);

} // namespace lungquant::io
