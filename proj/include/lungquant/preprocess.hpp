#pragma once

#include "lungquant/types.hpp"

namespace lungquant::preprocess {

/// HU intensity window. The two windows used by the cascade are
/// [-1000, 1000] for lung segmentation and [-1000, 300] for lesions.
struct HuWindow {
    double lo = -1000.0;
    double hi = 1000.0;

    void validate() const {
        if (!(lo < hi)) throw Error("HuWindow: lo must be < hi");
    }
};

inline constexpr HuWindow kLungWindow{-1000.0, 1000.0};
inline constexpr HuWindow kLesionWindow{-1000.0, 300.0};

/// Clips to [lo, hi] and maps affinely so lo -> 0 and hi -> 1.
/// Dims and spacing are unchanged.
CtVolume window_and_normalize(const CtVolume& vol, const HuWindow& w);

/// Resamples an intensity volume to target_dims with trilinear interpolation.
/// Spacing is rescaled by the dims ratio so the physical extent is preserved.
CtVolume resample(const CtVolume& vol, Dims3 target_dims);

/// Resamples a mask with nearest-neighbor interpolation; output stays binary.
BinaryMask3D resample(const BinaryMask3D& mask, Dims3 target_dims);

/// Maps a mask predicted on a resampled grid back onto the reference geometry.
BinaryMask3D resample_mask_to_original(const BinaryMask3D& mask, const CtVolume& reference);

} // namespace lungquant::preprocess
