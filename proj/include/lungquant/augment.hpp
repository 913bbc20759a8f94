#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lungquant/rng.hpp"
#include "lungquant/types.hpp"

namespace lungquant::augment {

/// Augmentation protocol constants. Geometric transforms act on image and
/// mask together; noise and blurring are intensity-only.
struct AugmentationSpec {
    int factor = 2;
    std::vector<double> zoom_factors{1.05, 1.1, 1.15, 1.2};
    std::vector<double> rotation_angles_deg{-15, -10, -5, 5, 10, 15};
    double noise_mean_lo_hu = -400.0;
    double noise_mean_hi_hu = 200.0;
    std::vector<double> noise_std_choices_hu{25.0, 50.0, 75.0};
    double elastic_coefficient = 12.0;
    double elastic_scale = 1000.0;
    // kernel extent along (anterior-posterior, latero-lateral, cranio-caudal)
    int blur_kernel_ap = 4;
    int blur_kernel_ll = 3;
    int blur_kernel_cc = 3;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

/// Axial-plane zoom about the slice center; cubic interpolation for the
/// image, nearest neighbor for the mask, output dims unchanged (zooming in
/// center-crops implicitly). factor >= 1.
std::pair<CtVolume, BinaryMask3D> zoom(const CtVolume& vol, const BinaryMask3D& mask,
                                       double factor);

/// Axial-plane rotation about the slice center, same interpolation rules.
std::pair<CtVolume, BinaryMask3D> rotate(const CtVolume& vol, const BinaryMask3D& mask,
                                         double angle_deg);

/// Adds voxelwise Gaussian noise in HU; the mask is untouched by design.
CtVolume add_gaussian_noise(const CtVolume& vol, double mean_hu, double std_hu, Rng& rng);

/// Random displacement field smoothed with a Gaussian of width `coefficient`
/// and scaled by `scale`, applied to image (cubic) and mask (nearest).
std::pair<CtVolume, BinaryMask3D> elastic_deform(const CtVolume& vol, const BinaryMask3D& mask,
                                                 double coefficient, double scale, Rng& rng);

/// Separable normalized linear-kernel blur, extents (4,3,3) along
/// (anterior-posterior, latero-lateral, cranio-caudal) by default.
CtVolume motion_blur(const CtVolume& vol, int k_ap = 4, int k_ll = 3, int k_cc = 3);

struct AppliedTransform {
    std::string name;
    std::map<std::string, double> params;
};

struct AugmentedPair {
    CtVolume image;
    BinaryMask3D mask;
    std::size_t source_index = 0;
    int copy_index = 0;
    std::vector<AppliedTransform> transforms;
};

/// Produces factor augmented pairs per input pair, each the composition of
/// two transforms sampled without replacement from the five-transform menu.
/// Deterministic under spec.rng_seed.
std::vector<AugmentedPair> augment_dataset(
    const std::vector<std::pair<CtVolume, BinaryMask3D>>& pairs, const AugmentationSpec& spec);

} // namespace lungquant::augment
