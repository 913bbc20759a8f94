#include "lungquant/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "lungquant/errors.hpp"

namespace lungquant::augment {

namespace {

constexpr float kAirFillHu = -1000.0f;

void AugmentationSpecCheck(const AugmentationSpec& s) {
    if (s.factor < 0) throw Error("AugmentationSpec: factor must be >= 0");
    if (s.zoom_factors.empty() || s.rotation_angles_deg.empty() || s.noise_std_choices_hu.empty())
        throw Error("AugmentationSpec: empty parameter menu");
    for (double f : s.zoom_factors)
        if (f < 1.0) throw Error("AugmentationSpec: zoom factors must be >= 1");
    if (!(s.noise_mean_lo_hu <= s.noise_mean_hi_hu))
        throw Error("AugmentationSpec: bad noise mean range");
    if (s.elastic_coefficient <= 0.0) throw Error("AugmentationSpec: elastic coefficient must be > 0");
    if (s.blur_kernel_ap < 1 || s.blur_kernel_ll < 1 || s.blur_kernel_cc < 1)
        throw Error("AugmentationSpec: blur kernel extents must be >= 1");
}

float catmull_rom(float p0, float p1, float p2, float p3, float t) {
    const float t2 = t * t;
    const float t3 = t2 * t;
    return 0.5f * (2.0f * p1 + (-p0 + p2) * t + (2.0f * p0 - 5.0f * p1 + 4.0f * p2 - p3) * t2 +
                   (-p0 + 3.0f * p1 - 3.0f * p2 + p3) * t3);
}

// cubic sample of an axial slice, OOB filled with air
float sample_slice_cubic(const Grid3<float>& g, double fx, double fy, int z) {
    const int x1 = static_cast<int>(std::floor(fx));
    const int y1 = static_cast<int>(std::floor(fy));
    const float tx = static_cast<float>(fx - x1);
    const float ty = static_cast<float>(fy - y1);
    float col[4];
    for (int j = 0; j < 4; ++j) {
        const int yy = y1 - 1 + j;
        float row[4];
        for (int i = 0; i < 4; ++i) {
            const int xx = x1 - 1 + i;
            row[i] = g.in_bounds(xx, yy, z) ? g(xx, yy, z) : kAirFillHu;
        }
        col[j] = catmull_rom(row[0], row[1], row[2], row[3], tx);
    }
    return catmull_rom(col[0], col[1], col[2], col[3], ty);
}

std::uint8_t sample_slice_nearest(const Grid3<std::uint8_t>& g, double fx, double fy, int z) {
    const int x = static_cast<int>(std::lround(fx));
    const int y = static_cast<int>(std::lround(fy));
    return g.in_bounds(x, y, z) ? g(x, y, z) : 0;
}

// applies an in-plane affine inverse map dst -> src to every axial slice
std::pair<CtVolume, BinaryMask3D> axial_warp(const CtVolume& vol, const BinaryMask3D& mask,
                                             double m00, double m01, double m10, double m11) {
    const Dims3 d = vol.dims();
    CtVolume out_vol = vol;
    BinaryMask3D out_mask = mask;
    const double cx = (d.x - 1) / 2.0;
    const double cy = (d.y - 1) / 2.0;
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                const double rx = x - cx;
                const double ry = y - cy;
                const double fx = cx + m00 * rx + m01 * ry;
                const double fy = cy + m10 * rx + m11 * ry;
                out_vol.voxels(x, y, z) = sample_slice_cubic(vol.voxels, fx, fy, z);
                out_mask.voxels(x, y, z) = sample_slice_nearest(mask.voxels, fx, fy, z);
            }
    return {std::move(out_vol), std::move(out_mask)};
}

void check_pair(const CtVolume& vol, const BinaryMask3D& mask, const char* who) {
    if (!(vol.dims() == mask.dims()))
        throw Error(std::string(who) + ": image and mask dims differ");
}

// 1D normalized Gaussian smoothing along one axis, truncated at 3 sigma and
// renormalized at the borders
void gaussian_smooth_axis(Grid3<float>& g, double sigma, int axis) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> kernel(2 * radius + 1);
    for (int i = -radius; i <= radius; ++i)
        kernel[i + radius] = static_cast<float>(std::exp(-0.5 * (i * i) / (sigma * sigma)));

    const Dims3 d = g.dims();
    const int n[3] = {d.x, d.y, d.z};
    Grid3<float> tmp(d);
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                const int pos[3] = {x, y, z};
                const int c = pos[axis];
                const int lo = std::max(0, c - radius);
                const int hi = std::min(n[axis] - 1, c + radius);
                float acc = 0.0f, wsum = 0.0f;
                int q[3] = {x, y, z};
                for (int i = lo; i <= hi; ++i) {
                    q[axis] = i;
                    const float w = kernel[i - c + radius];
                    acc += w * g(q[0], q[1], q[2]);
                    wsum += w;
                }
                tmp(x, y, z) = acc / wsum;
            }
    g = std::move(tmp);
}

float sample_volume_cubic(const Grid3<float>& g, double fx, double fy, double fz) {
    const int z1 = static_cast<int>(std::floor(fz));
    const float tz = static_cast<float>(fz - z1);
    float plane[4];
    for (int k = 0; k < 4; ++k) {
        const int zz = z1 - 1 + k;
        if (zz < 0 || zz >= g.nz()) {
            plane[k] = kAirFillHu;
            continue;
        }
        plane[k] = sample_slice_cubic(g, fx, fy, zz);
    }
    return catmull_rom(plane[0], plane[1], plane[2], plane[3], tz);
}

// 1D normalized box blur along one axis, replicate border, anchor at k/2
void box_blur_axis(Grid3<float>& g, int k, int axis) {
    if (k <= 1) return;
    const Dims3 d = g.dims();
    const int n[3] = {d.x, d.y, d.z};
    const float inv = 1.0f / static_cast<float>(k);
    const int anchor = k / 2;
    Grid3<float> tmp(d);
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                int q[3] = {x, y, z};
                const int c = q[axis];
                float acc = 0.0f;
                for (int j = 0; j < k; ++j) {
                    q[axis] = std::clamp(c + j - anchor, 0, n[axis] - 1);
                    acc += g(q[0], q[1], q[2]);
                }
                q[axis] = c;
                tmp(x, y, z) = acc * inv;
            }
    g = std::move(tmp);
}

} // namespace

void AugmentationSpec::validate() const { AugmentationSpecCheck(*this); }

std::pair<CtVolume, BinaryMask3D> zoom(const CtVolume& vol, const BinaryMask3D& mask,
                                       double factor) {
    check_pair(vol, mask, "zoom");
    if (factor < 1.0) throw Error("zoom: factor must be >= 1");
    const double inv = 1.0 / factor;
    return axial_warp(vol, mask, inv, 0.0, 0.0, inv);
}

std::pair<CtVolume, BinaryMask3D> rotate(const CtVolume& vol, const BinaryMask3D& mask,
                                         double angle_deg) {
    check_pair(vol, mask, "rotate");
    const double rad = angle_deg * 3.14159265358979323846 / 180.0;
    // inverse rotation for the dst -> src map
    const double c = std::cos(rad), s = std::sin(rad);
    return axial_warp(vol, mask, c, s, -s, c);
}

CtVolume add_gaussian_noise(const CtVolume& vol, double mean_hu, double std_hu, Rng& rng) {
    if (std_hu < 0.0) throw Error("add_gaussian_noise: negative std");
    CtVolume out = vol;
    for (auto& v : out.voxels.vec()) v += static_cast<float>(rng.normal(mean_hu, std_hu));
    return out;
}

std::pair<CtVolume, BinaryMask3D> elastic_deform(const CtVolume& vol, const BinaryMask3D& mask,
                                                 double coefficient, double scale, Rng& rng) {
    check_pair(vol, mask, "elastic_deform");
    if (coefficient <= 0.0) throw Error("elastic_deform: coefficient must be > 0");
    const Dims3 d = vol.dims();

    std::array<Grid3<float>, 3> disp{Grid3<float>(d), Grid3<float>(d), Grid3<float>(d)};
    for (auto& field : disp) {
        for (auto& v : field.vec()) v = static_cast<float>(2.0 * rng.uniform() - 1.0);
        if (scale != 0.0) {
            for (int axis = 0; axis < 3; ++axis) gaussian_smooth_axis(field, coefficient, axis);
            for (auto& v : field.vec()) v *= static_cast<float>(scale);
        } else {
            for (auto& v : field.vec()) v = 0.0f;
        }
    }

    CtVolume out_vol = vol;
    BinaryMask3D out_mask = mask;
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                const double fx = x + disp[0](x, y, z);
                const double fy = y + disp[1](x, y, z);
                const double fz = z + disp[2](x, y, z);
                out_vol.voxels(x, y, z) = sample_volume_cubic(vol.voxels, fx, fy, fz);
                const int nx = static_cast<int>(std::lround(fx));
                const int ny = static_cast<int>(std::lround(fy));
                const int nz = static_cast<int>(std::lround(fz));
                out_mask.voxels(x, y, z) =
                    mask.voxels.in_bounds(nx, ny, nz) ? mask.voxels(nx, ny, nz) : 0;
            }
    return {std::move(out_vol), std::move(out_mask)};
}

CtVolume motion_blur(const CtVolume& vol, int k_ap, int k_ll, int k_cc) {
    CtVolume out = vol;
    box_blur_axis(out.voxels, k_ap, 1); // anterior-posterior = y
    box_blur_axis(out.voxels, k_ll, 0); // latero-lateral = x
    box_blur_axis(out.voxels, k_cc, 2); // cranio-caudal = z
    return out;
}

std::vector<AugmentedPair> augment_dataset(
    const std::vector<std::pair<CtVolume, BinaryMask3D>>& pairs, const AugmentationSpec& spec) {
    spec.validate();
    for (const auto& [vol, mask] : pairs) check_pair(vol, mask, "augment_dataset");

    const std::size_t n_out = pairs.size() * static_cast<std::size_t>(spec.factor);
    std::vector<AugmentedPair> out(n_out);

#pragma omp parallel for schedule(dynamic)
    for (long long oi = 0; oi < static_cast<long long>(n_out); ++oi) {
        const std::size_t pair_index = static_cast<std::size_t>(oi) / spec.factor;
        const int copy_index = static_cast<int>(oi % spec.factor);
        Rng rng(Rng::derive_seed(spec.rng_seed, pair_index, static_cast<std::uint64_t>(copy_index)));

        // two distinct picks from the 5-transform menu, applied in sampled order
        const int first = static_cast<int>(rng.uniform_index(5));
        int second = static_cast<int>(rng.uniform_index(4));
        if (second >= first) ++second;

        AugmentedPair result;
        result.image = pairs[pair_index].first;
        result.mask = pairs[pair_index].second;
        result.source_index = pair_index;
        result.copy_index = copy_index;

        for (int t : {first, second}) {
            AppliedTransform record;
            switch (t) {
                case 0: {
                    const double f = spec.zoom_factors[rng.uniform_index(spec.zoom_factors.size())];
                    std::tie(result.image, result.mask) = zoom(result.image, result.mask, f);
                    record.name = "zoom";
                    record.params["factor"] = f;
                    break;
                }
                case 1: {
                    const double a =
                        spec.rotation_angles_deg[rng.uniform_index(spec.rotation_angles_deg.size())];
                    std::tie(result.image, result.mask) = rotate(result.image, result.mask, a);
                    record.name = "rotation";
                    record.params["angle_deg"] = a;
                    break;
                }
                case 2: {
                    const double mean = rng.uniform(spec.noise_mean_lo_hu, spec.noise_mean_hi_hu);
                    const double sd =
                        spec.noise_std_choices_hu[rng.uniform_index(spec.noise_std_choices_hu.size())];
                    result.image = add_gaussian_noise(result.image, mean, sd, rng);
                    record.name = "gaussian_noise";
                    record.params["mean_hu"] = mean;
                    record.params["std_hu"] = sd;
                    break;
                }
                case 3: {
                    std::tie(result.image, result.mask) = elastic_deform(
                        result.image, result.mask, spec.elastic_coefficient, spec.elastic_scale, rng);
                    record.name = "elastic_deformation";
                    record.params["coefficient"] = spec.elastic_coefficient;
                    record.params["scale"] = spec.elastic_scale;
                    break;
                }
                default: {
                    result.image = motion_blur(result.image, spec.blur_kernel_ap, spec.blur_kernel_ll,
                                               spec.blur_kernel_cc);
                    record.name = "motion_blur";
                    record.params["kernel_ap"] = spec.blur_kernel_ap;
                    record.params["kernel_ll"] = spec.blur_kernel_ll;
                    record.params["kernel_cc"] = spec.blur_kernel_cc;
                    break;
                }
            }
            result.transforms.push_back(std::move(record));
        }
        out[static_cast<std::size_t>(oi)] = std::move(result);
    }
    return out;
}

} // namespace lungquant::augment
