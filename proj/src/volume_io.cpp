#include "lungquant/volume_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include <zlib.h>

#include "lungquant/errors.hpp"

namespace lungquant::io {

namespace {

// NIfTI-1 single-file header, 348 bytes followed by data at vox_offset.
#pragma pack(push, 1)
struct Nifti1Header {
    std::int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

enum NiftiType : std::int16_t {
    DT_UINT8 = 2,
    DT_INT16 = 4,
    DT_INT32 = 8,
    DT_FLOAT32 = 16,
    DT_FLOAT64 = 64,
    DT_INT8 = 256,
    DT_UINT16 = 512,
    DT_UINT32 = 768,
};

std::vector<unsigned char> read_all_bytes(const std::string& path) {
    // gzread handles both gzip-compressed and plain files transparently.
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw ParseError("cannot open file: " + path);
    std::vector<unsigned char> bytes;
    std::array<unsigned char, 1 << 16> buf;
    int n;
    while ((n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0)
        bytes.insert(bytes.end(), buf.begin(), buf.begin() + n);
    const bool bad = (n < 0);
    gzclose(f);
    if (bad) throw ParseError("decompression failed: " + path);
    return bytes;
}

template <typename T>
T bswap(T v) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    std::reverse(p, p + sizeof(T));
    return v;
}

void swap_header(Nifti1Header& h) {
    h.sizeof_hdr = bswap(h.sizeof_hdr);
    for (auto& d : h.dim) d = bswap(d);
    h.datatype = bswap(h.datatype);
    h.bitpix = bswap(h.bitpix);
    for (auto& p : h.pixdim) p = bswap(p);
    h.vox_offset = bswap(h.vox_offset);
    h.scl_slope = bswap(h.scl_slope);
    h.scl_inter = bswap(h.scl_inter);
    h.qform_code = bswap(h.qform_code);
    h.sform_code = bswap(h.sform_code);
    h.quatern_b = bswap(h.quatern_b);
    h.quatern_c = bswap(h.quatern_c);
    h.quatern_d = bswap(h.quatern_d);
    h.qoffset_x = bswap(h.qoffset_x);
    h.qoffset_y = bswap(h.qoffset_y);
    h.qoffset_z = bswap(h.qoffset_z);
    for (auto& v : h.srow_x) v = bswap(v);
    for (auto& v : h.srow_y) v = bswap(v);
    for (auto& v : h.srow_z) v = bswap(v);
}

struct Affine {
    // world = rot * voxel_index + trans; rot columns already include spacing
    double rot[3][3];
    double trans[3];
};

Affine affine_from_header(const Nifti1Header& h) {
    Affine a{};
    if (h.sform_code > 0) {
        const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) a.rot[i][j] = rows[i][j];
            a.trans[i] = rows[i][3];
        }
        return a;
    }
    if (h.qform_code > 0) {
        const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
        double aa = 1.0 - b * b - c * c - d * d;
        aa = aa < 0.0 ? 0.0 : std::sqrt(aa);
        const double qfac = (h.pixdim[0] < 0.0f) ? -1.0 : 1.0;
        const double R[3][3] = {
            {aa * aa + b * b - c * c - d * d, 2 * (b * c - aa * d), 2 * (b * d + aa * c)},
            {2 * (b * c + aa * d), aa * aa + c * c - b * b - d * d, 2 * (c * d - aa * b)},
            {2 * (b * d - aa * c), 2 * (c * d + aa * b), aa * aa + d * d - b * b - c * c}};
        const double sp[3] = {std::fabs(h.pixdim[1]), std::fabs(h.pixdim[2]),
                              std::fabs(h.pixdim[3]) * qfac};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) a.rot[i][j] = R[i][j] * sp[j];
        a.trans[0] = h.qoffset_x;
        a.trans[1] = h.qoffset_y;
        a.trans[2] = h.qoffset_z;
        return a;
    }
    // no orientation info: assume identity direction with header spacing
    for (int i = 0; i < 3; ++i) a.rot[i][i] = std::fabs(h.pixdim[i + 1]);
    return a;
}

struct Orientation {
    int perm[3];  // canonical axis i comes from file axis perm[i]
    int flip[3];  // 1 if that file axis runs opposite to the canonical direction
};

Orientation closest_canonical(const Affine& a) {
    Orientation o{};
    bool used[3] = {false, false, false};
    for (int i = 0; i < 3; ++i) { // canonical world axis (R, A, S)
        int best = -1;
        double best_abs = -1.0;
        for (int j = 0; j < 3; ++j) {
            if (used[j]) continue;
            if (std::fabs(a.rot[i][j]) > best_abs) {
                best_abs = std::fabs(a.rot[i][j]);
                best = j;
            }
        }
        if (best < 0 || best_abs == 0.0)
            throw ParseError("degenerate orientation matrix in NIfTI header");
        used[best] = true;
        o.perm[i] = best;
        o.flip[i] = a.rot[i][best] < 0.0 ? 1 : 0;
    }
    return o;
}

template <typename T>
Grid3<T> reorient_grid(const Grid3<T>& src, const Orientation& o) {
    const int sn[3] = {src.nx(), src.ny(), src.nz()};
    Grid3<T> dst(sn[o.perm[0]], sn[o.perm[1]], sn[o.perm[2]]);
    int idx[3];
    for (int z = 0; z < dst.nz(); ++z)
        for (int y = 0; y < dst.ny(); ++y)
            for (int x = 0; x < dst.nx(); ++x) {
                const int d[3] = {x, y, z};
                for (int i = 0; i < 3; ++i) {
                    int v = d[i];
                    if (o.flip[i]) v = sn[o.perm[i]] - 1 - v;
                    idx[o.perm[i]] = v;
                }
                dst(x, y, z) = src(idx[0], idx[1], idx[2]);
            }
    return dst;
}

struct LoadedImage {
    Grid3<float> grid;
    Vec3 spacing;
    Vec3 origin;
    std::int16_t datatype;
};

LoadedImage load_nifti(const std::string& path, bool allow_8bit) {
    const auto bytes = read_all_bytes(path);
    if (bytes.size() < sizeof(Nifti1Header))
        throw ParseError("file too small for a NIfTI-1 header: " + path);

    Nifti1Header h;
    std::memcpy(&h, bytes.data(), sizeof(h));
    if (h.sizeof_hdr != 348) {
        swap_header(h);
        if (h.sizeof_hdr != 348)
            throw ParseError("not a NIfTI-1 file (bad sizeof_hdr): " + path);
        throw ParseError("byte-swapped NIfTI-1 files are not supported: " + path);
    }
    if (std::memcmp(h.magic, "n+1", 4) != 0) {
        if (std::memcmp(h.magic, "ni1", 4) == 0)
            throw ParseError("detached .hdr/.img NIfTI pairs are not supported: " + path);
        throw ParseError("bad NIfTI magic: " + path);
    }
    if (h.dim[0] < 3 || h.dim[0] > 7)
        throw ParseError("expected a 3D NIfTI volume, dim[0]=" + std::to_string(h.dim[0]));
    for (int i = 4; i <= h.dim[0]; ++i)
        if (h.dim[i] > 1)
            throw ParseError("4D+ NIfTI volumes are not supported: " + path);
    const int nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
    if (nx < 1 || ny < 1 || nz < 1) throw ParseError("non-positive dims in NIfTI header");

    if (!allow_8bit && (h.datatype == DT_UINT8 || h.datatype == DT_INT8))
        throw UnsupportedInputError("8-bit intensity data is excluded: " + path);

    std::size_t elem_size;
    switch (h.datatype) {
        case DT_UINT8:
        case DT_INT8: elem_size = 1; break;
        case DT_INT16:
        case DT_UINT16: elem_size = 2; break;
        case DT_INT32:
        case DT_UINT32:
        case DT_FLOAT32: elem_size = 4; break;
        case DT_FLOAT64: elem_size = 8; break;
        default:
            throw ParseError("unsupported NIfTI datatype " + std::to_string(h.datatype));
    }

    const std::size_t n = static_cast<std::size_t>(nx) * ny * nz;
    const std::size_t offset = static_cast<std::size_t>(h.vox_offset);
    if (offset < sizeof(Nifti1Header) || bytes.size() < offset + n * elem_size)
        throw ParseError("truncated NIfTI data section: " + path);

    const float slope = (h.scl_slope == 0.0f) ? 1.0f : h.scl_slope;
    const float inter = (h.scl_slope == 0.0f) ? 0.0f : h.scl_inter;
    Grid3<float> grid(nx, ny, nz);
    const unsigned char* p = bytes.data() + offset;
    auto convert = [&](auto tag) {
        using Raw = decltype(tag);
        for (std::size_t i = 0; i < n; ++i) {
            Raw raw;
            std::memcpy(&raw, p + i * sizeof(Raw), sizeof(Raw));
            grid[i] = static_cast<float>(raw) * slope + inter;
        }
    };
    switch (h.datatype) {
        case DT_UINT8: convert(std::uint8_t{}); break;
        case DT_INT8: convert(std::int8_t{}); break;
        case DT_INT16: convert(std::int16_t{}); break;
        case DT_UINT16: convert(std::uint16_t{}); break;
        case DT_INT32: convert(std::int32_t{}); break;
        case DT_UINT32: convert(std::uint32_t{}); break;
        case DT_FLOAT32: convert(float{}); break;
        case DT_FLOAT64: convert(double{}); break;
        default: break;
    }

    const Affine aff = affine_from_header(h);
    const Orientation o = closest_canonical(aff);
    grid = reorient_grid(grid, o);

    const double pd[3] = {std::fabs(h.pixdim[1]), std::fabs(h.pixdim[2]), std::fabs(h.pixdim[3])};
    Vec3 spacing{pd[o.perm[0]], pd[o.perm[1]], pd[o.perm[2]]};
    if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0))
        throw ParseError("non-positive pixdim in NIfTI header: " + path);

    // world position of the new (0,0,0) corner
    const int sn[3] = {nx, ny, nz};
    double corner[3];
    for (int i = 0; i < 3; ++i) corner[o.perm[i]] = o.flip[i] ? sn[o.perm[i]] - 1 : 0;
    Vec3 origin;
    origin.x = aff.rot[0][0] * corner[0] + aff.rot[0][1] * corner[1] + aff.rot[0][2] * corner[2] + aff.trans[0];
    origin.y = aff.rot[1][0] * corner[0] + aff.rot[1][1] * corner[1] + aff.rot[1][2] * corner[2] + aff.trans[1];
    origin.z = aff.rot[2][0] * corner[0] + aff.rot[2][1] * corner[1] + aff.rot[2][2] * corner[2] + aff.trans[2];

    return {std::move(grid), spacing, origin, h.datatype};
}

Nifti1Header make_header(Dims3 d, const Vec3& spacing, const Vec3& origin,
                         std::int16_t datatype, std::int16_t bitpix) {
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<std::int16_t>(d.x);
    h.dim[2] = static_cast<std::int16_t>(d.y);
    h.dim[3] = static_cast<std::int16_t>(d.z);
    for (int i = 4; i < 8; ++i) h.dim[i] = 1;
    h.datatype = datatype;
    h.bitpix = bitpix;
    h.pixdim[0] = 1.0f;
    h.pixdim[1] = static_cast<float>(spacing.x);
    h.pixdim[2] = static_cast<float>(spacing.y);
    h.pixdim[3] = static_cast<float>(spacing.z);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2; // NIFTI_UNITS_MM
    h.sform_code = 1; // scanner-anatomical, canonical axes
    h.srow_x[0] = static_cast<float>(spacing.x);
    h.srow_x[3] = static_cast<float>(origin.x);
    h.srow_y[1] = static_cast<float>(spacing.y);
    h.srow_y[3] = static_cast<float>(origin.y);
    h.srow_z[2] = static_cast<float>(spacing.z);
    h.srow_z[3] = static_cast<float>(origin.z);
    std::memcpy(h.magic, "n+1", 4);
    return h;
}

bool has_gz_suffix(const std::string& path) {
    return path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

void write_bytes(const std::string& path, const void* data, std::size_t n) {
    if (has_gz_suffix(path)) {
        gzFile f = gzopen(path.c_str(), "wb6");
        if (!f) throw Error("cannot open for writing: " + path);
        const auto* p = static_cast<const unsigned char*>(data);
        std::size_t done = 0;
        while (done < n) {
            const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n - done, 1 << 20));
            if (gzwrite(f, p + done, chunk) != static_cast<int>(chunk)) {
                gzclose(f);
                throw Error("write failed: " + path);
            }
            done += chunk;
        }
        if (gzclose(f) != Z_OK) throw Error("write failed on close: " + path);
        return;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open for writing: " + path);
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!f) throw Error("write failed: " + path);
}

} // namespace

CtVolume load_volume(const std::string& path) {
    auto img = load_nifti(path, /*allow_8bit=*/false);
    CtVolume vol{std::move(img.grid), img.spacing, img.origin};
    vol.validate("load_volume(" + path + ")");
    return vol;
}

BinaryMask3D load_mask(const std::string& path) {
    auto img = load_nifti(path, /*allow_8bit=*/true);
    BinaryMask3D mask;
    mask.voxels = Grid3<std::uint8_t>(img.grid.dims());
    for (std::size_t i = 0; i < img.grid.size(); ++i)
        mask.voxels[i] = img.grid[i] != 0.0f ? 1 : 0;
    mask.spacing = img.spacing;
    mask.origin = img.origin;
    return mask;
}

void save_volume(const CtVolume& vol, const std::string& path) {
    vol.validate("save_volume");
    const Nifti1Header h = make_header(vol.dims(), vol.spacing, vol.origin, DT_FLOAT32, 32);
    std::vector<unsigned char> bytes(352 + vol.voxels.size() * sizeof(float), 0);
    std::memcpy(bytes.data(), &h, sizeof(h));
    std::memcpy(bytes.data() + 352, vol.voxels.data(), vol.voxels.size() * sizeof(float));
    write_bytes(path, bytes.data(), bytes.size());
}

void save_mask(const BinaryMask3D& mask, const std::string& path) {
    mask.validate("save_mask");
    const Nifti1Header h = make_header(mask.dims(), mask.spacing, mask.origin, DT_UINT8, 8);
    std::vector<unsigned char> bytes(352 + mask.voxels.size(), 0);
    std::memcpy(bytes.data(), &h, sizeof(h));
    std::memcpy(bytes.data() + 352, mask.voxels.data(), mask.voxels.size());
    write_bytes(path, bytes.data(), bytes.size());
}

} // namespace lungquant::io
