#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/volume.hpp"

namespace dwiqc {

#pragma pack(push, 1)
/// On-disk NIfTI-1 header (348 bytes).
struct Nifti1Header {
    std::int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1;
    float intent_p2;
    float intent_p3;
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
    float cal_max;
    float cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax;
    std::int32_t glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern_b;
    float quatern_c;
    float quatern_d;
    float qoffset_x;
    float qoffset_y;
    float qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

namespace nifti_detail {

enum Datatype : std::int16_t {
    dt_uint8 = 2,
    dt_int16 = 4,
    dt_int32 = 8,
    dt_float32 = 16,
    dt_float64 = 64,
    dt_int8 = 256,
    dt_uint16 = 512,
    dt_uint32 = 768,
    dt_int64 = 1024,
    dt_uint64 = 1280,
};

template <class T>
void swap_in_place(T& v)
{
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
}

template <class T, std::size_t N>
void swap_array(T (&a)[N])
{
    for (auto& v : a) swap_in_place(v);
}

inline void swap_header(Nifti1Header& h)
{
    swap_in_place(h.sizeof_hdr);
    swap_in_place(h.extents);
    swap_in_place(h.session_error);
    swap_array(h.dim);
    swap_in_place(h.intent_p1);
    swap_in_place(h.intent_p2);
    swap_in_place(h.intent_p3);
    swap_in_place(h.intent_code);
    swap_in_place(h.datatype);
    swap_in_place(h.bitpix);
    swap_in_place(h.slice_start);
    swap_array(h.pixdim);
    swap_in_place(h.vox_offset);
    swap_in_place(h.scl_slope);
    swap_in_place(h.scl_inter);
    swap_in_place(h.slice_end);
    swap_in_place(h.cal_max);
    swap_in_place(h.cal_min);
    swap_in_place(h.slice_duration);
    swap_in_place(h.toffset);
    swap_in_place(h.glmax);
    swap_in_place(h.glmin);
    swap_in_place(h.qform_code);
    swap_in_place(h.sform_code);
    swap_in_place(h.quatern_b);
    swap_in_place(h.quatern_c);
    swap_in_place(h.quatern_d);
    swap_in_place(h.qoffset_x);
    swap_in_place(h.qoffset_y);
    swap_in_place(h.qoffset_z);
    swap_array(h.srow_x);
    swap_array(h.srow_y);
    swap_array(h.srow_z);
}

inline int bytes_per_voxel(std::int16_t datatype)
{
    switch (datatype) {
    case dt_uint8:
    case dt_int8: return 1;
    case dt_int16:
    case dt_uint16: return 2;
    case dt_int32:
    case dt_uint32:
    case dt_float32: return 4;
    case dt_float64:
    case dt_int64:
    case dt_uint64: return 8;
    default: return 0;
    }
}

template <class T>
double read_as(const unsigned char* p, bool swap)
{
    T v;
    std::memcpy(&v, p, sizeof(T));
    if (swap) swap_in_place(v);
    return static_cast<double>(v);
}

inline double decode_voxel(const unsigned char* p, std::int16_t datatype, bool swap)
{
    switch (datatype) {
    case dt_uint8: return read_as<std::uint8_t>(p, false);
    case dt_int8: return read_as<std::int8_t>(p, false);
    case dt_int16: return read_as<std::int16_t>(p, swap);
    case dt_uint16: return read_as<std::uint16_t>(p, swap);
    case dt_int32: return read_as<std::int32_t>(p, swap);
    case dt_uint32: return read_as<std::uint32_t>(p, swap);
    case dt_float32: return read_as<float>(p, swap);
    case dt_float64: return read_as<double>(p, swap);
    case dt_int64: return read_as<std::int64_t>(p, swap);
    case dt_uint64: return read_as<std::uint64_t>(p, swap);
    default: throw Error("unsupported NIfTI datatype " + std::to_string(datatype));
    }
}

/// qform quaternion + offsets to a 4x4 affine, per the NIfTI-1 definition.
inline Eigen::Matrix4d quaternion_affine(const Nifti1Header& h)
{
    double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    double a = 1.0 - (b * b + c * c + d * d);
    if (a < 1e-7) {
        const double n = 1.0 / std::sqrt(b * b + c * c + d * d);
        b *= n;
        c *= n;
        d *= n;
        a = 0.0;
    } else {
        a = std::sqrt(a);
    }
    const double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
    const double dx = h.pixdim[1] > 0 ? h.pixdim[1] : 1.0;
    const double dy = h.pixdim[2] > 0 ? h.pixdim[2] : 1.0;
    const double dz = (h.pixdim[3] > 0 ? h.pixdim[3] : 1.0) * qfac;
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(0, 0) = (a * a + b * b - c * c - d * d) * dx;
    m(0, 1) = 2.0 * (b * c - a * d) * dy;
    m(0, 2) = 2.0 * (b * d + a * c) * dz;
    m(1, 0) = 2.0 * (b * c + a * d) * dx;
    m(1, 1) = (a * a + c * c - b * b - d * d) * dy;
    m(1, 2) = 2.0 * (c * d - a * b) * dz;
    m(2, 0) = 2.0 * (b * d - a * c) * dx;
    m(2, 1) = 2.0 * (c * d + a * b) * dy;
    m(2, 2) = (a * a + d * d - c * c - b * b) * dz;
    m(0, 3) = h.qoffset_x;
    m(1, 3) = h.qoffset_y;
    m(2, 3) = h.qoffset_z;
    return m;
}

class GzReader {
public:
    explicit GzReader(const std::filesystem::path& path) : file_(gzopen(path.string().c_str(), "rb"))
    {
        if (!file_) throw Error("cannot open '" + path.string() + "'");
    }
    ~GzReader() { gzclose(file_); }
    GzReader(const GzReader&) = delete;
    GzReader& operator=(const GzReader&) = delete;

    void read_exact(void* dst, std::size_t n, const char* what)
    {
        auto* p = static_cast<unsigned char*>(dst);
        while (n > 0) {
            const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
            const int got = gzread(file_, p, chunk);
            if (got <= 0) throw Error(std::string("truncated NIfTI file while reading ") + what);
            p += got;
            n -= static_cast<std::size_t>(got);
        }
    }

private:
    gzFile file_;
};

inline bool has_suffix(const std::string& s, const std::string& suffix)
{
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace nifti_detail

/// File stem with .nii / .nii.gz stripped.
inline std::string nifti_stem(const std::filesystem::path& path)
{
    std::string name = path.filename().string();
    for (const char* ext : {".nii.gz", ".nii"}) {
        if (nifti_detail::has_suffix(name, ext)) return name.substr(0, name.size() - std::strlen(ext));
    }
    return name;
}

inline bool is_nifti_path(const std::filesystem::path& path)
{
    const std::string name = path.filename().string();
    return nifti_detail::has_suffix(name, ".nii") || nifti_detail::has_suffix(name, ".nii.gz");
}

/// Reads whitespace-separated b-values from a sibling `<stem>.bval`, if present.
inline std::vector<double> read_bvals_for(const std::filesystem::path& nifti_path)
{
    const auto bval = nifti_path.parent_path() / (nifti_stem(nifti_path) + ".bval");
    std::vector<double> out;
    std::ifstream in(bval);
    if (!in) return out;
    double v;
    while (in >> v) out.push_back(v);
    return out;
}

/// Loads a 3D or 4D NIfTI-1 file (.nii or .nii.gz). 3D images become
/// single-gradient volumes. Scaling (scl_slope/scl_inter) is applied.
inline DWIVolume load_dwi(const std::filesystem::path& path)
{
    using namespace nifti_detail;
    if (!std::filesystem::exists(path)) throw Error("no such file: '" + path.string() + "'");
    if (!is_nifti_path(path)) throw Error("'" + path.string() + "' is not a .nii/.nii.gz file");

    GzReader reader(path);
    Nifti1Header h{};
    reader.read_exact(&h, sizeof(h), "header");
    bool swap = false;
    if (h.sizeof_hdr != 348) {
        swap_header(h);
        swap = true;
        if (h.sizeof_hdr != 348) throw Error("malformed NIfTI header in '" + path.string() + "' (sizeof_hdr)");
    }
    if (std::memcmp(h.magic, "n+1", 4) != 0) {
        throw Error("'" + path.string() + "' is not a single-file NIfTI-1 image (bad magic)");
    }
    const int ndim = h.dim[0];
    if (ndim < 1 || ndim > 7) throw Error("malformed NIfTI header: dim[0]=" + std::to_string(ndim));
    std::array<std::size_t, 4> dims{1, 1, 1, 1};
    for (int i = 1; i <= ndim; ++i) {
        if (h.dim[i] < 1) throw Error("malformed NIfTI header: dim[" + std::to_string(i) + "] < 1");
        if (i <= 4) {
            dims[static_cast<std::size_t>(i - 1)] = static_cast<std::size_t>(h.dim[i]);
        } else if (h.dim[i] != 1) {
            throw Error("NIfTI images with more than 4 non-singleton dimensions are not supported");
        }
    }
    const int bpv = bytes_per_voxel(h.datatype);
    if (bpv == 0) throw Error("unsupported NIfTI datatype " + std::to_string(h.datatype));
    if (h.vox_offset < 348) throw Error("malformed NIfTI header: vox_offset < 348");

    std::vector<unsigned char> skip(static_cast<std::size_t>(h.vox_offset) - 348);
    if (!skip.empty()) reader.read_exact(skip.data(), skip.size(), "extensions");

    DWIVolume vol(nifti_stem(path), dims[0], dims[1], dims[2], dims[3]);
    const std::size_t n = vol.data().size();
    std::vector<unsigned char> raw(n * static_cast<std::size_t>(bpv));
    reader.read_exact(raw.data(), raw.size(), "voxel data");

    const bool scaled = h.scl_slope != 0.0f && std::isfinite(h.scl_slope);
    const double slope = scaled ? h.scl_slope : 1.0;
    const double inter = scaled && std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        vol.data()[i] = static_cast<float>(decode_voxel(raw.data() + i * bpv, h.datatype, swap) * slope + inter);
    }

    vol.set_voxel_size({h.pixdim[1] > 0 ? h.pixdim[1] : 1.0, h.pixdim[2] > 0 ? h.pixdim[2] : 1.0,
                        h.pixdim[3] > 0 ? h.pixdim[3] : 1.0});
    Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();
    if (h.sform_code > 0) {
        for (int c = 0; c < 4; ++c) {
            affine(0, c) = h.srow_x[c];
            affine(1, c) = h.srow_y[c];
            affine(2, c) = h.srow_z[c];
        }
    } else if (h.qform_code > 0) {
        affine = quaternion_affine(h);
    } else {
        for (int i = 0; i < 3; ++i) affine(i, i) = vol.voxel_size()[static_cast<std::size_t>(i)];
    }
    vol.set_affine(affine);
    vol.set_bvals(read_bvals_for(path));
    vol.validate();
    return vol;
}

/// Writes a float32 NIfTI-1 file; gzip-compressed when the name ends in .gz.
/// Output bytes depend only on the volume contents.
inline void save_dwi(const DWIVolume& vol, const std::filesystem::path& path)
{
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = vol.gradient_count() > 1 ? 4 : 3;
    h.dim[1] = static_cast<std::int16_t>(vol.nx());
    h.dim[2] = static_cast<std::int16_t>(vol.ny());
    h.dim[3] = static_cast<std::int16_t>(vol.nz());
    h.dim[4] = static_cast<std::int16_t>(vol.gradient_count());
    for (int i = 5; i < 8; ++i) h.dim[i] = 1;
    h.datatype = nifti_detail::dt_float32;
    h.bitpix = 32;
    h.pixdim[0] = 1.0f;
    for (int i = 0; i < 3; ++i) h.pixdim[i + 1] = static_cast<float>(vol.voxel_size()[static_cast<std::size_t>(i)]);
    h.pixdim[4] = 1.0f;
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.xyzt_units = 2 | 8;  // mm, s
    h.sform_code = 1;
    for (int c = 0; c < 4; ++c) {
        h.srow_x[c] = static_cast<float>(vol.affine()(0, c));
        h.srow_y[c] = static_cast<float>(vol.affine()(1, c));
        h.srow_z[c] = static_cast<float>(vol.affine()(2, c));
    }
    std::memcpy(h.magic, "n+1", 4);
    static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");

    const bool gz = nifti_detail::has_suffix(path.filename().string(), ".gz");
    gzFile f = gzopen(path.string().c_str(), gz ? "wb6" : "wbT");
    if (!f) throw Error("cannot open '" + path.string() + "' for writing");
    const char extension[4] = {0, 0, 0, 0};
    bool ok = gzwrite(f, &h, sizeof(h)) == static_cast<int>(sizeof(h));
    ok = ok && gzwrite(f, extension, 4) == 4;
    const auto& data = vol.data();
    const char* bytes = reinterpret_cast<const char*>(data.data());
    std::size_t remaining = data.size() * sizeof(float);
    while (ok && remaining > 0) {
        const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(remaining, 1u << 30));
        ok = gzwrite(f, bytes, chunk) == static_cast<int>(chunk);
        bytes += chunk;
        remaining -= chunk;
    }
    if (gzclose(f) != Z_OK || !ok) throw Error("failed writing '" + path.string() + "'");
}

}  // namespace dwiqc
