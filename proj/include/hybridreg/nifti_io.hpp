#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "types.hpp"

namespace hybridreg {

// Single-file NIfTI-1 ("n+1"), 348-byte header. Scalar volumes use dim[0]=3;
// displacement fields use dim[0]=4 with dim[4]=3 components outermost and the
// grid level recorded in intent_name.
struct NiftiHeader {
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
    float slice_duration, toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
static_assert(sizeof(NiftiHeader) == 348, "NiftiHeader must match the on-disk layout");

inline constexpr std::int16_t kDtUint8 = 2;
inline constexpr std::int16_t kDtInt16 = 4;
inline constexpr std::int16_t kDtFloat32 = 16;
inline constexpr std::int16_t kIntentVector = 1007;
inline constexpr const char* kIntentHalfField = "dispfield_half";
inline constexpr const char* kIntentFullField = "dispfield_full";

namespace detail {

inline void bswap(std::int16_t& v) {
    auto u = static_cast<std::uint16_t>(v);
    v = static_cast<std::int16_t>((u << 8) | (u >> 8));
}
inline void bswap(std::int32_t& v) {
    auto u = static_cast<std::uint32_t>(v);
    u = ((u & 0x000000FFu) << 24) | ((u & 0x0000FF00u) << 8) | ((u & 0x00FF0000u) >> 8) |
        ((u & 0xFF000000u) >> 24);
    std::memcpy(&v, &u, 4);
}
inline void bswap(float& v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u = ((u & 0x000000FFu) << 24) | ((u & 0x0000FF00u) << 8) | ((u & 0x00FF0000u) >> 8) |
        ((u & 0xFF000000u) >> 24);
    std::memcpy(&v, &u, 4);
}

inline void bswap_header(NiftiHeader& h) {
    bswap(h.sizeof_hdr);
    bswap(h.extents);
    bswap(h.session_error);
    for (auto& d : h.dim) bswap(d);
    bswap(h.intent_p1);
    bswap(h.intent_p2);
    bswap(h.intent_p3);
    bswap(h.intent_code);
    bswap(h.datatype);
    bswap(h.bitpix);
    bswap(h.slice_start);
    for (auto& p : h.pixdim) bswap(p);
    bswap(h.vox_offset);
    bswap(h.scl_slope);
    bswap(h.scl_inter);
    bswap(h.slice_end);
    bswap(h.cal_max);
    bswap(h.cal_min);
    bswap(h.slice_duration);
    bswap(h.toffset);
    bswap(h.glmax);
    bswap(h.glmin);
    bswap(h.qform_code);
    bswap(h.sform_code);
    bswap(h.quatern_b);
    bswap(h.quatern_c);
    bswap(h.quatern_d);
    bswap(h.qoffset_x);
    bswap(h.qoffset_y);
    bswap(h.qoffset_z);
    for (auto& v : h.srow_x) bswap(v);
    for (auto& v : h.srow_y) bswap(v);
    for (auto& v : h.srow_z) bswap(v);
}

inline std::vector<char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::int64_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<char> bytes(static_cast<std::size_t>(size));
    if (size > 0) in.read(bytes.data(), size);
    if (!in) throw io_error("cannot read " + path);
    return bytes;
}

inline void write_file_bytes(const std::string& path, const char* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out.write(data, static_cast<std::streamsize>(size));
    if (!out) throw io_error("cannot write " + path);
}

// Decodes one element, swapping bytes first when the header was swapped.
template <class T>
inline double decode_element(const char* p, bool swapped) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if constexpr (sizeof(T) > 1) {
        if (swapped) {
            if constexpr (sizeof(T) == 2) {
                std::int16_t s;
                std::memcpy(&s, p, 2);
                bswap(s);
                std::memcpy(&v, &s, 2);
            } else {
                float f;
                std::memcpy(&f, p, 4);
                bswap(f);
                std::memcpy(&v, &f, 4);
            }
        }
    }
    return static_cast<double>(v);
}

inline void decode_payload(const char* p, std::int16_t datatype, bool swapped, std::int64_t count,
                           std::vector<double>& out, const std::string& path) {
    out.resize(static_cast<std::size_t>(count));
    switch (datatype) {
        case kDtUint8:
            for (std::int64_t i = 0; i < count; ++i)
                out[i] = decode_element<std::uint8_t>(p + i, swapped);
            break;
        case kDtInt16:
            for (std::int64_t i = 0; i < count; ++i)
                out[i] = decode_element<std::int16_t>(p + 2 * i, swapped);
            break;
        case kDtFloat32:
            for (std::int64_t i = 0; i < count; ++i)
                out[i] = decode_element<float>(p + 4 * i, swapped);
            break;
        default:
            throw io_error(path + ": unsupported datatype " + std::to_string(datatype));
    }
}

inline int element_bytes(std::int16_t datatype) {
    return datatype == kDtUint8 ? 1 : datatype == kDtInt16 ? 2 : 4;
}

inline NiftiHeader make_base_header(const Dim3& dims, const Spacing3& spacing) {
    if (dims[0] > INT16_MAX || dims[1] > INT16_MAX || dims[2] > INT16_MAX)
        throw contract_error("write_nifti: dims exceed the 16-bit header fields");
    NiftiHeader h;
    std::memset(&h, 0, sizeof(h));
    h.sizeof_hdr = 348;
    h.regular = 'r';
    for (int i = 0; i < 3; ++i) h.dim[i + 1] = static_cast<std::int16_t>(dims[i]);
    h.dim[4] = h.dim[5] = h.dim[6] = h.dim[7] = 1;
    h.datatype = kDtFloat32;
    h.bitpix = 32;
    h.pixdim[0] = 1.0f;
    for (int i = 0; i < 3; ++i) h.pixdim[i + 1] = static_cast<float>(spacing[i]);
    h.pixdim[4] = 1.0f;
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.magic[0] = 'n';
    h.magic[1] = '+';
    h.magic[2] = '1';
    h.magic[3] = '\0';
    return h;
}

inline void write_payload(const std::string& path, const NiftiHeader& h,
                          const std::vector<float>& payload) {
    std::vector<char> bytes(352 + payload.size() * 4, 0);
    if constexpr (std::endian::native == std::endian::big) {
        NiftiHeader swapped = h;
        bswap_header(swapped);
        std::memcpy(bytes.data(), &swapped, 348);
        for (std::size_t i = 0; i < payload.size(); ++i) {
            float v = payload[i];
            bswap(v);
            std::memcpy(bytes.data() + 352 + 4 * i, &v, 4);
        }
    } else {
        std::memcpy(bytes.data(), &h, 348);
        std::memcpy(bytes.data() + 352, payload.data(), payload.size() * 4);
    }
    write_file_bytes(path, bytes.data(), bytes.size());
}

}  // namespace detail

using NiftiData = std::variant<Volume, DisplacementField>;

inline NiftiData read_nifti(const std::string& path) {
    const std::vector<char> bytes = detail::read_file_bytes(path);
    if (bytes.size() < sizeof(NiftiHeader))
        throw io_error(path + ": truncated header (" + std::to_string(bytes.size()) + " bytes)");
    NiftiHeader h;
    std::memcpy(&h, bytes.data(), sizeof(h));
    bool swapped = false;
    if (h.sizeof_hdr != 348) {
        detail::bswap_header(h);
        swapped = true;
        if (h.sizeof_hdr != 348) throw io_error(path + ": not a NIfTI-1 file");
    }
    if (std::memcmp(h.magic, "ni1", 3) == 0)
        throw io_error(path + ": two-file NIfTI (hdr/img pairs) is not supported");
    if (std::memcmp(h.magic, "n+1", 4) != 0) throw io_error(path + ": bad magic");

    const bool is_field = h.dim[0] == 4;
    if (h.dim[0] != 3 && !(is_field && h.dim[4] == 3))
        throw io_error(path + ": expected a 3D volume or a 3-component field, got dim[0]=" +
                       std::to_string(h.dim[0]) + " dim[4]=" + std::to_string(h.dim[4]));
    Dim3 dims{h.dim[1], h.dim[2], h.dim[3]};
    if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
        throw io_error(path + ": nonpositive dimensions");
    const int ncomp = is_field ? 3 : 1;

    if (h.datatype != kDtUint8 && h.datatype != kDtInt16 && h.datatype != kDtFloat32)
        throw io_error(path + ": unsupported datatype " + std::to_string(h.datatype));
    if (h.bitpix != 8 * detail::element_bytes(h.datatype))
        throw io_error(path + ": bitpix " + std::to_string(h.bitpix) +
                       " disagrees with datatype " + std::to_string(h.datatype));

    const auto offset = static_cast<std::int64_t>(h.vox_offset);
    if (offset < 348) throw io_error(path + ": vox_offset below the header size");
    const std::int64_t count = voxel_count(dims) * ncomp;
    const std::int64_t need = offset + count * detail::element_bytes(h.datatype);
    if (static_cast<std::int64_t>(bytes.size()) < need)
        throw io_error(path + ": truncated payload, need " + std::to_string(need) + " bytes, have " +
                       std::to_string(bytes.size()));

    std::vector<double> values;
    detail::decode_payload(bytes.data() + offset, h.datatype, swapped, count, values, path);
    const bool scale = std::isfinite(h.scl_slope) && h.scl_slope != 0.0f &&
                       !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
    if (scale) {
        const double slope = h.scl_slope;
        const double inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
        for (double& v : values) v = v * slope + inter;
    }
    for (double v : values)
        if (!std::isfinite(v)) throw io_error(path + ": non-finite voxel data");

    Spacing3 spacing;
    for (int i = 0; i < 3; ++i) {
        const float p = h.pixdim[i + 1];
        spacing[i] = (std::isfinite(p) && p > 0.0f) ? static_cast<double>(p) : 1.0;
    }

    if (!is_field) return new_volume(dims, spacing, std::move(values));

    DisplacementField f = zero_field(
        dims, spacing,
        std::strncmp(h.intent_name, kIntentHalfField, sizeof(h.intent_name)) == 0
            ? GridLevel::Half
            : GridLevel::Full);
    const auto n = voxel_count(dims);
    for (int c = 0; c < 3; ++c)
        std::copy(values.begin() + c * n, values.begin() + (c + 1) * n, f.comp[c].begin());
    return f;
}

inline Volume read_nifti_volume(const std::string& path) {
    NiftiData d = read_nifti(path);
    if (!std::holds_alternative<Volume>(d))
        throw contract_error(path + ": expected a scalar volume, found a displacement field");
    return std::get<Volume>(std::move(d));
}

inline DisplacementField read_nifti_field(const std::string& path) {
    NiftiData d = read_nifti(path);
    if (!std::holds_alternative<DisplacementField>(d))
        throw contract_error(path + ": expected a displacement field, found a scalar volume");
    return std::get<DisplacementField>(std::move(d));
}

inline void write_nifti(const Volume& v, const std::string& path) {
    check_dims_positive(v.dims, "write_nifti");
    NiftiHeader h = detail::make_base_header(v.dims, v.spacing);
    h.dim[0] = 3;
    std::snprintf(h.descrip, sizeof(h.descrip), "hybridreg volume");
    std::vector<float> payload(v.data.size());
    for (std::size_t i = 0; i < v.data.size(); ++i) payload[i] = static_cast<float>(v.data[i]);
    detail::write_payload(path, h, payload);
}

inline void write_nifti(const DisplacementField& f, const std::string& path) {
    check_field(f, "write_nifti");
    NiftiHeader h = detail::make_base_header(f.dims, f.spacing);
    h.dim[0] = 4;
    h.dim[4] = 3;
    h.intent_code = kIntentVector;
    std::snprintf(h.intent_name, sizeof(h.intent_name), "%s",
                  f.level == GridLevel::Half ? kIntentHalfField : kIntentFullField);
    std::snprintf(h.descrip, sizeof(h.descrip), "hybridreg field");
    const auto n = static_cast<std::size_t>(voxel_count(f.dims));
    std::vector<float> payload(3 * n);
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i)
            payload[c * n + i] = static_cast<float>(f.comp[c][i]);
    detail::write_payload(path, h, payload);
}

// ---------------------------------------------------------------------------
// Raw sidecar format: a small JSON descriptor next to a float32 .bin payload.

using RawData = std::variant<Volume, LabelMap, DisplacementField>;

namespace detail {

inline std::string raw_bin_path(const std::string& json_path) {
    const std::string suffix = ".json";
    if (json_path.size() > suffix.size() &&
        json_path.compare(json_path.size() - suffix.size(), suffix.size(), suffix) == 0)
        return json_path.substr(0, json_path.size() - suffix.size()) + ".bin";
    return json_path + ".bin";
}

inline void write_raw_parts(const std::string& json_path, const nlohmann::json& meta,
                            const std::vector<float>& payload) {
    const std::string dumped = meta.dump(2) + "\n";
    write_file_bytes(json_path, dumped.data(), dumped.size());
    std::vector<char> bytes(payload.size() * 4);
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < payload.size(); ++i) {
            float v = payload[i];
            bswap(v);
            std::memcpy(bytes.data() + 4 * i, &v, 4);
        }
    } else {
        std::memcpy(bytes.data(), payload.data(), bytes.size());
    }
    write_file_bytes(raw_bin_path(json_path), bytes.data(), bytes.size());
}

inline nlohmann::json raw_meta(const char* kind, const Dim3& dims, const Spacing3& spacing) {
    return nlohmann::json{{"kind", kind},
                          {"dims", {dims[0], dims[1], dims[2]}},
                          {"spacing", {spacing[0], spacing[1], spacing[2]}}};
}

}  // namespace detail

inline void write_raw_json(const Volume& v, const std::string& json_path) {
    std::vector<float> payload(v.data.begin(), v.data.end());
    detail::write_raw_parts(json_path, detail::raw_meta("volume", v.dims, v.spacing), payload);
}

inline void write_raw_json(const LabelMap& m, const std::string& json_path) {
    std::vector<float> payload(m.data.begin(), m.data.end());
    detail::write_raw_parts(json_path, detail::raw_meta("labels", m.dims, m.spacing), payload);
}

inline void write_raw_json(const DisplacementField& f, const std::string& json_path) {
    nlohmann::json meta = detail::raw_meta("field", f.dims, f.spacing);
    meta["level"] = f.level == GridLevel::Half ? "half" : "full";
    const auto n = static_cast<std::size_t>(voxel_count(f.dims));
    std::vector<float> payload(3 * n);
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i) payload[c * n + i] = static_cast<float>(f.comp[c][i]);
    detail::write_raw_parts(json_path, meta, payload);
}

inline RawData read_raw_json(const std::string& json_path) {
    nlohmann::json meta;
    {
        const auto bytes = detail::read_file_bytes(json_path);
        meta = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
        if (meta.is_discarded()) throw io_error(json_path + ": invalid JSON");
    }
    Dim3 dims;
    Spacing3 spacing;
    std::string kind;
    try {
        kind = meta.at("kind").get<std::string>();
        for (int i = 0; i < 3; ++i) dims[i] = meta.at("dims").at(i).get<int>();
        for (int i = 0; i < 3; ++i) spacing[i] = meta.at("spacing").at(i).get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw io_error(json_path + ": bad descriptor: " + e.what());
    }
    check_dims_positive(dims, "read_raw_json");
    const int ncomp = kind == "field" ? 3 : 1;
    const auto bin = detail::read_file_bytes(detail::raw_bin_path(json_path));
    const std::int64_t count = voxel_count(dims) * ncomp;
    if (static_cast<std::int64_t>(bin.size()) != count * 4)
        throw io_error(json_path + ": payload size mismatch");
    std::vector<double> values;
    detail::decode_payload(bin.data(), kDtFloat32, std::endian::native == std::endian::big, count,
                           values, json_path);

    if (kind == "volume") return new_volume(dims, spacing, std::move(values));
    if (kind == "labels") {
        std::vector<int> labels(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double r = std::round(values[i]);
            if (!std::isfinite(values[i]) || std::abs(values[i] - r) > 1e-3 || r < 0)
                throw io_error(json_path + ": payload is not a nonnegative label map");
            labels[i] = static_cast<int>(r);
        }
        return new_label_map(dims, spacing, std::move(labels));
    }
    if (kind == "field") {
        GridLevel level = GridLevel::Full;
        if (meta.contains("level")) level =
            meta["level"].get<std::string>() == "half" ? GridLevel::Half : GridLevel::Full;
        DisplacementField f = zero_field(dims, spacing, level);
        const auto n = voxel_count(dims);
        for (int c = 0; c < 3; ++c)
            std::copy(values.begin() + c * n, values.begin() + (c + 1) * n, f.comp[c].begin());
        return f;
    }
    throw io_error(json_path + ": unknown kind '" + kind + "'");
}

}  // namespace hybridreg
