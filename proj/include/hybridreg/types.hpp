#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace hybridreg {

// Error taxonomy used across the library. io_error: malformed or unreadable
// external data. contract_error: caller violated a documented precondition.
// numeric_error: a computation left the finite domain.
class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class contract_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Dim3 = std::array<int, 3>;
using Spacing3 = std::array<double, 3>;

inline std::int64_t voxel_count(const Dim3& d) {
    return static_cast<std::int64_t>(d[0]) * d[1] * d[2];
}

// Linear index with x fastest: idx = x + nx*(y + ny*z).
inline std::int64_t linear_index(const Dim3& d, int x, int y, int z) {
    return x + static_cast<std::int64_t>(d[0]) * (y + static_cast<std::int64_t>(d[1]) * z);
}

inline Dim3 half_dims(const Dim3& full) {
    return {(full[0] + 1) / 2, (full[1] + 1) / 2, (full[2] + 1) / 2};
}

inline bool same_dims(const Dim3& a, const Dim3& b) { return a == b; }

inline bool same_spacing(const Spacing3& a, const Spacing3& b, double tol = 1e-6) {
    for (int i = 0; i < 3; ++i) {
        if (std::abs(a[i] - b[i]) > tol * std::max(1.0, std::abs(b[i]))) return false;
    }
    return true;
}

inline void check_dims_positive(const Dim3& d, const char* what) {
    if (d[0] <= 0 || d[1] <= 0 || d[2] <= 0)
        throw contract_error(std::string(what) + ": dims must be positive");
}

inline void check_spacing_positive(const Spacing3& s, const char* what) {
    for (double v : s)
        if (!(v > 0.0) || !std::isfinite(v))
            throw contract_error(std::string(what) + ": spacing must be positive and finite");
}

// Scalar image. data is x-fastest; min_value/max_value cache the intensity
// range and are kept in sync by the factory functions and update_range.
struct Volume {
    Dim3 dims{0, 0, 0};
    Spacing3 spacing{1.0, 1.0, 1.0};
    std::vector<double> data;
    double min_value = 0.0;
    double max_value = 0.0;

    double at(int x, int y, int z) const { return data[linear_index(dims, x, y, z)]; }
    double& at(int x, int y, int z) { return data[linear_index(dims, x, y, z)]; }
};

inline void update_range(Volume& v) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (double x : v.data) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    v.min_value = lo;
    v.max_value = hi;
}

inline Volume new_volume(const Dim3& dims, const Spacing3& spacing, std::vector<double> data) {
    check_dims_positive(dims, "new_volume");
    check_spacing_positive(spacing, "new_volume");
    const auto n = voxel_count(dims);
    if (static_cast<std::int64_t>(data.size()) != n)
        throw contract_error("new_volume: data size " + std::to_string(data.size()) +
                             " does not match dims (" + std::to_string(n) + " voxels)");
    for (double x : data)
        if (!std::isfinite(x)) throw contract_error("new_volume: non-finite voxel value");
    Volume v;
    v.dims = dims;
    v.spacing = spacing;
    v.data = std::move(data);
    update_range(v);
    return v;
}

inline Volume new_volume(const Dim3& dims, const Spacing3& spacing) {
    check_dims_positive(dims, "new_volume");
    check_spacing_positive(spacing, "new_volume");
    Volume v;
    v.dims = dims;
    v.spacing = spacing;
    v.data.assign(static_cast<std::size_t>(voxel_count(dims)), 0.0);
    return v;
}

// Rescale intensities to [0,1]. A constant volume maps to all zeros.
inline Volume normalize_intensities(const Volume& v) {
    Volume out = v;
    const double range = v.max_value - v.min_value;
    if (range <= 0.0) {
        std::fill(out.data.begin(), out.data.end(), 0.0);
        out.min_value = out.max_value = 0.0;
        return out;
    }
    const double inv = 1.0 / range;
    for (double& x : out.data) x = (x - v.min_value) * inv;
    out.min_value = 0.0;
    out.max_value = 1.0;
    return out;
}

// Integer segmentation labels, 0 = background.
struct LabelMap {
    Dim3 dims{0, 0, 0};
    Spacing3 spacing{1.0, 1.0, 1.0};
    std::vector<int> data;

    int at(int x, int y, int z) const { return data[linear_index(dims, x, y, z)]; }
    int& at(int x, int y, int z) { return data[linear_index(dims, x, y, z)]; }
};

inline LabelMap new_label_map(const Dim3& dims, const Spacing3& spacing, std::vector<int> data) {
    check_dims_positive(dims, "new_label_map");
    check_spacing_positive(spacing, "new_label_map");
    if (static_cast<std::int64_t>(data.size()) != voxel_count(dims))
        throw contract_error("new_label_map: data size does not match dims");
    for (int x : data)
        if (x < 0) throw contract_error("new_label_map: negative label");
    LabelMap m;
    m.dims = dims;
    m.spacing = spacing;
    m.data = std::move(data);
    return m;
}

inline LabelMap new_label_map(const Dim3& dims, const Spacing3& spacing) {
    check_dims_positive(dims, "new_label_map");
    check_spacing_positive(spacing, "new_label_map");
    LabelMap m;
    m.dims = dims;
    m.spacing = spacing;
    m.data.assign(static_cast<std::size_t>(voxel_count(dims)), 0);
    return m;
}

inline int max_label(const LabelMap& m) {
    int hi = 0;
    for (int x : m.data) hi = std::max(hi, x);
    return hi;
}

// Labels travel through scalar-volume containers on disk; values must stay
// within tol of a nonnegative integer.
inline LabelMap to_label_map(const Volume& v, double tol = 1e-3) {
    std::vector<int> labels(v.data.size());
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const double r = std::round(v.data[i]);
        if (std::abs(v.data[i] - r) > tol || r < 0.0)
            throw contract_error("to_label_map: voxel value " + std::to_string(v.data[i]) +
                                 " is not a nonnegative integer label");
        labels[i] = static_cast<int>(r);
    }
    return new_label_map(v.dims, v.spacing, std::move(labels));
}

inline Volume to_volume(const LabelMap& m) {
    std::vector<double> data(m.data.begin(), m.data.end());
    return new_volume(m.dims, m.spacing, std::move(data));
}

// Per-class membership weights, channel-major: data[c*nvox + i].
// Every voxel's class weights sum to 1 within 1e-5.
struct SoftLabelVolume {
    Dim3 dims{0, 0, 0};
    Spacing3 spacing{1.0, 1.0, 1.0};
    int num_classes = 0;
    std::vector<double> data;

    double at(int c, int x, int y, int z) const {
        return data[static_cast<std::size_t>(c) * voxel_count(dims) + linear_index(dims, x, y, z)];
    }
    double* channel(int c) { return data.data() + static_cast<std::size_t>(c) * voxel_count(dims); }
    const double* channel(int c) const {
        return data.data() + static_cast<std::size_t>(c) * voxel_count(dims);
    }
};

inline void check_soft_sums(const SoftLabelVolume& s, double tol = 1e-5) {
    const auto n = voxel_count(s.dims);
    for (std::int64_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int c = 0; c < s.num_classes; ++c) sum += s.data[c * n + i];
        if (std::abs(sum - 1.0) > tol)
            throw contract_error("soft label volume: class weights at voxel " + std::to_string(i) +
                                 " sum to " + std::to_string(sum));
    }
}

inline SoftLabelVolume one_hot(const LabelMap& labels, int num_classes) {
    check_dims_positive(labels.dims, "one_hot");
    if (num_classes < 1) throw contract_error("one_hot: num_classes must be >= 1");
    const int hi = max_label(labels);
    if (hi >= num_classes)
        throw contract_error("one_hot: label " + std::to_string(hi) + " exceeds num_classes " +
                             std::to_string(num_classes));
    SoftLabelVolume s;
    s.dims = labels.dims;
    s.spacing = labels.spacing;
    s.num_classes = num_classes;
    const auto n = voxel_count(labels.dims);
    s.data.assign(static_cast<std::size_t>(num_classes) * n, 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        s.data[static_cast<std::size_t>(labels.data[i]) * n + i] = 1.0;
    return s;
}

// Dense displacement field in voxel units of its own grid. comp[c][i] is the
// c-axis displacement at voxel i (x-fastest). level records whether the grid
// is the half-resolution optimization grid or the full image grid.
enum class GridLevel { Half, Full };

struct DisplacementField {
    Dim3 dims{0, 0, 0};
    Spacing3 spacing{1.0, 1.0, 1.0};
    GridLevel level = GridLevel::Half;
    std::array<std::vector<double>, 3> comp;
};

inline DisplacementField zero_field(const Dim3& dims, const Spacing3& spacing, GridLevel level) {
    check_dims_positive(dims, "zero_field");
    check_spacing_positive(spacing, "zero_field");
    DisplacementField f;
    f.dims = dims;
    f.spacing = spacing;
    f.level = level;
    const auto n = static_cast<std::size_t>(voxel_count(dims));
    for (auto& c : f.comp) c.assign(n, 0.0);
    return f;
}

inline void check_field(const DisplacementField& f, const char* what) {
    check_dims_positive(f.dims, what);
    const auto n = static_cast<std::size_t>(voxel_count(f.dims));
    for (const auto& c : f.comp)
        if (c.size() != n) throw contract_error(std::string(what) + ": component size mismatch");
}

}  // namespace hybridreg
