#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "types.hpp"

namespace hybridreg {

// 2|A n B| / (|A| + |B|). Both sets empty scores 1, exactly one empty scores 0.
inline double dice(const LabelMap& a, const LabelMap& b, int label) {
    if (!same_dims(a.dims, b.dims)) throw contract_error("dice: dims differ");
    std::int64_t na = 0, nb = 0, ni = 0;
    const auto n = voxel_count(a.dims);
    for (std::int64_t i = 0; i < n; ++i) {
        const bool ia = a.data[i] == label, ib = b.data[i] == label;
        na += ia;
        nb += ib;
        ni += ia && ib;
    }
    if (na == 0 && nb == 0) return 1.0;
    if (na == 0 || nb == 0) return 0.0;
    return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

// Labeled voxels with at least one 6-neighbor that is unlabeled or outside
// the grid.
inline std::vector<std::int64_t> boundary_voxels(const LabelMap& m, int label) {
    std::vector<std::int64_t> out;
    const Dim3& d = m.dims;
    std::int64_t i = 0;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x, ++i) {
                if (m.data[i] != label) continue;
                const bool edge = x == 0 || x == d[0] - 1 || y == 0 || y == d[1] - 1 || z == 0 ||
                                  z == d[2] - 1;
                bool boundary = edge;
                if (!boundary)
                    boundary = m.at(x - 1, y, z) != label || m.at(x + 1, y, z) != label ||
                               m.at(x, y - 1, z) != label || m.at(x, y + 1, z) != label ||
                               m.at(x, y, z - 1) != label || m.at(x, y, z + 1) != label;
                if (boundary) out.push_back(i);
            }
    return out;
}

namespace detail {

inline constexpr double kEdtInf = 1e20;

// Lower-envelope distance transform along one line:
// d[i] = min_j ((i-j)^2 * w2 + f[j]).
inline void dt_line(const double* f, double* dout, int n, double w2, int* v, double* z) {
    // The envelope bounds must be true infinities: with sub-unit spacings the
    // intersection abscissa of an empty-line parabola can fall below -kEdtInf.
    const double inf = std::numeric_limits<double>::infinity();
    int k = 0;
    v[0] = 0;
    z[0] = -inf;
    z[1] = inf;
    for (int q = 1; q < n; ++q) {
        double s;
        for (;;) {
            const int p = v[k];
            s = ((f[q] + q * static_cast<double>(q) * w2) -
                 (f[p] + p * static_cast<double>(p) * w2)) /
                (2.0 * w2 * (q - p));
            if (s <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    k = 0;
    for (int i = 0; i < n; ++i) {
        while (z[k + 1] < i) ++k;
        const double dq = i - v[k];
        dout[i] = dq * dq * w2 + f[v[k]];
    }
}

}  // namespace detail

// Squared Euclidean distance (in physical units) from every voxel to the
// nearest seed voxel. Axis passes keep the arithmetic exact for integer
// coordinates and dyadic spacings.
inline std::vector<double> squared_edt(const Dim3& dims, const Spacing3& spacing,
                                       const std::vector<std::int64_t>& seeds) {
    check_dims_positive(dims, "squared_edt");
    check_spacing_positive(spacing, "squared_edt");
    const auto n = voxel_count(dims);
    std::vector<double> dist(static_cast<std::size_t>(n), detail::kEdtInf);
    for (std::int64_t s : seeds) {
        if (s < 0 || s >= n) throw contract_error("squared_edt: seed index out of range");
        dist[static_cast<std::size_t>(s)] = 0.0;
    }
    const int nmax = std::max({dims[0], dims[1], dims[2]});
    std::vector<double> f(nmax), dline(nmax), z(nmax + 1);
    std::vector<int> v(nmax);
    for (int axis = 0; axis < 3; ++axis) {
        const int len = dims[axis];
        if (len == 1) continue;
        const double w2 = spacing[axis] * spacing[axis];
        const std::int64_t stride = axis == 0 ? 1
                                  : axis == 1 ? dims[0]
                                              : static_cast<std::int64_t>(dims[0]) * dims[1];
        const int oa = axis == 0 ? dims[1] : dims[0];
        const int ob = axis == 2 ? dims[1] : dims[2];
        for (int b = 0; b < ob; ++b)
            for (int a = 0; a < oa; ++a) {
                std::int64_t base;
                if (axis == 0)
                    base = linear_index(dims, 0, a, b);
                else if (axis == 1)
                    base = linear_index(dims, a, 0, b);
                else
                    base = linear_index(dims, a, b, 0);
                for (int i = 0; i < len; ++i) f[i] = dist[base + i * stride];
                detail::dt_line(f.data(), dline.data(), len, w2, v.data(), z.data());
                for (int i = 0; i < len; ++i) dist[base + i * stride] = dline[i];
            }
    }
    return dist;
}

// Nearest-rank percentile of an unsorted sample; p in (0, 100].
inline double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw contract_error("percentile: empty sample");
    if (!(p > 0.0 && p <= 100.0)) throw contract_error("percentile: p must be in (0, 100]");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto idx = static_cast<std::int64_t>(std::ceil(p / 100.0 * n)) - 1;
    idx = std::clamp<std::int64_t>(idx, 0, static_cast<std::int64_t>(values.size()) - 1);
    return values[static_cast<std::size_t>(idx)];
}

// Symmetric percentile surface distance between one label's boundaries, in
// physical units. p = 100 is the classic Hausdorff distance.
inline double hausdorff_distance(const LabelMap& a, const LabelMap& b, int label, double p) {
    if (!same_dims(a.dims, b.dims)) throw contract_error("hausdorff_distance: dims differ");
    if (!same_spacing(a.spacing, b.spacing))
        throw contract_error("hausdorff_distance: spacing differs");
    const auto ba = boundary_voxels(a, label);
    const auto bb = boundary_voxels(b, label);
    if (ba.empty() || bb.empty())
        throw contract_error("hausdorff_distance: label " + std::to_string(label) +
                             " is empty on one side");
    const auto edt_b = squared_edt(a.dims, a.spacing, bb);
    const auto edt_a = squared_edt(a.dims, a.spacing, ba);
    std::vector<double> da, db;
    da.reserve(ba.size());
    db.reserve(bb.size());
    for (std::int64_t i : ba) da.push_back(std::sqrt(edt_b[static_cast<std::size_t>(i)]));
    for (std::int64_t i : bb) db.push_back(std::sqrt(edt_a[static_cast<std::size_t>(i)]));
    return std::max(percentile(std::move(da), p), percentile(std::move(db), p));
}

// ---------------------------------------------------------------------------
// Jacobian statistics of x -> x + u(x), voxel units. Central differences in
// the interior, one-sided at the faces.

inline std::vector<double> jacobian_determinant(const DisplacementField& f) {
    check_field(f, "jacobian_determinant");
    const Dim3& d = f.dims;
    if (d[0] < 2 || d[1] < 2 || d[2] < 2)
        throw contract_error("jacobian_determinant: dims must be >= 2 along every axis");
    const auto n = voxel_count(d);
    std::vector<double> det(static_cast<std::size_t>(n));
    const std::int64_t stride[3] = {1, d[0], static_cast<std::int64_t>(d[0]) * d[1]};
    std::int64_t i = 0;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x, ++i) {
                const int p[3] = {x, y, z};
                double J[3][3];
                for (int axis = 0; axis < 3; ++axis) {
                    std::int64_t hi = i, lo = i;
                    double scale = 0.5;
                    if (p[axis] + 1 <= d[axis] - 1) hi += stride[axis];
                    if (p[axis] - 1 >= 0) lo -= stride[axis];
                    if (hi == i || lo == i) scale = 1.0;
                    for (int c = 0; c < 3; ++c)
                        J[c][axis] = (f.comp[c][hi] - f.comp[c][lo]) * scale;
                }
                const double m00 = 1.0 + J[0][0], m01 = J[0][1], m02 = J[0][2];
                const double m10 = J[1][0], m11 = 1.0 + J[1][1], m12 = J[1][2];
                const double m20 = J[2][0], m21 = J[2][1], m22 = 1.0 + J[2][2];
                det[static_cast<std::size_t>(i)] = m00 * (m11 * m22 - m12 * m21) -
                                                   m01 * (m10 * m22 - m12 * m20) +
                                                   m02 * (m10 * m21 - m11 * m20);
            }
    return det;
}

// Population standard deviation of log det, with determinants floored at
// 1e-9 before the log.
inline double sdlogj(const std::vector<double>& det) {
    if (det.empty()) throw contract_error("sdlogj: empty input");
    std::vector<double> logs(det.size());
    for (std::size_t i = 0; i < det.size(); ++i) logs[i] = std::log(std::max(det[i], 1e-9));
    double mean = 0.0;
    for (double l : logs) mean += l;
    mean /= static_cast<double>(logs.size());
    double var = 0.0;
    for (double l : logs) var += (l - mean) * (l - mean);
    return std::sqrt(var / static_cast<double>(logs.size()));
}

inline double folded_fraction(const std::vector<double>& det) {
    if (det.empty()) throw contract_error("folded_fraction: empty input");
    std::int64_t folded = 0;
    for (double d : det) folded += d <= 0.0;
    return static_cast<double>(folded) / static_cast<double>(det.size());
}

// Mean Euclidean displacement error between two fields on the same grid,
// voxel units.
inline double field_epe(const DisplacementField& a, const DisplacementField& b) {
    if (!same_dims(a.dims, b.dims)) throw contract_error("field_epe: dims differ");
    check_field(a, "field_epe");
    check_field(b, "field_epe");
    const auto n = voxel_count(a.dims);
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double dx = a.comp[0][i] - b.comp[0][i];
        const double dy = a.comp[1][i] - b.comp[1][i];
        const double dz = a.comp[2][i] - b.comp[2][i];
        s += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    return s / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Per-case summary.

struct LabelMetrics {
    int label = 0;
    double dice = 0.0;
    bool hd_defined = false;
    double hausdorff = 0.0;
};

struct MetricsReport {
    std::vector<LabelMetrics> per_label;
    double dice_mean = 0.0;
    double dice_std = 0.0;
    double hd_mean = 0.0;  // over labels with a defined distance
    double hd_std = 0.0;
    int hd_defined_count = 0;
    double hd_percentile = 95.0;
    double sdlogj = 0.0;
    double folded_fraction = 0.0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace detail

// Scores warped labels against fixed labels over every nonbackground label
// present in fixed. Labels missing from the warped map keep dice 0 and are
// excluded from the distance statistics. The field provides the smoothness
// statistics.
inline MetricsReport evaluate_case(const LabelMap& warped_labels, const LabelMap& fixed_labels,
                                   const DisplacementField& field, double hd_percentile = 95.0) {
    if (!same_dims(warped_labels.dims, fixed_labels.dims))
        throw contract_error("evaluate_case: label dims differ");
    if (!same_dims(field.dims, fixed_labels.dims))
        throw contract_error("evaluate_case: field dims differ from label dims");
    if (!(hd_percentile > 0.0 && hd_percentile <= 100.0))
        throw contract_error("evaluate_case: percentile must be in (0, 100]");

    std::vector<int> labels;
    {
        std::vector<int> present(static_cast<std::size_t>(max_label(fixed_labels)) + 1, 0);
        for (int l : fixed_labels.data)
            if (l > 0) present[static_cast<std::size_t>(l)] = 1;
        for (std::size_t l = 1; l < present.size(); ++l)
            if (present[l]) labels.push_back(static_cast<int>(l));
    }
    if (labels.empty())
        throw contract_error("evaluate_case: fixed label map has no nonbackground labels");

    MetricsReport rep;
    rep.hd_percentile = hd_percentile;
    std::vector<double> dices, hds;
    for (int label : labels) {
        LabelMetrics lm;
        lm.label = label;
        lm.dice = dice(warped_labels, fixed_labels, label);
        dices.push_back(lm.dice);
        const bool in_warped =
            std::find(warped_labels.data.begin(), warped_labels.data.end(), label) !=
            warped_labels.data.end();
        if (in_warped) {
            lm.hd_defined = true;
            lm.hausdorff = hausdorff_distance(warped_labels, fixed_labels, label, hd_percentile);
            hds.push_back(lm.hausdorff);
        }
        rep.per_label.push_back(lm);
    }
    std::tie(rep.dice_mean, rep.dice_std) = detail::mean_std(dices);
    std::tie(rep.hd_mean, rep.hd_std) = detail::mean_std(hds);
    rep.hd_defined_count = static_cast<int>(hds.size());

    const auto det = jacobian_determinant(field);
    rep.sdlogj = sdlogj(det);
    rep.folded_fraction = folded_fraction(det);
    return rep;
}

}  // namespace hybridreg
