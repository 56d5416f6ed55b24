#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "types.hpp"

namespace hybridreg {

struct TrilinearSample {
    double value = 0.0;
    std::array<double, 3> deriv{0.0, 0.0, 0.0};  // d(value)/d(coordinate), voxel units
};

namespace detail {

struct AxisWeights {
    int i0 = 0, i1 = 0;
    double frac = 0.0;
    double dfrac = 0.0;  // d(frac)/d(coordinate); 0 where the clamp is active
};

inline AxisWeights axis_weights(double p, int n) {
    AxisWeights w;
    if (n == 1) return w;
    double c = p;
    double dfrac = 1.0;
    if (c <= 0.0) {
        c = 0.0;
        dfrac = (p < 0.0) ? 0.0 : 1.0;
    } else if (c >= n - 1) {
        c = n - 1;
        dfrac = (p > n - 1) ? 0.0 : 1.0;
    }
    int i0 = static_cast<int>(std::floor(c));
    if (i0 > n - 2) i0 = n - 2;
    w.i0 = i0;
    w.i1 = i0 + 1;
    w.frac = c - i0;
    w.dfrac = dfrac;
    return w;
}

// Endpoint-exact linear blend: returns a at t=0 and b at t=1 bit for bit, and
// a itself when the endpoints agree. The top grid edge maps to frac = 1, so
// the plain a + t*(b - a) form would miss lattice values there by an ulp.
inline double lerp1(double a, double b, double t) {
    return t == 1.0 ? b : a + t * (b - a);
}

}  // namespace detail

// Trilinear interpolation with edge clamp; outside coordinates are clamped to
// the border, where the derivative along the clamped axis is zero.
inline TrilinearSample sample_trilinear_grad(const double* v, const Dim3& d, double px, double py,
                                             double pz) {
    const auto wx = detail::axis_weights(px, d[0]);
    const auto wy = detail::axis_weights(py, d[1]);
    const auto wz = detail::axis_weights(pz, d[2]);
    auto at = [&](int x, int y, int z) { return v[linear_index(d, x, y, z)]; };
    const double v000 = at(wx.i0, wy.i0, wz.i0), v100 = at(wx.i1, wy.i0, wz.i0);
    const double v010 = at(wx.i0, wy.i1, wz.i0), v110 = at(wx.i1, wy.i1, wz.i0);
    const double v001 = at(wx.i0, wy.i0, wz.i1), v101 = at(wx.i1, wy.i0, wz.i1);
    const double v011 = at(wx.i0, wy.i1, wz.i1), v111 = at(wx.i1, wy.i1, wz.i1);
    const double fx = wx.frac, fy = wy.frac, fz = wz.frac;

    const double c00 = detail::lerp1(v000, v100, fx);
    const double c10 = detail::lerp1(v010, v110, fx);
    const double c01 = detail::lerp1(v001, v101, fx);
    const double c11 = detail::lerp1(v011, v111, fx);
    const double c0 = detail::lerp1(c00, c10, fy);
    const double c1 = detail::lerp1(c01, c11, fy);

    const double gx00 = v100 - v000, gx10 = v110 - v010;
    const double gx01 = v101 - v001, gx11 = v111 - v011;
    const double gx0 = detail::lerp1(gx00, gx10, fy);
    const double gx1 = detail::lerp1(gx01, gx11, fy);

    TrilinearSample s;
    s.value = detail::lerp1(c0, c1, fz);
    s.deriv[0] = detail::lerp1(gx0, gx1, fz) * wx.dfrac;
    s.deriv[1] = detail::lerp1(c10 - c00, c11 - c01, fz) * wy.dfrac;
    s.deriv[2] = (c1 - c0) * wz.dfrac;
    return s;
}

inline double sample_trilinear(const double* v, const Dim3& d, double px, double py, double pz) {
    return sample_trilinear_grad(v, d, px, py, pz).value;
}

inline double sample_trilinear(const Volume& v, double px, double py, double pz) {
    return sample_trilinear_grad(v.data.data(), v.dims, px, py, pz).value;
}

// out(x) = v(x + u(x)); the field lives on the same grid as v and is measured
// in voxels of that grid.
inline Volume warp(const Volume& v, const DisplacementField& f) {
    if (!same_dims(v.dims, f.dims)) throw contract_error("warp: field dims must match volume dims");
    check_field(f, "warp");
    Volume out = v;
    std::int64_t i = 0;
    for (int z = 0; z < v.dims[2]; ++z)
        for (int y = 0; y < v.dims[1]; ++y)
            for (int x = 0; x < v.dims[0]; ++x, ++i)
                out.data[i] = sample_trilinear(v.data.data(), v.dims, x + f.comp[0][i],
                                               y + f.comp[1][i], z + f.comp[2][i]);
    update_range(out);
    return out;
}

inline LabelMap warp_labels(const LabelMap& m, const DisplacementField& f) {
    if (!same_dims(m.dims, f.dims))
        throw contract_error("warp_labels: field dims must match label dims");
    check_field(f, "warp_labels");
    LabelMap out = m;
    auto nearest = [](double p, int n) {
        int i = static_cast<int>(std::floor(p + 0.5));
        return i < 0 ? 0 : (i > n - 1 ? n - 1 : i);
    };
    std::int64_t i = 0;
    for (int z = 0; z < m.dims[2]; ++z)
        for (int y = 0; y < m.dims[1]; ++y)
            for (int x = 0; x < m.dims[0]; ++x, ++i)
                out.data[i] = m.at(nearest(x + f.comp[0][i], m.dims[0]),
                                   nearest(y + f.comp[1][i], m.dims[1]),
                                   nearest(z + f.comp[2][i], m.dims[2]));
    return out;
}

// Channel-wise trilinear warp; voxels whose warped class weights still carry
// mass (sum > 1e-6) are renormalized back to a partition of unity.
inline SoftLabelVolume warp_soft(const SoftLabelVolume& s, const DisplacementField& f) {
    if (!same_dims(s.dims, f.dims))
        throw contract_error("warp_soft: field dims must match volume dims");
    check_field(f, "warp_soft");
    SoftLabelVolume out = s;
    const auto n = voxel_count(s.dims);
    std::int64_t i = 0;
    for (int z = 0; z < s.dims[2]; ++z)
        for (int y = 0; y < s.dims[1]; ++y)
            for (int x = 0; x < s.dims[0]; ++x, ++i) {
                const double px = x + f.comp[0][i], py = y + f.comp[1][i], pz = z + f.comp[2][i];
                double sum = 0.0;
                for (int c = 0; c < s.num_classes; ++c) {
                    const double w = sample_trilinear(s.channel(c), s.dims, px, py, pz);
                    out.data[c * n + i] = w;
                    sum += w;
                }
                if (sum > 1e-6) {
                    const double inv = 1.0 / sum;
                    for (int c = 0; c < s.num_classes; ++c) out.data[c * n + i] *= inv;
                }
            }
    return out;
}

// 2x block-mean downsampling; trailing odd slabs average the voxels that
// exist. dims become ceil(n/2), spacing doubles.
inline Volume downsample2(const Volume& v) {
    check_dims_positive(v.dims, "downsample2");
    const Dim3 od = half_dims(v.dims);
    Volume out;
    out.dims = od;
    out.spacing = {v.spacing[0] * 2, v.spacing[1] * 2, v.spacing[2] * 2};
    out.data.assign(static_cast<std::size_t>(voxel_count(od)), 0.0);
    std::int64_t o = 0;
    for (int z = 0; z < od[2]; ++z)
        for (int y = 0; y < od[1]; ++y)
            for (int x = 0; x < od[0]; ++x, ++o) {
                const int x1 = std::min(2 * x + 1, v.dims[0] - 1);
                const int y1 = std::min(2 * y + 1, v.dims[1] - 1);
                const int z1 = std::min(2 * z + 1, v.dims[2] - 1);
                double sum = 0.0;
                int cnt = 0;
                for (int zz = 2 * z; zz <= z1; ++zz)
                    for (int yy = 2 * y; yy <= y1; ++yy)
                        for (int xx = 2 * x; xx <= x1; ++xx, ++cnt) sum += v.at(xx, yy, zz);
                out.data[o] = sum / cnt;
            }
    update_range(out);
    return out;
}

inline SoftLabelVolume downsample2(const SoftLabelVolume& s) {
    check_dims_positive(s.dims, "downsample2");
    SoftLabelVolume out;
    out.dims = half_dims(s.dims);
    out.spacing = {s.spacing[0] * 2, s.spacing[1] * 2, s.spacing[2] * 2};
    out.num_classes = s.num_classes;
    out.data.resize(static_cast<std::size_t>(voxel_count(out.dims)) * s.num_classes);
    Volume ch;
    ch.dims = s.dims;
    ch.spacing = s.spacing;
    const auto n = voxel_count(s.dims);
    const auto on = voxel_count(out.dims);
    for (int c = 0; c < s.num_classes; ++c) {
        ch.data.assign(s.channel(c), s.channel(c) + n);
        const Volume half = downsample2(ch);
        std::copy(half.data.begin(), half.data.end(), out.data.begin() + c * on);
    }
    return out;
}

// Upsample a displacement field to a grid twice as fine: sample the coarse
// field at x/2 and double the displacement (it is measured in voxels of the
// target grid). target_dims must satisfy ceil(target/2) == f.dims.
inline DisplacementField upsample_field2(const DisplacementField& f, const Dim3& target_dims,
                                         const Spacing3& target_spacing, GridLevel target_level) {
    check_field(f, "upsample_field2");
    check_dims_positive(target_dims, "upsample_field2");
    if (half_dims(target_dims) != f.dims)
        throw contract_error("upsample_field2: target dims do not downsample to field dims");
    DisplacementField out = zero_field(target_dims, target_spacing, target_level);
    std::int64_t i = 0;
    for (int z = 0; z < target_dims[2]; ++z)
        for (int y = 0; y < target_dims[1]; ++y)
            for (int x = 0; x < target_dims[0]; ++x, ++i)
                for (int c = 0; c < 3; ++c)
                    out.comp[c][i] = 2.0 * sample_trilinear(f.comp[c].data(), f.dims, x * 0.5,
                                                            y * 0.5, z * 0.5);
    return out;
}

inline std::vector<double> gaussian_kernel(int size, double sigma) {
    if (size < 1 || size % 2 == 0) throw contract_error("gaussian_kernel: size must be odd and >= 1");
    if (!(sigma > 0.0)) throw contract_error("gaussian_kernel: sigma must be positive");
    std::vector<double> k(static_cast<std::size_t>(size));
    const int r = size / 2;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        k[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
        sum += k[i];
    }
    for (double& w : k) w /= sum;
    return k;
}

namespace detail {

// One separable pass along `axis` with replicate edges.
inline void blur_axis(std::vector<double>& data, const Dim3& d, int axis,
                      const std::vector<double>& kernel) {
    const int r = static_cast<int>(kernel.size()) / 2;
    const int n = d[axis];
    const std::int64_t stride = axis == 0 ? 1
                              : axis == 1 ? d[0]
                                          : static_cast<std::int64_t>(d[0]) * d[1];
    std::vector<double> line(static_cast<std::size_t>(n));
    const int outer_dims[2] = {axis == 0 ? d[1] : d[0], axis == 2 ? d[1] : d[2]};
    for (int b = 0; b < outer_dims[1]; ++b)
        for (int a = 0; a < outer_dims[0]; ++a) {
            std::int64_t base;
            if (axis == 0)
                base = linear_index(d, 0, a, b);
            else if (axis == 1)
                base = linear_index(d, a, 0, b);
            else
                base = linear_index(d, a, b, 0);
            for (int i = 0; i < n; ++i) line[i] = data[base + i * stride];
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int t = -r; t <= r; ++t) {
                    int j = i + t;
                    j = j < 0 ? 0 : (j > n - 1 ? n - 1 : j);
                    acc += kernel[t + r] * line[j];
                }
                data[base + i * stride] = acc;
            }
        }
}

}  // namespace detail

inline Volume gaussian_blur(const Volume& v, int size, double sigma) {
    const auto kernel = gaussian_kernel(size, sigma);
    Volume out = v;
    for (int axis = 0; axis < 3; ++axis) detail::blur_axis(out.data, out.dims, axis, kernel);
    update_range(out);
    return out;
}

// Blurring every channel with a normalized kernel and replicate edges keeps
// the per-voxel class sums at 1.
inline SoftLabelVolume gaussian_blur(const SoftLabelVolume& s, int size, double sigma) {
    const auto kernel = gaussian_kernel(size, sigma);
    SoftLabelVolume out = s;
    const auto n = voxel_count(s.dims);
    for (int c = 0; c < s.num_classes; ++c) {
        std::vector<double> ch(out.channel(c), out.channel(c) + n);
        for (int axis = 0; axis < 3; ++axis) detail::blur_axis(ch, s.dims, axis, kernel);
        std::copy(ch.begin(), ch.end(), out.data.begin() + c * n);
    }
    return out;
}

// Per-axis intensity derivative in voxel units: central differences in the
// interior, one-sided at the faces, zero along singleton axes.
inline std::array<Volume, 3> spatial_gradient(const Volume& v) {
    check_dims_positive(v.dims, "spatial_gradient");
    std::array<Volume, 3> g;
    for (auto& c : g) {
        c.dims = v.dims;
        c.spacing = v.spacing;
        c.data.assign(v.data.size(), 0.0);
    }
    const Dim3& d = v.dims;
    std::int64_t i = 0;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x, ++i) {
                const int p[3] = {x, y, z};
                for (int axis = 0; axis < 3; ++axis) {
                    if (d[axis] < 2) continue;
                    int lo = p[axis] - 1, hi = p[axis] + 1;
                    double scale = 0.5;
                    if (lo < 0) {
                        lo = p[axis];
                        scale = 1.0;
                    }
                    if (hi > d[axis] - 1) {
                        hi = p[axis];
                        scale = 1.0;
                    }
                    int ap[3] = {x, y, z}, bp[3] = {x, y, z};
                    ap[axis] = hi;
                    bp[axis] = lo;
                    g[axis].data[i] =
                        (v.at(ap[0], ap[1], ap[2]) - v.at(bp[0], bp[1], bp[2])) * scale;
                }
            }
    for (auto& c : g) update_range(c);
    return g;
}

}  // namespace hybridreg
