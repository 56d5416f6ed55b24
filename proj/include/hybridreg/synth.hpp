#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "metrics.hpp"
#include "resample.hpp"
#include "types.hpp"

namespace hybridreg {

struct Blob {
    std::array<double, 3> center{0.0, 0.0, 0.0};  // voxel coordinates
    std::array<double, 3> radii{1.0, 1.0, 1.0};   // voxels
    double contrast = 0.25;                       // added to the base intensity
};

struct PhantomSpec {
    Dim3 dims{48, 48, 48};
    Spacing3 spacing{1.0, 1.0, 1.0};
    int num_blobs = 5;
    std::uint64_t seed = 1;
    double background = 0.15;
    double base_intensity = 0.5;
    int smooth_size = 5;
    double smooth_sigma = 1.0;
    std::vector<Blob> blobs;  // explicit geometry; drawn from the seed when empty
};

inline bool inside_blob(const Blob& b, int x, int y, int z) {
    const double p[3] = {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double t = (p[c] - b.center[c]) / b.radii[c];
        s += t * t;
    }
    return s <= 1.0;
}

namespace detail {

inline std::vector<Blob> draw_blobs(const PhantomSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> center_u(0.25, 0.75);
    std::uniform_real_distribution<double> radius_u(0.10, 0.16);
    std::uniform_real_distribution<double> contrast_u(0.15, 0.35);
    std::uniform_real_distribution<double> sign_u(0.0, 1.0);
    const double min_dim = static_cast<double>(std::min({spec.dims[0], spec.dims[1], spec.dims[2]}));
    std::vector<Blob> blobs(static_cast<std::size_t>(spec.num_blobs));
    for (auto& b : blobs) {
        for (int c = 0; c < 3; ++c) b.center[c] = center_u(rng) * (spec.dims[c] - 1);
        for (int c = 0; c < 3; ++c) b.radii[c] = radius_u(rng) * min_dim;
        const double mag = contrast_u(rng);
        b.contrast = sign_u(rng) < 0.5 ? -mag : mag;
    }
    return blobs;
}

}  // namespace detail

// Ellipsoid phantom: blob k paints label k+1 and base_intensity + contrast,
// later blobs win overlaps. The intensity image is smoothed, the labels stay
// crisp.
inline std::pair<Volume, LabelMap> make_phantom(const PhantomSpec& spec) {
    check_dims_positive(spec.dims, "make_phantom");
    check_spacing_positive(spec.spacing, "make_phantom");
    if (spec.num_blobs < 0) throw contract_error("make_phantom: num_blobs must be >= 0");
    if (!(spec.background >= 0.0 && spec.background <= 1.0) ||
        !(spec.base_intensity >= 0.0 && spec.base_intensity <= 1.0))
        throw contract_error("make_phantom: intensities must lie in [0,1]");
    const std::vector<Blob> blobs = spec.blobs.empty() ? detail::draw_blobs(spec) : spec.blobs;
    for (const auto& b : blobs)
        for (double r : b.radii)
            if (!(r > 0.0)) throw contract_error("make_phantom: blob radii must be positive");

    Volume vol = new_volume(spec.dims, spec.spacing);
    LabelMap labels = new_label_map(spec.dims, spec.spacing);
    std::fill(vol.data.begin(), vol.data.end(), spec.background);
    std::int64_t i = 0;
    for (int z = 0; z < spec.dims[2]; ++z)
        for (int y = 0; y < spec.dims[1]; ++y)
            for (int x = 0; x < spec.dims[0]; ++x, ++i)
                for (std::size_t k = 0; k < blobs.size(); ++k)
                    if (inside_blob(blobs[k], x, y, z)) {
                        vol.data[i] = spec.base_intensity + blobs[k].contrast;
                        labels.data[i] = static_cast<int>(k) + 1;
                    }
    for (double v : vol.data)
        if (!(v >= 0.0 && v <= 1.0))
            throw contract_error("make_phantom: blob contrast pushes intensity outside [0,1]");
    vol = gaussian_blur(vol, spec.smooth_size, spec.smooth_sigma);
    update_range(vol);
    return {std::move(vol), std::move(labels)};
}

struct FieldSpec {
    Dim3 dims{48, 48, 48};
    Spacing3 spacing{1.0, 1.0, 1.0};
    double max_magnitude = 3.0;  // voxels
    double smoothness_sigma = 6.0;
    std::uint64_t seed = 7;
    double min_jacobian = 0.05;
    int max_attempts = 10;
};

// Smooth random displacement field: white noise, Gaussian smoothing, then a
// rescale so the largest displacement vector has length max_magnitude. Draws
// are rejected until every Jacobian determinant stays above min_jacobian.
// The noise lattice is padded by the kernel half-width before smoothing and
// cropped afterwards, so the variance stays stationary; smoothing in place
// would concentrate it at the replicated borders and the rescale would then
// flatten the interior.
inline DisplacementField make_smooth_field(const FieldSpec& spec) {
    check_dims_positive(spec.dims, "make_smooth_field");
    check_spacing_positive(spec.spacing, "make_smooth_field");
    if (!(spec.max_magnitude >= 0.0)) throw contract_error("make_smooth_field: bad max_magnitude");
    if (!(spec.smoothness_sigma > 0.0))
        throw contract_error("make_smooth_field: smoothness_sigma must be positive");
    if (spec.max_attempts < 1) throw contract_error("make_smooth_field: max_attempts must be >= 1");
    const int ksize = 2 * static_cast<int>(std::ceil(3.0 * spec.smoothness_sigma)) + 1;
    const int pad = (ksize - 1) / 2;
    const Dim3 pdims = {spec.dims[0] + 2 * pad, spec.dims[1] + 2 * pad, spec.dims[2] + 2 * pad};
    const auto n = static_cast<std::size_t>(voxel_count(spec.dims));
    const auto pn = static_cast<std::size_t>(voxel_count(pdims));

    for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
        std::mt19937_64 rng(spec.seed + static_cast<std::uint64_t>(attempt) * 0x9E3779B97F4A7C15ULL);
        std::normal_distribution<double> noise(0.0, 1.0);
        DisplacementField f = zero_field(spec.dims, spec.spacing, GridLevel::Full);
        Volume ch;
        ch.dims = pdims;
        ch.spacing = spec.spacing;
        for (int c = 0; c < 3; ++c) {
            ch.data.resize(pn);
            for (auto& v : ch.data) v = noise(rng);
            const Volume smoothed = gaussian_blur(ch, ksize, spec.smoothness_sigma);
            std::int64_t i = 0;
            for (int z = 0; z < spec.dims[2]; ++z)
                for (int y = 0; y < spec.dims[1]; ++y)
                    for (int x = 0; x < spec.dims[0]; ++x, ++i)
                        f.comp[c][static_cast<std::size_t>(i)] =
                            smoothed.at(x + pad, y + pad, z + pad);
        }
        double max_norm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double norm2 = f.comp[0][i] * f.comp[0][i] + f.comp[1][i] * f.comp[1][i] +
                                 f.comp[2][i] * f.comp[2][i];
            max_norm = std::max(max_norm, norm2);
        }
        max_norm = std::sqrt(max_norm);
        if (max_norm > 0.0) {
            const double scale = spec.max_magnitude / max_norm;
            for (auto& c : f.comp)
                for (double& v : c) v *= scale;
        }
        const auto det = jacobian_determinant(f);
        if (*std::min_element(det.begin(), det.end()) > spec.min_jacobian) return f;
    }
    throw numeric_error("make_smooth_field: no draw satisfied the Jacobian bound after " +
                        std::to_string(spec.max_attempts) + " attempts");
}

// Fixed-point inversion v <- -u(x + v(x)); exact enough for the smooth small
// fields produced above.
inline DisplacementField invert_field(const DisplacementField& u, int iterations = 20) {
    check_field(u, "invert_field");
    if (iterations < 1) throw contract_error("invert_field: iterations must be >= 1");
    DisplacementField v = zero_field(u.dims, u.spacing, u.level);
    const Dim3& d = u.dims;
    DisplacementField next = v;
    for (int it = 0; it < iterations; ++it) {
        std::int64_t i = 0;
        for (int z = 0; z < d[2]; ++z)
            for (int y = 0; y < d[1]; ++y)
                for (int x = 0; x < d[0]; ++x, ++i) {
                    const double px = x + v.comp[0][i];
                    const double py = y + v.comp[1][i];
                    const double pz = z + v.comp[2][i];
                    for (int c = 0; c < 3; ++c)
                        next.comp[c][i] = -sample_trilinear(u.comp[c].data(), d, px, py, pz);
                }
        std::swap(v.comp, next.comp);
    }
    return v;
}

struct SynthPair {
    Volume fixed;
    Volume moving;
    LabelMap fixed_labels;
    LabelMap moving_labels;
};

// The phantom is the fixed image; the moving image is the phantom pushed
// through the inverse field, so warping moving by gt_field recovers fixed.
// Noise lands on the moving image after warping.
inline SynthPair make_pair(const PhantomSpec& spec, const DisplacementField& gt_field,
                           double noise_sigma = 0.0) {
    if (!same_dims(gt_field.dims, spec.dims))
        throw contract_error("make_pair: field dims differ from phantom dims");
    if (!(noise_sigma >= 0.0)) throw contract_error("make_pair: noise_sigma must be >= 0");
    SynthPair out;
    auto [vol, labels] = make_phantom(spec);
    const DisplacementField inverse = invert_field(gt_field);
    out.moving = warp(vol, inverse);
    out.moving_labels = warp_labels(labels, inverse);
    out.fixed = std::move(vol);
    out.fixed_labels = std::move(labels);
    if (noise_sigma > 0.0) {
        std::mt19937_64 rng(spec.seed ^ 0x517CC1B727220A95ULL);
        std::normal_distribution<double> noise(0.0, noise_sigma);
        for (double& v : out.moving.data) v += noise(rng);
        update_range(out.moving);
    }
    return out;
}

}  // namespace hybridreg
