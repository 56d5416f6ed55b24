#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "loss.hpp"
#include "resample.hpp"
#include "types.hpp"

namespace hybridreg {

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct RegistrationConfig {
    double lambda = 0.8;
    double learning_rate = 0.05;  // voxels per step
    int pyramid_levels = 3;
    // Indexed by pyramid level, 0 = finest. A single entry applies everywhere.
    std::vector<int> steps_per_level{100, 120, 150};
    AdamParams adam;
    HistogramSpec histogram;
    bool enable_mi = true;
    bool enable_boundary = true;
    int label_blur_size = 7;
    double label_blur_sigma = 1.0;
    int pyramid_blur_size = 5;
    double pyramid_blur_sigma = 1.0;
    int early_stop_patience = 25;  // 0 disables early stopping
    double early_stop_min_delta = 1e-6;
    std::uint64_t seed = 0;
    int threads = 1;
};

inline void validate_config(const RegistrationConfig& c) {
    if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda))
        throw contract_error("config: lambda must be finite and >= 0");
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate))
        throw contract_error("config: learning_rate must be positive");
    if (c.pyramid_levels < 1) throw contract_error("config: pyramid_levels must be >= 1");
    if (c.steps_per_level.empty() ||
        (c.steps_per_level.size() != 1 &&
         c.steps_per_level.size() != static_cast<std::size_t>(c.pyramid_levels)))
        throw contract_error("config: steps_per_level needs one entry or one per level");
    for (int s : c.steps_per_level)
        if (s < 0) throw contract_error("config: steps_per_level entries must be >= 0");
    if (!(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0) || !(c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0))
        throw contract_error("config: adam betas must lie in [0,1)");
    if (!(c.adam.epsilon > 0.0)) throw contract_error("config: adam epsilon must be positive");
    check_histogram_spec(c.histogram);
    if (c.label_blur_size < 1 || c.label_blur_size % 2 == 0)
        throw contract_error("config: label_blur_size must be odd and >= 1");
    if (!(c.label_blur_sigma > 0.0)) throw contract_error("config: label_blur_sigma must be positive");
    if (c.pyramid_blur_size < 1 || c.pyramid_blur_size % 2 == 0)
        throw contract_error("config: pyramid_blur_size must be odd and >= 1");
    if (!(c.pyramid_blur_sigma > 0.0))
        throw contract_error("config: pyramid_blur_sigma must be positive");
    if (c.early_stop_patience < 0) throw contract_error("config: early_stop_patience must be >= 0");
    if (!(c.early_stop_min_delta >= 0.0))
        throw contract_error("config: early_stop_min_delta must be >= 0");
    if (c.threads < 1) throw contract_error("config: threads must be >= 1");
}

inline int steps_for_level(const RegistrationConfig& c, int level) {
    return c.steps_per_level.size() == 1 ? c.steps_per_level[0]
                                         : c.steps_per_level[static_cast<std::size_t>(level)];
}

// ---------------------------------------------------------------------------
// Adam with bias correction. State matches one displacement field.

struct AdamState {
    std::array<std::vector<double>, 3> m;
    std::array<std::vector<double>, 3> v;
    std::int64_t step = 0;
};

inline AdamState make_adam_state(std::size_t n) {
    AdamState s;
    for (auto& a : s.m) a.assign(n, 0.0);
    for (auto& a : s.v) a.assign(n, 0.0);
    return s;
}

inline void adam_step(DisplacementField& field, AdamState& state,
                      const std::array<std::vector<double>, 3>& grad, double learning_rate,
                      const AdamParams& p) {
    const std::size_t n = field.comp[0].size();
    for (int c = 0; c < 3; ++c)
        if (grad[c].size() != n || state.m[c].size() != n)
            throw contract_error("adam_step: size mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(p.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(p.beta2, static_cast<double>(state.step));
    for (int c = 0; c < 3; ++c) {
        const std::vector<double>& g = grad[c];
        std::vector<double>& m = state.m[c];
        std::vector<double>& v = state.v[c];
        std::vector<double>& u = field.comp[c];
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(g[i])) throw numeric_error("adam_step: non-finite gradient");
            m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
            v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            u[i] -= learning_rate * mhat / (std::sqrt(vhat) + p.epsilon);
        }
    }
}

// True once the running best total has gone `patience` consecutive entries
// without improving by more than min_delta.
inline bool early_stop(const std::vector<double>& totals, int patience, double min_delta) {
    if (patience <= 0) return false;
    double best = std::numeric_limits<double>::infinity();
    int stale = 0;
    for (double t : totals) {
        if (t < best - min_delta) {
            best = t;
            stale = 0;
        } else {
            ++stale;
        }
        if (stale >= patience) return true;
    }
    return false;
}

// ---------------------------------------------------------------------------
// Coarse-to-fine instance optimization.

struct HistoryEntry {
    int level = 0;  // pyramid level, 0 = finest
    int step = 0;   // 0 = level seed, k = after the k-th update
    LossReport report;
};

struct RegistrationResult {
    DisplacementField half_field;  // optimization grid of the finest level
    DisplacementField full_field;  // upsampled to the image grid
    std::vector<HistoryEntry> history;
};

namespace detail {

struct PyramidLevel {
    Volume moving;
    Volume fixed;
    std::optional<SoftLabelVolume> moving_soft;
    std::optional<SoftLabelVolume> fixed_soft;
};

inline double mean_abs_displacement(const DisplacementField& f) {
    double s = 0.0;
    for (const auto& c : f.comp)
        for (double x : c) s += std::abs(x);
    return s / (3.0 * static_cast<double>(f.comp[0].size()));
}

}  // namespace detail

// Aligns moving onto fixed. Either pass both label maps or neither; when
// present they feed the boundary term. The returned half_field is the
// optimized field, full_field its upsampling onto the image grid.
inline RegistrationResult register_pair(const Volume& moving, const Volume& fixed,
                                        const LabelMap* moving_labels,
                                        const LabelMap* fixed_labels,
                                        const RegistrationConfig& cfg) {
    validate_config(cfg);
    if (!same_dims(moving.dims, fixed.dims))
        throw contract_error("register_pair: moving and fixed dims differ");
    if (!same_spacing(moving.spacing, fixed.spacing))
        throw contract_error("register_pair: moving and fixed spacing differ");
    if ((moving_labels == nullptr) != (fixed_labels == nullptr))
        throw contract_error("register_pair: label maps must be given for both images or neither");
    const bool with_labels = cfg.enable_boundary && moving_labels != nullptr;
    if (moving_labels != nullptr &&
        (!same_dims(moving_labels->dims, moving.dims) ||
         !same_dims(fixed_labels->dims, fixed.dims)))
        throw contract_error("register_pair: label dims differ from image dims");

    // Coarsest-level field grid must still support the regularizer stencil.
    {
        Dim3 d = moving.dims;
        for (int l = 0; l < cfg.pyramid_levels; ++l) d = half_dims(d);
        if (d[0] < 2 || d[1] < 2 || d[2] < 2)
            throw contract_error("register_pair: too many pyramid levels for this image size");
    }

    std::vector<detail::PyramidLevel> pyramid(static_cast<std::size_t>(cfg.pyramid_levels));
    pyramid[0].moving = moving;
    pyramid[0].fixed = fixed;
    if (with_labels) {
        const int nc = std::max(max_label(*moving_labels), max_label(*fixed_labels)) + 1;
        pyramid[0].moving_soft = one_hot(*moving_labels, nc);
        pyramid[0].fixed_soft = one_hot(*fixed_labels, nc);
    }
    for (int l = 1; l < cfg.pyramid_levels; ++l) {
        auto smooth_down = [&](const Volume& v) {
            return downsample2(gaussian_blur(v, cfg.pyramid_blur_size, cfg.pyramid_blur_sigma));
        };
        pyramid[l].moving = smooth_down(pyramid[l - 1].moving);
        pyramid[l].fixed = smooth_down(pyramid[l - 1].fixed);
        if (with_labels) {
            pyramid[l].moving_soft = downsample2(*pyramid[l - 1].moving_soft);
            pyramid[l].fixed_soft = downsample2(*pyramid[l - 1].fixed_soft);
        }
    }

    LossConfig lcfg;
    lcfg.lambda = cfg.lambda;
    lcfg.histogram = cfg.histogram;
    lcfg.enable_mi = cfg.enable_mi;
    lcfg.enable_boundary = with_labels;
    lcfg.label_blur_size = cfg.label_blur_size;
    lcfg.label_blur_sigma = cfg.label_blur_sigma;
    lcfg.threads = cfg.threads;

    RegistrationResult result;
    DisplacementField field;
    for (int l = cfg.pyramid_levels - 1; l >= 0; --l) {
        const detail::PyramidLevel& lv = pyramid[static_cast<std::size_t>(l)];
        const Dim3 hdims = half_dims(lv.moving.dims);
        const Spacing3 hspacing = {lv.moving.spacing[0] * 2, lv.moving.spacing[1] * 2,
                                   lv.moving.spacing[2] * 2};
        if (l == cfg.pyramid_levels - 1)
            field = zero_field(hdims, hspacing, GridLevel::Half);
        else
            field = upsample_field2(field, hdims, hspacing, GridLevel::Half);

        const int steps = steps_for_level(cfg, l);
        if (steps == 0) continue;

        const HalfResInputs inputs = make_half_inputs(
            lv.moving, lv.fixed, lv.moving_soft ? &*lv.moving_soft : nullptr,
            lv.fixed_soft ? &*lv.fixed_soft : nullptr, lcfg);

        LossValueGrad cur = half_loss(inputs, field, lcfg);
        result.history.push_back({l, 0, cur.report});
        DisplacementField best = field;
        double best_total = cur.report.total;

        // The unmoved field is always a candidate, so refinement can only
        // keep or improve the objective.
        if (l < cfg.pyramid_levels - 1) {
            const DisplacementField zero = zero_field(hdims, hspacing, GridLevel::Half);
            const LossValueGrad at_zero = half_loss(inputs, zero, lcfg);
            if (at_zero.report.total < best_total) {
                best = zero;
                best_total = at_zero.report.total;
            }
        }

        AdamState state = make_adam_state(field.comp[0].size());
        std::vector<double> totals{cur.report.total};
        for (int k = 1; k <= steps; ++k) {
            adam_step(field, state, cur.grad, cfg.learning_rate, cfg.adam);
            cur = half_loss(inputs, field, lcfg);
            result.history.push_back({l, k, cur.report});
            totals.push_back(cur.report.total);
            if (cur.report.total < best_total) {
                best = field;
                best_total = cur.report.total;
            }
            if (early_stop(totals, cfg.early_stop_patience, cfg.early_stop_min_delta)) break;
        }
        field = best;
    }

    result.half_field = field;
    result.full_field =
        upsample_field2(field, moving.dims, moving.spacing, GridLevel::Full);
    return result;
}

}  // namespace hybridreg
