#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "loss.hpp"
#include "types.hpp"

namespace hybridreg {

enum class GradTerm { Intensity, Statistic, Boundary, Regularizer, Total };

inline std::optional<GradTerm> parse_grad_term(std::string_view s) {
    if (s == "intensity" || s == "ssd") return GradTerm::Intensity;
    if (s == "statistic" || s == "mi") return GradTerm::Statistic;
    if (s == "boundary") return GradTerm::Boundary;
    if (s == "regularizer" || s == "smoothness") return GradTerm::Regularizer;
    if (s == "total") return GradTerm::Total;
    return std::nullopt;
}

inline const char* grad_term_name(GradTerm t) {
    switch (t) {
        case GradTerm::Intensity: return "intensity";
        case GradTerm::Statistic: return "statistic";
        case GradTerm::Boundary: return "boundary";
        case GradTerm::Regularizer: return "regularizer";
        case GradTerm::Total: return "total";
    }
    return "?";
}

// The histogram-based terms tolerate a larger mismatch: their finite
// differences carry more truncation error through the bin weights.
inline double gradcheck_threshold(GradTerm t) {
    return (t == GradTerm::Statistic || t == GradTerm::Total) ? 1e-3 : 1e-4;
}

inline constexpr double kGradCheckStep = 1e-4;

struct GradCheckReport {
    GradTerm term = GradTerm::Intensity;
    int size = 0;
    std::uint64_t seed = 0;
    double max_rel_error = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

namespace detail {

// Entries are compared relative to their own magnitude, floored at a fraction
// of the largest entry so that near-zero components do not explode the ratio.
inline double max_rel_error(const std::vector<double>& ga, const std::vector<double>& gfd) {
    double gmax = 0.0;
    for (std::size_t i = 0; i < ga.size(); ++i)
        gmax = std::max({gmax, std::abs(ga[i]), std::abs(gfd[i])});
    const double floor = std::max(1e-3 * gmax, 1e-12);
    double worst = 0.0;
    for (std::size_t i = 0; i < ga.size(); ++i) {
        const double denom = std::max({std::abs(ga[i]), std::abs(gfd[i]), floor});
        worst = std::max(worst, std::abs(ga[i] - gfd[i]) / denom);
    }
    return worst;
}

template <class Eval>
inline std::vector<double> central_differences(std::vector<double>& x, Eval&& eval) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + kGradCheckStep;
        const double hi = eval();
        x[i] = saved - kGradCheckStep;
        const double lo = eval();
        x[i] = saved;
        g[i] = (hi - lo) / (2.0 * kGradCheckStep);
    }
    return g;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::vector<double> random_intensities(std::mt19937_64& rng, std::int64_t n, double lo,
                                              double hi) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = uniform(rng, lo, hi);
    return v;
}

// Soft maps with every entry separated from its counterpart, keeping the
// finite-difference stencil off the L1 kink.
inline void random_soft_pair(std::mt19937_64& rng, const Dim3& dims, int classes,
                             SoftLabelVolume& a, SoftLabelVolume& b) {
    const auto n = voxel_count(dims);
    a.dims = b.dims = dims;
    a.num_classes = b.num_classes = classes;
    a.data.resize(static_cast<std::size_t>(classes) * n);
    b.data.resize(a.data.size());
    std::vector<double> col(static_cast<std::size_t>(classes));
    auto draw_column = [&](SoftLabelVolume& s, std::int64_t i) {
        double sum = 0.0;
        for (auto& c : col) {
            c = uniform(rng, 0.05, 1.0);
            sum += c;
        }
        for (int c = 0; c < classes; ++c) s.data[c * n + i] = col[static_cast<std::size_t>(c)] / sum;
    };
    for (std::int64_t i = 0; i < n; ++i) {
        draw_column(a, i);
        for (int tries = 0; tries < 200; ++tries) {
            draw_column(b, i);
            bool separated = true;
            for (int c = 0; c < classes; ++c)
                if (std::abs(a.data[c * n + i] - b.data[c * n + i]) < 1e-3) separated = false;
            if (separated) break;
        }
    }
}

// Displacements that land each sampled coordinate well inside a lattice cell,
// so the +-h stencil never crosses a cell face or the border clamp.
inline DisplacementField interior_cell_field(std::mt19937_64& rng, const Dim3& dims) {
    DisplacementField f = zero_field(dims, {1.0, 1.0, 1.0}, GridLevel::Half);
    std::uniform_int_distribution<int> jump(-2, 1);
    std::int64_t i = 0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++i) {
                const int pos[3] = {x, y, z};
                for (int c = 0; c < 3; ++c) {
                    int cell = pos[c] + jump(rng);
                    cell = std::clamp(cell, 0, std::max(0, dims[c] - 2));
                    const double target = cell + 0.06 + 0.88 * uniform(rng, 0.0, 1.0);
                    f.comp[c][i] = target - pos[c];
                }
            }
    return f;
}

}  // namespace detail

inline GradCheckReport run_gradcheck(GradTerm term, int size, std::uint64_t seed) {
    if (size < 4) throw contract_error("gradcheck: size must be >= 4");
    std::mt19937_64 rng(seed);
    const Dim3 dims{size, size, size};
    const auto n = voxel_count(dims);

    std::vector<double> analytic, fd;
    switch (term) {
        case GradTerm::Intensity: {
            std::vector<double> a = detail::random_intensities(rng, n, 0.0, 1.0);
            const std::vector<double> b = detail::random_intensities(rng, n, 0.0, 1.0);
            analytic = ssd_loss(a, b).grad;
            fd = detail::central_differences(a, [&] { return ssd_loss(a, b).value; });
            break;
        }
        case GradTerm::Statistic: {
            std::vector<double> a = detail::random_intensities(rng, n, 0.02, 0.98);
            const std::vector<double> b = detail::random_intensities(rng, n, 0.02, 0.98);
            const HistogramSpec spec;
            analytic = mi_loss_grad(a, b, spec).grad;
            fd = detail::central_differences(a, [&] { return mi_loss(a, b, spec); });
            break;
        }
        case GradTerm::Boundary: {
            SoftLabelVolume a, b;
            detail::random_soft_pair(rng, dims, 3, a, b);
            analytic = boundary_loss(a, b).grad;
            fd = detail::central_differences(a.data, [&] { return boundary_loss(a, b).value; });
            break;
        }
        case GradTerm::Regularizer: {
            DisplacementField f = zero_field(dims, {1.0, 1.0, 1.0}, GridLevel::Half);
            for (auto& c : f.comp)
                for (auto& v : c) v = detail::uniform(rng, -1.5, 1.5);
            const RegularizerLoss reg = grad_regularizer(f);
            analytic.clear();
            fd.clear();
            for (int c = 0; c < 3; ++c) {
                analytic.insert(analytic.end(), reg.grad[c].begin(), reg.grad[c].end());
                auto g = detail::central_differences(
                    f.comp[c], [&] { return grad_regularizer(f).value; });
                fd.insert(fd.end(), g.begin(), g.end());
            }
            break;
        }
        case GradTerm::Total: {
            const Volume moving = new_volume(dims, {1.0, 1.0, 1.0},
                                             detail::random_intensities(rng, n, 0.05, 0.95));
            const Volume fixed = new_volume(dims, {1.0, 1.0, 1.0},
                                            detail::random_intensities(rng, n, 0.05, 0.95));
            LabelMap ml = new_label_map(dims, {1.0, 1.0, 1.0});
            LabelMap fl = ml;
            std::uniform_int_distribution<int> lab(0, 2);
            for (auto& v : ml.data) v = lab(rng);
            for (auto& v : fl.data) v = lab(rng);
            const SoftLabelVolume msoft = one_hot(ml, 3);
            const SoftLabelVolume fsoft = one_hot(fl, 3);
            LossConfig cfg;

            const HalfResInputs inputs = make_half_inputs(moving, fixed, &msoft, &fsoft, cfg);
            const Dim3 hd = inputs.moving.dims;
            DisplacementField phi;
            bool separated = false;
            for (int attempt = 0; attempt < 64 && !separated; ++attempt) {
                phi = detail::interior_cell_field(rng, hd);
                separated = true;
                const auto hn = voxel_count(hd);
                std::int64_t i = 0;
                for (int z = 0; z < hd[2] && separated; ++z)
                    for (int y = 0; y < hd[1] && separated; ++y)
                        for (int x = 0; x < hd[0] && separated; ++x, ++i) {
                            const double px = x + phi.comp[0][i], py = y + phi.comp[1][i],
                                         pz = z + phi.comp[2][i];
                            for (int c = 0; c < inputs.moving_soft->num_classes; ++c) {
                                const double s = sample_trilinear(inputs.moving_soft->channel(c),
                                                                  hd, px, py, pz);
                                if (std::abs(s - inputs.fixed_soft->data[c * hn + i]) < 5e-4)
                                    separated = false;
                            }
                        }
            }
            if (!separated)
                throw numeric_error("gradcheck: no kink-free total instance found for this seed");

            const LossValueGrad lv = half_loss(inputs, phi, cfg);
            analytic.clear();
            fd.clear();
            for (int c = 0; c < 3; ++c) {
                analytic.insert(analytic.end(), lv.grad[c].begin(), lv.grad[c].end());
                auto g = detail::central_differences(
                    phi.comp[c], [&] { return half_loss(inputs, phi, cfg).report.total; });
                fd.insert(fd.end(), g.begin(), g.end());
            }
            break;
        }
    }

    GradCheckReport rep;
    rep.term = term;
    rep.size = size;
    rep.seed = seed;
    rep.max_rel_error = detail::max_rel_error(analytic, fd);
    rep.threshold = gradcheck_threshold(term);
    rep.pass = rep.max_rel_error < rep.threshold;
    return rep;
}

}  // namespace hybridreg
