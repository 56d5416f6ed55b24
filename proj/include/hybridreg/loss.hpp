#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "parallel.hpp"
#include "resample.hpp"
#include "types.hpp"

namespace hybridreg {

struct HistogramSpec {
    int bins = 32;
    double parzen_sigma = 1.0;  // in bin widths
};

inline void check_histogram_spec(const HistogramSpec& h) {
    if (h.bins < 2) throw contract_error("histogram: bins must be >= 2");
    if (!(h.parzen_sigma > 0.0)) throw contract_error("histogram: parzen_sigma must be positive");
}

struct LossReport {
    double intensity = 0.0;    // mean squared intensity difference
    double statistic = 0.0;    // negated mutual information
    double boundary = 0.0;     // soft boundary agreement
    double regularizer = 0.0;  // unweighted smoothness penalty
    double total = 0.0;        // intensity + statistic + boundary + lambda * regularizer
};

// ---------------------------------------------------------------------------
// Mean squared intensity difference.

struct SsdLoss {
    double value = 0.0;
    std::vector<double> grad;  // d value / d warped[i]
};

inline SsdLoss ssd_loss(const std::vector<double>& warped, const std::vector<double>& fixed,
                        int threads = 1) {
    if (warped.size() != fixed.size() || warped.empty())
        throw contract_error("ssd_loss: size mismatch or empty input");
    const auto n = static_cast<std::int64_t>(warped.size());
    SsdLoss out;
    out.grad.resize(warped.size());
    const double inv_n = 1.0 / static_cast<double>(n);
    out.value = parallel_sum(n, threads, [&](std::int64_t b, std::int64_t e) {
        double s = 0.0;
        for (std::int64_t i = b; i < e; ++i) {
            const double d = warped[i] - fixed[i];
            out.grad[i] = 2.0 * d * inv_n;
            s += d * d;
        }
        return s;
    }) * inv_n;
    return out;
}

// ---------------------------------------------------------------------------
// Parzen-window joint histogram and mutual information.

struct JointHistogram {
    int bins = 0;
    std::vector<double> joint;       // joint[k * bins + l]; sums to 1
    std::vector<double> marginal_a;  // row sums
    std::vector<double> marginal_b;  // column sums
};

namespace detail {

// Normalized Gaussian bin weights for one intensity in [0,1]. Full support
// over all bins keeps the loss smooth in the intensity, which the analytic
// gradient relies on.
inline void parzen_weights(double value, int bins, double sigma, double* w) {
    const double t = value * (bins - 1);
    const double inv2s2 = 0.5 / (sigma * sigma);
    double sum = 0.0;
    for (int k = 0; k < bins; ++k) {
        const double d = k - t;
        w[k] = std::exp(-d * d * inv2s2);
        sum += w[k];
    }
    const double inv = 1.0 / sum;
    for (int k = 0; k < bins; ++k) w[k] *= inv;
}

// Also fills dw[k] = d w[k] / d value.
inline void parzen_weights_grad(double value, int bins, double sigma, double* w, double* dw) {
    parzen_weights(value, bins, sigma, w);
    const double t = value * (bins - 1);
    const double inv_s2 = 1.0 / (sigma * sigma);
    double bar = 0.0;
    for (int k = 0; k < bins; ++k) bar += w[k] * (k - t) * inv_s2;
    for (int k = 0; k < bins; ++k) dw[k] = w[k] * ((k - t) * inv_s2 - bar) * (bins - 1);
}

inline void check_unit_interval(const std::vector<double>& v, const char* what) {
    for (double x : v)
        if (!(x >= 0.0 && x <= 1.0))
            throw contract_error(std::string(what) + ": intensities must lie in [0,1]");
}

}  // namespace detail

inline JointHistogram parzen_histograms(const std::vector<double>& a, const std::vector<double>& b,
                                        const HistogramSpec& spec, int threads = 1) {
    check_histogram_spec(spec);
    if (a.size() != b.size() || a.empty())
        throw contract_error("parzen_histograms: size mismatch or empty input");
    detail::check_unit_interval(a, "parzen_histograms");
    detail::check_unit_interval(b, "parzen_histograms");

    const int bins = spec.bins;
    const auto n = static_cast<std::int64_t>(a.size());
    const auto nchunks = static_cast<std::size_t>(chunk_count(n));
    std::vector<std::vector<double>> partial(nchunks);
    const double inv_n = 1.0 / static_cast<double>(n);
    parallel_chunks(n, threads, [&](std::int64_t c, std::int64_t begin, std::int64_t end) {
        auto& h = partial[static_cast<std::size_t>(c)];
        h.assign(static_cast<std::size_t>(bins) * bins, 0.0);
        std::vector<double> wa(bins), wb(bins);
        for (std::int64_t i = begin; i < end; ++i) {
            detail::parzen_weights(a[i], bins, spec.parzen_sigma, wa.data());
            detail::parzen_weights(b[i], bins, spec.parzen_sigma, wb.data());
            for (int k = 0; k < bins; ++k) {
                const double wk = wa[k] * inv_n;
                double* row = h.data() + static_cast<std::size_t>(k) * bins;
                for (int l = 0; l < bins; ++l) row[l] += wk * wb[l];
            }
        }
    });

    JointHistogram out;
    out.bins = bins;
    out.joint.assign(static_cast<std::size_t>(bins) * bins, 0.0);
    for (const auto& h : partial)
        for (std::size_t j = 0; j < out.joint.size(); ++j) out.joint[j] += h[j];
    out.marginal_a.assign(bins, 0.0);
    out.marginal_b.assign(bins, 0.0);
    for (int k = 0; k < bins; ++k)
        for (int l = 0; l < bins; ++l) {
            const double p = out.joint[static_cast<std::size_t>(k) * bins + l];
            out.marginal_a[k] += p;
            out.marginal_b[l] += p;
        }
    return out;
}

inline double safe_log(double p) { return std::log(p < 1e-300 ? 1e-300 : p); }

// -sum p log p with 0 log 0 := 0.
inline double entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double x : p)
        if (x > 0.0) h -= x * std::log(x);
    return h;
}

inline double mi_value(const JointHistogram& h) {
    return -(entropy(h.marginal_a) + entropy(h.marginal_b) - entropy(h.joint));
}

// Negated mutual information of two intensity vectors in [0,1]; lower is
// better (more shared information).
inline double mi_loss(const std::vector<double>& a, const std::vector<double>& b,
                      const HistogramSpec& spec, int threads = 1) {
    return mi_value(parzen_histograms(a, b, spec, threads));
}

struct MiLoss {
    double value = 0.0;
    std::vector<double> grad;  // d value / d a[i]
};

inline MiLoss mi_loss_grad(const std::vector<double>& a, const std::vector<double>& b,
                           const HistogramSpec& spec, int threads = 1) {
    const JointHistogram h = parzen_histograms(a, b, spec, threads);
    MiLoss out;
    out.value = mi_value(h);

    const int bins = h.bins;
    std::vector<double> log_pa(bins);
    for (int k = 0; k < bins; ++k) log_pa[k] = safe_log(h.marginal_a[k]);
    std::vector<double> log_joint(h.joint.size());
    for (std::size_t j = 0; j < h.joint.size(); ++j) log_joint[j] = safe_log(h.joint[j]);

    // d(-MI)/da_i = (1/N) sum_k dw_k/da_i * (log pa_k - sum_l wb_l log p_kl)
    const auto n = static_cast<std::int64_t>(a.size());
    const double inv_n = 1.0 / static_cast<double>(n);
    out.grad.resize(a.size());
    parallel_chunks(n, threads, [&](std::int64_t, std::int64_t begin, std::int64_t end) {
        std::vector<double> wa(bins), dwa(bins), wb(bins);
        for (std::int64_t i = begin; i < end; ++i) {
            detail::parzen_weights_grad(a[i], bins, spec.parzen_sigma, wa.data(), dwa.data());
            detail::parzen_weights(b[i], bins, spec.parzen_sigma, wb.data());
            double g = 0.0;
            for (int k = 0; k < bins; ++k) {
                const double* row = log_joint.data() + static_cast<std::size_t>(k) * bins;
                double cond = 0.0;
                for (int l = 0; l < bins; ++l) cond += wb[l] * row[l];
                g += dwa[k] * (log_pa[k] - cond);
            }
            out.grad[i] = g * inv_n;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Soft boundary agreement: mean L1 difference of the blurred class maps plus
// a global soft-overlap term.

inline constexpr double kOverlapEpsilon = 1e-6;

struct BoundaryLoss {
    double value = 0.0;
    std::vector<double> grad;  // d value / d warped_soft.data[e], channel-major
};

inline BoundaryLoss boundary_loss(const SoftLabelVolume& warped, const SoftLabelVolume& fixed,
                                  int threads = 1) {
    if (!same_dims(warped.dims, fixed.dims) || warped.num_classes != fixed.num_classes)
        throw contract_error("boundary_loss: shape mismatch");
    if (warped.num_classes < 1 || warped.data.empty())
        throw contract_error("boundary_loss: empty input");
    const auto m = static_cast<std::int64_t>(warped.data.size());
    const double inv_m = 1.0 / static_cast<double>(m);

    double l1 = 0.0, inter = 0.0, mass = 0.0;
    {
        std::vector<std::array<double, 3>> partial(static_cast<std::size_t>(chunk_count(m)),
                                                   {0.0, 0.0, 0.0});
        parallel_chunks(m, threads, [&](std::int64_t c, std::int64_t b, std::int64_t e) {
            double p0 = 0.0, p1 = 0.0, p2 = 0.0;
            for (std::int64_t i = b; i < e; ++i) {
                const double s = warped.data[i], f = fixed.data[i];
                p0 += std::abs(s - f);
                p1 += s * f;
                p2 += s + f;
            }
            partial[static_cast<std::size_t>(c)] = {p0, p1, p2};
        });
        for (const auto& p : partial) {
            l1 += p[0];
            inter += p[1];
            mass += p[2];
        }
    }
    l1 *= inv_m;
    const double denom = mass + kOverlapEpsilon;
    const double overlap = 1.0 - 2.0 * inter / denom;

    BoundaryLoss out;
    out.value = l1 + overlap;
    out.grad.resize(warped.data.size());
    const double inv_d2 = 1.0 / (denom * denom);
    parallel_for_each(m, threads, [&](std::int64_t i) {
        const double s = warped.data[i], f = fixed.data[i];
        const double sgn = s > f ? 1.0 : (s < f ? -1.0 : 0.0);
        out.grad[i] = sgn * inv_m + (2.0 * inter - 2.0 * f * denom) * inv_d2;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Diffusion regularizer: mean squared forward difference of the field,
// averaged over components per axis and then over the three axes.

struct RegularizerLoss {
    double value = 0.0;
    std::array<std::vector<double>, 3> grad;
};

inline RegularizerLoss grad_regularizer(const DisplacementField& f) {
    check_field(f, "grad_regularizer");
    const Dim3& d = f.dims;
    if (d[0] < 2 || d[1] < 2 || d[2] < 2)
        throw contract_error("grad_regularizer: dims must be >= 2 along every axis");
    const auto n = static_cast<std::size_t>(voxel_count(d));

    RegularizerLoss out;
    for (auto& g : out.grad) g.assign(n, 0.0);

    const std::int64_t stride[3] = {1, d[0], static_cast<std::int64_t>(d[0]) * d[1]};
    double value = 0.0;
    for (int axis = 0; axis < 3; ++axis) {
        const std::int64_t ndiff = (d[axis] - 1) * (voxel_count(d) / d[axis]);
        const double norm = 1.0 / (9.0 * static_cast<double>(ndiff));
        double sum = 0.0;
        for (int c = 0; c < 3; ++c) {
            const std::vector<double>& u = f.comp[c];
            std::vector<double>& g = out.grad[c];
            std::int64_t i = 0;
            for (int z = 0; z < d[2]; ++z)
                for (int y = 0; y < d[1]; ++y)
                    for (int x = 0; x < d[0]; ++x, ++i) {
                        const int p[3] = {x, y, z};
                        if (p[axis] + 1 >= d[axis]) continue;
                        const double diff = u[i + stride[axis]] - u[i];
                        sum += diff * diff;
                        g[i] -= 2.0 * diff * norm;
                        g[i + stride[axis]] += 2.0 * diff * norm;
                    }
        }
        value += sum * norm;
    }
    out.value = value;
    return out;
}

// ---------------------------------------------------------------------------
// Combined objective on the half-resolution grid.

struct LossConfig {
    double lambda = 0.8;
    HistogramSpec histogram;
    bool enable_mi = true;
    bool enable_boundary = true;
    int label_blur_size = 7;
    double label_blur_sigma = 1.0;
    int threads = 1;
};

// Everything the per-iteration evaluation needs, one grid level down from the
// images it was built from.
struct HalfResInputs {
    Volume moving;
    Volume fixed;
    std::optional<SoftLabelVolume> moving_soft;
    std::optional<SoftLabelVolume> fixed_soft;
};

inline HalfResInputs make_half_inputs(const Volume& moving, const Volume& fixed,
                                      const SoftLabelVolume* moving_soft,
                                      const SoftLabelVolume* fixed_soft, const LossConfig& cfg) {
    if (!same_dims(moving.dims, fixed.dims))
        throw contract_error("total_loss: moving and fixed dims differ");
    if ((moving_soft == nullptr) != (fixed_soft == nullptr))
        throw contract_error("total_loss: label maps must be given for both images or neither");
    HalfResInputs out;
    out.moving = downsample2(normalize_intensities(moving));
    out.fixed = downsample2(normalize_intensities(fixed));
    if (cfg.enable_boundary && moving_soft != nullptr) {
        if (!same_dims(moving_soft->dims, moving.dims) || !same_dims(fixed_soft->dims, fixed.dims))
            throw contract_error("total_loss: label map dims differ from image dims");
        if (moving_soft->num_classes != fixed_soft->num_classes)
            throw contract_error("total_loss: label maps disagree on class count");
        out.moving_soft =
            downsample2(gaussian_blur(*moving_soft, cfg.label_blur_size, cfg.label_blur_sigma));
        out.fixed_soft =
            downsample2(gaussian_blur(*fixed_soft, cfg.label_blur_size, cfg.label_blur_sigma));
    }
    return out;
}

struct LossValueGrad {
    LossReport report;
    std::array<std::vector<double>, 3> grad;  // d total / d phi.comp[c][i]
};

inline LossValueGrad half_loss(const HalfResInputs& in, const DisplacementField& phi,
                               const LossConfig& cfg) {
    check_histogram_spec(cfg.histogram);
    if (!(cfg.lambda >= 0.0)) throw contract_error("total_loss: lambda must be >= 0");
    if (phi.level != GridLevel::Half)
        throw contract_error("total_loss: field must live on the half grid");
    if (!same_dims(phi.dims, in.moving.dims))
        throw contract_error("total_loss: field dims must be the half image dims");
    check_field(phi, "total_loss");

    const Dim3& d = phi.dims;
    const auto n = voxel_count(d);
    const int threads = cfg.threads;
    const bool with_boundary = cfg.enable_boundary && in.moving_soft.has_value();
    const int nc = with_boundary ? in.moving_soft->num_classes : 0;

    // Warp intensities and class maps through the field, keeping the exact
    // derivative of each interpolated value with respect to the coordinate.
    std::vector<double> warped(static_cast<std::size_t>(n));
    std::array<std::vector<double>, 3> dmov;
    for (auto& g : dmov) g.resize(static_cast<std::size_t>(n));
    SoftLabelVolume warped_soft;
    std::array<std::vector<double>, 3> dsoft;  // channel-major, like warped_soft.data
    if (with_boundary) {
        warped_soft.dims = d;
        warped_soft.spacing = in.moving_soft->spacing;
        warped_soft.num_classes = nc;
        warped_soft.data.resize(static_cast<std::size_t>(nc) * n);
        for (auto& g : dsoft) g.resize(warped_soft.data.size());
    }
    const std::int64_t nx = d[0], nxy = static_cast<std::int64_t>(d[0]) * d[1];
    parallel_for_each(n, threads, [&](std::int64_t i) {
        const int x = static_cast<int>(i % nx);
        const int y = static_cast<int>((i / nx) % d[1]);
        const int z = static_cast<int>(i / nxy);
        const double px = x + phi.comp[0][i], py = y + phi.comp[1][i], pz = z + phi.comp[2][i];
        const TrilinearSample s = sample_trilinear_grad(in.moving.data.data(), d, px, py, pz);
        warped[i] = s.value;
        for (int c = 0; c < 3; ++c) dmov[c][i] = s.deriv[c];
        if (with_boundary) {
            double mass = 0.0;
            for (int ch = 0; ch < nc; ++ch) {
                const TrilinearSample t =
                    sample_trilinear_grad(in.moving_soft->channel(ch), d, px, py, pz);
                warped_soft.data[ch * n + i] = t.value;
                for (int c = 0; c < 3; ++c) dsoft[c][ch * n + i] = t.deriv[c];
                mass += t.value;
            }
            // Class maps partition unity, so the renormalization only strips
            // rounding noise and carries no gradient of its own.
            if (mass > 1e-6) {
                const double inv = 1.0 / mass;
                for (int ch = 0; ch < nc; ++ch) warped_soft.data[ch * n + i] *= inv;
            }
        }
    });

    LossValueGrad out;
    const SsdLoss ssd = ssd_loss(warped, in.fixed.data, threads);
    out.report.intensity = ssd.value;

    MiLoss mi;
    if (cfg.enable_mi) {
        mi = mi_loss_grad(warped, in.fixed.data, cfg.histogram, threads);
        out.report.statistic = mi.value;
    }

    BoundaryLoss bnd;
    if (with_boundary) {
        bnd = boundary_loss(warped_soft, *in.fixed_soft, threads);
        out.report.boundary = bnd.value;
    }

    const RegularizerLoss reg = grad_regularizer(phi);
    out.report.regularizer = reg.value;
    out.report.total = out.report.intensity + out.report.statistic + out.report.boundary +
                       cfg.lambda * reg.value;
    if (!std::isfinite(out.report.total))
        throw numeric_error("total_loss: objective is not finite");

    for (int c = 0; c < 3; ++c) out.grad[c].resize(static_cast<std::size_t>(n));
    parallel_for_each(n, threads, [&](std::int64_t i) {
        double di = ssd.grad[i];
        if (cfg.enable_mi) di += mi.grad[i];
        for (int c = 0; c < 3; ++c) {
            double g = di * dmov[c][i] + cfg.lambda * reg.grad[c][i];
            if (with_boundary)
                for (int ch = 0; ch < nc; ++ch) g += bnd.grad[ch * n + i] * dsoft[c][ch * n + i];
            out.grad[c][i] = g;
        }
    });
    return out;
}

// Full objective: normalizes and downsamples the images (and blurred class
// maps) to the half grid the field lives on, then evaluates every term.
inline LossValueGrad total_loss(const Volume& moving, const Volume& fixed,
                                const SoftLabelVolume* moving_soft,
                                const SoftLabelVolume* fixed_soft, const DisplacementField& phi,
                                const LossConfig& cfg) {
    const HalfResInputs in = make_half_inputs(moving, fixed, moving_soft, fixed_soft, cfg);
    return half_loss(in, phi, cfg);
}

}  // namespace hybridreg
