#include <catch2/catch_amalgamated.hpp>

#include <hybridreg/gradcheck.hpp>
#include <hybridreg/loss.hpp>
#include <hybridreg/resample.hpp>
#include <hybridreg/types.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

using namespace hybridreg;
using Catch::Approx;

namespace {

std::vector<double> random_unit(std::size_t n, unsigned seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

// Reference Parzen weights, restated from the definition.
std::vector<double> ref_weights(double value, int bins, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(bins));
    const double t = value * (bins - 1);
    double sum = 0.0;
    for (int k = 0; k < bins; ++k) {
        w[static_cast<std::size_t>(k)] = std::exp(-(k - t) * (k - t) / (2.0 * sigma * sigma));
        sum += w[static_cast<std::size_t>(k)];
    }
    for (double& x : w) x /= sum;
    return w;
}

double ref_entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double x : p)
        if (x > 0.0) h -= x * std::log(x);
    return h;
}

SoftLabelVolume random_soft(Dim3 dims, int classes, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.05, 1.0);
    SoftLabelVolume s;
    s.dims = dims;
    s.spacing = {1, 1, 1};
    s.num_classes = classes;
    const auto n = static_cast<std::size_t>(voxel_count(dims));
    s.data.resize(n * static_cast<std::size_t>(classes));
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int c = 0; c < classes; ++c) {
            double v = dist(rng);
            s.data[static_cast<std::size_t>(c) * n + i] = v;
            sum += v;
        }
        for (int c = 0; c < classes; ++c) s.data[static_cast<std::size_t>(c) * n + i] /= sum;
    }
    return s;
}

} // namespace

TEST_CASE("ssd_loss matches hand-computed sums") {
    SsdLoss s = ssd_loss({1.0, 2.0, 3.0}, {0.0, 2.0, 5.0});
    CHECK(s.value == Approx(5.0 / 3.0).margin(1e-15));
    CHECK(s.grad[0] == Approx(2.0 / 3.0).margin(1e-15));
    CHECK(s.grad[1] == 0.0);
    CHECK(s.grad[2] == Approx(-4.0 / 3.0).margin(1e-15));

    std::vector<double> a = random_unit(50, 3);
    CHECK(ssd_loss(a, a).value == 0.0);
    CHECK_THROWS_AS(ssd_loss({1.0}, {1.0, 2.0}), contract_error);
}

TEST_CASE("ssd_loss gradient agrees with finite differences") {
    std::vector<double> a = random_unit(40, 5);
    std::vector<double> b = random_unit(40, 6);
    SsdLoss s = ssd_loss(a, b);
    const double h = 1e-6;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double keep = a[i];
        a[i] = keep + h;
        double up = ssd_loss(a, b).value;
        a[i] = keep - h;
        double dn = ssd_loss(a, b).value;
        a[i] = keep;
        CHECK(s.grad[i] == Approx((up - dn) / (2 * h)).margin(1e-8));
    }
}

TEST_CASE("parzen joint histogram matches per-voxel accumulation") {
    HistogramSpec spec;
    spec.bins = 4;
    spec.parzen_sigma = 0.8;
    std::vector<double> a = {0.0, 0.3, 0.5, 0.9, 1.0};
    std::vector<double> b = {1.0, 0.2, 0.5, 0.1, 0.0};
    JointHistogram h = parzen_histograms(a, b, spec);
    REQUIRE(h.bins == 4);

    std::vector<double> joint(16, 0.0), ma(4, 0.0), mb(4, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto wa = ref_weights(a[i], 4, 0.8);
        auto wb = ref_weights(b[i], 4, 0.8);
        for (int k = 0; k < 4; ++k)
            for (int l = 0; l < 4; ++l)
                joint[static_cast<std::size_t>(k * 4 + l)] += wa[static_cast<std::size_t>(k)] *
                                                              wb[static_cast<std::size_t>(l)] / 5.0;
    }
    for (int k = 0; k < 4; ++k)
        for (int l = 0; l < 4; ++l) {
            ma[static_cast<std::size_t>(k)] += joint[static_cast<std::size_t>(k * 4 + l)];
            mb[static_cast<std::size_t>(l)] += joint[static_cast<std::size_t>(k * 4 + l)];
        }
    for (std::size_t j = 0; j < 16; ++j) CHECK(h.joint[j] == Approx(joint[j]).margin(1e-14));
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(h.marginal_a[k] == Approx(ma[k]).margin(1e-14));
        CHECK(h.marginal_b[k] == Approx(mb[k]).margin(1e-14));
    }
}

TEST_CASE("parzen joint histogram is a probability distribution") {
    HistogramSpec spec;
    std::vector<double> a = random_unit(500, 11);
    std::vector<double> b = random_unit(500, 12);
    JointHistogram h = parzen_histograms(a, b, spec);
    double total = std::accumulate(h.joint.begin(), h.joint.end(), 0.0);
    CHECK(total == Approx(1.0).margin(1e-10));
    double ma = std::accumulate(h.marginal_a.begin(), h.marginal_a.end(), 0.0);
    CHECK(ma == Approx(1.0).margin(1e-10));
    for (double p : h.joint) CHECK(p >= 0.0);
}

TEST_CASE("mutual information of constant inputs is zero") {
    HistogramSpec spec;
    std::vector<double> a(100, 0.4), b(100, 0.7);
    CHECK(mi_loss(a, b, spec) == Approx(0.0).margin(1e-12));
}

TEST_CASE("negated self mutual information lies between -H(a) and zero") {
    HistogramSpec spec;
    std::vector<double> a = random_unit(300, 21);
    double loss = mi_loss(a, a, spec);
    JointHistogram h = parzen_histograms(a, a, spec);
    double ha = ref_entropy(h.marginal_a);
    CHECK(loss < 0.0);
    CHECK(loss >= -ha - 1e-9);
}

TEST_CASE("mutual information is symmetric and rewards dependence") {
    HistogramSpec spec;
    std::vector<double> a = random_unit(400, 31);
    std::vector<double> b = random_unit(400, 32);
    CHECK(mi_loss(a, b, spec) == Approx(mi_loss(b, a, spec)).margin(1e-12));

    std::vector<double> shuffled = a;
    std::mt19937_64 rng(33);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(mi_loss(a, a, spec) < mi_loss(a, shuffled, spec));
}

TEST_CASE("mutual information requires unit-interval intensities") {
    HistogramSpec spec;
    std::vector<double> a = {0.5, 1.5};
    std::vector<double> b = {0.5, 0.5};
    CHECK_THROWS_AS(mi_loss(a, b, spec), contract_error);
    std::vector<double> c = {0.5, -0.1};
    CHECK_THROWS_AS(mi_loss(c, b, spec), contract_error);
}

TEST_CASE("mutual information gradient agrees with finite differences") {
    HistogramSpec spec;
    std::vector<double> a = random_unit(60, 41, 0.05, 0.95);
    std::vector<double> b = random_unit(60, 42, 0.05, 0.95);
    MiLoss g = mi_loss_grad(a, b, spec);
    CHECK(g.value == Approx(mi_loss(a, b, spec)).margin(1e-14));
    const double h = 1e-5;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double keep = a[i];
        a[i] = keep + h;
        double up = mi_loss(a, b, spec);
        a[i] = keep - h;
        double dn = mi_loss(a, b, spec);
        a[i] = keep;
        CHECK(g.grad[i] == Approx((up - dn) / (2 * h)).margin(2e-6));
    }
}

TEST_CASE("boundary_loss matches its reference formula") {
    SoftLabelVolume w = random_soft({4, 3, 3}, 3, 51);
    SoftLabelVolume f = random_soft({4, 3, 3}, 3, 52);
    BoundaryLoss out = boundary_loss(w, f);

    const double m = static_cast<double>(w.data.size());
    double l1 = 0.0, inter = 0.0, mass = 0.0;
    for (std::size_t e = 0; e < w.data.size(); ++e) {
        l1 += std::abs(w.data[e] - f.data[e]);
        inter += w.data[e] * f.data[e];
        mass += w.data[e] + f.data[e];
    }
    l1 /= m;
    const double denom = mass + kOverlapEpsilon;
    const double want = l1 + 1.0 - 2.0 * inter / denom;
    CHECK(out.value == Approx(want).margin(1e-12));

    for (std::size_t e : {std::size_t{0}, std::size_t{7}, std::size_t{50}}) {
        double sign = w.data[e] > f.data[e] ? 1.0 : -1.0;
        double want_g = sign / m + (2.0 * inter - 2.0 * f.data[e] * denom) / (denom * denom);
        CHECK(out.grad[e] == Approx(want_g).margin(1e-12));
    }
}

TEST_CASE("boundary_loss on identical crisp maps is negligible") {
    std::mt19937_64 rng(61);
    std::uniform_int_distribution<int> lab(0, 2);
    Dim3 dims{16, 16, 16};
    std::vector<int> labels(voxel_count(dims));
    for (int& l : labels) l = lab(rng);
    SoftLabelVolume s = one_hot(new_label_map(dims, {1, 1, 1}, labels), 3);
    BoundaryLoss out = boundary_loss(s, s);
    CHECK(out.value >= 0.0);
    CHECK(out.value <= 1e-9);
}

TEST_CASE("boundary_loss gradient agrees with finite differences") {
    // redraw entries that tie across inputs so the L1 kink is never straddled
    SoftLabelVolume w = random_soft({3, 3, 3}, 3, 71);
    SoftLabelVolume f = random_soft({3, 3, 3}, 3, 72);
    std::mt19937_64 rng(73);
    std::uniform_real_distribution<double> nudge(2e-3, 4e-3);
    for (std::size_t e = 0; e < w.data.size(); ++e)
        if (std::abs(w.data[e] - f.data[e]) < 1e-3)
            w.data[e] = f.data[e] + nudge(rng);
    BoundaryLoss out = boundary_loss(w, f);
    const double h = 1e-6;
    for (std::size_t e = 0; e < w.data.size(); e += 5) {
        double keep = w.data[e];
        w.data[e] = keep + h;
        double up = boundary_loss(w, f).value;
        w.data[e] = keep - h;
        double dn = boundary_loss(w, f).value;
        w.data[e] = keep;
        CHECK(out.grad[e] == Approx((up - dn) / (2 * h)).margin(1e-6));
    }
}

TEST_CASE("boundary_loss validates shapes") {
    SoftLabelVolume a = random_soft({3, 3, 3}, 2, 1);
    SoftLabelVolume b = random_soft({3, 3, 2}, 2, 2);
    CHECK_THROWS_AS(boundary_loss(a, b), contract_error);
    SoftLabelVolume c = random_soft({3, 3, 3}, 3, 3);
    CHECK_THROWS_AS(boundary_loss(a, c), contract_error);
}

TEST_CASE("regularizer vanishes on rigid shifts") {
    DisplacementField f = zero_field({4, 5, 3}, {1, 1, 1}, GridLevel::Half);
    CHECK(grad_regularizer(f).value == 0.0);
    for (auto& comp : f.comp)
        for (double& u : comp) u = 2.5;
    RegularizerLoss r = grad_regularizer(f);
    CHECK(r.value == 0.0);
    for (const auto& g : r.grad)
        for (double x : g) CHECK(x == 0.0);
}

TEST_CASE("regularizer of a linear ramp is slope squared over nine") {
    Dim3 dims{5, 4, 3};
    DisplacementField f = zero_field(dims, {1, 1, 1}, GridLevel::Half);
    for (int z = 0; z < 3; ++z)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 5; ++x)
                f.comp[0][linear_index(dims, x, y, z)] = 0.5 * x;
    CHECK(grad_regularizer(f).value == Approx(0.25 / 9.0).margin(1e-15));
}

TEST_CASE("regularizer gradient agrees with finite differences") {
    Dim3 dims{4, 3, 4};
    DisplacementField f = zero_field(dims, {1, 1, 1}, GridLevel::Half);
    std::mt19937_64 rng(81);
    std::uniform_real_distribution<double> dist(-1.5, 1.5);
    for (auto& comp : f.comp)
        for (double& u : comp) u = dist(rng);
    RegularizerLoss r = grad_regularizer(f);
    const double h = 1e-5;
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < f.comp[c].size(); i += 3) {
            double keep = f.comp[c][i];
            f.comp[c][i] = keep + h;
            double up = grad_regularizer(f).value;
            f.comp[c][i] = keep - h;
            double dn = grad_regularizer(f).value;
            f.comp[c][i] = keep;
            // the objective is quadratic, central differences are exact
            CHECK(r.grad[c][i] == Approx((up - dn) / (2 * h)).margin(1e-9));
        }
}

TEST_CASE("regularizer needs at least two voxels per axis") {
    DisplacementField f = zero_field({1, 4, 4}, {1, 1, 1}, GridLevel::Half);
    CHECK_THROWS_AS(grad_regularizer(f), contract_error);
}

namespace {

struct LossFixture {
    Volume moving;
    Volume fixed;
    LabelMap moving_labels{{0, 0, 0}, {1, 1, 1}, {}};
    LabelMap fixed_labels{{0, 0, 0}, {1, 1, 1}, {}};
    SoftLabelVolume moving_soft;
    SoftLabelVolume fixed_soft;
    DisplacementField phi;

    explicit LossFixture(unsigned seed, Dim3 dims = {12, 12, 12}) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> inten(0.0, 200.0);
        std::uniform_int_distribution<int> lab(0, 2);
        std::vector<double> mdata(voxel_count(dims)), fdata(voxel_count(dims));
        std::vector<int> mlab(voxel_count(dims)), flab(voxel_count(dims));
        for (auto& x : mdata) x = inten(rng);
        for (auto& x : fdata) x = inten(rng);
        for (auto& l : mlab) l = lab(rng);
        for (auto& l : flab) l = lab(rng);
        moving = new_volume(dims, {1, 1, 1}, mdata);
        fixed = new_volume(dims, {1, 1, 1}, fdata);
        moving_labels = new_label_map(dims, {1, 1, 1}, mlab);
        fixed_labels = new_label_map(dims, {1, 1, 1}, flab);
        moving_soft = one_hot(moving_labels, 3);
        fixed_soft = one_hot(fixed_labels, 3);
        phi = zero_field(half_dims(dims), {2, 2, 2}, GridLevel::Half);
        std::uniform_real_distribution<double> mag(0.1, 0.4);
        std::uniform_int_distribution<int> flip(0, 1);
        for (auto& comp : phi.comp)
            for (double& u : comp) u = flip(rng) ? mag(rng) : -mag(rng);
    }
};

} // namespace

TEST_CASE("total_loss composes the individually exposed terms") {
    LossFixture fx(91);
    LossConfig cfg;
    LossValueGrad got = total_loss(fx.moving, fx.fixed, &fx.moving_soft, &fx.fixed_soft, fx.phi, cfg);

    Volume nm = downsample2(normalize_intensities(fx.moving));
    Volume nf = downsample2(normalize_intensities(fx.fixed));
    SoftLabelVolume ms = downsample2(gaussian_blur(fx.moving_soft, cfg.label_blur_size, cfg.label_blur_sigma));
    SoftLabelVolume fs = downsample2(gaussian_blur(fx.fixed_soft, cfg.label_blur_size, cfg.label_blur_sigma));

    Volume warped = warp(nm, fx.phi);
    double want_intensity = ssd_loss(warped.data, nf.data).value;
    double want_statistic = mi_loss(warped.data, nf.data, cfg.histogram);
    double want_boundary = boundary_loss(warp_soft(ms, fx.phi), fs).value;
    double want_reg = grad_regularizer(fx.phi).value;

    CHECK(got.report.intensity == Approx(want_intensity).margin(1e-12));
    CHECK(got.report.statistic == Approx(want_statistic).margin(1e-12));
    CHECK(got.report.boundary == Approx(want_boundary).margin(1e-12));
    CHECK(got.report.regularizer == Approx(want_reg).margin(1e-12));
    CHECK(got.report.total == Approx(want_intensity + want_statistic + want_boundary +
                                     cfg.lambda * want_reg)
                                  .margin(1e-12));
}

TEST_CASE("lambda scales only the smoothness term") {
    LossFixture fx(92);
    LossConfig base;
    base.lambda = 0.0;
    LossConfig heavy = base;
    heavy.lambda = 1.6;
    LossValueGrad a = total_loss(fx.moving, fx.fixed, nullptr, nullptr, fx.phi, base);
    LossValueGrad b = total_loss(fx.moving, fx.fixed, nullptr, nullptr, fx.phi, heavy);
    CHECK(a.report.intensity == b.report.intensity);
    CHECK(a.report.statistic == b.report.statistic);
    CHECK(b.report.total - a.report.total == Approx(1.6 * b.report.regularizer).margin(1e-12));
}

TEST_CASE("disabled terms report zero and drop out of the total") {
    LossFixture fx(93);
    LossConfig cfg;
    cfg.enable_mi = false;
    cfg.enable_boundary = false;
    LossValueGrad out = total_loss(fx.moving, fx.fixed, &fx.moving_soft, &fx.fixed_soft, fx.phi, cfg);
    CHECK(out.report.statistic == 0.0);
    CHECK(out.report.boundary == 0.0);
    CHECK(out.report.total ==
          Approx(out.report.intensity + cfg.lambda * out.report.regularizer).margin(1e-14));
}

TEST_CASE("total_loss enforces its contracts") {
    LossFixture fx(94);
    LossConfig cfg;
    SECTION("field must be on the half grid") {
        DisplacementField full = zero_field(fx.moving.dims, {1, 1, 1}, GridLevel::Full);
        CHECK_THROWS_AS(total_loss(fx.moving, fx.fixed, nullptr, nullptr, full, cfg), contract_error);
    }
    SECTION("field dims must match the half image dims") {
        DisplacementField small = zero_field({4, 4, 4}, {2, 2, 2}, GridLevel::Half);
        CHECK_THROWS_AS(total_loss(fx.moving, fx.fixed, nullptr, nullptr, small, cfg), contract_error);
    }
    SECTION("labels must come in pairs") {
        CHECK_THROWS_AS(total_loss(fx.moving, fx.fixed, &fx.moving_soft, nullptr, fx.phi, cfg),
                        contract_error);
    }
    SECTION("lambda must be nonnegative") {
        cfg.lambda = -0.1;
        CHECK_THROWS_AS(total_loss(fx.moving, fx.fixed, nullptr, nullptr, fx.phi, cfg),
                        contract_error);
    }
}

TEST_CASE("field gradient of the objective agrees with finite differences") {
    LossFixture fx(95, {10, 10, 10});
    LossConfig cfg;
    cfg.enable_boundary = false; // the blurred-map term is checked through the dedicated harness
    HalfResInputs in = make_half_inputs(fx.moving, fx.fixed, nullptr, nullptr, cfg);
    LossValueGrad out = half_loss(in, fx.phi, cfg);

    double gmax = 0.0;
    for (int c = 0; c < 3; ++c)
        for (double g : out.grad[c]) gmax = std::max(gmax, std::abs(g));
    const double floor = std::max(1e-3 * gmax, 1e-12);
    const double h = 1e-5;
    double worst = 0.0;
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < fx.phi.comp[c].size(); i += 7) {
            double keep = fx.phi.comp[c][i];
            fx.phi.comp[c][i] = keep + h;
            double up = half_loss(in, fx.phi, cfg).report.total;
            fx.phi.comp[c][i] = keep - h;
            double dn = half_loss(in, fx.phi, cfg).report.total;
            fx.phi.comp[c][i] = keep;
            double fd = (up - dn) / (2 * h);
            worst = std::max(worst, std::abs(out.grad[c][i] - fd) /
                                        std::max(std::abs(fd), floor));
        }
    CHECK(worst < 1e-3);
}

TEST_CASE("gradient harness accepts every term on a fresh seed") {
    for (GradTerm term : {GradTerm::Intensity, GradTerm::Statistic, GradTerm::Boundary,
                          GradTerm::Regularizer, GradTerm::Total}) {
        GradCheckReport r = run_gradcheck(term, 6, 1234);
        INFO("term " << grad_term_name(term) << " max_rel_error " << r.max_rel_error);
        CHECK(r.pass);
        CHECK(r.max_rel_error < r.threshold);
    }
}
