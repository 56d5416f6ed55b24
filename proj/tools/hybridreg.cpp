// Command-line front end: pairwise registration, field application, metric
// reports, synthetic data generation, and gradient validation.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <hybridreg/hybridreg.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool is_json_path(const std::string& p) {
    return p.size() > 5 && p.compare(p.size() - 5, 5, ".json") == 0;
}

hybridreg::Volume load_volume(const std::string& path) {
    if (is_json_path(path)) {
        auto d = hybridreg::read_raw_json(path);
        if (!std::holds_alternative<hybridreg::Volume>(d))
            throw hybridreg::contract_error(path + ": expected a scalar volume");
        return std::get<hybridreg::Volume>(std::move(d));
    }
    return hybridreg::read_nifti_volume(path);
}

hybridreg::LabelMap load_labels(const std::string& path) {
    if (is_json_path(path)) {
        auto d = hybridreg::read_raw_json(path);
        if (std::holds_alternative<hybridreg::LabelMap>(d))
            return std::get<hybridreg::LabelMap>(std::move(d));
        if (std::holds_alternative<hybridreg::Volume>(d))
            return hybridreg::to_label_map(std::get<hybridreg::Volume>(d));
        throw hybridreg::contract_error(path + ": expected a label map");
    }
    return hybridreg::to_label_map(hybridreg::read_nifti_volume(path));
}

hybridreg::DisplacementField load_field(const std::string& path) {
    if (is_json_path(path)) {
        auto d = hybridreg::read_raw_json(path);
        if (!std::holds_alternative<hybridreg::DisplacementField>(d))
            throw hybridreg::contract_error(path + ": expected a displacement field");
        return std::get<hybridreg::DisplacementField>(std::move(d));
    }
    return hybridreg::read_nifti_field(path);
}

void save_volume(const hybridreg::Volume& v, const std::string& path) {
    if (is_json_path(path))
        hybridreg::write_raw_json(v, path);
    else
        hybridreg::write_nifti(v, path);
}

void save_labels(const hybridreg::LabelMap& m, const std::string& path) {
    if (is_json_path(path))
        hybridreg::write_raw_json(m, path);
    else
        hybridreg::write_nifti(hybridreg::to_volume(m), path);
}

void save_field(const hybridreg::DisplacementField& f, const std::string& path) {
    if (is_json_path(path))
        hybridreg::write_raw_json(f, path);
    else
        hybridreg::write_nifti(f, path);
}

// "/a/psi.nii" + "_half" -> "/a/psi_half.nii"
std::string with_stem_suffix(const std::string& path, const std::string& suffix) {
    fs::path p(path);
    const fs::path out = p.parent_path() / (p.stem().string() + suffix + p.extension().string());
    return out.string();
}

// "/a/psi.nii" -> "/a/psi_history.csv"
std::string with_replaced_tail(const std::string& path, const std::string& tail) {
    fs::path p(path);
    const fs::path out = p.parent_path() / (p.stem().string() + tail);
    return out.string();
}

int env_threads() {
    const char* env = std::getenv("HYBRIDREG_THREADS");
    if (env == nullptr || *env == '\0') return 0;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == nullptr || *end != '\0' || v < 1)
        throw hybridreg::io_error("HYBRIDREG_THREADS must be a positive integer, got '" +
                                  std::string(env) + "'");
    return static_cast<int>(v);
}

json file_entry(const std::string& path) {
    return json{{"path", path}, {"fnv1a64", hybridreg::hex64(hybridreg::fnv1a64_file(path))}};
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw hybridreg::io_error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw hybridreg::io_error("cannot write " + path);
}

// ---------------------------------------------------------------------------

struct RegisterOpts {
    std::string moving, fixed, moving_labels, fixed_labels;
    std::string config_path, out_field, out_warped;
    double lambda = -1.0;
    double learning_rate = -1.0;
    std::int64_t seed = -1;
    int threads = 0;
};

int cmd_register(const RegisterOpts& opt) {
    const auto t_start = Clock::now();
    hybridreg::RegistrationConfig cfg = hybridreg::load_config(opt.config_path);
    if (opt.lambda >= 0.0) cfg.lambda = opt.lambda;
    if (opt.learning_rate >= 0.0) cfg.learning_rate = opt.learning_rate;
    if (opt.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opt.seed);
    if (opt.threads > 0)
        cfg.threads = opt.threads;
    else if (const int et = env_threads(); et > 0)
        cfg.threads = et;
    hybridreg::validate_config(cfg);

    const hybridreg::Volume moving = load_volume(opt.moving);
    const hybridreg::Volume fixed = load_volume(opt.fixed);
    std::optional<hybridreg::LabelMap> mlab, flab;
    if (!opt.moving_labels.empty() != !opt.fixed_labels.empty()) {
        std::cerr << "warning: only one label map given; the boundary term is disabled\n";
    } else if (!opt.moving_labels.empty()) {
        mlab = load_labels(opt.moving_labels);
        flab = load_labels(opt.fixed_labels);
    }
    const double t_load = ms_since(t_start);

    const auto t_reg = Clock::now();
    const hybridreg::RegistrationResult result = hybridreg::register_pair(
        moving, fixed, mlab ? &*mlab : nullptr, flab ? &*flab : nullptr, cfg);
    const double t_register = ms_since(t_reg);

    const auto t_out = Clock::now();
    const std::string half_path = with_stem_suffix(opt.out_field, "_half");
    const std::string history_path = with_replaced_tail(opt.out_field, "_history.csv");
    const std::string manifest_path = with_replaced_tail(opt.out_field, "_manifest.json");
    save_field(result.full_field, opt.out_field);
    save_field(result.half_field, half_path);
    {
        std::string csv = "step,level,intensity,statistic,boundary,regularizer,total\n";
        char line[256];
        for (const auto& h : result.history) {
            std::snprintf(line, sizeof(line), "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", h.step,
                          h.level, h.report.intensity, h.report.statistic, h.report.boundary,
                          h.report.regularizer, h.report.total);
            csv += line;
        }
        write_text(history_path, csv);
    }
    if (!opt.out_warped.empty()) save_volume(hybridreg::warp(moving, result.full_field),
                                             opt.out_warped);
    const double t_write = ms_since(t_out);

    json inputs{{"moving", file_entry(opt.moving)}, {"fixed", file_entry(opt.fixed)}};
    if (mlab) {
        inputs["moving_labels"] = file_entry(opt.moving_labels);
        inputs["fixed_labels"] = file_entry(opt.fixed_labels);
    }
    json outputs{{"field", file_entry(opt.out_field)},
                 {"field_half", file_entry(half_path)},
                 {"history", file_entry(history_path)}};
    if (!opt.out_warped.empty()) outputs["warped"] = file_entry(opt.out_warped);
    const double final_total =
        result.history.empty() ? 0.0 : result.history.back().report.total;
    json manifest{{"tool", "hybridreg"},
                  {"version", hybridreg::kVersion},
                  {"command", "register"},
                  {"config", hybridreg::config_to_json(cfg)},
                  {"inputs", inputs},
                  {"outputs", outputs},
                  {"history_entries", result.history.size()},
                  {"final_total", final_total},
                  {"timings_ms",
                   {{"load", t_load}, {"register", t_register}, {"write", t_write}}}};
    write_text(manifest_path, manifest.dump(2) + "\n");

    std::cout << "registered " << opt.moving << " -> " << opt.fixed << " in " << t_register
              << " ms, " << result.history.size() << " evaluations, final total " << final_total
              << "\nwrote " << opt.out_field << ", " << half_path << ", " << history_path << ", "
              << manifest_path;
    if (!opt.out_warped.empty()) std::cout << ", " << opt.out_warped;
    std::cout << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct WarpOpts {
    std::string field, image, labels, out;
};

int cmd_warp(const WarpOpts& opt) {
    const hybridreg::DisplacementField field = load_field(opt.field);
    if (!opt.image.empty()) {
        const hybridreg::Volume v = load_volume(opt.image);
        if (!hybridreg::same_dims(v.dims, field.dims))
            throw hybridreg::contract_error(
                "warp: field grid does not match the image (a half-resolution field must be "
                "upsampled first; the register command already writes the full-resolution one)");
        save_volume(hybridreg::warp(v, field), opt.out);
    } else {
        const hybridreg::LabelMap m = load_labels(opt.labels);
        if (!hybridreg::same_dims(m.dims, field.dims))
            throw hybridreg::contract_error("warp: field grid does not match the label map");
        save_labels(hybridreg::warp_labels(m, field), opt.out);
    }
    std::cout << "wrote " << opt.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct MetricsOpts {
    std::string warped_labels, fixed_labels, field, out_report, out_table;
    double percentile = 95.0;
};

int cmd_metrics(const MetricsOpts& opt) {
    const hybridreg::LabelMap warped = load_labels(opt.warped_labels);
    const hybridreg::LabelMap fixed = load_labels(opt.fixed_labels);
    const hybridreg::DisplacementField field = load_field(opt.field);
    const hybridreg::MetricsReport rep =
        hybridreg::evaluate_case(warped, fixed, field, opt.percentile);

    json per_label = json::array();
    for (const auto& lm : rep.per_label) {
        json e{{"label", lm.label}, {"dice", lm.dice}};
        if (lm.hd_defined)
            e["hausdorff"] = lm.hausdorff;
        else
            e["hausdorff"] = nullptr;
        per_label.push_back(e);
    }
    json report{{"dice_mean", rep.dice_mean},
                {"dice_std", rep.dice_std},
                {"hd_percentile", rep.hd_percentile},
                {"hd_mean", rep.hd_mean},
                {"hd_std", rep.hd_std},
                {"hd_defined_count", rep.hd_defined_count},
                {"sdlogj", rep.sdlogj},
                {"folded_fraction", rep.folded_fraction},
                {"per_label", per_label}};
    write_text(opt.out_report, report.dump(2) + "\n");

    if (!opt.out_table.empty()) {
        std::string csv = "label,dice,hausdorff\n";
        char line[128];
        for (const auto& lm : rep.per_label) {
            if (lm.hd_defined)
                std::snprintf(line, sizeof(line), "%d,%.17g,%.17g\n", lm.label, lm.dice,
                              lm.hausdorff);
            else
                std::snprintf(line, sizeof(line), "%d,%.17g,\n", lm.label, lm.dice);
            csv += line;
        }
        write_text(opt.out_table, csv);
    }

    std::cout << "dice_mean " << rep.dice_mean << ", hd" << rep.hd_percentile << "_mean "
              << rep.hd_mean << " (" << rep.hd_defined_count << "/" << rep.per_label.size()
              << " labels), sdlogj " << rep.sdlogj << ", folded " << rep.folded_fraction
              << "\nwrote " << opt.out_report << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct SynthOpts {
    std::string out_dir;
    std::string format = "nii";
    std::int64_t seed = 1;
    int dims = 48;
    int num_blobs = 5;
    double noise_sigma = 0.02;
    double max_magnitude = 3.0;
    double smoothness_sigma = 6.0;
};

int cmd_synth(const SynthOpts& opt) {
    hybridreg::PhantomSpec pspec;
    pspec.dims = {opt.dims, opt.dims, opt.dims};
    pspec.num_blobs = opt.num_blobs;
    pspec.seed = static_cast<std::uint64_t>(opt.seed);
    hybridreg::FieldSpec fspec;
    fspec.dims = pspec.dims;
    fspec.max_magnitude = opt.max_magnitude;
    fspec.smoothness_sigma = opt.smoothness_sigma;
    fspec.seed = pspec.seed + 0x9E3779B9ULL;

    const hybridreg::DisplacementField gt = hybridreg::make_smooth_field(fspec);
    const hybridreg::SynthPair pair = hybridreg::make_pair(pspec, gt, opt.noise_sigma);

    fs::create_directories(opt.out_dir);
    const std::string ext = opt.format == "raw" ? ".json" : ".nii";
    auto out_path = [&](const char* name) {
        return (fs::path(opt.out_dir) / (name + ext)).string();
    };
    save_volume(pair.fixed, out_path("fixed"));
    save_volume(pair.moving, out_path("moving"));
    save_labels(pair.fixed_labels, out_path("fixed_labels"));
    save_labels(pair.moving_labels, out_path("moving_labels"));
    save_field(gt, out_path("gt_field"));

    json manifest{{"tool", "hybridreg"},
                  {"version", hybridreg::kVersion},
                  {"command", "synth"},
                  {"seed", opt.seed},
                  {"dims", {opt.dims, opt.dims, opt.dims}},
                  {"num_blobs", opt.num_blobs},
                  {"noise_sigma", opt.noise_sigma},
                  {"max_magnitude", opt.max_magnitude},
                  {"smoothness_sigma", opt.smoothness_sigma},
                  {"outputs",
                   {{"fixed", file_entry(out_path("fixed"))},
                    {"moving", file_entry(out_path("moving"))},
                    {"fixed_labels", file_entry(out_path("fixed_labels"))},
                    {"moving_labels", file_entry(out_path("moving_labels"))},
                    {"gt_field", file_entry(out_path("gt_field"))}}}};
    write_text((fs::path(opt.out_dir) / "synth_manifest.json").string(), manifest.dump(2) + "\n");

    std::cout << "wrote fixed/moving volumes, label maps, and the ground-truth field to "
              << opt.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct GradcheckOpts {
    std::string term;
    int size = 8;
    std::int64_t seed = 1;
};

int run_one_gradcheck(hybridreg::GradTerm term, int size, std::uint64_t seed) {
    const hybridreg::GradCheckReport rep = hybridreg::run_gradcheck(term, size, seed);
    std::printf("gradcheck term=%s size=%d seed=%llu max_rel_err=%.3e threshold=%.1e %s\n",
                hybridreg::grad_term_name(rep.term), rep.size,
                static_cast<unsigned long long>(rep.seed), rep.max_rel_error, rep.threshold,
                rep.pass ? "pass" : "FAIL");
    return rep.pass ? 0 : 4;
}

int cmd_gradcheck(const GradcheckOpts& opt) {
    const auto seed = static_cast<std::uint64_t>(opt.seed);
    if (opt.term == "all") {
        int rc = 0;
        for (auto t : {hybridreg::GradTerm::Intensity, hybridreg::GradTerm::Statistic,
                       hybridreg::GradTerm::Boundary, hybridreg::GradTerm::Regularizer,
                       hybridreg::GradTerm::Total})
            rc = std::max(rc, run_one_gradcheck(t, opt.size, seed));
        return rc;
    }
    const auto term = hybridreg::parse_grad_term(opt.term);
    if (!term)
        throw hybridreg::contract_error(
            "gradcheck: unknown term '" + opt.term +
            "' (expected intensity|statistic|boundary|regularizer|total|all)");
    return run_one_gradcheck(*term, opt.size, seed);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deformable volume registration driven by a hybrid similarity objective"};
    app.set_version_flag("--version", hybridreg::kVersion);
    app.require_subcommand(1);

    RegisterOpts reg;
    CLI::App* c_reg = app.add_subcommand("register", "Register a moving volume onto a fixed one");
    c_reg->add_option("--moving", reg.moving, "Moving volume (.nii or .json)")->required();
    c_reg->add_option("--fixed", reg.fixed, "Fixed volume")->required();
    c_reg->add_option("--moving-labels", reg.moving_labels, "Moving label map");
    c_reg->add_option("--fixed-labels", reg.fixed_labels, "Fixed label map");
    c_reg->add_option("--config", reg.config_path, "Registration config (JSON)")->required();
    c_reg->add_option("--out-field", reg.out_field,
                      "Output full-resolution field; also derives the half field, history CSV "
                      "and manifest paths")
        ->required();
    c_reg->add_option("--out-warped", reg.out_warped, "Optionally write the warped moving volume");
    c_reg->add_option("--lambda", reg.lambda, "Override the regularizer weight");
    c_reg->add_option("--learning-rate", reg.learning_rate, "Override the step size");
    c_reg->add_option("--seed", reg.seed, "Override the config seed");
    c_reg->add_option("--threads", reg.threads,
                      "Worker threads (flag beats HYBRIDREG_THREADS beats config)");

    WarpOpts wrp;
    CLI::App* c_warp = app.add_subcommand("warp", "Apply a displacement field");
    c_warp->add_option("--field", wrp.field, "Displacement field")->required();
    CLI::Option* o_img = c_warp->add_option("--image", wrp.image, "Volume to warp (trilinear)");
    CLI::Option* o_lab =
        c_warp->add_option("--labels", wrp.labels, "Label map to warp (nearest neighbor)");
    o_img->excludes(o_lab);
    c_warp->add_option("--out", wrp.out, "Output path")->required();

    MetricsOpts met;
    CLI::App* c_met = app.add_subcommand("metrics", "Score warped labels against fixed labels");
    c_met->add_option("--warped-labels", met.warped_labels, "Warped label map")->required();
    c_met->add_option("--fixed-labels", met.fixed_labels, "Fixed label map")->required();
    c_met->add_option("--field", met.field, "Field used for the smoothness statistics")
        ->required();
    c_met->add_option("--percentile", met.percentile, "Surface distance percentile (default 95)")
        ->check(CLI::Range(1e-9, 100.0));
    c_met->add_option("--out-report", met.out_report, "Output report (JSON)")->required();
    c_met->add_option("--out-table", met.out_table, "Optional per-label CSV table");

    SynthOpts syn;
    CLI::App* c_syn = app.add_subcommand("synth", "Generate a synthetic registration case");
    c_syn->add_option("--out-dir", syn.out_dir, "Output directory")->required();
    c_syn->add_option("--format", syn.format, "nii or raw (default nii)")
        ->check(CLI::IsMember({"nii", "raw"}));
    c_syn->add_option("--seed", syn.seed, "Base seed")->check(CLI::NonNegativeNumber);
    c_syn->add_option("--dims", syn.dims, "Cubic edge length (default 48)")
        ->check(CLI::Range(8, 512));
    c_syn->add_option("--num-blobs", syn.num_blobs, "Structure count (default 5)")
        ->check(CLI::Range(0, 64));
    c_syn->add_option("--noise-sigma", syn.noise_sigma, "Noise level on the moving image")
        ->check(CLI::NonNegativeNumber);
    c_syn->add_option("--max-magnitude", syn.max_magnitude,
                      "Largest ground-truth displacement, voxels")
        ->check(CLI::NonNegativeNumber);
    c_syn->add_option("--smoothness-sigma", syn.smoothness_sigma,
                      "Smoothing width of the ground-truth field")
        ->check(CLI::PositiveNumber);

    GradcheckOpts grd;
    CLI::App* c_grd = app.add_subcommand(
        "gradcheck", "Compare analytic gradients against central finite differences");
    c_grd->add_option("--term", grd.term,
                      "intensity|statistic|boundary|regularizer|total|all")
        ->required();
    c_grd->add_option("--size", grd.size, "Cubic instance edge (default 8)")
        ->check(CLI::Range(4, 64));
    c_grd->add_option("--seed", grd.seed, "Instance seed")->check(CLI::NonNegativeNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (c_reg->parsed()) return cmd_register(reg);
        if (c_warp->parsed()) {
            if (wrp.image.empty() == wrp.labels.empty()) {
                std::cerr << "error: warp needs exactly one of --image or --labels\n";
                return 2;
            }
            return cmd_warp(wrp);
        }
        if (c_met->parsed()) return cmd_metrics(met);
        if (c_syn->parsed()) return cmd_synth(syn);
        if (c_grd->parsed()) return cmd_gradcheck(grd);
        std::cerr << "error: no subcommand\n";
        return 2;
    } catch (const hybridreg::io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const hybridreg::contract_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const hybridreg::numeric_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
