// mcl: synthesize data, train BM/WM/heads/AM, evaluate, predict, benchmark.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mcl/mcl.hpp"

namespace fs = std::filesystem;
using mcl::real;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

mcl::RunConfig load_config_or_default(const Globals& g, int pattern_hint = 5) {
    mcl::RunConfig rc;
    if (!g.config.empty()) {
        rc = mcl::load_run_config(g.config);
    } else {
        rc.pattern = pattern_hint;
        rc.pipeline.spec = mcl::NetworkSpec::for_pattern(pattern_hint);
    }
    if (g.seed) rc.seed = g.seed;
    if (!g.out.empty()) rc.output_dir = g.out;
    return rc;
}

std::uint64_t require_seed(const mcl::RunConfig& rc) {
    if (!rc.seed) throw mcl::ConfigError("a seed is required (--seed or \"seed\" in the config)");
    return *rc.seed;
}

void require_dir(const std::string& path, const std::string& what) {
    if (path.empty()) throw mcl::ConfigError(what + " path is not set");
    if (!fs::is_directory(path)) throw mcl::ConfigError(what + " path '" + path + "' does not exist");
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw mcl::Error("cannot write '" + path.string() + "'");
    out << text;
}

void print_report(const std::vector<mcl::ReportRow>& rows) {
    for (const auto& r : rows) {
        std::cout << r.model << " on " << r.dataset << ": mean error " << mcl::format_percent(r.mean_error)
                  << "%, failure rate " << mcl::format_percent(r.failure_rate) << "%\n";
    }
}

// --- synth -----------------------------------------------------------------

int cmd_synth(const Globals& g, int pattern, std::size_t count, const std::string& split, double max_rotation) {
    mcl::RunConfig rc = load_config_or_default(g, pattern);
    const std::uint64_t seed = require_seed(rc);
    const std::string out = g.out.empty() ? "synth" : g.out;
    mcl::SynthOptions opt;
    opt.max_rotation_degrees = max_rotation;
    const mcl::Dataset ds = mcl::synth_generate(mcl::pattern_for(pattern), count, seed, opt, split);
    mcl::save_dataset(ds, out);
    std::cout << "wrote " << ds.size() << " faces (pattern " << pattern << ") to " << out << "\n";
    return 0;
}

// --- train -----------------------------------------------------------------

int cmd_train(const Globals& g, const std::string& train_flag, const std::string& val_flag,
              const std::vector<double>& deltas, const std::vector<std::uint64_t>& perturb_seeds, bool verbose) {
    if (g.config.empty()) throw mcl::ConfigError("train needs --config");
    mcl::RunConfig rc = load_config_or_default(g);
    if (!train_flag.empty()) rc.train_path = train_flag;
    if (!val_flag.empty()) rc.val_path = val_flag;
    const std::uint64_t seed = require_seed(rc);
    require_dir(rc.train_path, "train");
    require_dir(rc.val_path, "val");

    const mcl::Dataset train = mcl::load_dataset(rc.train_path);
    const mcl::Dataset val = mcl::load_dataset(rc.val_path);
    if (train.pattern.n != rc.pattern || val.pattern.n != rc.pattern) {
        throw mcl::ConfigError("dataset pattern does not match the configured pattern " + std::to_string(rc.pattern));
    }
    const fs::path out = rc.output_dir;
    fs::create_directories(out);
    std::ofstream log_file(out / "train.log", std::ios::trunc);
    std::ostream& log = verbose ? std::clog : static_cast<std::ostream&>(log_file);

    const auto res = mcl::run_full_pipeline<real>(train, val, rc.pipeline, seed, &log, val.split);
    const auto& m = res.models;
    mcl::save_model(m.bm, m.spec, (out / "bm.mcl").string());
    mcl::save_model(m.wm, m.spec, (out / "wm.mcl").string());
    for (std::size_t i = 0; i < m.heads.size(); ++i) {
        mcl::save_model(m.head_model(i), m.spec, (out / ("head_" + std::to_string(i + 1) + ".mcl")).string());
    }
    mcl::save_model(m.am, m.spec, (out / "am.mcl").string());
    std::ostringstream csv;
    mcl::write_report_csv(csv, res.report);
    write_file(out / "report.csv", csv.str());
    print_report(res.report);

    if (!deltas.empty()) {
        const auto tr = mcl::prepare_set<real>(train);
        const auto va = mcl::prepare_set<real>(val);
        const auto rows = mcl::perturbation_study(m.bm, tr, va, rc.pipeline.weighting, deltas,
                                                  perturb_seeds.empty() ? std::vector<std::uint64_t>{seed} : perturb_seeds, &log);
        std::ostringstream p;
        mcl::write_perturbation_csv(p, rows);
        write_file(out / "perturbation.csv", p.str());
    }
    return 0;
}

// --- eval ------------------------------------------------------------------

int cmd_eval(const Globals& g, const std::vector<std::string>& models, const std::string& data,
             const std::string& occlude) {
    require_dir(data, "evaluation data");
    if (models.empty()) throw mcl::ConfigError("eval needs at least one --model");
    if (!occlude.empty() && models.size() != 2) {
        throw mcl::ConfigError("--occlude-cluster compares two models: pass --model <wm> --model <am>");
    }
    const mcl::Dataset test = mcl::load_dataset(data);
    const fs::path out = g.out.empty() ? fs::path(".") : fs::path(g.out);
    fs::create_directories(out);

    std::vector<mcl::NetworkParams<real>> loaded;
    std::vector<mcl::ReportRow> rows;
    const auto prepared = mcl::prepare_set<real>(test);
    for (std::size_t k = 0; k < models.size(); ++k) {
        auto [spec, params] = mcl::load_model<real>(models[k]);
        if (spec.n_landmarks != test.pattern.n) {
            throw mcl::ConfigError("model '" + models[k] + "' predicts " + std::to_string(spec.n_landmarks) +
                                   " landmarks, data has " + std::to_string(test.pattern.n));
        }
        const mcl::EvalReport r = mcl::evaluate(params, 0, prepared);
        const std::string name = fs::path(models[k]).stem().string();
        rows.push_back({name, test.split, r.mean_error, r.failure_rate});
        std::ostringstream ced;
        mcl::write_ced_csv(ced, mcl::ced_curve(r.per_sample_mean_errors, mcl::default_ced_thresholds()));
        if (k == 0) write_file(out / "ced.csv", ced.str());
        if (models.size() > 1) write_file(out / ("ced_" + name + ".csv"), ced.str());
        loaded.push_back(std::move(params));
    }
    std::ostringstream csv;
    mcl::write_report_csv(csv, rows);
    write_file(out / "report.csv", csv.str());
    print_report(rows);

    if (!occlude.empty()) {
        const auto cp = mcl::clusters_for_pattern(test.pattern);
        std::size_t idx = 0;
        try {
            idx = cp.index_of(occlude);
        } catch (const mcl::ContractError&) {
            throw mcl::ConfigError("unknown cluster '" + occlude + "' for pattern " + std::to_string(test.pattern.n));
        }
        const auto table = mcl::occlusion_report(loaded[0], loaded[1], test, idx);
        std::ostringstream occ;
        mcl::write_occlusion_csv(occ, table);
        write_file(out / "occlusion.csv", occ.str());
        for (const auto& c : table.cells) {
            std::cout << c.model << ' ' << c.condition << ' ' << c.group << ": " << mcl::format_percent(c.mean_error) << "%\n";
        }
    }
    return 0;
}

// --- predict ---------------------------------------------------------------

int cmd_predict(const std::string& model, const std::string& image) {
    const auto [spec, params] = mcl::load_model<real>(model);
    const mcl::Image img = mcl::read_pgm(image);
    if (img.width != mcl::patch_size || img.height != mcl::patch_size) {
        throw mcl::LoadError("'" + image + "' must be a 50x50 face patch");
    }
    const mcl::Shape s = mcl::predict_shape(params, 0, mcl::extract_features(params, mcl::normalize_pixels<real>(img)));
    mcl::write_landmarks(std::cout, s);
    return 0;
}

// --- bench -----------------------------------------------------------------

int cmd_bench(const Globals& g, const std::string& model, const std::string& data, std::size_t repeats) {
    const auto [spec, params] = mcl::load_model<real>(model);
    std::vector<mcl::Tensor<real>> images;
    if (!data.empty()) {
        for (const auto& s : mcl::load_dataset(data).samples) images.push_back(mcl::normalize_pixels<real>(s.image));
    } else {
        const auto ds = mcl::synth_generate(mcl::pattern_for(spec.n_landmarks), 1, g.seed.value_or(0));
        images.push_back(mcl::normalize_pixels<real>(ds.samples[0].image));
    }
    // one timed inference per repeat
    if (images.size() > 1) images.resize(1);
    const double fps = mcl::fps_bench(params, 0, images, repeats);
    std::cout << "fps=" << fps << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-center learning face alignment"};
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed_value = 0;
    app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed_value, "random seed");
    app.add_option("--out", g.out, "output directory");

    int pattern = 5;
    std::size_t count = 100;
    std::string split = "train";
    double max_rotation = mcl::SynthOptions{}.max_rotation_degrees;
    auto* synth = app.add_subcommand("synth", "generate a synthetic face dataset");
    synth->add_option("--pattern", pattern, "labeling pattern")->check(CLI::IsMember({5, 29, 68}));
    synth->add_option("--count", count, "number of faces")->check(CLI::Range(std::size_t{1}, std::size_t{10000000}));
    synth->add_option("--split", split, "split name stored in meta.txt");
    synth->add_option("--max-rotation", max_rotation, "largest in-plane rotation in degrees")->check(CLI::Range(0.0, 180.0));

    std::string train_path, val_path;
    std::vector<double> deltas;
    std::vector<std::uint64_t> perturb_seeds;
    bool verbose = false;
    auto* train = app.add_subcommand("train", "run pre-training, weighting, multi-center fine-tuning and assembling");
    train->add_option("--train", train_path, "training dataset directory (overrides the config)");
    train->add_option("--val", val_path, "validation dataset directory (overrides the config)");
    train->add_option("--perturb-deltas", deltas, "also run the weight perturbation study for these deltas")->delimiter(',');
    train->add_option("--perturb-seeds", perturb_seeds, "seeds for the perturbation study")->delimiter(',');
    train->add_flag("--verbose", verbose, "print stage progress to stderr instead of train.log");

    std::vector<std::string> models;
    std::string data, occlude;
    auto* eval = app.add_subcommand("eval", "mean error, failure rate and CED of one or more models");
    eval->add_option("--model", models, "model file (repeatable)")->required();
    eval->add_option("--data", data, "dataset directory")->required();
    eval->add_option("--occlude-cluster", occlude, "gray-fill this cluster and compare two models (WM then AM)");

    std::string model, image;
    auto* predict = app.add_subcommand("predict", "print the predicted landmarks of one image");
    predict->add_option("--model", model, "model file")->required();
    predict->add_option("--image", image, "50x50 binary PGM")->required();

    std::string bench_model, bench_data;
    std::size_t repeats = 100;
    auto* bench = app.add_subcommand("bench", "single-image inference speed");
    bench->add_option("--model", bench_model, "model file")->required();
    bench->add_option("--data", bench_data, "dataset to draw the image from (default: one synthetic face)");
    bench->add_option("--repeats", repeats, "timed inferences")->check(CLI::Range(std::size_t{1}, std::size_t{100000000}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    if (seed_opt->count() > 0) g.seed = seed_value;

    try {
        if (*synth) return cmd_synth(g, pattern, count, split, max_rotation);
        if (*train) return cmd_train(g, train_path, val_path, deltas, perturb_seeds, verbose);
        if (*eval) return cmd_eval(g, models, data, occlude);
        if (*predict) return cmd_predict(model, image);
        if (*bench) return cmd_bench(g, bench_model, bench_data, repeats);
    } catch (const mcl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const mcl::TrainingError& e) {
        std::cerr << "training failed in stage " << e.stage() << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
