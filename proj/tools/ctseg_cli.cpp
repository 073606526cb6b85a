// ctseg: command-line entry point for the segmentation pipeline and the
// triage service.
//
// Settings precedence: built-in defaults < --config file < command-line flags.
// Exit codes: 0 success, 2 validation failure, 3 runtime failure.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ctseg/error.hpp"
#include "ctseg/fs_util.hpp"
#include "ctseg/harness.hpp"
#include "ctseg/inference.hpp"
#include "ctseg/ingest.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/preprocess.hpp"
#include "ctseg/trainer.hpp"
#include "ctseg/triage.hpp"
#include "ctseg/triage_http.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ctseg;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

/// Set once arguments and configuration have been checked; failures after
/// this point are runtime failures.
bool g_validated = false;

struct Common {
    std::string config_path;
    bool verbose = false;
};

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    if (!fs::exists(path)) fail(ErrorCode::not_found, "config file '" + path + "' does not exist");
    try {
        json j = json::parse(read_file(path));
        if (!j.is_object()) fail(ErrorCode::invalid_argument, "config file must hold a JSON object");
        return j;
    } catch (const json::exception& e) {
        fail(ErrorCode::invalid_argument, "config file '" + path + "' is not JSON: " + e.what());
    }
}

json section(const json& cfg, const char* name) { return cfg.contains(name) ? cfg.at(name) : json::object(); }

WindowSpec window_from(const json& cfg, const std::optional<double>& center, const std::optional<double>& width) {
    WindowSpec w;
    const json j = section(cfg, "window");
    w.center_hu = j.value("center", w.center_hu);
    w.width_hu = j.value("width", w.width_hu);
    if (center) w.center_hu = *center;
    if (width) w.width_hu = *width;
    w.validate();
    return w;
}

double threshold_from(const json& cfg, const std::optional<double>& flag) {
    const double t = flag ? *flag : cfg.value("threshold", kDefaultThreshold);
    if (!(t > 0.0 && t < 1.0)) fail(ErrorCode::invalid_argument, "threshold must lie in (0, 1)");
    return t;
}

std::map<Organ, ModelBundle> load_bundles(const std::vector<std::string>& specs, const json& cfg) {
    std::map<Organ, fs::path> paths;
    for (const auto& [organ, path] : section(cfg, "bundles").items()) paths[parse_organ(organ)] = path.get<std::string>();
    for (const auto& s : specs) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) fail(ErrorCode::invalid_argument, "--bundle expects organ=DIR, got '" + s + "'");
        paths[parse_organ(s.substr(0, eq))] = s.substr(eq + 1);
    }
    if (paths.empty()) fail(ErrorCode::invalid_argument, "no model bundles given (--bundle organ=DIR)");
    std::map<Organ, ModelBundle> out;
    for (const auto& [organ, path] : paths) {
        ModelBundle b = ModelBundle::load(path);
        if (b.organ != organ) {
            fail(ErrorCode::invalid_argument, "bundle '" + path.string() + "' was trained for " +
                                                  std::string(to_string(b.organ)) + ", not " +
                                                  std::string(to_string(organ)));
        }
        out.emplace(organ, std::move(b));
    }
    return out;
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file_atomic(path, j.dump(2) + "\n");
}

httplib::Server* g_server = nullptr;

void on_signal(int) {
    if (g_server != nullptr) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CT organ and laceration segmentation pipeline"};
    app.require_subcommand(1);
    Common common;
    app.add_option("--config", common.config_path, "JSON settings file (flags override its values)");
    app.add_flag("-v,--verbose", common.verbose, "Debug logging");

    // generate-phantoms
    auto* gen = app.add_subcommand("generate-phantoms", "Write a synthetic CT corpus with ground-truth masks");
    std::string gen_out;
    std::string gen_style;
    std::optional<std::uint64_t> gen_seed;
    std::optional<int> gen_patients;
    std::optional<int> gen_slices;
    gen->add_option("--out", gen_out, "Corpus directory")->required();
    gen->add_option("--style", gen_style, "style_A or style_B");
    gen->add_option("--seed", gen_seed, "Generator seed");
    gen->add_option("--patients", gen_patients, "Patient count");
    gen->add_option("--slices", gen_slices, "Slices per patient");

    // ingest
    auto* ing = app.add_subcommand("ingest", "Check a corpus against its manifest; optionally export windowed slices");
    std::string ing_corpus;
    std::string ing_manifest;
    std::string ing_export;
    std::string ing_format = "png";
    std::optional<double> win_center;
    std::optional<double> win_width;
    ing->add_option("--corpus", ing_corpus, "Corpus directory")->required();
    ing->add_option("--manifest", ing_manifest, "Expected manifest (default <corpus>/manifest.txt)");
    ing->add_option("--export", ing_export, "Write windowed grayscale slices here");
    ing->add_option("--format", ing_format, "png or jpeg")->check(CLI::IsMember({"png", "jpeg"}));
    ing->add_option("--window-center", win_center, "Window center (HU)");
    ing->add_option("--window-width", win_width, "Window width (HU)");

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "Split patients and pack training/test archives for one organ");
    std::string pre_corpus;
    std::string pre_organ;
    std::string pre_out;
    std::optional<std::uint64_t> pre_seed;
    std::string pre_target;
    pre->add_option("--corpus", pre_corpus, "Corpus directory")->required();
    pre->add_option("--organ", pre_organ, "Organ label")->required();
    pre->add_option("--out", pre_out, "Output directory")->required();
    pre->add_option("--split-seed", pre_seed, "Patient split seed");
    pre->add_option("--target-mode", pre_target, "masked_intensity or constant_label");
    pre->add_option("--window-center", win_center, "Window center (HU)");
    pre->add_option("--window-width", win_width, "Window width (HU)");

    // train
    auto* trn = app.add_subcommand("train", "Train a generator/discriminator pair from an archive");
    std::string trn_archive;
    std::string trn_out;
    std::string trn_resume;
    std::string trn_profile;
    std::optional<int> trn_epochs;
    std::optional<int> trn_batch;
    std::optional<double> trn_lr;
    std::optional<std::uint64_t> trn_seed;
    std::optional<int> trn_cadence;
    trn->add_option("--archive", trn_archive, "Training archive")->required();
    trn->add_option("--out", trn_out, "Output directory")->required();
    trn->add_option("--resume", trn_resume, "Checkpoint bundle to continue from");
    trn->add_option("--profile", trn_profile, "default or desk (reduced widths)")
        ->check(CLI::IsMember({"default", "desk"}));
    trn->add_option("--epochs", trn_epochs, "Total epochs");
    trn->add_option("--batch-size", trn_batch, "Batch size");
    trn->add_option("--lr", trn_lr, "Learning rate");
    trn->add_option("--seed", trn_seed, "Training seed");
    trn->add_option("--checkpoint-every", trn_cadence, "Checkpoint cadence in epochs");

    // evaluate
    auto* evl = app.add_subcommand("evaluate", "Held-out Dice of a bundle on its corpus split");
    std::string ev_bundle;
    std::string ev_corpus;
    std::string ev_out;
    std::optional<std::uint64_t> ev_seed;
    std::optional<double> ev_threshold;
    bool ev_all = false;
    evl->add_option("--bundle", ev_bundle, "Bundle directory")->required();
    evl->add_option("--corpus", ev_corpus, "Corpus directory")->required();
    evl->add_option("--split-seed", ev_seed, "Patient split seed used for training");
    evl->add_flag("--all-patients", ev_all, "Score every patient instead of the test split");
    evl->add_option("--threshold", ev_threshold, "Binarization threshold");
    evl->add_option("--out", ev_out, "Write the report JSON here");
    evl->add_option("--window-center", win_center, "Window center (HU)");
    evl->add_option("--window-width", win_width, "Window width (HU)");

    // cross-eval
    auto* xev = app.add_subcommand("cross-eval", "Apply a bundle to every annotated patient of another corpus");
    xev->add_option("--bundle", ev_bundle, "Bundle directory")->required();
    xev->add_option("--corpus", ev_corpus, "Corpus B directory")->required();
    xev->add_option("--threshold", ev_threshold, "Binarization threshold");
    xev->add_option("--out", ev_out, "Write the report JSON here");
    xev->add_option("--window-center", win_center, "Window center (HU)");
    xev->add_option("--window-width", win_width, "Window width (HU)");

    // segment
    auto* seg = app.add_subcommand("segment", "Segment one CT series with per-organ bundles");
    std::vector<std::string> bundle_specs;
    std::string seg_series;
    std::string seg_out;
    seg->add_option("--bundle", bundle_specs, "organ=DIR (repeatable)");
    seg->add_option("--series", seg_series, "DICOM series directory")->required();
    seg->add_option("--out", seg_out, "Study output directory")->required();
    seg->add_option("--threshold", ev_threshold, "Binarization threshold");
    seg->add_option("--window-center", win_center, "Window center (HU)");
    seg->add_option("--window-width", win_width, "Window width (HU)");

    // serve
    auto* srv = app.add_subcommand("serve", "Run the triage service");
    std::string srv_host;
    std::optional<int> srv_port;
    std::string srv_token;
    std::string srv_data;
    std::optional<int> srv_workers;
    bool srv_paths = false;
    srv->add_option("--bundle", bundle_specs, "organ=DIR (repeatable)");
    srv->add_option("--host", srv_host, "Bind address");
    srv->add_option("--port", srv_port, "Port");
    srv->add_option("--token", srv_token, "Static access token (or CTSEG_TOKEN)");
    srv->add_option("--data-dir", srv_data, "Case store and artifact directory");
    srv->add_option("--workers", srv_workers, "Worker threads");
    srv->add_flag("--allow-path-submission", srv_paths, "Accept JSON {\"path\": dir} submissions");
    srv->add_option("--threshold", ev_threshold, "Binarization threshold");

    // report
    auto* rep = app.add_subcommand("report", "Run an experiment plan and emit its Dice tables");
    std::string rep_plan;
    std::string rep_runs = "runs";
    std::string rep_corpora = "corpora";
    std::string rep_resume;
    bool rep_print = false;
    rep->add_option("--plan", rep_plan, "Plan JSON (default: the shipped three-experiment plan)");
    rep->add_option("--runs", rep_runs, "Directory for run outputs");
    rep->add_option("--corpora", rep_corpora, "Corpus directory for the default plan");
    rep->add_option("--resume", rep_resume, "Continue a run directory");
    rep->add_flag("--print-plan", rep_print, "Print the plan JSON and exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitValidation;
    }
    spdlog::set_level(common.verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        const json cfg = load_config(common.config_path);

        if (*gen) {
            json pj = section(cfg, "phantom");
            if (!gen_style.empty()) pj["style"] = gen_style;
            if (gen_seed) pj["seed"] = *gen_seed;
            if (gen_patients) pj["patient_count"] = *gen_patients;
            if (gen_slices) pj["slices_per_patient"] = *gen_slices;
            const PhantomSpec spec = pj.get<PhantomSpec>();
            spec.validate();
            if (fs::exists(gen_out) && !fs::is_empty(gen_out)) {
                fail(ErrorCode::conflict, "output directory '" + gen_out + "' is not empty");
            }
            g_validated = true;
            const DatasetManifest m = generate_phantoms(spec, gen_out);
            std::cout << m.to_text();
            return 0;
        }

        if (*ing) {
            const WindowSpec window = window_from(cfg, win_center, win_width);
            const fs::path manifest = ing_manifest.empty() ? fs::path(ing_corpus) / "manifest.txt" : fs::path(ing_manifest);
            const DatasetManifest expected = DatasetManifest::load(manifest);
            g_validated = true;
            const ManifestReport report = validate_manifest(scan_corpus(ing_corpus), expected);
            std::cout << report.to_text();
            if (!report.pass()) return kExitValidation;
            if (!ing_export.empty()) {
                const ImageFormat format = ing_format == "jpeg" ? ImageFormat::jpeg : ImageFormat::png;
                for (const auto& patient : list_patients(ing_corpus)) {
                    const CtSeries series = load_series(fs::path(ing_corpus) / "images" / patient);
                    for (const auto& slice : series.slices) {
                        char name[48];
                        std::snprintf(name, sizeof name, "slice_%04d.%s", slice.index, ing_format == "jpeg" ? "jpg" : "png");
                        const fs::path out = fs::path(ing_export) / patient / name;
                        fs::create_directories(out.parent_path());
                        export_image(window_to_gray(slice, window), out, format);
                    }
                }
            }
            return 0;
        }

        if (*pre) {
            PairOptions options;
            options.window = window_from(cfg, win_center, win_width);
            const json pc = section(cfg, "preprocess");
            options.target_mode = parse_target_mode(pre_target.empty() ? pc.value("target_mode", "masked_intensity")
                                                                       : pre_target);
            const std::uint64_t seed = pre_seed ? *pre_seed : cfg.value("split_seed", std::uint64_t{1});
            const Organ organ = parse_organ(pre_organ);
            const DatasetSplit split = split_patients(list_patients(pre_corpus), seed);
            g_validated = true;
            fs::create_directories(pre_out);
            pack_archive(build_pairs(pre_corpus, organ, split.train_patients, options), fs::path(pre_out) / "train.ctsa");
            pack_archive(build_pairs(pre_corpus, organ, split.test_patients, options), fs::path(pre_out) / "test.ctsa");
            write_json(fs::path(pre_out) / "split.json", {{"seed", seed},
                                                          {"organ", std::string(to_string(organ))},
                                                          {"train", split.train_patients},
                                                          {"test", split.test_patients}});
            std::cout << "train patients: " << split.train_patients.size()
                      << ", test patients: " << split.test_patients.size() << "\n";
            return 0;
        }

        if (*trn) {
            json tj = section(cfg, "train");
            const std::string profile = !trn_profile.empty() ? trn_profile : tj.value("profile", "default");
            tj.erase("profile");
            json base = profile == "desk" ? json(desk_train_config(30, 0)) : json(TrainConfig{});
            base.merge_patch(tj);
            if (trn_epochs) base["epochs"] = *trn_epochs;
            if (trn_batch) base["batch_size"] = *trn_batch;
            if (trn_lr) base["learning_rate"] = *trn_lr;
            if (trn_seed) base["seed"] = *trn_seed;
            if (trn_cadence) base["checkpoint_every"] = *trn_cadence;
            const TrainConfig config = base.get<TrainConfig>();
            config.validate();
            const TrainingData data = TrainingData::load(trn_archive);
            std::optional<ModelBundle> start;
            if (!trn_resume.empty()) start = ModelBundle::load(trn_resume);
            g_validated = true;
            const TrainResult r = start ? resume(*start, data, config, trn_out) : train(data, config, trn_out);
            std::cout << "final bundle: " << r.final_bundle_dir.string() << "\n"
                      << "parameter sha256: " << r.final_bundle.parameter_hash << "\n";
            return 0;
        }

        if (*evl || *xev) {
            PairOptions options;
            options.window = window_from(cfg, win_center, win_width);
            const double threshold = threshold_from(cfg, ev_threshold);
            const ModelBundle bundle = ModelBundle::load(ev_bundle);
            DiceReport report;
            if (*evl) {
                std::vector<std::string> patients = list_patients(ev_corpus);
                if (!ev_all) {
                    const std::uint64_t seed = ev_seed ? *ev_seed : cfg.value("split_seed", std::uint64_t{1});
                    patients = split_patients(patients, seed).test_patients;
                }
                g_validated = true;
                report = evaluate(bundle, build_pairs(ev_corpus, bundle.organ, patients, options), threshold);
                report.metadata["eval_corpus_fingerprint"] = corpus_fingerprint(ev_corpus);
            } else {
                g_validated = true;
                report = cross_evaluate(bundle, ev_corpus, list_patients(ev_corpus), options, threshold);
                report.split_label = "cross";
            }
            std::cout << dice_table(std::span<const DiceReport>(&report, 1), *evl ? "Evaluation" : "Cross-evaluation");
            if (!ev_out.empty()) write_json(ev_out, report.to_json());
            return 0;
        }

        if (*seg) {
            SegmentOptions options;
            options.window = window_from(cfg, win_center, win_width);
            options.threshold = threshold_from(cfg, ev_threshold);
            const auto bundles = load_bundles(bundle_specs, cfg);
            const CtSeries series = load_series(seg_series);
            g_validated = true;
            const StudyResult result = segment_study(bundles, series, options);
            write_study(result, series, options.window, seg_out);
            std::cout << result.to_json().dump(2) << "\n";
            return 0;
        }

        if (*srv) {
            const json sj = section(cfg, "serve");
            triage::ServiceConfig sc;
            sc.data_dir = srv_data.empty() ? sj.value("data_dir", std::string("triage-data")) : srv_data;
            sc.workers = srv_workers ? *srv_workers : sj.value("workers", 1);
            sc.token = srv_token;
            if (sc.token.empty()) sc.token = sj.value("token", std::string());
            if (const char* env = std::getenv("CTSEG_TOKEN"); sc.token.empty() && env != nullptr) sc.token = env;
            const std::string host = srv_host.empty() ? sj.value("host", std::string("127.0.0.1")) : srv_host;
            const int port = srv_port ? *srv_port : sj.value("port", 8080);
            const bool paths = srv_paths || sj.value("allow_path_submission", false);
            const WindowSpec window = window_from(cfg, std::nullopt, std::nullopt);
            const double threshold = threshold_from(cfg, ev_threshold);
            if (sc.token.empty()) spdlog::warn("serving without an access token");
            auto processor = triage::segmentation_processor(load_bundles(bundle_specs, sj), window, threshold);
            g_validated = true;
            triage::TriageService service(sc, std::move(processor));
            httplib::Server server;
            triage::mount_routes(server, service, paths);
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            service.start_workers();
            spdlog::info("listening on {}:{}", host, port);
            const bool ok = server.listen(host, port);
            service.stop_workers();
            g_server = nullptr;
            if (!ok && !server.is_running()) {
                spdlog::error("server stopped or could not bind {}:{}", host, port);
            }
            return 0;
        }

        if (*rep) {
            const ExperimentPlan plan = rep_plan.empty() ? default_plan(rep_corpora) : ExperimentPlan::load(rep_plan);
            if (rep_print) {
                std::cout << plan.to_json().dump(2) << "\n";
                return 0;
            }
            plan.validate();
            g_validated = true;
            RunOptions options;
            options.runs_root = rep_runs;
            if (!rep_resume.empty()) options.resume = fs::path(rep_resume);
            const RunReport report = run_plan(plan, options);
            std::cout << report.tables() << "run directory: " << report.run_dir.string() << "\n"
                      << "report fingerprint: " << report.fingerprint << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return g_validated ? kExitRuntime : kExitValidation;
    }
    return 0;
}
