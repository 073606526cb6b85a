#include "ctseg/harness.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "ctseg/error.hpp"
#include "ctseg/fs_util.hpp"
#include "ctseg/hash.hpp"
#include "ctseg/inference.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctseg {

std::string_view to_string(EvalMode mode) {
    return mode == EvalMode::held_out ? "held_out" : "all_patients";
}

EvalMode parse_eval_mode(std::string_view name) {
    if (name == "held_out") return EvalMode::held_out;
    if (name == "all_patients") return EvalMode::all_patients;
    fail(ErrorCode::invalid_argument, "unknown evaluation mode '" + std::string(name) + "'");
}

void ExperimentPlan::validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        fail(ErrorCode::invalid_argument, "plan threshold must lie in (0, 1)");
    }
    pairs.window.validate();
    for (const auto& [name, source] : corpora) {
        if (source.path.empty()) fail(ErrorCode::invalid_argument, "corpus '" + name + "' has no path");
        if (source.phantom) source.phantom->validate();
    }
    if (experiments.empty()) fail(ErrorCode::invalid_argument, "plan '" + this->name + "' has no experiments");

    std::map<std::string, const TrainEntry*> trained;
    std::set<std::string> experiment_names;
    for (const auto& exp : experiments) {
        if (exp.name.empty()) fail(ErrorCode::invalid_argument, "experiment without a name");
        if (!experiment_names.insert(exp.name).second) {
            fail(ErrorCode::invalid_argument, "duplicate experiment '" + exp.name + "'");
        }
        if (exp.train.empty() && exp.evaluate.empty()) {
            fail(ErrorCode::invalid_argument, "experiment '" + exp.name + "' does nothing");
        }
        for (const auto& t : exp.train) {
            if (t.id.empty()) fail(ErrorCode::invalid_argument, "training entry without an id in '" + exp.name + "'");
            if (!corpora.count(t.corpus)) {
                fail(ErrorCode::invalid_argument, "bundle '" + t.id + "' uses unknown corpus '" + t.corpus + "'");
            }
            t.config.validate();
            if (!trained.emplace(t.id, &t).second) {
                fail(ErrorCode::invalid_argument, "duplicate bundle id '" + t.id + "'");
            }
        }
        for (const auto& e : exp.evaluate) {
            const auto it = trained.find(e.bundle);
            if (it == trained.end()) {
                fail(ErrorCode::invalid_argument, "experiment '" + exp.name + "' evaluates bundle '" + e.bundle +
                                                      "', which the plan does not train before it");
            }
            if (!corpora.count(e.corpus)) {
                fail(ErrorCode::invalid_argument, "evaluation of '" + e.bundle + "' uses unknown corpus '" +
                                                      e.corpus + "'");
            }
            if (e.mode == EvalMode::held_out && e.corpus != it->second->corpus) {
                fail(ErrorCode::invalid_argument, "held-out evaluation of '" + e.bundle +
                                                      "' must use its training corpus '" + it->second->corpus + "'");
            }
        }
    }
}

json ExperimentPlan::to_json() const {
    json cj = json::object();
    for (const auto& [n, c] : corpora) {
        json item = {{"path", c.path.generic_string()}};
        if (c.phantom) item["phantom"] = *c.phantom;
        cj[n] = item;
    }
    json ej = json::array();
    for (const auto& exp : experiments) {
        json train = json::array();
        for (const auto& t : exp.train) {
            train.push_back({{"id", t.id},
                             {"corpus", t.corpus},
                             {"organ", std::string(ctseg::to_string(t.organ))},
                             {"split_seed", t.split_seed},
                             {"config", t.config}});
        }
        json eval = json::array();
        for (const auto& e : exp.evaluate) {
            eval.push_back({{"bundle", e.bundle}, {"corpus", e.corpus}, {"mode", std::string(ctseg::to_string(e.mode))}});
        }
        ej.push_back({{"name", exp.name}, {"title", exp.title}, {"train", train}, {"evaluate", eval}});
    }
    return {{"name", name},
            {"threshold", threshold},
            {"window", {{"center", pairs.window.center_hu}, {"width", pairs.window.width_hu}}},
            {"target_mode", std::string(ctseg::to_string(pairs.target_mode))},
            {"include_empty_slices", pairs.include_empty_slices},
            {"corpora", cj},
            {"experiments", ej}};
}

ExperimentPlan ExperimentPlan::from_json(const json& j) {
    try {
        ExperimentPlan p;
        p.name = j.value("name", p.name);
        p.threshold = j.value("threshold", p.threshold);
        if (j.contains("window")) {
            p.pairs.window.center_hu = j.at("window").value("center", p.pairs.window.center_hu);
            p.pairs.window.width_hu = j.at("window").value("width", p.pairs.window.width_hu);
        }
        if (j.contains("target_mode")) p.pairs.target_mode = parse_target_mode(j.at("target_mode").get<std::string>());
        p.pairs.include_empty_slices = j.value("include_empty_slices", false);
        for (const auto& [n, c] : j.at("corpora").items()) {
            CorpusSource src;
            src.path = c.at("path").get<std::string>();
            if (c.contains("phantom")) src.phantom = c.at("phantom").get<PhantomSpec>();
            p.corpora[n] = std::move(src);
        }
        for (const auto& e : j.at("experiments")) {
            Experiment exp;
            exp.name = e.at("name").get<std::string>();
            exp.title = e.value("title", exp.name);
            for (const auto& t : e.value("train", json::array())) {
                TrainEntry entry;
                entry.id = t.at("id").get<std::string>();
                entry.corpus = t.at("corpus").get<std::string>();
                entry.organ = parse_organ(t.at("organ").get<std::string>());
                entry.split_seed = t.value("split_seed", std::uint64_t{0});
                if (t.contains("config")) entry.config = t.at("config").get<TrainConfig>();
                exp.train.push_back(std::move(entry));
            }
            for (const auto& v : e.value("evaluate", json::array())) {
                EvalTarget target;
                target.bundle = v.at("bundle").get<std::string>();
                target.corpus = v.at("corpus").get<std::string>();
                target.mode = parse_eval_mode(v.value("mode", "held_out"));
                exp.evaluate.push_back(std::move(target));
            }
            p.experiments.push_back(std::move(exp));
        }
        return p;
    } catch (const json::exception& e) {
        fail(ErrorCode::invalid_argument, std::string("malformed plan: ") + e.what());
    }
}

ExperimentPlan ExperimentPlan::load(const fs::path& path) {
    if (!fs::exists(path)) fail(ErrorCode::not_found, "plan file '" + path.string() + "' does not exist");
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        fail(ErrorCode::invalid_argument, "plan file '" + path.string() + "' is not JSON: " + e.what());
    }
    return from_json(j);
}

std::string ExperimentPlan::hash() const { return sha256_hex(to_json().dump()); }

TrainConfig desk_train_config(int epochs, std::uint64_t seed) {
    TrainConfig c;
    c.epochs = epochs;
    c.learning_rate = 1e-3;
    c.seed = seed;
    c.checkpoint_every = 10;
    c.generator = gan::GeneratorSpec::mirrored({8, 16, 32, 64, 64, 64});
    c.discriminator = gan::DiscriminatorSpec::patchgan({8, 16, 32, 32});
    return c;
}

ExperimentPlan default_plan(const fs::path& corpora_dir) {
    ExperimentPlan p;
    p.name = "phantom-default";

    PhantomSpec a = PhantomSpec::defaults();
    a.style = PhantomStyle::style_A;
    a.seed = 7;
    PhantomSpec b = PhantomSpec::defaults();
    b.style = PhantomStyle::style_B;
    b.seed = 11;
    p.corpora["standard"] = {corpora_dir / "standard", a};
    p.corpora["local"] = {corpora_dir / "local", b};

    auto epochs_for = [](Organ organ) { return organ == Organ::liver_laceration ? 15 : 10; };

    Experiment standard{"standard", "Phantom standard-style models (held-out 60/40)", {}, {}};
    std::uint64_t seed = 100;
    for (Organ organ : kAllOrgans) {
        const std::string id = "standard_" + std::string(to_string(organ));
        standard.train.push_back({id, "standard", organ, 1, desk_train_config(epochs_for(organ), seed++)});
        standard.evaluate.push_back({id, "standard", EvalMode::held_out});
    }

    Experiment local{"local", "Phantom local-style models (held-out 60/40)", {}, {}};
    for (Organ organ : {Organ::liver, Organ::liver_laceration}) {
        const std::string id = "local_" + std::string(to_string(organ));
        local.train.push_back({id, "local", organ, 1, desk_train_config(epochs_for(organ), seed++)});
        local.evaluate.push_back({id, "local", EvalMode::held_out});
    }

    Experiment transfer{"transfer", "Standard-style models applied to the local corpus", {}, {}};
    for (Organ organ : kAllOrgans) {
        transfer.evaluate.push_back({"standard_" + std::string(to_string(organ)), "local", EvalMode::all_patients});
    }

    p.experiments = {std::move(standard), std::move(local), std::move(transfer)};
    return p;
}

const DiceReport* RunReport::find(const std::string& bundle, const std::string& corpus) const {
    for (const auto& e : experiments) {
        for (const auto& r : e.reports) {
            const auto b = r.metadata.find("bundle");
            const auto c = r.metadata.find("eval_corpus");
            if (b != r.metadata.end() && c != r.metadata.end() && b->second == bundle && c->second == corpus) return &r;
        }
    }
    return nullptr;
}

namespace {

json report_body(const RunReport& r) {
    json exps = json::array();
    for (const auto& e : r.experiments) {
        json reports = json::array();
        for (const auto& d : e.reports) reports.push_back(d.to_json());
        exps.push_back({{"name", e.name}, {"title", e.title}, {"reports", reports}, {"table", e.table}});
    }
    return {{"plan_name", r.plan_name},
            {"plan_hash", r.plan_hash},
            {"corpus_fingerprints", r.corpus_fingerprints},
            {"experiments", exps}};
}

}  // namespace

json RunReport::to_json() const {
    json j = report_body(*this);
    j["fingerprint"] = fingerprint;
    j["run_dir"] = run_dir.generic_string();
    return j;
}

std::string RunReport::tables() const {
    std::string out;
    for (const auto& e : experiments) out += e.table + "\n";
    return out;
}

namespace {

std::string utc_stamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

fs::path fresh_run_dir(const fs::path& root, const std::string& plan_hash) {
    const std::string base = utc_stamp() + "-" + plan_hash.substr(0, 12);
    fs::path dir = root / base;
    for (int n = 2; fs::exists(dir); ++n) dir = root / (base + "-" + std::to_string(n));
    fs::create_directories(dir);
    return dir;
}

struct RunState {
    std::string plan_hash;
    std::vector<std::string> completed;
    std::map<std::string, std::string> corpus_fingerprints;
    std::string failed_stage;
    std::string error;

    bool done(const std::string& stage) const {
        return std::find(completed.begin(), completed.end(), stage) != completed.end();
    }

    void save(const fs::path& dir) const {
        json j = {{"plan_hash", plan_hash},
                  {"completed", completed},
                  {"corpus_fingerprints", corpus_fingerprints},
                  {"failed_stage", failed_stage.empty() ? json(nullptr) : json(failed_stage)},
                  {"error", error.empty() ? json(nullptr) : json(error)}};
        write_file_atomic(dir / "state.json", j.dump(2) + "\n");
    }

    static RunState load(const fs::path& dir) {
        const fs::path path = dir / "state.json";
        if (!fs::exists(path)) fail(ErrorCode::not_found, "no state.json in run directory '" + dir.string() + "'");
        try {
            const json j = json::parse(read_file(path));
            RunState s;
            s.plan_hash = j.at("plan_hash").get<std::string>();
            s.completed = j.at("completed").get<std::vector<std::string>>();
            s.corpus_fingerprints = j.value("corpus_fingerprints", std::map<std::string, std::string>{});
            return s;
        } catch (const json::exception& e) {
            fail(ErrorCode::corrupt, "state file '" + path.string() + "' is malformed: " + e.what());
        }
    }
};

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

void prepare_corpus(const std::string& name, const CorpusSource& source, const fs::path& root) {
    if (source.phantom) {
        const fs::path spec_file = root / "phantom.json";
        if (!fs::exists(root)) {
            spdlog::info("generating phantom corpus '{}' at {}", name, root.string());
            generate_phantoms(*source.phantom, root);
        } else if (!fs::exists(spec_file) ||
                   json::parse(read_file(spec_file)) != json(*source.phantom)) {
            fail(ErrorCode::conflict, "corpus '" + name + "' at '" + root.string() +
                                          "' was generated from a different phantom spec");
        }
    }
    if (!fs::is_directory(root / "images")) {
        fail(ErrorCode::not_found, "corpus '" + name + "' at '" + root.string() + "' has no images/");
    }
    const fs::path manifest = root / "manifest.txt";
    if (fs::exists(manifest)) {
        const ManifestReport check = validate_manifest(scan_corpus(root), DatasetManifest::load(manifest));
        if (!check.pass()) {
            fail(ErrorCode::corrupt, "corpus '" + name + "' does not match its manifest:\n" + check.to_text());
        }
    }
}

std::vector<std::string> split_of(const fs::path& corpus, std::uint64_t seed, bool train) {
    DatasetSplit s = split_patients(list_patients(corpus), seed);
    return train ? s.train_patients : s.test_patients;
}

}  // namespace

RunReport run_plan(const ExperimentPlan& plan, const RunOptions& options) {
    plan.validate();
    const std::string plan_hash = plan.hash();

    fs::path run_dir;
    RunState state;
    if (options.resume) {
        run_dir = *options.resume;
        state = RunState::load(run_dir);
        if (state.plan_hash != plan_hash) {
            fail(ErrorCode::conflict, "run '" + run_dir.string() + "' belongs to plan " + state.plan_hash +
                                          ", not " + plan_hash);
        }
    } else {
        run_dir = fresh_run_dir(options.runs_root, plan_hash);
        state.plan_hash = plan_hash;
    }
    write_file_atomic(run_dir / "plan.json", plan.to_json().dump(2) + "\n");
    state.failed_stage.clear();
    state.error.clear();
    state.save(run_dir);

    std::map<std::string, fs::path> corpus_root;
    for (const auto& [name, src] : plan.corpora) corpus_root[name] = resolve(options.base_dir, src.path);
    std::map<std::string, const TrainEntry*> entries;
    for (const auto& exp : plan.experiments) {
        for (const auto& t : exp.train) entries[t.id] = &t;
    }

    RunReport report;
    report.plan_name = plan.name;
    report.plan_hash = plan_hash;
    report.run_dir = run_dir;

    std::string stage;
    auto finish = [&] {
        state.completed.push_back(stage);
        state.save(run_dir);
    };

    try {
        for (const auto& [name, src] : plan.corpora) {
            stage = "corpus:" + name;
            if (!state.done(stage)) {
                prepare_corpus(name, src, corpus_root[name]);
                state.corpus_fingerprints[name] = corpus_fingerprint(corpus_root[name]);
                finish();
            }
        }
        report.corpus_fingerprints = state.corpus_fingerprints;

        for (const auto& exp : plan.experiments) {
            ExperimentResult result{exp.name, exp.title, {}, {}};
            for (const auto& t : exp.train) {
                stage = "train:" + t.id;
                if (state.done(stage)) continue;
                const fs::path root = corpus_root[t.corpus];
                const auto patients = split_of(root, t.split_seed, true);
                const fs::path archive = run_dir / "archives" / (t.id + ".ctsa");
                fs::create_directories(archive.parent_path());
                pack_archive(build_pairs(root, t.organ, patients, plan.pairs), archive);
                spdlog::info("training '{}' ({} on {}, {} patients, {} epochs)", t.id, to_string(t.organ), t.corpus,
                             patients.size(), t.config.epochs);
                train(TrainingData::load(archive), t.config, run_dir / "train" / t.id);
                finish();
            }
            for (std::size_t i = 0; i < exp.evaluate.size(); ++i) {
                const EvalTarget& e = exp.evaluate[i];
                stage = "eval:" + exp.name + ":" + std::to_string(i);
                const fs::path out = run_dir / "reports" / (exp.name + "_" + std::to_string(i) + ".json");
                if (state.done(stage)) {
                    result.reports.push_back(DiceReport::from_json(json::parse(read_file(out))));
                    continue;
                }
                const TrainEntry& t = *entries.at(e.bundle);
                const ModelBundle bundle = ModelBundle::load(checkpoint_dir(run_dir / "train" / t.id, t.config.epochs));
                const fs::path root = corpus_root[e.corpus];
                DiceReport r;
                if (e.mode == EvalMode::held_out) {
                    const auto patients = split_of(root, t.split_seed, false);
                    r = evaluate(bundle, build_pairs(root, t.organ, patients, plan.pairs), plan.threshold);
                    r.metadata["eval_corpus_fingerprint"] = state.corpus_fingerprints.at(e.corpus);
                } else {
                    const auto patients = list_patients(root);
                    r = cross_evaluate(bundle, root, patients, plan.pairs, plan.threshold);
                    r.split_label = t.corpus + "/" + e.corpus;
                }
                r.metadata["bundle"] = e.bundle;
                r.metadata["train_corpus"] = t.corpus;
                r.metadata["train_corpus_fingerprint"] = state.corpus_fingerprints.at(t.corpus);
                r.metadata["eval_corpus"] = e.corpus;
                r.metadata["eval_mode"] = std::string(to_string(e.mode));
                r.metadata["split_seed"] = std::to_string(t.split_seed);
                r.metadata["config"] = json(t.config).dump();
                spdlog::info("{} on {}: mean Dice {:.4f}", e.bundle, e.corpus, r.mean_dice);
                fs::create_directories(out.parent_path());
                write_file_atomic(out, r.to_json().dump(2) + "\n");
                result.reports.push_back(std::move(r));
                finish();
            }
            result.table = dice_table(result.reports, exp.title);
            report.experiments.push_back(std::move(result));
        }
    } catch (const std::exception& ex) {
        state.failed_stage = stage;
        state.error = ex.what();
        state.save(run_dir);
        spdlog::error("stage '{}' failed: {}", stage, ex.what());
        throw;
    }

    report.fingerprint = sha256_hex(report_body(report).dump());
    write_file_atomic(run_dir / "report.json", report.to_json().dump(2) + "\n");
    write_file_atomic(run_dir / "tables.txt", report.tables());
    return report;
}

}  // namespace ctseg
