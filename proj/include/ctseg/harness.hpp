#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctseg/metrics.hpp"
#include "ctseg/organ.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/preprocess.hpp"
#include "ctseg/trainer.hpp"

namespace ctseg {

/// A corpus directory; with a phantom spec it is generated when missing.
struct CorpusSource {
    std::filesystem::path path;
    std::optional<PhantomSpec> phantom;
};

/// One model to train: organ on a corpus with a patient split.
struct TrainEntry {
    std::string id;
    std::string corpus;
    Organ organ = Organ::liver;
    std::uint64_t split_seed = 0;
    TrainConfig config;
};

enum class EvalMode {
    held_out,  // test patients of the bundle's own split
    all_patients,  // every annotated patient of the corpus (cross-corpus)
};

struct EvalTarget {
    std::string bundle;  // a TrainEntry id
    std::string corpus;
    EvalMode mode = EvalMode::held_out;
};

struct Experiment {
    std::string name;
    std::string title;
    std::vector<TrainEntry> train;
    std::vector<EvalTarget> evaluate;
};

struct ExperimentPlan {
    std::string name = "plan";
    double threshold = kDefaultThreshold;
    PairOptions pairs;
    std::map<std::string, CorpusSource> corpora;
    std::vector<Experiment> experiments;

    /// Checks the whole graph: corpus references, unique bundle ids, configs,
    /// evaluation targets naming bundles trained earlier in the plan.
    /// Throws Error(invalid_argument) naming the first problem.
    void validate() const;
    /// sha256 of the canonical JSON form.
    std::string hash() const;

    nlohmann::json to_json() const;
    static ExperimentPlan from_json(const nlohmann::json& j);
    static ExperimentPlan load(const std::filesystem::path& path);
};

std::string_view to_string(EvalMode mode);
EvalMode parse_eval_mode(std::string_view name);

/// Reduced-width configuration that trains on one core in minutes.
TrainConfig desk_train_config(int epochs, std::uint64_t seed);

/// Three experiments on two phantom corpora: standard-style training and
/// held-out testing (five organs), local-style training and testing (liver
/// and laceration), and standard-trained models applied to the local corpus.
ExperimentPlan default_plan(const std::filesystem::path& corpora_dir);

struct RunOptions {
    /// Run directories are created below this.
    std::filesystem::path runs_root = "runs";
    /// Existing run directory to continue; completed stages are skipped.
    std::optional<std::filesystem::path> resume;
    /// Relative corpus paths resolve against this.
    std::filesystem::path base_dir = ".";
};

struct ExperimentResult {
    std::string name;
    std::string title;
    std::vector<DiceReport> reports;
    std::string table;
};

struct RunReport {
    std::string plan_name;
    std::string plan_hash;
    std::filesystem::path run_dir;
    std::map<std::string, std::string> corpus_fingerprints;
    std::vector<ExperimentResult> experiments;
    /// sha256 over the report content (no timestamps or paths).
    std::string fingerprint;

    const DiceReport* find(const std::string& bundle, const std::string& corpus) const;
    nlohmann::json to_json() const;
    std::string tables() const;
};

/// Validates, then runs corpus -> train -> evaluate stages in plan order
/// inside <runs_root>/<UTC timestamp>-<plan hash prefix>/. Writes state.json
/// after every stage; on failure the state names the stage and the error and
/// the Error is rethrown. Writes report.json and tables.txt on success.
RunReport run_plan(const ExperimentPlan& plan, const RunOptions& options = {});

}  // namespace ctseg
