#include <doctest.h>

#include <nlohmann/json.hpp>

#include "ctseg/error.hpp"
#include "ctseg/fs_util.hpp"
#include "ctseg/harness.hpp"
#include "support.hpp"

using namespace ctseg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ExperimentPlan tiny_plan(const fs::path& corpora) {
    ExperimentPlan p;
    p.name = "tiny";
    p.corpora["a"] = {corpora / "a", testing::small_phantom(3, 4)};
    Experiment e{"liver", "Tiny liver", {}, {}};
    e.train.push_back({"liver_a", "a", Organ::liver, 1, testing::tiny_train_config(1, 3)});
    e.evaluate.push_back({"liver_a", "a", EvalMode::held_out});
    p.experiments.push_back(e);
    return p;
}

Error expect_error(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e;
    }
    FAIL("no error raised");
    return Error(ErrorCode::io, "unreachable");
}

}  // namespace

TEST_CASE("plan validation happens before any compute") {
    testing::TempDir dir;
    ExperimentPlan p = tiny_plan(dir / "corpora");
    p.experiments[0].evaluate.push_back({"ghost", "a", EvalMode::held_out});
    RunOptions opts;
    opts.runs_root = dir / "runs";
    const Error e = expect_error([&] { run_plan(p, opts); });
    CHECK(e.code() == ErrorCode::invalid_argument);
    CHECK(std::string(e.what()).find("ghost") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "runs"));
    CHECK_FALSE(fs::exists(dir / "corpora"));

    // Evaluating a bundle trained only by a later experiment is also refused.
    ExperimentPlan late = tiny_plan(dir / "corpora");
    Experiment early{"early", "", {}, {{"liver_b", "a", EvalMode::held_out}}};
    Experiment trains{"trains", "", {{"liver_b", "a", Organ::liver, 1, testing::tiny_train_config(1, 1)}}, {}};
    late.experiments.insert(late.experiments.begin(), {early, trains});
    CHECK_THROWS_AS(late.validate(), Error);

    ExperimentPlan bad = tiny_plan(dir / "corpora");
    bad.experiments[0].train[0].corpus = "nowhere";
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = tiny_plan(dir / "corpora");
    bad.experiments[0].train.push_back(bad.experiments[0].train[0]);
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = tiny_plan(dir / "corpora");
    bad.corpora["b"] = {dir / "b", std::nullopt};
    bad.experiments[0].evaluate[0].corpus = "b";
    CHECK_THROWS_AS(bad.validate(), Error);  // held-out needs the training corpus
    bad = tiny_plan(dir / "corpora");
    bad.threshold = 1.0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("plan JSON round trip and default plan shape") {
    testing::TempDir dir;
    const ExperimentPlan p = default_plan(dir / "corpora");
    CHECK_NOTHROW(p.validate());
    REQUIRE(p.experiments.size() == 3);
    CHECK(p.experiments[0].train.size() == 5);
    CHECK(p.experiments[1].train.size() == 2);
    CHECK(p.experiments[2].train.empty());
    CHECK(p.experiments[2].evaluate.size() == 5);
    for (const auto& e : p.experiments[2].evaluate) CHECK(e.mode == EvalMode::all_patients);

    const ExperimentPlan back = ExperimentPlan::from_json(p.to_json());
    CHECK(back.to_json() == p.to_json());
    CHECK(back.hash() == p.hash());

    write_file_atomic(dir / "plan.json", p.to_json().dump());
    CHECK(ExperimentPlan::load(dir / "plan.json").hash() == p.hash());
    CHECK(expect_error([&] { ExperimentPlan::load(dir / "missing.json"); }).code() == ErrorCode::not_found);
    write_file_atomic(dir / "junk.json", "{not json");
    CHECK(expect_error([&] { ExperimentPlan::load(dir / "junk.json"); }).code() == ErrorCode::invalid_argument);
    CHECK_THROWS_AS(ExperimentPlan::from_json(json{{"corpora", json::object()}}), Error);
}

TEST_CASE("two runs of the same plan agree; resume of a finished run is a no-op") {
    testing::TempDir dir;
    const ExperimentPlan p = tiny_plan(dir / "corpora");
    RunOptions opts;
    opts.runs_root = dir / "runs";
    const RunReport r1 = run_plan(p, opts);
    const RunReport r2 = run_plan(p, opts);
    CHECK(r1.run_dir != r2.run_dir);
    CHECK(r1.fingerprint == r2.fingerprint);
    CHECK(r1.plan_hash == p.hash());
    REQUIRE(r1.experiments.size() == 1);
    const DiceReport* d = r1.find("liver_a", "a");
    REQUIRE(d != nullptr);
    CHECK(d->per_patient.size() == 2);  // 3 patients: 1 train, 2 test
    CHECK(d->metadata.at("train_corpus_fingerprint") == r1.corpus_fingerprints.at("a"));
    CHECK(fs::exists(r1.run_dir / "report.json"));
    CHECK(fs::exists(r1.run_dir / "tables.txt"));
    CHECK(r1.tables().find("Liver & 60/40") != std::string::npos);

    const auto trained_at = fs::last_write_time(r1.run_dir / "train/liver_a/train_log.tsv");
    RunOptions again = opts;
    again.resume = r1.run_dir;
    const RunReport r3 = run_plan(p, again);
    CHECK(r3.fingerprint == r1.fingerprint);
    CHECK(fs::last_write_time(r1.run_dir / "train/liver_a/train_log.tsv") == trained_at);

    ExperimentPlan other = p;
    other.threshold = 0.4;
    CHECK(expect_error([&] { run_plan(other, again); }).code() == ErrorCode::conflict);
}

TEST_CASE("failed stage is recorded and the run resumes from it") {
    testing::TempDir dir;
    ExperimentPlan p = tiny_plan(dir / "corpora");
    // A second corpus with no phantom spec and nothing on disk yet.
    p.corpora["z"] = {dir / "external", std::nullopt};
    p.experiments[0].evaluate.push_back({"liver_a", "z", EvalMode::all_patients});
    RunOptions opts;
    opts.runs_root = dir / "runs";
    const Error e = expect_error([&] { run_plan(p, opts); });
    CHECK(e.code() == ErrorCode::not_found);

    REQUIRE(fs::exists(opts.runs_root));
    const fs::path run = fs::directory_iterator(opts.runs_root)->path();
    const json state = json::parse(read_file(run / "state.json"));
    CHECK(state.at("failed_stage") == "corpus:z");
    CHECK(state.at("error").get<std::string>().find("external") != std::string::npos);
    CHECK(state.at("completed") == json::array({"corpus:a"}));

    generate_phantoms(testing::small_phantom(2, 4, 21, PhantomStyle::style_B), dir / "external");
    RunOptions resume = opts;
    resume.resume = run;
    const RunReport r = run_plan(p, resume);
    const json after = json::parse(read_file(run / "state.json"));
    CHECK(after.at("failed_stage").is_null());
    CHECK(after.at("completed").size() == 5);
    REQUIRE(r.find("liver_a", "z") != nullptr);
    CHECK(r.find("liver_a", "z")->per_patient.size() == 2);
}

TEST_CASE("a corpus generated from another spec is a conflict") {
    testing::TempDir dir;
    ExperimentPlan p = tiny_plan(dir / "corpora");
    generate_phantoms(testing::small_phantom(3, 4, 99), dir / "corpora/a");
    RunOptions opts;
    opts.runs_root = dir / "runs";
    CHECK(expect_error([&] { run_plan(p, opts); }).code() == ErrorCode::conflict);
}
