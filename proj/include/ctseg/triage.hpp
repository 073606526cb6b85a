#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctseg/ingest.hpp"
#include "ctseg/organ.hpp"
#include "ctseg/trainer.hpp"

namespace ctseg::triage {

enum class CaseStatus { queued, processing, ready, decided, failed };
enum class Decision { immediate_intervention, urgent_review, routine };

std::string_view to_string(CaseStatus status);
CaseStatus parse_status(std::string_view name);
std::string_view to_string(Decision decision);
Decision parse_decision(std::string_view name);

/// The only reachable transitions: queued->processing, processing->ready,
/// processing->failed, failed->queued, ready->decided. Crash recovery also
/// returns processing->queued.
bool transition_allowed(CaseStatus from, CaseStatus to);

/// Microseconds since the Unix epoch.
using Micros = std::int64_t;
std::string format_time(Micros t);

struct DecisionRecord {
    Decision decision = Decision::routine;
    std::string clinician_id;
    Micros decided_at = 0;

    friend bool operator==(const DecisionRecord&, const DecisionRecord&) = default;
};

struct JobRecord {
    Micros submitted_at = 0;
    std::optional<Micros> started_at;
    std::optional<Micros> finished_at;
    std::string error;
    int attempts = 0;
};

struct TriageCase {
    std::string case_id;
    std::string patient_ref;
    std::string payload_hash;
    int slice_count = 0;
    CaseStatus status = CaseStatus::queued;
    std::optional<double> severity_score;  // laceration mL; ready and decided only
    std::optional<DecisionRecord> decision;  // decided only
    std::optional<nlohmann::json> result;  // StudyResult summary
    JobRecord job;
    long sequence = 0;  // submission order

    /// Summary for queue listings (no result document).
    nlohmann::json summary_json() const;
    nlohmann::json to_json() const;
};

struct CasePage {
    std::vector<TriageCase> items;
    long total = 0;
    int page = 1;
    int page_size = 20;
};

/// Durable case store: one SQLite file in WAL mode. Every status change is a
/// conditional update inside a transaction and is appended to a transition
/// log. Thread-safe; writes are serialized.
class CaseStore {
public:
    explicit CaseStore(const std::filesystem::path& db_path);
    ~CaseStore();
    CaseStore(const CaseStore&) = delete;
    CaseStore& operator=(const CaseStore&) = delete;

    struct SubmitOutcome {
        std::string case_id;
        bool created = false;
    };
    /// Idempotent on payload_hash.
    SubmitOutcome submit(const std::string& payload_hash, const std::string& patient_ref, int slice_count);

    std::optional<TriageCase> get(const std::string& case_id) const;

    /// Claims the oldest queued case (or a processing case whose lease has
    /// expired) for `worker`.
    std::optional<TriageCase> claim(const std::string& worker, std::chrono::milliseconds lease);
    /// processing -> ready. Only the lease holder may complete.
    TriageCase complete(const std::string& case_id, const std::string& worker, const nlohmann::json& result,
                        double severity);
    /// processing -> failed with the error detail.
    TriageCase fail_job(const std::string& case_id, const std::string& worker, const std::string& error);
    /// failed -> queued.
    TriageCase retry(const std::string& case_id);
    /// ready -> decided. Conflict for any other status, including decided.
    TriageCase record_decision(const std::string& case_id, Decision decision, const std::string& clinician_id);

    /// Returns every processing case to queued; run at startup. Returns the
    /// number of cases recovered.
    int recover();

    /// Severity descending (cases without a score last), then submission
    /// order. Pages are 1-based.
    CasePage list(std::optional<CaseStatus> status, int page, int page_size) const;

    struct Transition {
        std::string case_id;
        CaseStatus from;
        CaseStatus to;
    };
    std::vector<Transition> transitions() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Result of processing one case.
struct ProcessOutput {
    nlohmann::json result;
    double severity = 0.0;
};

/// Runs segmentation for a claimed case. `series_dir` holds the uploaded
/// DICOM files; artifacts go below `result_dir`.
using CaseProcessor = std::function<ProcessOutput(const TriageCase&, const std::filesystem::path& series_dir,
                                                  const std::filesystem::path& result_dir)>;

/// segment_study with the given bundles; severity is the laceration volume
/// in mL (0 without a laceration bundle).
CaseProcessor segmentation_processor(std::map<Organ, ModelBundle> bundles, WindowSpec window, double threshold);

struct UploadedFile {
    std::string name;
    std::string content;
};

struct ServiceConfig {
    std::filesystem::path data_dir = "triage-data";
    std::string token;
    int workers = 1;
    std::chrono::milliseconds lease{std::chrono::minutes(10)};
    std::chrono::milliseconds poll_interval{200};
};

class TriageService {
public:
    TriageService(ServiceConfig config, CaseProcessor processor);
    ~TriageService();

    /// Parses the files as one CT series, stores them under their payload
    /// hash and registers the case. Throws Error(invalid_argument) with the
    /// parser diagnostics when they do not form a series.
    CaseStore::SubmitOutcome submit_files(const std::vector<UploadedFile>& files);
    CaseStore::SubmitOutcome submit_directory(const std::filesystem::path& dir);

    /// Claims and processes one case; false when the queue is empty.
    bool process_next(const std::string& worker);

    void start_workers();
    void stop_workers();

    CaseStore& store() { return *store_; }
    const ServiceConfig& config() const { return config_; }
    std::filesystem::path overlay_path(const std::string& case_id, int slice) const;

private:
    std::filesystem::path series_dir(const std::string& payload_hash) const;
    std::filesystem::path result_dir(const std::string& case_id) const;

    ServiceConfig config_;
    CaseProcessor processor_;
    std::unique_ptr<CaseStore> store_;
    std::atomic<bool> running_{false};
    std::vector<std::thread> workers_;
};

}  // namespace ctseg::triage
