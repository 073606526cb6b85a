#include <algorithm>
#include <cstdio>
#include <fstream>

#include <unistd.h>

#include <spdlog/spdlog.h>

#include "ctseg/error.hpp"
#include "ctseg/fs_util.hpp"
#include "ctseg/hash.hpp"
#include "ctseg/inference.hpp"
#include "ctseg/triage.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctseg::triage {

CaseProcessor segmentation_processor(std::map<Organ, ModelBundle> bundles, WindowSpec window, double threshold) {
    window.validate();
    return [bundles = std::move(bundles), window, threshold](const TriageCase&, const fs::path& series_dir,
                                                             const fs::path& result_dir) {
        const CtSeries series = load_series(series_dir);
        SegmentOptions options;
        options.window = window;
        options.threshold = threshold;
        const StudyResult result = segment_study(bundles, series, options);
        write_study(result, series, window, result_dir);
        return ProcessOutput{result.to_json(), result.laceration_ml()};
    };
}

TriageService::TriageService(ServiceConfig config, CaseProcessor processor)
    : config_(std::move(config)), processor_(std::move(processor)) {
    if (!processor_) fail(ErrorCode::invalid_argument, "triage service needs a case processor");
    if (config_.workers < 0) fail(ErrorCode::invalid_argument, "worker count must be >= 0");
    fs::create_directories(config_.data_dir / "series");
    fs::create_directories(config_.data_dir / "results");
    fs::create_directories(config_.data_dir / "incoming");
    store_ = std::make_unique<CaseStore>(config_.data_dir / "cases.db");
    if (const int n = store_->recover(); n > 0) spdlog::warn("returned {} interrupted case(s) to the queue", n);
}

TriageService::~TriageService() { stop_workers(); }

fs::path TriageService::series_dir(const std::string& payload_hash) const {
    return config_.data_dir / "series" / payload_hash;
}

fs::path TriageService::result_dir(const std::string& case_id) const { return config_.data_dir / "results" / case_id; }

fs::path TriageService::overlay_path(const std::string& case_id, int slice) const {
    char name[32];
    std::snprintf(name, sizeof name, "slice_%04d.png", slice);
    return result_dir(case_id) / "overlays" / name;
}

CaseStore::SubmitOutcome TriageService::submit_files(const std::vector<UploadedFile>& files) {
    if (files.empty()) fail(ErrorCode::invalid_argument, "submission contains no files");
    std::vector<std::string> digests;
    std::vector<std::size_t> order(files.size());
    for (std::size_t i = 0; i < files.size(); ++i) {
        if (files[i].content.empty()) {
            fail(ErrorCode::invalid_argument, "uploaded file '" + files[i].name + "' is empty");
        }
        digests.push_back(sha256_hex(files[i].content));
        order[i] = i;
    }
    // Payload identity ignores file names and upload order.
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return digests[a] < digests[b]; });
    Sha256 h;
    for (std::size_t i : order) h.update(digests[i]);
    const std::string payload = h.hex_digest();

    if (const fs::path dir = series_dir(payload); fs::is_directory(dir)) {
        const CtSeries series = load_series(dir);
        return store_->submit(payload, series.patient_id, static_cast<int>(series.slices.size()));
    }

    static std::atomic<unsigned long> counter{0};
    const std::string tag = payload.substr(0, 16) + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
    const fs::path staging = config_.data_dir / "incoming" / tag;
    fs::create_directories(staging);
    try {
        for (std::size_t k = 0; k < order.size(); ++k) {
            char name[32];
            std::snprintf(name, sizeof name, "%05zu.dcm", k);
            std::ofstream out(staging / name, std::ios::binary);
            out.write(files[order[k]].content.data(), static_cast<std::streamsize>(files[order[k]].content.size()));
            if (!out) fail(ErrorCode::io, "cannot stage uploaded file '" + files[order[k]].name + "'");
        }
        CtSeries series;
        try {
            series = load_series(staging);
        } catch (const Error& e) {
            fail(ErrorCode::invalid_argument, std::string("upload is not a readable CT series: ") + e.what());
        }
        const fs::path target = series_dir(payload);
        std::error_code ec;
        fs::rename(staging, target, ec);
        if (ec) {
            // A concurrent upload of the same payload won the rename.
            if (!fs::is_directory(target)) fail(ErrorCode::io, "cannot store series: " + ec.message());
            fs::remove_all(staging);
        }
        return store_->submit(payload, series.patient_id, static_cast<int>(series.slices.size()));
    } catch (...) {
        std::error_code ec;
        fs::remove_all(staging, ec);
        throw;
    }
}

CaseStore::SubmitOutcome TriageService::submit_directory(const fs::path& dir) {
    if (!fs::is_directory(dir)) fail(ErrorCode::not_found, "series directory '" + dir.string() + "' does not exist");
    std::vector<UploadedFile> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file()) files.push_back({e.path().filename().string(), read_file(e.path())});
    }
    return submit_files(files);
}

bool TriageService::process_next(const std::string& worker) {
    const auto claimed = store_->claim(worker, config_.lease);
    if (!claimed) return false;
    const fs::path out = result_dir(claimed->case_id);
    try {
        std::error_code ec;
        fs::remove_all(out, ec);
        fs::create_directories(out);
        const ProcessOutput result = processor_(*claimed, series_dir(claimed->payload_hash), out);
        store_->complete(claimed->case_id, worker, result.result, result.severity);
        spdlog::info("case {} ready, severity {}", claimed->case_id, result.severity);
    } catch (const std::exception& e) {
        spdlog::error("case {} failed: {}", claimed->case_id, e.what());
        store_->fail_job(claimed->case_id, worker, e.what());
    }
    return true;
}

void TriageService::start_workers() {
    if (running_.exchange(true)) return;
    for (int i = 0; i < config_.workers; ++i) {
        workers_.emplace_back([this, i] {
            const std::string name = "worker-" + std::to_string(i);
            while (running_) {
                bool worked = false;
                try {
                    worked = process_next(name);
                } catch (const std::exception& e) {
                    spdlog::error("{}: {}", name, e.what());
                }
                if (!worked) {
                    const auto until = std::chrono::steady_clock::now() + config_.poll_interval;
                    while (running_ && std::chrono::steady_clock::now() < until) {
                        std::this_thread::sleep_for(std::chrono::milliseconds(10));
                    }
                }
            }
        });
    }
}

void TriageService::stop_workers() {
    running_ = false;
    for (auto& t : workers_) {
        if (t.joinable()) t.join();
    }
    workers_.clear();
}

}  // namespace ctseg::triage
