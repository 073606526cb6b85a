// Store-level checks shared by the unit tests and the acceptance binary.
#pragma once

#include <algorithm>
#include <csignal>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "ctseg/error.hpp"
#include "ctseg/hash.hpp"
#include "ctseg/rng.hpp"
#include "ctseg/triage.hpp"

namespace testing {

struct FuzzOutcome {
    long operations = 0;
    long accepted = 0;
    long rejected = 0;
    std::string first_violation;  // empty when the store agreed with the model throughout

    bool ok() const { return first_violation.empty(); }
};

/// Random operations against a CaseStore and a plain in-memory model of the
/// queue. Any divergence in status, outcome, ordering or transition log is a
/// violation.
inline FuzzOutcome fuzz_case_store(const std::filesystem::path& db, std::uint64_t seed, long operations) {
    using namespace ctseg;
    using namespace ctseg::triage;

    struct ModelCase {
        std::string id;
        CaseStatus status = CaseStatus::queued;
        std::string owner;
        std::optional<double> severity;
        std::optional<Decision> decision;
        long seq = 0;
    };

    FuzzOutcome out;
    CaseStore store(db);
    Rng rng(seed);
    std::vector<ModelCase> model;
    std::map<std::string, std::size_t> by_hash;
    std::vector<std::string> hashes;
    std::size_t transitions_seen = 0;
    const std::vector<std::string> workers{"w0", "w1", "w2"};

    auto violate = [&](const std::string& what) {
        if (out.first_violation.empty()) out.first_violation = "op " + std::to_string(out.operations) + ": " + what;
    };
    // Runs an operation that the model says must succeed or must conflict.
    auto expect_outcome = [&](bool should_succeed, auto&& op, const std::string& label) -> bool {
        try {
            op();
            if (!should_succeed) violate(label + " succeeded but the model forbids it");
            ++out.accepted;
            return true;
        } catch (const Error& e) {
            if (should_succeed) violate(label + " failed: " + e.what());
            else if (e.code() != ErrorCode::conflict && e.code() != ErrorCode::not_found) {
                violate(label + " failed with an unexpected code: " + e.what());
            }
            ++out.rejected;
            return false;
        }
    };
    auto pick = [&]() -> ModelCase* {
        if (model.empty()) return nullptr;
        return &model[uniform_index(rng, model.size())];
    };

    for (out.operations = 0; out.operations < operations && out.ok(); ++out.operations) {
        const std::size_t kind = uniform_index(rng, 100);
        if (kind < 15 || model.empty()) {
            // Submit: a quarter of submissions repeat an earlier payload.
            std::string hash;
            if (!hashes.empty() && uniform_index(rng, 4) == 0) {
                hash = hashes[uniform_index(rng, hashes.size())];
            } else {
                hash = sha256_hex("payload-" + std::to_string(seed) + "-" + std::to_string(out.operations));
                hashes.push_back(hash);
            }
            const auto r = store.submit(hash, "P", 3);
            const auto it = by_hash.find(hash);
            if (it != by_hash.end()) {
                if (r.created || r.case_id != model[it->second].id) violate("resubmission created a new case");
            } else {
                if (!r.created) violate("fresh payload reported as duplicate");
                by_hash[hash] = model.size();
                model.push_back({r.case_id, CaseStatus::queued, "", std::nullopt, std::nullopt,
                                 static_cast<long>(model.size())});
            }
            ++out.accepted;
        } else if (kind < 35) {
            const std::string& w = workers[uniform_index(rng, workers.size())];
            ModelCase* expected = nullptr;
            for (auto& c : model) {
                if (c.status == CaseStatus::queued && (expected == nullptr || c.seq < expected->seq)) expected = &c;
            }
            const auto got = store.claim(w, std::chrono::minutes(10));
            if (!expected) {
                if (got) violate("claim returned a case from an empty queue");
            } else if (!got || got->case_id != expected->id) {
                violate("claim did not return the oldest queued case");
            } else {
                expected->status = CaseStatus::processing;
                expected->owner = w;
            }
        } else if (kind < 55) {
            ModelCase* c = pick();
            const std::string& w = uniform_index(rng, 5) == 0 ? workers[uniform_index(rng, workers.size())] : c->owner;
            const double severity = static_cast<double>(uniform_index(rng, 50)) / 10.0;
            const bool ok = c->status == CaseStatus::processing && w == c->owner;
            if (expect_outcome(ok, [&] { store.complete(c->id, w, {{"k", 1}}, severity); }, "complete " + c->id) && ok) {
                c->status = CaseStatus::ready;
                c->severity = severity;
            }
        } else if (kind < 63) {
            ModelCase* c = pick();
            const bool ok = c->status == CaseStatus::processing;
            if (expect_outcome(ok, [&] { store.fail_job(c->id, c->owner, "boom"); }, "fail " + c->id) && ok) {
                c->status = CaseStatus::failed;
            }
        } else if (kind < 70) {
            ModelCase* c = pick();
            const bool ok = c->status == CaseStatus::failed;
            if (expect_outcome(ok, [&] { store.retry(c->id); }, "retry " + c->id) && ok) c->status = CaseStatus::queued;
        } else if (kind < 85) {
            ModelCase* c = pick();
            const auto d = static_cast<Decision>(uniform_index(rng, 3));
            const bool ok = c->status == CaseStatus::ready;
            if (expect_outcome(ok, [&] { store.record_decision(c->id, d, "dr"); }, "decide " + c->id) && ok) {
                c->status = CaseStatus::decided;
                c->decision = d;
            }
        } else if (kind < 88) {
            int n = 0;
            for (auto& c : model) {
                if (c.status == CaseStatus::processing) {
                    c.status = CaseStatus::queued;
                    c.owner.clear();
                    ++n;
                }
            }
            if (store.recover() != n) violate("recover count differs from the model");
        } else if (kind < 90) {
            // Operations on unknown ids are not-found, never side effects.
            try {
                store.record_decision("case-missing", Decision::routine, "dr");
                violate("decision on a missing case accepted");
            } catch (const Error& e) {
                if (e.code() != ErrorCode::not_found) violate("missing case gave the wrong code");
            }
        } else {
            // Listing order: severity descending, unscored last, then submission order.
            const int page_size = 1 + static_cast<int>(uniform_index(rng, 7));
            std::vector<const ModelCase*> sorted;
            for (const auto& c : model) sorted.push_back(&c);
            std::stable_sort(sorted.begin(), sorted.end(), [](const ModelCase* a, const ModelCase* b) {
                if (a->severity.has_value() != b->severity.has_value()) return a->severity.has_value();
                if (a->severity && *a->severity != *b->severity) return *a->severity > *b->severity;
                return a->seq < b->seq;
            });
            const int pages = static_cast<int>((sorted.size() + page_size - 1) / page_size);
            const int page = 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(pages)));
            const CasePage p = store.list(std::nullopt, page, page_size);
            if (p.total != static_cast<long>(model.size())) violate("list total differs");
            for (std::size_t i = 0; i < p.items.size(); ++i) {
                const std::size_t k = static_cast<std::size_t>(page - 1) * page_size + i;
                if (k >= sorted.size() || p.items[i].case_id != sorted[k]->id) {
                    violate("list order differs at position " + std::to_string(k));
                    break;
                }
            }
        }

        // Every case agrees with the model after every operation; sampled to keep cost linear.
        if (out.operations % 50 == 0 || !out.ok()) {
            for (const auto& m : model) {
                const auto c = store.get(m.id);
                if (!c || c->status != m.status) {
                    violate("status of " + m.id + " differs from the model");
                    break;
                }
                if (c->decision.has_value() != m.decision.has_value() ||
                    (m.decision && c->decision->decision != *m.decision)) {
                    violate("decision of " + m.id + " differs from the model");
                    break;
                }
                if ((c->status == CaseStatus::ready || c->status == CaseStatus::decided) != c->severity_score.has_value()) {
                    violate("severity presence of " + m.id + " does not match its status");
                    break;
                }
            }
            const auto log = store.transitions();
            for (; transitions_seen < log.size(); ++transitions_seen) {
                const auto& t = log[transitions_seen];
                if (!transition_allowed(t.from, t.to)) violate("illegal transition logged for " + t.case_id);
            }
        }
    }

    // Replaying the log from queued reproduces every final status.
    std::map<std::string, CaseStatus> replay;
    for (const auto& m : model) replay[m.id] = CaseStatus::queued;
    for (const auto& t : store.transitions()) {
        if (replay.at(t.case_id) != t.from) violate("transition log for " + t.case_id + " is not a chain");
        replay[t.case_id] = t.to;
    }
    for (const auto& m : model) {
        if (replay.at(m.id) != m.status) violate("replayed status of " + m.id + " differs");
    }
    return out;
}

struct KillOutcome {
    bool decisions_survived = false;
    bool processing_requeued = false;
    bool store_usable = false;
    std::string detail;

    bool ok() const { return decisions_survived && processing_requeued && store_usable; }
};

/// A child process records decisions, leaves one case mid-processing, then
/// keeps writing until it is SIGKILLed. The parent reopens the store.
inline KillOutcome kill_restart(const std::filesystem::path& db) {
    using namespace ctseg;
    using namespace ctseg::triage;
    KillOutcome out;
    int fds[2];
    if (pipe(fds) != 0) {
        out.detail = "pipe failed";
        return out;
    }
    const pid_t pid = fork();
    if (pid == 0) {
        close(fds[0]);
        try {
            CaseStore store(db);
            std::vector<std::string> ids;
            for (int i = 0; i < 5; ++i) ids.push_back(store.submit(sha256_hex("kill-" + std::to_string(i)), "K", 2).case_id);
            for (int i = 0; i < 3; ++i) {
                const auto c = store.claim("w", std::chrono::minutes(10));
                store.complete(c->case_id, "w", {{"i", i}}, 1.0 + i);
            }
            store.record_decision(ids[0], Decision::immediate_intervention, "dr-a");
            store.record_decision(ids[1], Decision::routine, "dr-b");
            store.claim("w", std::chrono::minutes(10));  // ids[3] stays processing
            const char ready = 1;
            if (write(fds[1], &ready, 1) != 1) _exit(3);
            for (long n = 0;; ++n) store.submit(sha256_hex("flood-" + std::to_string(n)), "F", 1);
        } catch (...) {
            _exit(2);
        }
    }
    close(fds[1]);
    char buf = 0;
    const bool signalled = read(fds[0], &buf, 1) == 1;
    close(fds[0]);
    usleep(20000);  // let the flood get going
    kill(pid, SIGKILL);
    int status = 0;
    waitpid(pid, &status, 0);
    if (!signalled || !WIFSIGNALED(status)) {
        out.detail = "child did not reach the kill point";
        return out;
    }

    try {
        CaseStore store(db);
        const auto a = store.get("case-" + sha256_hex("kill-0").substr(0, 16));
        const auto b = store.get("case-" + sha256_hex("kill-1").substr(0, 16));
        out.decisions_survived = a && b && a->status == CaseStatus::decided && b->status == CaseStatus::decided &&
                                 a->decision->decision == Decision::immediate_intervention &&
                                 a->decision->clinician_id == "dr-a" && b->decision->decision == Decision::routine;
        const std::string mid = "case-" + sha256_hex("kill-3").substr(0, 16);
        const int recovered = store.recover();
        const auto m = store.get(mid);
        out.processing_requeued = recovered == 1 && m && m->status == CaseStatus::queued;
        const auto again = store.claim("w2", std::chrono::minutes(1));
        out.store_usable = again && again->case_id == mid && store.list(std::nullopt, 1, 5).total >= 5;
        out.detail = "recovered " + std::to_string(recovered) + ", total cases " +
                     std::to_string(store.list(std::nullopt, 1, 5).total);
    } catch (const std::exception& e) {
        out.detail = e.what();
    }
    return out;
}

}  // namespace testing
