#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>

#include "ctseg/error.hpp"
#include "ctseg/triage.hpp"
#include "sqlite.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctseg::triage {

std::string_view to_string(CaseStatus s) {
    switch (s) {
        case CaseStatus::queued: return "queued";
        case CaseStatus::processing: return "processing";
        case CaseStatus::ready: return "ready";
        case CaseStatus::decided: return "decided";
        case CaseStatus::failed: return "failed";
    }
    return "unknown";
}

CaseStatus parse_status(std::string_view name) {
    for (CaseStatus s : {CaseStatus::queued, CaseStatus::processing, CaseStatus::ready, CaseStatus::decided,
                         CaseStatus::failed}) {
        if (to_string(s) == name) return s;
    }
    fail(ErrorCode::invalid_argument, "unknown case status '" + std::string(name) + "'");
}

std::string_view to_string(Decision d) {
    switch (d) {
        case Decision::immediate_intervention: return "immediate_intervention";
        case Decision::urgent_review: return "urgent_review";
        case Decision::routine: return "routine";
    }
    return "unknown";
}

Decision parse_decision(std::string_view name) {
    for (Decision d : {Decision::immediate_intervention, Decision::urgent_review, Decision::routine}) {
        if (to_string(d) == name) return d;
    }
    fail(ErrorCode::invalid_argument, "unknown decision '" + std::string(name) +
                                          "' (expected immediate_intervention, urgent_review or routine)");
}

bool transition_allowed(CaseStatus from, CaseStatus to) {
    using S = CaseStatus;
    return (from == S::queued && to == S::processing) || (from == S::processing && to == S::ready) ||
           (from == S::processing && to == S::failed) || (from == S::failed && to == S::queued) ||
           (from == S::ready && to == S::decided) || (from == S::processing && to == S::queued);
}

std::string format_time(Micros t) {
    const std::time_t secs = static_cast<std::time_t>(t / 1000000);
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[48];
    const std::size_t n = std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    std::snprintf(buf + n, sizeof buf - n, ".%06ldZ", static_cast<long>(t % 1000000));
    return buf;
}

json TriageCase::summary_json() const {
    json j = {{"case_id", case_id},
              {"patient_ref", patient_ref},
              {"status", std::string(to_string(status))},
              {"slice_count", slice_count},
              {"submitted_at", format_time(job.submitted_at)}};
    j["severity_score"] = severity_score ? json(*severity_score) : json(nullptr);
    if (decision) {
        j["decision"] = {{"decision", std::string(to_string(decision->decision))},
                         {"clinician_id", decision->clinician_id},
                         {"decided_at", format_time(decision->decided_at)}};
    } else {
        j["decision"] = nullptr;
    }
    return j;
}

json TriageCase::to_json() const {
    json j = summary_json();
    j["payload_hash"] = payload_hash;
    j["severity_basis"] = "laceration volume in mL (non-clinical convention)";
    j["job"] = {{"submitted_at", format_time(job.submitted_at)},
                {"started_at", job.started_at ? json(format_time(*job.started_at)) : json(nullptr)},
                {"finished_at", job.finished_at ? json(format_time(*job.finished_at)) : json(nullptr)},
                {"error", job.error.empty() ? json(nullptr) : json(job.error)},
                {"attempts", job.attempts}};
    j["result"] = result ? *result : json(nullptr);
    return j;
}

namespace {

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS cases (
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  case_id TEXT NOT NULL UNIQUE,
  payload_hash TEXT NOT NULL UNIQUE,
  patient_ref TEXT NOT NULL,
  slice_count INTEGER NOT NULL,
  status TEXT NOT NULL CHECK (status IN ('queued','processing','ready','decided','failed')),
  severity REAL,
  result TEXT,
  decision TEXT,
  clinician_id TEXT,
  decided_at INTEGER,
  submitted_at INTEGER NOT NULL,
  started_at INTEGER,
  finished_at INTEGER,
  error TEXT,
  attempts INTEGER NOT NULL DEFAULT 0,
  lease_owner TEXT,
  lease_expires INTEGER,
  CHECK ((decision IS NULL) = (status <> 'decided')),
  CHECK ((severity IS NULL) = (status NOT IN ('ready','decided')))
);
CREATE INDEX IF NOT EXISTS cases_queue ON cases (status, seq);
CREATE TABLE IF NOT EXISTS transitions (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  case_id TEXT NOT NULL,
  from_status TEXT NOT NULL,
  to_status TEXT NOT NULL,
  at INTEGER NOT NULL
);
)sql";

constexpr const char* kColumns =
    "case_id, patient_ref, payload_hash, slice_count, status, severity, result, decision, clinician_id, "
    "decided_at, submitted_at, started_at, finished_at, error, attempts, seq";

Micros now_micros() {
    return std::chrono::duration_cast<std::chrono::microseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

TriageCase read_case(const sql::Statement& s) {
    TriageCase c;
    c.case_id = s.text(0);
    c.patient_ref = s.text(1);
    c.payload_hash = s.text(2);
    c.slice_count = static_cast<int>(s.integer(3));
    c.status = parse_status(s.text(4));
    if (!s.is_null(5)) c.severity_score = s.real(5);
    if (!s.is_null(6)) c.result = json::parse(s.text(6));
    if (!s.is_null(7)) c.decision = DecisionRecord{parse_decision(s.text(7)), s.text(8), s.integer(9)};
    c.job.submitted_at = s.integer(10);
    c.job.started_at = s.opt_integer(11);
    c.job.finished_at = s.opt_integer(12);
    c.job.error = s.text(13);
    c.job.attempts = static_cast<int>(s.integer(14));
    c.sequence = static_cast<long>(s.integer(15));
    return c;
}

}  // namespace

struct CaseStore::Impl {
    sqlite3* db = nullptr;
    mutable std::mutex mutex;

    std::optional<TriageCase> fetch(const std::string& id) const {
        sql::Statement s(db, std::string("SELECT ") + kColumns + " FROM cases WHERE case_id = ?");
        s.bind(1, id);
        if (!s.step()) return std::nullopt;
        return read_case(s);
    }

    /// Loads the case inside the open transaction and checks its status.
    TriageCase expect(const std::string& id, CaseStatus required, std::string_view action) const {
        auto c = fetch(id);
        if (!c) fail(ErrorCode::not_found, "case '" + id + "' does not exist");
        if (c->status != required) {
            fail(ErrorCode::conflict, "cannot " + std::string(action) + " case '" + id + "': status is " +
                                          std::string(to_string(c->status)) + ", needs " +
                                          std::string(to_string(required)));
        }
        return *c;
    }

    void log(const std::string& id, CaseStatus from, CaseStatus to, Micros at) {
        if (!transition_allowed(from, to)) {
            fail(ErrorCode::conflict, "illegal transition " + std::string(to_string(from)) + " -> " +
                                          std::string(to_string(to)) + " for case '" + id + "'");
        }
        sql::Statement s(db, "INSERT INTO transitions (case_id, from_status, to_status, at) VALUES (?, ?, ?, ?)");
        s.bind(1, id).bind(2, to_string(from)).bind(3, to_string(to)).bind(4, at).run();
    }

    void check_lease(const TriageCase& c, const std::string& worker) const {
        sql::Statement s(db, "SELECT lease_owner FROM cases WHERE case_id = ?");
        s.bind(1, c.case_id);
        s.step();
        if (s.text(0) != worker) {
            fail(ErrorCode::conflict, "case '" + c.case_id + "' is leased to '" + s.text(0) + "', not '" + worker + "'");
        }
    }
};

CaseStore::CaseStore(const fs::path& db_path) : impl_(std::make_unique<Impl>()) {
    if (db_path.has_parent_path()) fs::create_directories(db_path.parent_path());
    if (sqlite3_open_v2(db_path.c_str(), &impl_->db, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                        nullptr) != SQLITE_OK) {
        const std::string msg = impl_->db != nullptr ? sqlite3_errmsg(impl_->db) : "out of memory";
        sqlite3_close(impl_->db);
        fail(ErrorCode::io, "cannot open case store '" + db_path.string() + "': " + msg);
    }
    sqlite3_busy_timeout(impl_->db, 5000);
    sql::exec(impl_->db, "PRAGMA journal_mode=WAL");
    sql::exec(impl_->db, "PRAGMA synchronous=NORMAL");
    sql::exec(impl_->db, kSchema);
}

CaseStore::~CaseStore() {
    if (impl_ && impl_->db != nullptr) sqlite3_close(impl_->db);
}

CaseStore::SubmitOutcome CaseStore::submit(const std::string& payload_hash, const std::string& patient_ref,
                                           int slice_count) {
    if (payload_hash.size() < 16) fail(ErrorCode::invalid_argument, "payload hash is too short");
    std::lock_guard lock(impl_->mutex);
    sql::Transaction tx(impl_->db);
    {
        sql::Statement s(impl_->db, "SELECT case_id FROM cases WHERE payload_hash = ?");
        s.bind(1, payload_hash);
        if (s.step()) return {s.text(0), false};
    }
    const std::string id = "case-" + payload_hash.substr(0, 16);
    sql::Statement s(impl_->db,
                     "INSERT INTO cases (case_id, payload_hash, patient_ref, slice_count, status, submitted_at) "
                     "VALUES (?, ?, ?, ?, 'queued', ?)");
    s.bind(1, id).bind(2, payload_hash).bind(3, patient_ref).bind(4, slice_count).bind(5, now_micros()).run();
    tx.commit();
    return {id, true};
}

std::optional<TriageCase> CaseStore::get(const std::string& case_id) const {
    std::lock_guard lock(impl_->mutex);
    return impl_->fetch(case_id);
}

std::optional<TriageCase> CaseStore::claim(const std::string& worker, std::chrono::milliseconds lease) {
    std::lock_guard lock(impl_->mutex);
    sql::Transaction tx(impl_->db);
    const Micros now = now_micros();
    std::string id;
    std::string status;
    {
        sql::Statement s(impl_->db,
                         "SELECT case_id, status FROM cases WHERE status = 'queued' "
                         "OR (status = 'processing' AND lease_expires < ?) ORDER BY seq LIMIT 1");
        s.bind(1, now);
        if (!s.step()) return std::nullopt;
        id = s.text(0);
        status = s.text(1);
    }
    const TriageCase before = *impl_->fetch(id);
    const Micros started = std::max(now, before.job.submitted_at);
    sql::Statement u(impl_->db,
                     "UPDATE cases SET status = 'processing', started_at = ?, finished_at = NULL, "
                     "attempts = attempts + 1, lease_owner = ?, lease_expires = ? WHERE case_id = ?");
    u.bind(1, started).bind(2, worker).bind(3, now + static_cast<Micros>(lease.count()) * 1000).bind(4, id).run();
    if (parse_status(status) == CaseStatus::queued) impl_->log(id, CaseStatus::queued, CaseStatus::processing, now);
    tx.commit();
    return impl_->fetch(id);
}

TriageCase CaseStore::complete(const std::string& case_id, const std::string& worker, const json& result,
                               double severity) {
    if (!(severity >= 0.0) || !std::isfinite(severity)) {
        fail(ErrorCode::invalid_argument, "severity must be a finite value >= 0");
    }
    std::lock_guard lock(impl_->mutex);
    sql::Transaction tx(impl_->db);
    const TriageCase c = impl_->expect(case_id, CaseStatus::processing, "complete");
    impl_->check_lease(c, worker);
    const Micros now = std::max(now_micros(), c.job.started_at.value_or(c.job.submitted_at));
    sql::Statement u(impl_->db,
                     "UPDATE cases SET status = 'ready', severity = ?, result = ?, finished_at = ?, error = NULL, "
                     "lease_owner = NULL, lease_expires = NULL WHERE case_id = ?");
    u.bind(1, severity).bind(2, result.dump()).bind(3, now).bind(4, case_id).run();
    impl_->log(case_id, CaseStatus::processing, CaseStatus::ready, now);
    tx.commit();
    return *impl_->fetch(case_id);
}

TriageCase CaseStore::fail_job(const std::string& case_id, const std::string& worker, const std::string& error) {
    std::lock_guard lock(impl_->mutex);
    sql::Transaction tx(impl_->db);
    const TriageCase c = impl_->expect(case_id, CaseStatus::processing, "fail");
    impl_->check_lease(c, worker);
    const Micros now = std::max(now_micros(), c.job.started_at.value_or(c.job.submitted_at));
    sql::Statement u(impl_->db,
                     "UPDATE cases SET status = 'failed', finished_at = ?, error = ?, lease_owner = NULL, "
                     "lease_expires = NULL WHERE case_id = ?");
    u.bind(1, now).bind(2, error.empty() ? std::string("unknown error") : error).bind(3, case_id).run();
    impl_->log(case_id, CaseStatus::processing, CaseStatus::failed, now);
    tx.commit();
    return *impl_->fetch(case_id);
}

TriageCase CaseStore::retry(const std::string& case_id) {
    std::lock_guard lock(impl_->mutex);
    sql::Transaction tx(impl_->db);
    impl_->expect(case_id, CaseStatus::failed, "retry");
    sql::Statement u(impl_->db,
                     "UPDATE cases SET status = 'queued', started_at = NULL, finished_at = NULL WHERE case_id = ?");
    u.bind(1, case_id).run();
    impl_->log(case_id, CaseStatus::failed, CaseStatus::queued, now_micros());
    tx.commit();
    return *impl_->fetch(case_id);
}

TriageCase CaseStore::record_decision(const std::string& case_id, Decision decision, const std::string& clinician_id) {
    if (clinician_id.empty()) fail(ErrorCode::invalid_argument, "clinician_id is required");
    std::lock_guard lock(impl_->mutex);
    sql::Transaction tx(impl_->db);
    const TriageCase c = impl_->expect(case_id, CaseStatus::ready, "decide");
    const Micros now = std::max(now_micros(), c.job.finished_at.value_or(c.job.submitted_at));
    sql::Statement u(impl_->db,
                     "UPDATE cases SET status = 'decided', decision = ?, clinician_id = ?, decided_at = ? "
                     "WHERE case_id = ?");
    u.bind(1, to_string(decision)).bind(2, clinician_id).bind(3, now).bind(4, case_id).run();
    impl_->log(case_id, CaseStatus::ready, CaseStatus::decided, now);
    tx.commit();
    return *impl_->fetch(case_id);
}

int CaseStore::recover() {
    std::lock_guard lock(impl_->mutex);
    sql::Transaction tx(impl_->db);
    std::vector<std::string> ids;
    {
        sql::Statement s(impl_->db, "SELECT case_id FROM cases WHERE status = 'processing' ORDER BY seq");
        while (s.step()) ids.push_back(s.text(0));
    }
    const Micros now = now_micros();
    for (const auto& id : ids) {
        sql::Statement u(impl_->db,
                         "UPDATE cases SET status = 'queued', started_at = NULL, lease_owner = NULL, "
                         "lease_expires = NULL WHERE case_id = ?");
        u.bind(1, id).run();
        impl_->log(id, CaseStatus::processing, CaseStatus::queued, now);
    }
    tx.commit();
    return static_cast<int>(ids.size());
}

CasePage CaseStore::list(std::optional<CaseStatus> status, int page, int page_size) const {
    if (page < 1) fail(ErrorCode::invalid_argument, "page must be >= 1");
    if (page_size < 1 || page_size > 200) fail(ErrorCode::invalid_argument, "page_size must lie in [1, 200]");
    std::lock_guard lock(impl_->mutex);
    const std::string where = status ? " WHERE status = ?" : "";
    CasePage out;
    out.page = page;
    out.page_size = page_size;
    {
        sql::Statement s(impl_->db, "SELECT COUNT(*) FROM cases" + where);
        if (status) s.bind(1, to_string(*status));
        s.step();
        out.total = static_cast<long>(s.integer(0));
    }
    sql::Statement s(impl_->db, std::string("SELECT ") + kColumns + " FROM cases" + where +
                                    " ORDER BY severity IS NULL, severity DESC, seq ASC LIMIT ? OFFSET ?");
    int i = 1;
    if (status) s.bind(i++, to_string(*status));
    s.bind(i++, page_size);
    s.bind(i, static_cast<std::int64_t>(page - 1) * page_size);
    while (s.step()) out.items.push_back(read_case(s));
    return out;
}

std::vector<CaseStore::Transition> CaseStore::transitions() const {
    std::lock_guard lock(impl_->mutex);
    sql::Statement s(impl_->db, "SELECT case_id, from_status, to_status FROM transitions ORDER BY id");
    std::vector<Transition> out;
    while (s.step()) out.push_back({s.text(0), parse_status(s.text(1)), parse_status(s.text(2))});
    return out;
}

}  // namespace ctseg::triage
