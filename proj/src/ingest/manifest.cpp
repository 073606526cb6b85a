#include <charconv>
#include <sstream>

#include "ctseg/error.hpp"
#include "ctseg/fs_util.hpp"
#include "ctseg/ingest.hpp"

namespace fs = std::filesystem;

namespace ctseg {

namespace {

std::string_view strip(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

long parse_count(std::string_view key, std::string_view value) {
    long out = 0;
    const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || end != value.data() + value.size()) {
        fail(ErrorCode::invalid_argument,
             "manifest: '" + std::string(key) + "' has non-integer value '" + std::string(value) + "'");
    }
    return out;
}

std::size_t count_files(const fs::path& dir, std::string_view extension) {
    std::size_t n = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == extension) ++n;
    }
    return n;
}

}  // namespace

void DatasetManifest::validate() const {
    if (patient_count < 0 || image_count < 0) {
        fail(ErrorCode::invalid_argument, "manifest counts must be nonnegative");
    }
    for (const auto& [organ, count] : organ_mask_counts) {
        if (count < 0 || count > image_count) {
            fail(ErrorCode::invalid_argument,
                 "manifest: " + std::string(to_string(organ)) + " count " + std::to_string(count) +
                     " outside [0, image_count]");
        }
    }
}

std::string DatasetManifest::to_text() const {
    std::ostringstream out;
    out << "patient_count: " << patient_count << "\n";
    out << "image_count: " << image_count << "\n";
    for (const auto& [organ, count] : organ_mask_counts) out << to_string(organ) << ": " << count << "\n";
    return out.str();
}

DatasetManifest DatasetManifest::parse(std::string_view text) {
    DatasetManifest m;
    bool saw_patients = false;
    bool saw_images = false;
    int line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = strip(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const auto colon = line.find(':');
        if (colon == std::string_view::npos) {
            fail(ErrorCode::invalid_argument, "manifest line " + std::to_string(line_no) + " lacks ':'");
        }
        const std::string_view key = strip(line.substr(0, colon));
        const long value = parse_count(key, strip(line.substr(colon + 1)));
        if (key == "patient_count") {
            m.patient_count = value;
            saw_patients = true;
        } else if (key == "image_count") {
            m.image_count = value;
            saw_images = true;
        } else {
            const Organ organ = parse_organ(key);
            if (!m.organ_mask_counts.emplace(organ, value).second) {
                fail(ErrorCode::invalid_argument, "manifest repeats '" + std::string(key) + "'");
            }
        }
    }
    if (!saw_patients || !saw_images) {
        fail(ErrorCode::invalid_argument, "manifest must define patient_count and image_count");
    }
    m.validate();
    return m;
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
    return parse(read_file(path));
}

bool ManifestReport::pass() const {
    for (const auto& c : checks) {
        if (!c.matched()) return false;
    }
    return true;
}

std::string ManifestReport::to_text() const {
    std::ostringstream out;
    for (const auto& c : checks) {
        out << c.field << ": expected " << c.expected << ", observed " << c.observed;
        if (!c.matched()) out << " (delta " << (c.delta() > 0 ? "+" : "") << c.delta() << ")";
        out << "\n";
    }
    out << (pass() ? "PASS" : "FAIL") << "\n";
    return out.str();
}

DatasetManifest scan_corpus(const fs::path& root) {
    DatasetManifest m;
    const fs::path images = root / "images";
    if (fs::is_directory(images)) {
        for (const auto& patient : fs::directory_iterator(images)) {
            if (!patient.is_directory()) continue;
            ++m.patient_count;
            m.image_count += static_cast<long>(count_files(patient.path(), ".dcm"));
        }
    }
    const fs::path labels = root / "labels";
    if (fs::is_directory(labels)) {
        for (const auto& organ_dir : fs::directory_iterator(labels)) {
            if (!organ_dir.is_directory()) continue;
            const Organ organ = parse_organ(organ_dir.path().filename().string());
            long count = 0;
            for (const auto& patient : fs::directory_iterator(organ_dir.path())) {
                if (patient.is_directory()) count += static_cast<long>(count_files(patient.path(), ".png"));
            }
            m.organ_mask_counts[organ] = count;
        }
    }
    return m;
}

ManifestReport validate_manifest(const DatasetManifest& observed, const DatasetManifest& expected) {
    ManifestReport report;
    report.checks.push_back({"patient_count", expected.patient_count, observed.patient_count});
    report.checks.push_back({"image_count", expected.image_count, observed.image_count});
    for (const auto& [organ, count] : expected.organ_mask_counts) {
        const auto it = observed.organ_mask_counts.find(organ);
        report.checks.push_back(
            {std::string(to_string(organ)), count, it == observed.organ_mask_counts.end() ? 0 : it->second});
    }
    for (const auto& [organ, count] : observed.organ_mask_counts) {
        if (!expected.organ_mask_counts.contains(organ)) {
            report.checks.push_back({std::string(to_string(organ)), 0, count});
        }
    }
    return report;
}

}  // namespace ctseg
