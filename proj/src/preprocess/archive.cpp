#include <fstream>
#include <sstream>

#include "ctseg/error.hpp"
#include "ctseg/fs_util.hpp"
#include "ctseg/preprocess.hpp"

namespace fs = std::filesystem;

namespace ctseg {

namespace {

constexpr std::string_view kMagic = "CTSGARC1";

}  // namespace

void pack_archive(std::span<const PairedSample> pairs, const fs::path& path) {
    if (pairs.empty()) fail(ErrorCode::invalid_argument, "pack_archive: no pairs");
    std::vector<RgbImage> composites;
    composites.reserve(pairs.size());
    for (const auto& p : pairs) {
        composites.push_back(concat_pair(p));
        if (!composites.back().same_shape(composites.front())) {
            fail(ErrorCode::invalid_argument,
                 "pack_archive: composite " + composites.back().shape_string() + " for " + p.patient_id +
                     "/" + std::to_string(p.slice_index) + " differs from " + composites.front().shape_string());
        }
        if (p.patient_id.empty() || p.patient_id.find_first_of("\t\n") != std::string::npos) {
            fail(ErrorCode::invalid_argument, "pack_archive: patient id must be nonempty without tabs/newlines");
        }
    }
    std::ostringstream index;
    for (const auto& p : pairs) {
        index << p.patient_id << '\t' << p.slice_index << '\t' << to_string(p.organ) << '\n';
    }
    const std::string index_text = index.str();
    const RgbImage& first = composites.front();

    std::string blob;
    blob.reserve(index_text.size() + composites.size() * first.size() + 128);
    blob += kMagic;
    blob += '\n';
    blob += std::to_string(composites.size()) + ' ' + std::to_string(first.rows()) + ' ' +
            std::to_string(first.cols()) + ' ' + std::to_string(first.channels()) + '\n';
    blob += std::to_string(index_text.size()) + '\n';
    blob += index_text;
    for (const auto& c : composites) blob.append(reinterpret_cast<const char*>(c.data()), c.size());
    write_file_atomic(path, blob);
}

std::vector<ArchiveEntry> unpack_archive(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot read archive '" + path.string() + "'");
    const auto corrupt = [&](const std::string& what) -> void {
        fail(ErrorCode::corrupt, "archive '" + path.string() + "': " + what);
    };
    std::string magic;
    std::getline(in, magic);
    if (magic != kMagic) corrupt("bad magic");
    std::size_t count = 0;
    int rows = 0;
    int cols = 0;
    int channels = 0;
    std::size_t index_size = 0;
    in >> count >> rows >> cols >> channels >> index_size;
    if (!in || in.get() != '\n' || rows <= 0 || cols <= 0 || channels <= 0) corrupt("bad header");
    std::string index_text(index_size, '\0');
    in.read(index_text.data(), static_cast<std::streamsize>(index_size));
    if (!in) corrupt("truncated index");

    std::vector<ArchiveEntry> entries;
    entries.reserve(count);
    std::istringstream index(index_text);
    std::string line;
    while (std::getline(index, line)) {
        const auto t1 = line.find('\t');
        const auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos) corrupt("malformed index line");
        ArchiveEntry e;
        e.patient_id = line.substr(0, t1);
        try {
            e.slice_index = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
            e.organ = parse_organ(line.substr(t2 + 1));
        } catch (const std::exception&) {
            corrupt("malformed index line '" + line + "'");
        }
        entries.push_back(std::move(e));
    }
    if (entries.size() != count) corrupt("index lists " + std::to_string(entries.size()) + " entries, header " +
                                         std::to_string(count));
    for (auto& e : entries) {
        e.composite = RgbImage(rows, cols, channels);
        in.read(reinterpret_cast<char*>(e.composite.data()), static_cast<std::streamsize>(e.composite.size()));
        if (!in) corrupt("truncated payload");
    }
    if (in.peek() != std::char_traits<char>::eof()) corrupt("trailing bytes after payload");
    return entries;
}

}  // namespace ctseg
