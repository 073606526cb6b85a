#include "ctseg/fs_util.hpp"

#include <fstream>
#include <sstream>
#include <system_error>

#include <unistd.h>

#include "ctseg/error.hpp"

namespace fs = std::filesystem;

namespace ctseg {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot read '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return std::move(buffer).str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
    const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::io, "cannot write '" + path.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) fail(ErrorCode::io, "short write to '" + path.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        fail(ErrorCode::io, "cannot move '" + tmp.string() + "' into place: " + ec.message());
    }
}

void publish_directory(const fs::path& staging, const fs::path& target) {
    std::error_code ec;
    if (fs::exists(target)) {
        const fs::path retired = target.string() + ".old." + std::to_string(::getpid());
        fs::rename(target, retired, ec);
        if (ec) fail(ErrorCode::io, "cannot retire '" + target.string() + "': " + ec.message());
        fs::rename(staging, target, ec);
        fs::remove_all(retired);
    } else {
        fs::rename(staging, target, ec);
    }
    if (ec) fail(ErrorCode::io, "cannot publish '" + target.string() + "': " + ec.message());
}

}  // namespace ctseg
