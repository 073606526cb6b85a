#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace ctseg {

std::string read_file(const std::filesystem::path& path);

/// Writes via a sibling temporary file and rename(2), so readers never see
/// a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Renames a fully populated staging directory into place, replacing any
/// existing directory at `target`.
void publish_directory(const std::filesystem::path& staging, const std::filesystem::path& target);

}  // namespace ctseg
