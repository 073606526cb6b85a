#pragma once

#include <array>
#include <string>
#include <string_view>

namespace ctseg {

enum class Organ { liver, liver_laceration, left_kidney, right_kidney, spleen };

inline constexpr std::array<Organ, 5> kAllOrgans = {
    Organ::liver, Organ::liver_laceration, Organ::left_kidney, Organ::right_kidney, Organ::spleen};

/// snake_case identifier used in files and the HTTP API.
std::string_view to_string(Organ organ);
/// Human-readable label used in report tables ("Liver Laceration").
std::string_view display_name(Organ organ);
/// Throws Error(invalid_argument) for unknown names.
Organ parse_organ(std::string_view name);

}  // namespace ctseg
