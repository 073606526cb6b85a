#include "ctseg/organ.hpp"

#include "ctseg/error.hpp"

namespace ctseg {

std::string_view to_string(Organ organ) {
    switch (organ) {
        case Organ::liver: return "liver";
        case Organ::liver_laceration: return "liver_laceration";
        case Organ::left_kidney: return "left_kidney";
        case Organ::right_kidney: return "right_kidney";
        case Organ::spleen: return "spleen";
    }
    return "unknown";
}

std::string_view display_name(Organ organ) {
    switch (organ) {
        case Organ::liver: return "Liver";
        case Organ::liver_laceration: return "Liver Laceration";
        case Organ::left_kidney: return "Left Kidney";
        case Organ::right_kidney: return "Right Kidney";
        case Organ::spleen: return "Spleen";
    }
    return "Unknown";
}

Organ parse_organ(std::string_view name) {
    for (Organ organ : kAllOrgans) {
        if (to_string(organ) == name) return organ;
    }
    fail(ErrorCode::invalid_argument, "unknown organ label '" + std::string(name) + "'");
}

}  // namespace ctseg
