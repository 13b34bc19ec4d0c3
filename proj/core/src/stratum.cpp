#include "strata/stratum.hpp"

namespace strata {

std::string_view to_string(StratumId s) {
    switch (s) {
        case StratumId::male_18_40: return "male_18_40";
        case StratumId::male_40_60: return "male_40_60";
        case StratumId::male_60plus: return "male_60plus";
        case StratumId::female_18_40: return "female_18_40";
        case StratumId::female_40_60: return "female_40_60";
        case StratumId::female_60plus: return "female_60plus";
    }
    return "";
}

std::string_view display_name(StratumId s) {
    switch (s) {
        case StratumId::male_18_40: return "Male 18-40";
        case StratumId::male_40_60: return "Male 40-60";
        case StratumId::male_60plus: return "Male 60+";
        case StratumId::female_18_40: return "Female 18-40";
        case StratumId::female_40_60: return "Female 40-60";
        case StratumId::female_60plus: return "Female 60+";
    }
    return "";
}

std::optional<StratumId> parse_stratum(std::string_view text) {
    for (StratumId s : kAllStrata) {
        if (to_string(s) == text) return s;
    }
    return std::nullopt;
}

std::string_view age_bin_name(int bin) {
    switch (bin) {
        case 0: return "18_40";
        case 1: return "40_60";
        default: return "60plus";
    }
}

std::optional<StratumId> assign_stratum(const Participant& p, Date index_date) {
    if (p.sex_at_birth == Sex::other_unknown) return std::nullopt;
    int age = whole_years_between(p.birth_date, index_date);
    if (age < 18) return std::nullopt;
    int base = p.sex_at_birth == Sex::male ? 0 : 3;
    return static_cast<StratumId>(base + age_bin(age));
}

}  // namespace strata
