#pragma once

#include <array>
#include <optional>
#include <string_view>

#include "strata/dates.hpp"
#include "strata/ehr.hpp"

namespace strata {

// Six sex-by-age subgroups with age thresholds 40 and 60. Participants whose
// sex is other_unknown fall outside all six and form a remainder bucket.
enum class StratumId {
    male_18_40 = 0,
    male_40_60 = 1,
    male_60plus = 2,
    female_18_40 = 3,
    female_40_60 = 4,
    female_60plus = 5,
};

inline constexpr int kNumStrata = 6;
inline constexpr std::array<StratumId, kNumStrata> kAllStrata = {
    StratumId::male_18_40,   StratumId::male_40_60,   StratumId::male_60plus,
    StratumId::female_18_40, StratumId::female_40_60, StratumId::female_60plus,
};

std::string_view to_string(StratumId s);
// Human-readable form, e.g. "Male 18-40".
std::string_view display_name(StratumId s);
std::optional<StratumId> parse_stratum(std::string_view text);

// 0: age < 40, 1: 40 <= age < 60, 2: age >= 60.
inline int age_bin(int age) { return age < 40 ? 0 : (age < 60 ? 1 : 2); }

std::string_view age_bin_name(int bin);

// Stratum at index_date; nullopt for sex other_unknown and for participants
// under 18 (both land in the remainder bucket).
std::optional<StratumId> assign_stratum(const Participant& p, Date index_date);

}  // namespace strata
