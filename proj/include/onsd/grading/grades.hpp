#pragma once

#include <array>
#include <string>

#include "onsd/error.hpp"

namespace onsd {

enum class IcpTier : int { normal = 0, mild = 1, severe = 2 };

inline constexpr int kTierCount = 3;
inline constexpr std::array<const char*, kTierCount> kTierNames{"normal", "mild", "severe"};

inline std::string to_string(IcpTier t) { return kTierNames[static_cast<int>(t)]; }

inline IcpTier tier_from_string(const std::string& s) {
    for (int i = 0; i < kTierCount; ++i)
        if (s == kTierNames[i]) return static_cast<IcpTier>(i);
    throw Error("unknown ICP tier '" + s + "'");
}

struct IcpGrade {
    IcpTier tier = IcpTier::normal;
    bool below_band = false;  // ICP under 80 mmH2O, graded normal
};

/// normal [80, 180], mild (180, 280], severe > 280 (mmH2O).
inline IcpGrade icp_grade(double icp_mmH2O) {
    if (!(icp_mmH2O > 0.0)) throw Error("ICP must be positive");
    if (icp_mmH2O > 280.0) return {IcpTier::severe, false};
    if (icp_mmH2O > 180.0) return {IcpTier::mild, false};
    return {IcpTier::normal, icp_mmH2O < 80.0};
}

}  // namespace onsd
