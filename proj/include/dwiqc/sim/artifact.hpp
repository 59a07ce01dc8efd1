#pragma once

#include <array>
#include <string>
#include <string_view>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/image.hpp"

namespace dwiqc {

enum class ArtifactKind { herringbone, chemical_shift, susceptibility, ghosting, motion, multiband };

inline constexpr std::array<ArtifactKind, 6> all_artifact_kinds{
    ArtifactKind::herringbone, ArtifactKind::chemical_shift, ArtifactKind::susceptibility,
    ArtifactKind::ghosting,    ArtifactKind::motion,         ArtifactKind::multiband};

inline std::string_view to_string(ArtifactKind k)
{
    switch (k) {
    case ArtifactKind::herringbone: return "herringbone";
    case ArtifactKind::chemical_shift: return "chemical_shift";
    case ArtifactKind::susceptibility: return "susceptibility";
    case ArtifactKind::ghosting: return "ghosting";
    case ArtifactKind::motion: return "motion";
    case ArtifactKind::multiband: return "multiband";
    }
    return "?";
}

inline ArtifactKind parse_artifact_kind(std::string_view s)
{
    for (auto k : all_artifact_kinds) {
        if (to_string(k) == s) return k;
    }
    throw ConfigError("unknown artifact kind '" + std::string(s) + "'");
}

/// The view in which an artifact class is labeled: the first four are
/// inspected axially, motion and multiband interleaving sagittally.
inline View labeled_view(ArtifactKind k)
{
    return (k == ArtifactKind::motion || k == ArtifactKind::multiband) ? View::sagittal : View::axial;
}

}  // namespace dwiqc
