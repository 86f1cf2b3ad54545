#pragma once

#include <filesystem>
#include <optional>

#include "clst/centroids.hpp"
#include "clst/pseudo.hpp"
#include "clst/segnet.hpp"

namespace clst {

/// Contents of one checkpoint container. Any part may be absent: a vote
/// store file is the same container holding only the VOTES section.
struct Checkpoint {
  std::optional<NetworkParams> params;
  std::optional<CentroidBank> bank;
  std::optional<PseudoLabelStore> store;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian container: magic "CLSTCK1", u32 version, named f64 layers
/// (network weights, then centroid-bank state), optional VOTES section.
void save_checkpoint(const std::filesystem::path& path, const NetworkParams* params,
                     const CentroidBank* bank = nullptr,
                     const PseudoLabelStore* store = nullptr);

/// Throws FormatError on bad magic or truncation and VersionError on a
/// recognised container with a different version.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace clst
