#pragma once

namespace artemis {

/// Tool version recorded in every output file.
inline constexpr const char* kToolVersion = "artemis 0.1.0";

}  // namespace artemis
