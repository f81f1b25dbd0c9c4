#pragma once

#include <string>
#include <vector>

#include "artemis/common/binary_io.hpp"
#include "artemis/scene/generator.hpp"

namespace artemis {

/// File layout: "ARTSCN01", u32 header length, JSON header
/// {"version", "seed", "n", "d_feat", "c_bev", "mismatch_rate", "config_hash", "tool_version"}, then n records each prefixed by
/// its u32 byte length. Doubles are stored raw, so round trips are exact.
std::vector<char> serialize_dataset(const Dataset& d);
Dataset deserialize_dataset(const std::vector<char>& bytes);

void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace artemis
