#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "artemis/moe/moe.hpp"

namespace artemis {

struct BenchConfig {
  MoEConfig moe;
  std::size_t c_bev = 64;
  std::size_t tokens = 10;  // concatenated query length at the last planning step
  std::vector<std::size_t> batch_sizes = {1, 32, 64, 128};
  std::size_t repeats = 3;
  std::size_t warmup = 1;
  bool backward = true;  // time a training step, not just inference
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::size_t batch_size = 0;
  std::string mode;  // "grouped" or "naive"
  double samples_per_sec = 0.0;
  double speedup = 0.0;  // grouped / naive for this batch size (1 on naive rows)
};

/// Median-of-repeats wall clock for grouped and naive dispatch, single-threaded.
std::vector<BenchRow> bench_dispatch(const BenchConfig& cfg);

/// CSV with header batch_size,mode,samples_per_sec,speedup.
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace artemis
