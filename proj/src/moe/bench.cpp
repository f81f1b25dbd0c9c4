#include "artemis/moe/bench.hpp"

#include <algorithm>
#include <chrono>

#include <fmt/format.h>

namespace artemis {

namespace {

Tensor random_block(Shape shape, Rng& rng) {
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.values()) {
    v = rng.uniform(-1.0, 1.0);
  }
  return t;
}

template <typename Step>
double median_seconds(std::size_t warmup, std::size_t repeats, Step&& step) {
  for (std::size_t i = 0; i < warmup; ++i) {
    step();
  }
  std::vector<double> times;
  for (std::size_t i = 0; i < std::max<std::size_t>(1, repeats); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    step();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

}  // namespace

std::vector<BenchRow> bench_dispatch(const BenchConfig& cfg) {
  Rng rng(cfg.seed);
  ParameterSet params;
  const MoEBlock moe = MoEBlock::create(params, "bench", cfg.moe, rng);
  const std::size_t d = cfg.moe.d_model;
  std::vector<BenchRow> rows;
  for (std::size_t b : cfg.batch_sizes) {
    const Tensor bev = random_block({b, cfg.c_bev, d}, rng);
    const Tensor tok = random_block({b, cfg.tokens, d}, rng);
    const Tensor q = random_block({b, 3 * d}, rng);
    auto run = [&](bool grouped) {
      Graph g(cfg.backward);
      Var vb = g.constant(bev);
      Var vt = g.leaf(tok);
      Var vq = g.leaf(q);
      Var y = grouped ? moe.forward(vb, vt, vq) : moe.forward_naive(vb, vt, vq);
      if (cfg.backward) {
        params.zero_grad();
        g.backward(sum(y));
      }
    };
    const double grouped = static_cast<double>(b) / median_seconds(cfg.warmup, cfg.repeats, [&] { run(true); });
    const double naive = static_cast<double>(b) / median_seconds(cfg.warmup, cfg.repeats, [&] { run(false); });
    rows.push_back({b, "grouped", grouped, grouped / naive});
    rows.push_back({b, "naive", naive, 1.0});
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "batch_size,mode,samples_per_sec,speedup\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{:.3f},{:.4f}\n", r.batch_size, r.mode, r.samples_per_sec, r.speedup);
  }
  return out;
}

}  // namespace artemis
