#include <benchmark/benchmark.h>

#include "bhedge/config.hpp"
#include "bhedge/hedging.hpp"

using namespace bhedge;

namespace {

const ScenarioConfig& hidden() {
    static const ScenarioConfig c = parse_config(fixture_json("jump-hidden-factor"));
    return c;
}

Exec exec_of(const benchmark::State& st) { return st.range(0) ? Exec::parallel : Exec::serial; }

void BM_SimulatePaths(benchmark::State& st) {
    const auto& c = hidden();
    const GopSpec gop(c.model);
    for (auto _ : st) {
        PathBundle b = simulate_paths(c.model, c.grid, 2000, 1, exec_of(st));
        simulate_gop_and_benchmark(b, gop, exec_of(st));
        benchmark::DoNotOptimize(b.s1hat.data());
    }
}
BENCHMARK(BM_SimulatePaths)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_PriceSurface(benchmark::State& st) {
    const auto& c = hidden();
    const GopSpec gop(c.model);
    SurfaceSpec spec = c.surface;
    spec.n_paths = 500;
    for (auto _ : st) {
        PriceSurface s = estimate_price_function(gop, c.claim, c.grid, spec, exec_of(st));
        benchmark::DoNotOptimize(s.values().data());
    }
}
BENCHMARK(BM_PriceSurface)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_HedgePartial(benchmark::State& st) {
    const auto& c = hidden();
    const GopSpec gop(c.model);
    SurfaceSpec spec = c.surface;
    spec.n_paths = 500;
    const PriceSurface s = estimate_price_function(gop, c.claim, c.grid, spec);
    PathBundle b = simulate_paths(c.model, c.grid, 2000, 3);
    simulate_gop_and_benchmark(b, gop);
    HedgeConfig hc;
    hc.scheme = Observation::prices;
    for (auto _ : st) {
        HedgeRun r = hedge_paths(b, gop, s, c.claim, hc, exec_of(st));
        benchmark::DoNotOptimize(r.delta1.data());
    }
}
BENCHMARK(BM_HedgePartial)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
