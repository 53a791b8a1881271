#include <benchmark/benchmark.h>

#include <random>

#include "bdcd/data.hpp"
#include "bdcd/losses.hpp"
#include "bdcd/metrics.hpp"
#include "bdcd/model.hpp"

using namespace bdcd;
using ag::Var;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.levels = 3;
    c.channels = {8, 16, 32};
    c.transformer_levels = {2};
    c.transformer_levels_set = true;
    c.transformer_depth = 2;
    c.attention_heads = 4;
    return c;
}

Tensor rand_tensor(std::vector<long> shape, uint64_t seed) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    uniform_init(t, 1.0, rng);
    return t;
}

}  // namespace

static void BM_Conv2dForward(benchmark::State& state) {
    long hw = state.range(0);
    Var x = Var::constant(rand_tensor({16, hw, hw}, 1));
    Var w = Var::constant(rand_tensor({16, 16, 3, 3}, 2));
    Var b = Var::constant(Tensor({16}));
    for (auto _ : state) benchmark::DoNotOptimize(ag::conv2d(x, w, b).val().v.data());
}
BENCHMARK(BM_Conv2dForward)->Arg(32)->Arg(64)->Arg(128);

static void BM_AttentionTokens(benchmark::State& state) {
    long n = state.range(0);
    nn::ParamStore ps;
    std::mt19937_64 rng(3);
    nn::TransformerLayer layer(ps, "t", 32, 4, false, rng);
    Var x = Var::constant(rand_tensor({n, 32}, 4));
    for (auto _ : state) benchmark::DoNotOptimize(layer.forward(x).val().v.data());
}
BENCHMARK(BM_AttentionTokens)->Arg(256)->Arg(1024);

static void BM_ForwardBackward(benchmark::State& state) {
    long hw = state.range(0);
    ChangeNet net(small_config(), 1);
    Tensor pre = rand_tensor({3, hw, hw}, 5);
    Tensor post = rand_tensor({3, hw, hw}, 6);
    std::mt19937_64 rng(7);
    Mask target(hw, hw);
    std::uniform_int_distribution<int> d(0, 4);
    for (auto& v : target.v) v = static_cast<uint8_t>(d(rng));
    LossConfig lc;
    for (auto _ : state) {
        Var loss = combined_loss(
            net.forward(Var::constant(pre), Var::constant(post)), target, lc);
        ag::backward(loss);
        benchmark::DoNotOptimize(loss.val().v[0]);
    }
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

static void BM_Evaluate(benchmark::State& state) {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> d(0, 4);
    std::vector<std::pair<Mask, Mask>> pairs;
    for (int i = 0; i < 16; ++i) {
        Mask a(256, 256), b(256, 256);
        for (auto& v : a.v) v = static_cast<uint8_t>(d(rng));
        for (auto& v : b.v) v = static_cast<uint8_t>(d(rng));
        pairs.emplace_back(std::move(a), std::move(b));
    }
    for (auto _ : state) benchmark::DoNotOptimize(evaluate(pairs, 5).score);
}
BENCHMARK(BM_Evaluate);

static void BM_Rasterize(benchmark::State& state) {
    std::vector<PolygonLabel> polys;
    for (int i = 0; i < 50; ++i) {
        double x = 10 + (i % 10) * 90, y = 10 + (i / 10) * 90;
        char buf[160];
        std::snprintf(buf, sizeof buf, "POLYGON ((%f %f, %f %f, %f %f, %f %f))", x, y, x + 60, y,
                      x + 60, y + 60, x, y + 60);
        polys.push_back({buf, i % 2 ? "destroyed" : "no-damage"});
    }
    for (auto _ : state) benchmark::DoNotOptimize(rasterize_polygons(polys, 1024, 1024).v.data());
}
BENCHMARK(BM_Rasterize);

static void BM_SynthTile(benchmark::State& state) {
    for (auto _ : state)
        benchmark::DoNotOptimize(
            synth_dataset(1, 1, 128, 5, {80, 6, 5, 5, 4})[0].pre_image.v.data());
}
BENCHMARK(BM_SynthTile);

BENCHMARK_MAIN();
