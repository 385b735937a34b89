// Microbenchmarks for the hot paths: convolution forward/backward, box
// rasterization, and full synthetic scene generation.

#include <benchmark/benchmark.h>

#include <cstdint>

#include "distillbev/autodiff.hpp"
#include "distillbev/bev_geometry.hpp"
#include "distillbev/rng.hpp"
#include "distillbev/scene.hpp"
#include "distillbev/tensor.hpp"

namespace {

using namespace distillbev;

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t stream) {
    Rng rng(42, 0, stream);
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-1.0, 1.0);
    return t;
}

void bench_conv2d_forward(benchmark::State& state) {
    const std::size_t c = static_cast<std::size_t>(state.range(0));
    Graph g;
    Value x = g.constant(random_tensor({c, 32, 32}, 1));
    Value w = g.constant(random_tensor({c, c, 3, 3}, 2));
    Value b = g.constant(random_tensor({c}, 3));
    for (auto _ : state) {
        Value y = conv2d(g, x, w, b, 1);
        benchmark::DoNotOptimize(g.value(y).data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(c * c * 9 * 32 * 32));
}

void bench_conv2d_backward(benchmark::State& state) {
    const std::size_t c = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        Graph g;
        Value x = g.leaf(random_tensor({c, 32, 32}, 1), true);
        Value w = g.leaf(random_tensor({c, c, 3, 3}, 2), true);
        Value b = g.leaf(random_tensor({c}, 3), true);
        Value loss = sum(g, conv2d(g, x, w, b, 1));
        g.backward(loss);
        benchmark::DoNotOptimize(g.grad(w).data());
    }
}

void bench_rasterize_boxes(benchmark::State& state) {
    SceneConfig cfg;
    SceneSample sc = generate_scene(cfg, 7);
    for (auto _ : state) {
        OwnerGrid owners = rasterize_boxes(sc.boxes, cfg.grid);
        benchmark::DoNotOptimize(owners.owner.data());
    }
}

void bench_generate_scene(benchmark::State& state) {
    SceneConfig cfg;
    std::uint64_t seed = 0;
    for (auto _ : state) {
        SceneSample sc = generate_scene(cfg, seed++);
        benchmark::DoNotOptimize(sc.teacher_input.data());
    }
}

BENCHMARK(bench_conv2d_forward)->Arg(8)->Arg(16)->Arg(32);
BENCHMARK(bench_conv2d_backward)->Arg(8)->Arg(16);
BENCHMARK(bench_rasterize_boxes);
BENCHMARK(bench_generate_scene);

}  // namespace

BENCHMARK_MAIN();
