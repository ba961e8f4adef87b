#include <benchmark/benchmark.h>

#include "dstlab/autodiff.hpp"
#include "dstlab/parameters.hpp"
#include "dstlab/rng.hpp"

using namespace dstlab;
using namespace dstlab::numeric;

static void MatmulForwardBackward(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    int d = 64;
    ParameterStore store;
    Rng rng(1);
    auto& w = store.add_gaussian("w", {d, d}, 0.1, rng);
    Tensor x = Tensor::zeros({n, d});
    for (double& v : x.data) v = rng.normal();
    Tape tape;
    for (auto _ : state) {
        tape.clear();
        store.zero_grads();
        auto y = tape.matmul(tape.constant(x), tape.parameter(w));
        auto loss = tape.sum_elements(y);
        tape.backward(loss);
        benchmark::DoNotOptimize(store.at("w").grad.data.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(MatmulForwardBackward)->Arg(16)->Arg(48)->Arg(96);

static void AttentionForwardBackward(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    int d = 64;
    ParameterStore store;
    Rng rng(2);
    AttentionWeights w;
    Tape tape;
    store.add_gaussian("wq", {d, d}, 0.1, rng);
    store.add_gaussian("bq", {d}, 0.1, rng);
    store.add_gaussian("wk", {d, d}, 0.1, rng);
    store.add_gaussian("bk", {d}, 0.1, rng);
    store.add_gaussian("wv", {d, d}, 0.1, rng);
    store.add_gaussian("bv", {d}, 0.1, rng);
    store.add_gaussian("wo", {d, d}, 0.1, rng);
    store.add_gaussian("bo", {d}, 0.1, rng);
    Tensor x = Tensor::zeros({n, d});
    for (double& v : x.data) v = rng.normal();
    for (auto _ : state) {
        tape.clear();
        store.zero_grads();
        w.wq = tape.parameter(store.at("wq"));
        w.bq = tape.parameter(store.at("bq"));
        w.wk = tape.parameter(store.at("wk"));
        w.bk = tape.parameter(store.at("bk"));
        w.wv = tape.parameter(store.at("wv"));
        w.bv = tape.parameter(store.at("bv"));
        w.wo = tape.parameter(store.at("wo"));
        w.bo = tape.parameter(store.at("bo"));
        auto xc = tape.constant(x);
        auto out = multi_head_attention(tape, xc, xc, xc, w, 4);
        tape.backward(tape.sum_elements(out));
        benchmark::DoNotOptimize(store.at("wq").grad.data.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(AttentionForwardBackward)->Arg(16)->Arg(48)->Arg(96);
