#include <benchmark/benchmark.h>

#include "dstlab/corpus.hpp"
#include "dstlab/metrics.hpp"
#include "dstlab/tracker.hpp"

using namespace dstlab;

static void GenerateCorpus(benchmark::State& state) {
    Ontology ont = desk_ontology();
    for (auto _ : state) {
        Corpus corpus = generate_corpus(ont, static_cast<int>(state.range(0)), 5, 7);
        benchmark::DoNotOptimize(corpus.dialogues.size());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(GenerateCorpus)->Arg(100)->Arg(400);

static void InjectNoise(benchmark::State& state) {
    Ontology ont = desk_ontology();
    Corpus corpus = generate_corpus(ont, static_cast<int>(state.range(0)), 5, 7);
    for (auto _ : state) {
        auto [noisy, log] = inject_noise(corpus, {0.3, 0.1, 0.2, 13});
        benchmark::DoNotOptimize(log.entries.size());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(InjectNoise)->Arg(100)->Arg(400);

static void EvaluateMetrics(benchmark::State& state) {
    Ontology ont = desk_ontology();
    Corpus corpus = generate_corpus(ont, static_cast<int>(state.range(0)), 5, 7);
    auto [noisy, log] = inject_noise(corpus, {0.3, 0.1, 0.2, 13});
    StateSequences gold = StateSequences::from_corpus(corpus);
    StateSequences pred = StateSequences::from_corpus(noisy);
    for (auto _ : state) {
        MetricsReport report = evaluate(pred, gold, ont);
        benchmark::DoNotOptimize(report.joint_goal_accuracy);
    }
    state.SetItemsProcessed(state.iterations() * corpus.total_turns());
}
BENCHMARK(EvaluateMetrics)->Arg(100)->Arg(400);

static void TrackerTrainingStep(benchmark::State& state) {
    Ontology ont = desk_ontology();
    Corpus corpus = generate_corpus(ont, 8, 4, 7);
    tracker::TrackerConfig cfg;
    cfg.max_len = 48;
    Vocabulary vocab = Vocabulary::from_ontology(ont, generator_template_words());
    tracker::TrackerModel model(cfg, vocab, ont, 42);

    std::vector<std::vector<int>> inputs;
    std::vector<State> labels;
    for (const auto& dlg : corpus.dialogues) {
        for (int t = 0; t < static_cast<int>(dlg.turns.size()); ++t) {
            Sample s = tracker::make_sample(dlg, t, ont);
            inputs.push_back(vocab.ids(build_input_sequence(s, ont, cfg.max_len)));
            labels.push_back(s.labels);
        }
    }
    numeric::Tape tape;
    Rng rng(3);
    std::size_t i = 0;
    for (auto _ : state) {
        tape.clear();
        model.trainable().zero_grads();
        auto h = model.encode_context(tape, inputs[i % inputs.size()], true, &rng);
        auto g = model.all_slot_vectors(tape, h);
        auto loss = model.loss_hard(tape, model.slot_log_probs(tape, g), labels[i % labels.size()]);
        tape.backward(loss);
        benchmark::DoNotOptimize(tape.scalar_value(loss));
        ++i;
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(TrackerTrainingStep);

BENCHMARK_MAIN();
