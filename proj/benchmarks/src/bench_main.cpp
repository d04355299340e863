#include <benchmark/benchmark.h>

#include "unlearn/config.hpp"
#include "unlearn/fisher.hpp"
#include "unlearn/runner.hpp"
#include "unlearn/unlearner.hpp"

using namespace unlearn;

namespace {

// Default-sized task with a briefly trained model; shared by every benchmark.
struct Fixture {
    DataBundle data;
    ParamVector theta0;
    FisherDiag fisher_clean;
    FisherDiag fisher_poison;

    static const Fixture& get() {
        static const Fixture f = [] {
            RunConfig cfg;
            Fixture x;
            x.data = build_data(cfg);
            x.theta0 = train_supervised(init_params(cfg.arch(), 1, cfg.model.init_scale), x.data.poisoned_train,
                                        TrainConfig{5, 0.25, 8, 2})
                           .theta;
            x.fisher_clean = estimate_fisher(x.theta0, x.data.d_clean, FisherSource::Clean);
            x.fisher_poison = estimate_fisher(x.theta0, x.data.d_poison, FisherSource::Poison);
            return x;
        }();
        return f;
    }
};

void BM_Forward(benchmark::State& state) {
    const auto& f = Fixture::get();
    const auto& tokens = f.data.test.samples.front().tokens;
    for (auto _ : state) benchmark::DoNotOptimize(forward(f.theta0, tokens));
}
BENCHMARK(BM_Forward);

void BM_GradCe(benchmark::State& state) {
    const auto& f = Fixture::get();
    const auto& s = f.data.test.samples.front();
    std::vector<double> acc(f.theta0.size());
    for (auto _ : state) {
        benchmark::DoNotOptimize(accumulate_grad_ce(f.theta0, s.tokens, s.label, 1.0, acc));
        benchmark::ClobberMemory();
    }
}
BENCHMARK(BM_GradCe);

void BM_EstimateFisher(benchmark::State& state) {
    const auto& f = Fixture::get();
    const FisherOptions opts{FisherEstimator::Empirical, static_cast<std::size_t>(state.range(0))};
    for (auto _ : state) {
        benchmark::DoNotOptimize(estimate_fisher(f.theta0, f.data.train, FisherSource::Clean, opts));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.data.train.size()));
}
BENCHMARK(BM_EstimateFisher)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_TotalLoss(benchmark::State& state) {
    const auto& f = Fixture::get();
    UnlearnConfig cfg;
    cfg.lambda = 1e3;
    const std::size_t n = std::min<std::size_t>(state.range(0), f.data.d_poison.size());
    const std::span<const Sample> batch(f.data.d_poison.samples.data(), n);
    for (auto _ : state) {
        benchmark::DoNotOptimize(total_loss(f.theta0, f.theta0, f.fisher_clean, f.fisher_poison, batch, cfg));
    }
}
BENCHMARK(BM_TotalLoss)->Arg(1)->Arg(8)->Arg(25);

void BM_UnlearnEpoch(benchmark::State& state) {
    const auto& f = Fixture::get();
    UnlearnConfig cfg;
    cfg.lambda = 1e3;
    cfg.eta = 0.3;
    cfg.max_epochs = 1;
    cfg.batch_size = static_cast<std::size_t>(state.range(0));
    cfg.exclude_poison_ewc = true;
    for (auto _ : state) {
        benchmark::DoNotOptimize(unlearn_lya(f.theta0, f.data.d_poison, f.data.d_clean, cfg));
    }
}
BENCHMARK(BM_UnlearnEpoch)->Arg(1)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_TrainEpoch(benchmark::State& state) {
    const auto& f = Fixture::get();
    for (auto _ : state) {
        benchmark::DoNotOptimize(train_supervised(f.theta0, f.data.poisoned_train, TrainConfig{1, 0.25, 8, 3}));
    }
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
