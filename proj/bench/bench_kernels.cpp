// Serial reference kernels against their OpenMP counterparts.
#include <benchmark/benchmark.h>

#include "certgap/datagen.hpp"
#include "certgap/evaluate.hpp"

using namespace certgap;

namespace {

struct Fixture {
    LabeledSet data;
    DenseNet net;
    ThreatModel l2;
    ThreatModel signal;

    Fixture() {
        SpheresParams p;
        p.n_train = 2000;
        p.seed = 11;
        data = sample_spheres(p);
        const int widths[] = {10, 100, 2};
        net = DenseNet::random(widths, 3);
        l2 = ThreatModel::l2(2.0);
        signal = ThreatModel::signal(make_directions(10, 5, 7), 2.0);
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

AttackConfig short_pgd() {
    AttackConfig a;
    a.steps = 20;
    a.restarts = 2;
    a.early_stop = false;
    return a;
}

void BM_PgdSerial(benchmark::State& state) {
    const Fixture& f = fixture();
    for (auto _ : state) benchmark::DoNotOptimize(robust_failures_serial(f.net, f.data, f.l2, EvalMode::Pgd, short_pgd()));
}

void BM_PgdParallel(benchmark::State& state) {
    const Fixture& f = fixture();
    for (auto _ : state) benchmark::DoNotOptimize(robust_failures(f.net, f.data, f.l2, EvalMode::Pgd, short_pgd()));
}

void BM_ExactSerial(benchmark::State& state) {
    const Fixture& f = fixture();
    for (auto _ : state) benchmark::DoNotOptimize(robust_failures_serial(f.net, f.data, f.signal, EvalMode::Exact));
}

void BM_ExactParallel(benchmark::State& state) {
    const Fixture& f = fixture();
    for (auto _ : state) benchmark::DoNotOptimize(robust_failures(f.net, f.data, f.signal, EvalMode::Exact));
}

void BM_CoapCertSerial(benchmark::State& state) {
    const Fixture& f = fixture();
    for (auto _ : state)
        benchmark::DoNotOptimize(robust_failures_serial(f.net, f.data, f.l2, EvalMode::CertifiedCoap));
}

void BM_CoapCertParallel(benchmark::State& state) {
    const Fixture& f = fixture();
    for (auto _ : state) benchmark::DoNotOptimize(robust_failures(f.net, f.data, f.l2, EvalMode::CertifiedCoap));
}

}  // namespace

BENCHMARK(BM_PgdSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PgdParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExactSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExactParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CoapCertSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CoapCertParallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
