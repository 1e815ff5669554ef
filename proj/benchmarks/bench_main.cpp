#include <benchmark/benchmark.h>

#include "mmtrain/modulation.hpp"
#include "mmtrain/ops.hpp"
#include "mmtrain/trainer.hpp"

using namespace mmtrain;

namespace {

Tensor filled(const Shape& shape, Rng& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(numel_of(shape));
    for (double& x : v) x = u(rng);
    return Tensor(shape, std::move(v));
}

MultimodalBatch synthetic_batch(const TrainConfig& cfg, int batch_size) {
    SyntheticConfig syn = cfg.data.synthetic;
    syn.n_samples = static_cast<std::size_t>(batch_size);
    const Dataset ds = gen_synthetic(syn);
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return normalize_batch(make_batch(ds, idx));
}

void BM_Matmul3d(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    const Tensor x = filled({8, 8, n}, rng);
    const Tensor w = filled({n, n}, rng);
    NoGradScope ng;
    for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(x, w));
}
BENCHMARK(BM_Matmul3d)->Arg(16)->Arg(32)->Arg(64);

void BM_Forward(benchmark::State& state) {
    TrainConfig cfg = TrainConfig::desk();
    const auto batch = synthetic_batch(cfg, static_cast<int>(state.range(0)));
    const ModelParams params = ModelParams::init(cfg.model, 0);
    NoGradScope ng;
    for (auto _ : state) benchmark::DoNotOptimize(forward(params, batch, ForwardOptions{}));
}
BENCHMARK(BM_Forward)->Arg(8)->Arg(32);

// Forward, every loss term and backward on one batch.
void BM_ForwardBackward(benchmark::State& state) {
    TrainConfig cfg = TrainConfig::desk();
    const auto batch = synthetic_batch(cfg, static_cast<int>(state.range(0)));
    ModelParams params = ModelParams::init(cfg.model, 0);
    Rng rng(2);
    for (auto _ : state) {
        const NoiseDraw noise = draw_noise(batch.size(), cfg.model.seq_len, cfg.model.d_latent, rng);
        ForwardOptions opts;
        opts.noise = &noise;
        opts.dropout_rng = &rng;
        params.zero_grad();
        Tape tape;
        Tensor total;
        {
            TapeScope scope(tape);
            total = compute_objective(params, batch, cfg, opts).total;
        }
        tape.backward(total);
        benchmark::DoNotOptimize(total.item());
    }
}
BENCHMARK(BM_ForwardBackward)->Arg(8)->Arg(32);

void BM_ModulationStep(benchmark::State& state) {
    const TrainConfig cfg = TrainConfig::desk();
    ModelParams params = ModelParams::init(cfg.model, 0);
    params.zero_grad();
    for (auto _ : state) benchmark::DoNotOptimize(modulation_step(0.4, 0.6, params, 0, cfg.modulation));
}
BENCHMARK(BM_ModulationStep);

}  // namespace
BENCHMARK_MAIN();
