#include <benchmark/benchmark.h>

#include "chef/backbones.hpp"
#include "chef/bridge.hpp"
#include "chef/corpus.hpp"
#include "chef/metrics.hpp"

using namespace chef;

namespace {

void bm_mm_nn(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor a = Tensor::randn({n, n}, rng, 1.0);
  Tensor b = Tensor::randn({n, n}, rng, 1.0);
  Tensor c = Tensor::zeros({n, n});
  for (auto _ : state) {
    mm_nn(a.data.data(), b.data.data(), c.data.data(), n, n, n, false);
    benchmark::DoNotOptimize(c.data.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}

void bm_mm_nt(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor a = Tensor::randn({n, n}, rng, 1.0);
  Tensor b = Tensor::randn({n, n}, rng, 1.0);
  Tensor c = Tensor::zeros({n, n});
  for (auto _ : state) {
    mm_nt(a.data.data(), b.data.data(), c.data.data(), n, n, n, false);
    benchmark::DoNotOptimize(c.data.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}

void bm_mm_tn(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor a = Tensor::randn({n, n}, rng, 1.0);
  Tensor b = Tensor::randn({n, n}, rng, 1.0);
  Tensor c = Tensor::zeros({n, n});
  for (auto _ : state) {
    mm_tn(a.data.data(), b.data.data(), c.data.data(), n, n, n, false);
    benchmark::DoNotOptimize(c.data.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}

void bm_train_step(benchmark::State& state) {
  static const Config cfg = [] {
    Config c;
    c.dims.max_seq = 128;
    return c;
  }();
  static const Backbones bb = build_backbones(7, cfg.dims);
  auto entries = synth_entries(1, 16);
  std::vector<TrainItem> items;
  for (const auto& e : entries) items.push_back(make_train_item(bb, e.record, e.image));
  Trainer trainer(bb, init_bridge(7, cfg.dims), AdamHyper{});
  for (auto _ : state) {
    LossReport rep = trainer.train_step(std::span<const TrainItem>(items.data(), items.size()));
    benchmark::DoNotOptimize(rep.total);
  }
}

void bm_sacrebleu(benchmark::State& state) {
  auto entries = synth_entries(3, 64);
  std::vector<std::string> hyp, ref;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ref.push_back(recipe_model_text(entries[i].record));
    hyp.push_back(recipe_model_text(entries[(i + 1) % entries.size()].record));
  }
  for (auto _ : state) {
    double v = sacrebleu(hyp, ref);
    benchmark::DoNotOptimize(v);
  }
}

void bm_synth_corpus(benchmark::State& state) {
  for (auto _ : state) {
    auto entries = synth_entries(11, 64);
    benchmark::DoNotOptimize(entries.size());
  }
}

}  // namespace

BENCHMARK(bm_mm_nn)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_mm_nt)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_mm_tn)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_train_step)->Unit(benchmark::kMillisecond)->Iterations(8);
BENCHMARK(bm_sacrebleu)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_synth_corpus)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
