// Desk-scale search on a synthetic dataset:
//   sample_mini_search [seed] [max_samples]

#include <cstdio>
#include <cstdlib>

#include "lossforge/lossforge.hpp"

int main(int argc, char** argv) {
  using namespace lossforge;
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 0;
  SearchConfig sc;
  sc.max_samples = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 1000;

  const SynthData synth = synth_dataset(200, 100, 2, 0.05, seed);
  const SplitDataset& data = synth.split;
  Policy policy({}, seed);
  ControllerSource source(policy, seed + 1);
  SearchResult res = search_phase(sc, data, init_model(ModelKind::Mf, {data.n_users, data.n_items}, seed), source,
                                  seed);
  std::printf("samples=%zu trainings=%zu promotions=%zu zero_grad=%zu duplicates=%zu final_auc=%.4f\n",
              res.stats.samples, res.stats.trainings, res.stats.promotions, res.stats.zero_grad,
              res.stats.duplicates, res.final_metric);

  std::mt19937_64 rng(seed);
  auto survivors = select_survivors(res.candidates, 5, rng);
  std::printf("survivors=%zu\n", survivors.size());
  if (survivors.empty()) return 0;
  EffectivenessConfig ec;
  ec.seed = seed;
  ec.max_epochs = 100;
  const auto winner = effectiveness_test(survivors, data, ec);
  for (const auto& c : survivors) {
    std::printf("%.4f  %s\n", c.validation.value_or(0.0), serialize(c.expr).c_str());
  }
  if (winner) std::printf("winner=%s\n", serialize(survivors[*winner].expr).c_str());
}
