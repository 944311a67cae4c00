// Positive rate and a few values of every built-in loss.

#include <cstdio>
#include <random>

#include "lossforge/lossforge.hpp"

int main() {
  using namespace lossforge;
  std::printf("%-8s %6s %10s %10s %10s\n", "loss", "rate", "f(.3,0)", "f(.3,1)", "f'(.3,1)");
  for (const auto& [name, text] : zoo_entries()) {
    const LossExpr f = parse(text);
    std::mt19937_64 rng(0);
    const double rate = validation_check(f, kValidationPairs, rng);
    std::printf("%-8.*s %6.3f %10.4g %10.4g %10.4g\n", static_cast<int>(name.size()), name.data(), rate,
                eval(f, 0.3, 0.0), eval(f, 0.3, 1.0), grad_yhat(f, 0.3, 1.0));
  }
}
