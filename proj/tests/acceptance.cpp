// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Usage: acceptance [criterion ids...]

#include <cstdlib>
#include <iostream>

#include "uniforce/acceptance.hpp"

int main(int argc, char** argv) {
  uniforce::AcceptanceOptions o;
  o.golden_episode = UNIFORCE_GOLDEN_EPISODE;
  for (int i = 1; i < argc; ++i) o.only.insert(std::atoi(argv[i]));
  o.on_result = [](const uniforce::CriterionResult& r) { std::cout << r.line() << std::endl; };
  int failed = 0;
  const auto results = uniforce::run_acceptance(o);
  for (const auto& r : results) failed += r.pass ? 0 : 1;
  std::cout << results.size() - failed << "/" << results.size() << " criteria passed" << std::endl;
  return failed == 0 && !results.empty() ? EXIT_SUCCESS : EXIT_FAILURE;
}
