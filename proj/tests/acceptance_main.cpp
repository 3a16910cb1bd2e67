// Standalone acceptance runner: one PASS/FAIL line per criterion, nonzero
// exit if any criterion fails.  --full runs the scenario-level criteria too.

#include <cstring>
#include <iostream>

#include "esb/acceptance.hpp"

int main(int argc, char** argv) {
  bool full = false;
  unsigned seed = 2024;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--full") == 0) full = true;
    if (std::strcmp(argv[i], "--seed") == 0 && i + 1 < argc)
      seed = static_cast<unsigned>(std::stoul(argv[++i]));
  }

  const auto results = esb::run_acceptance_suite(full, seed);
  int failures = 0;
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << r.index
              << ": " << r.name << " [" << r.detail << "]\n";
    if (!r.pass) ++failures;
  }
  std::cout << (failures ? "ACCEPTANCE: FAIL (" : "ACCEPTANCE: PASS (")
            << results.size() - failures << "/" << results.size()
            << " criteria)\n";
  return failures ? 4 : 0;
}
