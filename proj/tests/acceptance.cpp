// One line per acceptance criterion; exits nonzero if any line is FAIL.

#include <algorithm>
#include <iostream>
#include <thread>

#include "icfem/validation/suite.hpp"

int main() {
  using namespace icfem::validation;
  const int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  std::vector<CheckResult> results = run_fast_checks();
  results.push_back(check_linear_end_to_end());
  results.push_back(check_pattern_contract());
  results.push_back(check_study_directional(20, threads));
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  int failed = 0;
  for (const auto& r : results) {
    std::cout << format(r) << std::endl;
    if (!r.passed()) ++failed;
  }
  std::cout << (failed == 0 ? "acceptance: all criteria met or flagged" : "acceptance: failures present") << std::endl;
  return failed == 0 ? 0 : 1;
}
