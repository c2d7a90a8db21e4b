#pragma once

#include <ostream>
#include <string>

namespace caql {

struct SuiteResult {
  bool pass{false};
  std::string detail;
};

struct SelftestOptions {
  bool corrupt_srcc_ties{false};  // negative control: break the tie rule
};

// Oracle suites. Each is self-contained and deterministic.
SuiteResult selftest_srcc(std::size_t cases = 500,
                          bool corrupt_ties = false);
SuiteResult selftest_davies_bouldin(std::size_t cases = 200);
SuiteResult selftest_gradients();
SuiteResult selftest_ous(std::size_t cases = 1000);
SuiteResult selftest_angular(std::size_t cases = 1000);

// Runs all suites, printing one pass/fail line each. Returns 0 iff all pass.
int run_selftest(std::ostream& out, const SelftestOptions& opt = {});

}  // namespace caql
