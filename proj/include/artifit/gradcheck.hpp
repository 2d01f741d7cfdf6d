#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "artifit/energy.hpp"

namespace artifit {

struct GradCheckOptions {
  int seeds = 100;
  double step = 1e-5;       // central-difference step
  double tolerance = 1e-3;  // max accepted relative error
  int points = 32;          // cloud size of the random instances
  std::vector<std::string> terms;  // empty = all terms plus the total
};

struct GradCheckReport {
  // term -> max relative error over all seeds and coordinates
  std::map<std::string, double> max_rel_err;
  int seeds_used = 0;
  int seeds_skipped = 0;  // nearest-neighbor tie regions

  bool passed(double tolerance) const {
    for (const auto& [term, err] : max_rel_err)
      if (err >= tolerance) return false;
    return true;
  }
};

// All gradcheckable term names, in report order.
const std::vector<std::string>& gradcheck_term_names();

// Compares total_energy_grad against central finite differences of
// total_energy on random instances (P alternating between 2 and 3),
// skipping seeds whose nearest-neighbor margins fall under 1e-6.
GradCheckReport gradcheck_energy(const GradCheckOptions& options, uint64_t seed);

}  // namespace artifit
