#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "canonae/nn.hpp"
#include "canonae/tensor.hpp"

namespace canonae {

struct CheckResult {
  std::string name;
  bool pass = false;
  double measured = 0;   // worst observed value
  double tolerance = 0;  // bound it must stay under
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;
  bool all_pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

// Central finite differences (step h) against tape gradients for every
// parameter reachable from f; returns the worst relative error. The oracle
// side uses forward evaluations only.
double fd_max_rel_error(ParamStore& ps, const std::function<Tensor(const Ctx&)>& f, double h = 1e-5,
                        int max_coords_per_param = 64);

SuiteReport verify_groups(std::uint64_t seed);
SuiteReport verify_eqnn(std::uint64_t seed);
SuiteReport verify_props(std::uint64_t seed);
SuiteReport verify_suite(const std::string& name, std::uint64_t seed);

std::string format_report(const SuiteReport& report);

}  // namespace canonae
