#include "htype/acceptance.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Acceptance battery: one PASS/FAIL line per criterion"};
  std::vector<int> criteria;
  htype::acceptance::Options opt;
  app.add_option("--criterion,-c", criteria, "criterion numbers (default: all)")->check(CLI::Range(1, 11));
  app.add_option("--budget", opt.volume_budget, "Monte Carlo budget for the volume expansion")->check(CLI::PositiveNumber);
  app.add_option("--seed", opt.seed, "seed for the seeded experiments");
  app.add_option("--threads", opt.threads, "worker threads (default: HTYPE_THREADS or all cores)");
  CLI11_PARSE(app, argc, argv);
  if (criteria.empty())
    for (int k = 1; k <= 11; ++k) criteria.push_back(k);
  bool ok = true;
  for (int k : criteria) {
    const auto r = htype::acceptance::run(k, opt);
    std::cout << htype::acceptance::line(r) << std::endl;
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}
