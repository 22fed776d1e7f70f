#include "htype/acceptance.hpp"
#include "htype/heat.hpp"
#include "htype/volume.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <unistd.h>

using namespace htype;
using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;

struct Check {
  std::string name;
  double residual = 0.0;
  double tol = 0.0;
  bool pass = true;
};

struct Outcome {
  json result = json::object();
  std::vector<Check> checks;
  std::string summary;  // human-readable lines for stdout
  std::string csv;      // table for --csv, if the command has one
};

Check check(const std::string& name, double residual, double tol) { return {name, residual, tol, residual <= tol}; }

json estimate(double value, double error) { return {{"value", value}, {"error", error}}; }

json conventions() {
  return {{"J", "J^i_{ab} = -c^{n+i}_{ab} = <J_{Z_i} X_a, X_b>"},
          {"vertical_frame", "Z_i = 2 d/dz^i on the group"},
          {"curvature", "R^d_{abc} = eta^d / theta^d (R(X_b, X_c) X_a)"},
          {"sublaplacian", "Delta = -(sum_a X_a^2 + omega_a X_a)"},
          {"kernel_measure", "Lebesgue in privileged coordinates"},
          {"popp_density_nilpotent", "(4n)^{-m/2}"},
          {"dilation", "delta_t(x, z) = (t x, t^2 z)"}};
}

void atomic_write(const std::string& path, const std::string& text) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    out.push_back(std::stod(tok, &used));
    if (used != tok.size()) throw CLI::ValidationError("bad number '" + tok + "'");
  }
  return out;
}

/// a:b:k gives k equally spaced radii from a to b; anything else is a comma list.
std::vector<double> parse_radii(const std::string& s) {
  if (s.find(':') == std::string::npos) return parse_list(s);
  std::stringstream ss(s);
  std::string a, b, k;
  std::getline(ss, a, ':');
  std::getline(ss, b, ':');
  std::getline(ss, k);
  const double lo = std::stod(a), hi = std::stod(b);
  const int cnt = std::stoi(k);
  if (cnt < 1) throw CLI::ValidationError("radii count must be positive");
  std::vector<double> r;
  for (int i = 0; i < cnt; ++i) r.push_back(cnt == 1 ? lo : lo + (hi - lo) * i / (cnt - 1));
  return r;
}

FoliationModel load_model(const std::string& id, double scale) {
  return scale > 0.0 ? model_by_id(id, scale) : model_by_id(id);
}

// ---------------------------------------------------------------------------
// Options shared by every subcommand.

struct Common {
  std::string json_path;
  std::string csv_path;
  std::string config;
  std::string save_config;
  int threads = 0;
};

const std::vector<std::string> kNotEchoed = {"help", "json", "csv", "out", "config", "save-config"};

// numbers and booleans keep their type in the echo
json typed(const std::string& v) {
  if (v.empty()) return nullptr;
  const json j = json::parse(v, nullptr, false);
  return (j.is_number() || j.is_boolean()) ? j : json(v);
}

void add_common(CLI::App* s, Common& c, bool csv) {
  s->add_option("--json", c.json_path, "write the JSON report here ('-' or no value: stdout)")->expected(0, 1);
  if (csv) s->add_option("--csv", c.csv_path, "write the CSV table here");
  s->add_option("--config", c.config, "key = value file; flags given on the command line win");
  s->add_option("--save-config", c.save_config, "write the effective options as a config file");
  s->add_option("--threads", c.threads, "worker threads (default: HTYPE_THREADS or all cores)")->check(CLI::NonNegativeNumber);
}

std::string option_key(const CLI::Option* o) {
  const auto& l = o->get_lnames();
  return l.empty() ? std::string() : l.front();
}

bool echoed(const CLI::Option* o) {
  const std::string k = option_key(o);
  return !k.empty() && std::find(kNotEchoed.begin(), kNotEchoed.end(), k) == kNotEchoed.end();
}

json config_echo(const CLI::App* s) {
  json j = json::object();
  for (const CLI::Option* o : s->get_options()) {
    if (!echoed(o)) continue;
    const std::string k = option_key(o);
    if (o->get_expected_max() == 0) {
      j[k] = o->count() > 0;
    } else if (o->count() > 0) {
      const auto& r = o->results();
      if (o->get_expected_max() > 1) {
        json arr = json::array();
        for (const auto& v : r) arr.push_back(typed(v));
        j[k] = arr;
      } else {
        j[k] = typed(r.empty() ? "" : r.back());
      }
    } else {
      j[k] = typed(o->get_default_str());
    }
  }
  return j;
}

std::string config_text(const CLI::App* s) {
  std::string out;
  for (const CLI::Option* o : s->get_options()) {
    const std::string k = option_key(o);
    if (!echoed(o) || o->count() == 0) continue;
    if (o->get_expected_max() == 0) {
      out += k + " = true\n";
      continue;
    }
    std::string v;
    for (const auto& r : o->results()) v += (v.empty() ? "" : " ") + r;
    out += k + " = " + v + "\n";
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/**
 * Expands --config into flags before parsing. Keys are the long option names
 * of the selected subcommand; a key also present on the command line is skipped.
 */
std::vector<std::string> expand_config(CLI::App& app, const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  CLI::App* s = nullptr;
  std::size_t pos = 1;
  while (pos < args.size()) {
    CLI::App* next = (s ? s : &app)->get_subcommand_no_throw(args[pos]);
    if (!next) break;
    s = next;
    ++pos;
  }
  if (!s) throw CLI::ValidationError("--config needs a subcommand");
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("cannot read config file " + path);
  std::vector<std::string> extra;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    CLI::Option* o = s->get_option_no_throw("--" + key);
    if (!o || key == "config" || key == "save-config" || key == "help")
      throw CLI::ValidationError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    bool given = false;
    for (std::size_t i = pos; i < args.size(); ++i)
      if (args[i] == "--" + key || args[i].rfind("--" + key + "=", 0) == 0) given = true;
    if (given) continue;
    if (o->get_expected_max() == 0) {
      if (value == "true" || value == "1") extra.push_back("--" + key);
      else if (value != "false" && value != "0")
        throw CLI::ValidationError(path + ":" + std::to_string(lineno) + ": '" + key + "' takes true or false");
      continue;
    }
    extra.push_back("--" + key);
    if (key == "json" && value == "-") continue;
    std::stringstream vs(value);
    std::string tok;
    while (vs >> tok) extra.push_back(tok);
  }
  std::vector<std::string> out(args.begin(), args.begin() + static_cast<long>(pos));
  out.insert(out.end(), extra.begin(), extra.end());
  out.insert(out.end(), args.begin() + static_cast<long>(pos), args.end());
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands.

struct CliffordArgs {
  int n = 0, m = 0;
  bool check = false;
  std::string out;
};

Outcome run_clifford(const CliffordArgs& a) {
  Outcome o;
  const CliffordRep rep = build_rep(a.n, a.m);
  o.result = {{"n", a.n}, {"m", a.m}, {"representation", to_json(rep)}};
  std::ostringstream os;
  os << "Clifford representation for (n, m) = (" << a.n << ", " << a.m << ")\n";
  if (a.check) {
    const CliffordResidual r = verify_htype(rep);
    o.checks = {check("skew", r.skew, r.tol), check("orthogonal", r.orthogonal, r.tol), check("square", r.square, r.tol),
                check("polarization", r.polarization, r.tol)};
    os << "max residual " << r.max() << "\n";
  }
  if (!a.out.empty()) {
    atomic_write(a.out, to_json(rep).dump(2) + "\n");
    os << "wrote " << a.out << "\n";
  }
  o.summary = os.str();
  return o;
}

struct ModelArgs {
  std::string name;
  double scale = 0.0;
  std::string point;
  std::string suite = "identities";
  double tol = 1e-10;
  int samples = 20;
};

Vec model_point(const FoliationModel& M, const std::string& point) {
  if (point.empty()) return Vec();
  const std::vector<double> v = parse_list(point);
  if (static_cast<int>(v.size()) != M.N()) throw CLI::ValidationError("--point needs " + std::to_string(M.N()) + " coordinates");
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Outcome run_model_info(const ModelArgs& a) {
  Outcome o;
  const FoliationModel M = load_model(a.name, a.scale);
  o.result = structure_json(M);
  const ModelReport r = validate_model(M, {}, a.tol);
  o.checks = {check("antisymmetry", r.antisymmetry, r.tol), check("jacobi", r.jacobi, r.tol),
              check("integrability", r.integrability, r.tol), check("htype", r.htype, r.tol),
              {"bracket_rank", static_cast<double>(M.N() - r.min_rank), 0.0, r.min_rank == M.N()}};
  o.summary = M.label + " (" + M.id + "), n = " + std::to_string(M.n) + ", m = " + std::to_string(M.m) + "\n";
  return o;
}

json invariants_json(const InvariantsReport& inv) {
  json sigma = json::array(), ind = json::array(), eig = json::array();
  for (int i = 0; i < inv.sigma.rows(); ++i) {
    json row = json::array(), irow = json::array(), erow = json::array();
    for (int j = 0; j < inv.sigma.cols(); ++j) {
      row.push_back(inv.sigma(i, j));
      irow.push_back(static_cast<bool>(inv.sigma_indeterminate(i, j)));
      const Vec& e = inv.n_eigenvalues[i][j];
      erow.push_back(std::vector<double>(e.data(), e.data() + e.size()));
    }
    sigma.push_back(row);
    ind.push_back(irow);
    eig.push_back(erow);
  }
  return {{"kappa_h", inv.kappa_h},
          {"tau_v", inv.tau_v},
          {"kappa_v", inv.kappa_v ? json(*inv.kappa_v) : json(nullptr)},
          {"sigma", sigma},
          {"sigma_indeterminate", ind},
          {"n_eigenvalues", eig},
          {"parallel_torsion_residual", inv.parallel_torsion_residual},
          {"max_abs_r", inv.max_abs_r}};
}

Outcome run_invariants(const ModelArgs& a) {
  Outcome o;
  const FoliationModel M = load_model(a.name, a.scale);
  const InvariantsReport inv = invariants(M, model_point(M, a.point));
  o.result = invariants_json(inv);
  o.result["model"] = M.id;
  std::ostringstream os;
  os << M.id << ": kappa_H = " << inv.kappa_h << ", tau_V = " << inv.tau_v;
  if (inv.kappa_v) os << ", kappa_V = " << *inv.kappa_v;
  os << "\n";
  o.summary = os.str();
  return o;
}

Outcome run_check(const ModelArgs& a) {
  Outcome o;
  const FoliationModel M = load_model(a.name, a.scale);
  const Vec p = model_point(M, a.point);
  std::ostringstream os;
  if (a.suite == "identities") {
    std::map<std::string, double> worst;
    std::vector<std::string> order;
    for (int seed = 1; seed <= a.samples; ++seed) {
      const IdentityReport r = check_identities(M, p, a.tol, static_cast<unsigned>(seed));
      for (const auto& [k, v] : r.entries()) {
        if (!worst.count(k)) order.push_back(k);
        worst[k] = std::max(worst[k], v);
      }
    }
    for (const auto& k : order) o.checks.push_back(check(k, worst[k], a.tol));
    o.result = {{"suite", "identities"}, {"samples", a.samples}};
  } else if (a.suite == "axioms") {
    const ConnectionCoeffs K = solve_bott(M, p);
    const AxiomResiduals r = axiom_residuals(M.n, K);
    const double margin = uniqueness_margin(M.n, K, 1e-6);
    o.checks = {check("metricity", r.metricity, a.tol), check("splitting", r.splitting, a.tol),
                check("torsion_hh", r.torsion_hh, a.tol), check("torsion_hv", r.torsion_hv, a.tol),
                check("torsion_vv", r.torsion_vv, a.tol), {"uniqueness_margin_ratio", 0.5e-6 / margin, 1.0, margin > 0.5e-6}};
    o.result = {{"suite", "axioms"}, {"uniqueness_margin", margin}, {"epsilon", 1e-6}};
  } else if (a.suite == "model") {
    const ModelReport r = validate_model(M, p.size() ? std::vector<Vec>{p} : std::vector<Vec>{}, a.tol);
    o.checks = {check("antisymmetry", r.antisymmetry, a.tol), check("jacobi", r.jacobi, a.tol),
                check("integrability", r.integrability, a.tol), check("htype", r.htype, a.tol)};
    o.result = {{"suite", "model"}, {"min_rank", r.min_rank}};
  } else if (a.suite == "flatness") {
    const FlatnessResult f = flatness_check(M, p.size() ? std::vector<Vec>{p} : std::vector<Vec>{}, a.tol);
    o.result = {{"suite", "flatness"},
                {"flat", f.flat},
                {"applicable", f.applicable},
                {"max_abs_r", f.max_abs_r},
                {"parallel_torsion", f.parallel_torsion}};
    o.checks = {check("parallel_torsion_hypothesis", f.parallel_torsion, a.tol)};
    os << M.id << (f.flat ? " is locally the H-type group\n" : " is not flat\n");
  } else {
    throw CLI::ValidationError("--suite must be identities, axioms, model or flatness");
  }
  o.result["model"] = M.id;
  o.summary = os.str();
  return o;
}

Outcome run_taylor(const ModelArgs& a) {
  Outcome o;
  const FoliationModel M = load_model(a.name, a.scale);
  const TaylorReport r = taylor_check(M, a.tol, a.samples);
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"name", e.name}, {"residual", e.residual}, {"fit_error", e.fit_error}, {"informational", e.informational}});
    if (!e.informational) o.checks.push_back(check(e.name, e.residual, a.tol));
  }
  o.result = {{"model", M.id}, {"entries", entries}, {"condition", r.condition}, {"samples", a.samples}};
  return o;
}

struct VolumeArgs {
  std::string model = "hopf-s3";
  double scale = 0.0;
  std::string radii = "0.1:0.4:7";
  double budget = 1e6;
  unsigned long long seed = 42;
  int shells = 256;
  double tol = 1e-10;
  bool check = false;
  double a_tol = 5e-3, b_tol = 0.05;
};

Outcome run_volume(const VolumeArgs& a, int threads) {
  Outcome o;
  const FoliationModel M = load_model(a.model, a.scale);
  const PrivilegedChart chart(M);
  BallVolumeOptions bo;
  bo.budget = a.budget;
  bo.seed = a.seed;
  bo.shells = a.shells;
  bo.threads = threads;
  bo.tol = a.tol;
  const std::vector<double> radii = parse_radii(a.radii);
  std::ostringstream csv, os;
  csv.precision(17);
  csv << "r,volume,stderr,normalized\n";
  json table = json::array();
  auto emit = [&](const BallVolumes& b) {
    for (std::size_t k = 0; k < b.radii.size(); ++k) {
      table.push_back({{"r", b.radii[k]}, {"volume", estimate(b.volumes[k], b.stderrs[k])}, {"normalized", b.normalized[k]}});
      csv << b.radii[k] << "," << b.volumes[k] << "," << b.stderrs[k] << "," << b.normalized[k] << "\n";
    }
  };
  o.result = {{"model", M.id}, {"budget", a.budget}, {"seed", a.seed}, {"shells", a.shells}};
  if (radii.size() >= 4) {
    const VolumeReport v = expansion_fit(chart, radii, bo);
    emit(v.data);
    o.result["rays"] = v.data.rays;
    o.result["fit"] = {{"a", estimate(v.a_hat, v.a_err)},
                       {"b", estimate(v.b_hat, v.b_err)},
                       {"c3", estimate(v.c3_hat, v.c3_err)},
                       {"chi2", v.chi2},
                       {"a_theory", v.theory.a},
                       {"b_theory", v.theory.b},
                       {"b_expected", v.b_expected},
                       {"kappa_h", v.kappa_h},
                       {"a_rel_error", v.a_rel_error},
                       {"b_rel_error", v.b_rel_error},
                       {"insufficient_budget", v.insufficient_budget},
                       {"required_budget", v.required_budget}};
    o.result["theory"] = {{"Q", v.theory.Q},
                          {"normalization", v.theory.normalization},
                          {"ball", v.theory.ball},
                          {"ball_quadrature", v.theory.ball_quadrature},
                          {"x1_moment", v.theory.x1_moment},
                          {"x1_quadrature", v.theory.x1_quadrature}};
    os << "a = " << v.a_hat << " +- " << v.a_err << " (theory " << v.theory.a << ")\n"
       << "r^2 coefficient = " << v.b_hat << " +- " << v.b_err << " (expected " << v.b_expected << ")\n";
    if (v.insufficient_budget)
      std::cerr << "warning: insufficient budget for the r^2 coefficient; about " << v.required_budget << " needed\n";
    if (a.check) o.checks = {check("a_rel_error", v.a_rel_error, a.a_tol), check("b_rel_error", v.b_rel_error, a.b_tol)};
  } else {
    if (a.check) throw CLI::ValidationError("--check needs at least 4 radii");
    emit(ball_volumes(chart, radii, bo));
  }
  o.result["volumes"] = table;
  o.csv = csv.str();
  o.summary = os.str();
  return o;
}

struct KernelArgs {
  int n = 2, m = 1;
  double t = 1.0;
  std::vector<std::string> at;
  bool contracts = false;
};

Outcome run_kernel(const KernelArgs& a, int threads) {
  Outcome o;
  const CliffordRep rep = build_rep(a.n, a.m);
  const GroupKernel K(rep);
  json vals = json::array();
  std::ostringstream os;
  os.precision(15);
  std::vector<std::string> pts = a.at;
  if (pts.empty()) pts.push_back(std::string());
  for (const std::string& s : pts) {
    Vec y = Vec::Zero(a.n + a.m);
    if (!s.empty()) {
      const std::vector<double> v = parse_list(s);
      if (static_cast<int>(v.size()) != a.n + a.m)
        throw CLI::ValidationError("--at needs " + std::to_string(a.n + a.m) + " coordinates");
      y = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    const double k = K(a.t, y);
    vals.push_back({{"at", std::vector<double>(y.data(), y.data() + y.size())},
                    {"value", estimate(k, K.quadrature().tail_bound * K(1.0, Vec::Zero(a.n + a.m)) * std::pow(a.t, -0.5 * K.Q()))}});
    os << "K(" << a.t << "; " << (s.empty() ? "0" : s) << ") = " << k << "\n";
  }
  o.result = {{"n", a.n}, {"m", a.m}, {"t", a.t}, {"values", vals}, {"lambda_radius", K.quadrature().radius}};
  if (a.contracts) {
    const KernelContracts c = kernel_contracts(rep, true, threads);
    o.checks = {check("normalization", c.normalization, 1e-8), check("pde", c.pde, 1e-6), check("homogeneity", c.homogeneity, 1e-13)};
    if (c.semigroup_checked) o.checks.push_back(check("semigroup", c.semigroup, 1e-6));
  }
  o.summary = os.str();
  return o;
}

struct C1Args {
  std::string model;
  double scale = 0.0;
  double tolerance = 1e-8;
  int budget = 0;
  unsigned long long seed = 7;
  std::vector<std::string> models;
};

Outcome run_c1(const C1Args& a, int threads) {
  Outcome o;
  const FoliationModel M = load_model(a.model, a.scale);
  C1Options co;
  co.tolerance = a.tolerance;
  co.threads = threads;
  const C1Estimate e = c1_estimate(M, Vec(), co);
  const C0Value z = c0(M);
  const InvariantsReport inv = invariants(M);
  o.result = {{"model", M.id},
              {"c1_lebesgue", estimate(e.value, e.error)},
              {"c1_popp", estimate(e.value_popp, e.error_popp)},
              {"popp_factor", e.popp_factor},
              {"partial", e.partial},
              {"c0_popp", z.value},
              {"kernel_at_origin", z.kernel_at_origin},
              {"popp_justification", z.justification},
              {"kappa_h", inv.kappa_h},
              {"tau_v", inv.tau_v},
              {"s_nodes", e.s_nodes},
              {"rho_nodes", e.rho_nodes},
              {"operator_terms", e.terms},
              {"parallel_torsion_residual", e.parallel_torsion_residual}};
  o.checks.push_back(check("quadrature_error", e.error, a.tolerance));
  std::ostringstream os;
  os.precision(12);
  os << M.id << ": c1 = " << e.value_popp << " +- " << e.error_popp << " (Popp), " << e.value << " (Lebesgue)\n";
  if (a.budget > 0) {
    C1MonteCarloOptions mo;
    mo.samples_per_node = a.budget;
    mo.seed = a.seed;
    mo.threads = threads;
    const C1MonteCarlo mc = duhamel_c1_monte_carlo(assemble_A_ops(M).A0, mo);
    o.result["monte_carlo"] = {{"c1_lebesgue", estimate(mc.value, mc.stderr_)}, {"samples", mc.samples}, {"seed", a.seed}};
    const double dev = mc.stderr_ > 0.0 ? std::abs(mc.value - e.value) / mc.stderr_ : std::abs(mc.value - e.value);
    o.checks.push_back(check("monte_carlo_agreement_sigmas", dev, 5.0));
    os << "Monte Carlo: " << mc.value << " +- " << mc.stderr_ << "\n";
  }
  o.summary = os.str();
  return o;
}

Outcome run_fit(const C1Args& a, int threads) {
  Outcome o;
  std::vector<C1Site> sites;
  json js = json::array();
  for (const std::string& id : a.models) {
    const FoliationModel M = model_by_id(id);
    C1Options co;
    co.tolerance = a.tolerance;
    co.threads = threads;
    const C1Estimate e = c1_estimate(M, Vec(), co);
    const InvariantsReport inv = invariants(M);
    sites.push_back({M.id, M.n, M.m, e.value_popp, e.error_popp, inv.kappa_h, inv.tau_v});
    js.push_back({{"model", M.id},
                  {"n", M.n},
                  {"m", M.m},
                  {"c1_popp", estimate(e.value_popp, e.error_popp)},
                  {"kappa_h", inv.kappa_h},
                  {"tau_v", inv.tau_v}});
  }
  o.result = {{"sites", js}, {"normalization", "popp"}};
  std::ostringstream os;
  try {
    const UniversalFit f = fit_universal_constants(sites);
    o.result["fit"] = {{"C1", estimate(f.C1, f.C1_error)},
                       {"C2", estimate(f.C2, f.C2_error)},
                       {"residual", f.residual},
                       {"mixed_dimensions", f.mixed_dimensions}};
    o.checks.push_back(check("relative_residual", f.residual, 0.05));
    os << "C1 = " << f.C1 << " +- " << f.C1_error << ", C2 = " << f.C2 << " +- " << f.C2_error << ", residual " << f.residual << "\n";
    if (f.mixed_dimensions) os << "note: sites of different (n, m)\n";
  } catch (const RankDeficient& e) {
    o.result["rank_deficient"] = {{"message", e.what()},
                                  {"direction", std::vector<double>(e.direction.data(), e.direction.data() + e.direction.size())},
                                  {"coefficient", e.coefficient},
                                  {"residual", e.residual}};
    o.checks.push_back({"rank", 1.0, 0.0, false});
    os << e.what() << "\n";
  }
  o.summary = os.str();
  return o;
}

struct SuiteArgs {
  bool acceptance = false;
  std::vector<int> criteria;
  double budget = 1e8;
  unsigned long long seed = 42;
};

Outcome run_suite(const SuiteArgs& a, int threads) {
  if (!a.acceptance) throw CLI::ValidationError("suite: only --acceptance is available");
  Outcome o;
  acceptance::Options opt;
  opt.volume_budget = a.budget;
  opt.seed = a.seed;
  opt.threads = threads;
  std::vector<int> ks = a.criteria;
  if (ks.empty())
    for (int k = 1; k <= 11; ++k) ks.push_back(k);
  json arr = json::array();
  std::ostringstream os;
  for (int k : ks) {
    const acceptance::Result r = acceptance::run(k, opt);
    json j = acceptance::to_json(r);
    arr.push_back(j);
    o.checks.push_back({"criterion_" + std::to_string(k), r.pass ? 0.0 : 1.0, 0.0, r.pass});
    os << acceptance::line(r) << "\n";
    std::cout << acceptance::line(r) << std::endl;
  }
  o.result = {{"criteria", arr}};
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"H-type foliations: models, Bott connection, privileged coordinates, volumes and heat invariants"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(HTYPE_VERSION));
  Common common;

  CliffordArgs ca;
  auto* s_cl = app.add_subcommand("clifford", "build and check a Clifford representation");
  s_cl->add_option("--n", ca.n, "horizontal rank")->required()->check(CLI::PositiveNumber);
  s_cl->add_option("--m", ca.m, "vertical rank")->required()->check(CLI::PositiveNumber);
  s_cl->add_flag("--check", ca.check, "verify the H-type relations");
  s_cl->add_option("--out", ca.out, "write the representation JSON here");
  add_common(s_cl, common, false);

  ModelArgs ma;
  auto* s_model = app.add_subcommand("model", "model registry");
  s_model->require_subcommand(1);
  auto* s_info = s_model->add_subcommand("info", "structure constants of a model");
  s_info->add_option("--name", ma.name, "model id: group:n,m, hopf-s3, qhopf-s7 (optionally @scale)")->required();
  s_info->add_option("--scale", ma.scale, "scale override")->check(CLI::PositiveNumber);
  s_info->add_option("--tol", ma.tol, "validation tolerance")->capture_default_str();
  add_common(s_info, common, false);

  auto* s_inv = app.add_subcommand("invariants", "kappa_H, tau_V, kappa_V and the vertical signature");
  s_inv->add_option("--model", ma.name, "model id")->required();
  s_inv->add_option("--scale", ma.scale, "scale override")->check(CLI::PositiveNumber);
  s_inv->add_option("--point", ma.point, "comma-separated point (chart models)");
  add_common(s_inv, common, false);

  auto* s_check = app.add_subcommand("check", "identity, axiom, model or flatness checks");
  s_check->add_option("--model", ma.name, "model id")->required();
  s_check->add_option("--scale", ma.scale, "scale override")->check(CLI::PositiveNumber);
  s_check->add_option("--point", ma.point, "comma-separated point (chart models)");
  s_check->add_option("--suite", ma.suite, "identities, axioms, model or flatness")->capture_default_str()
      ->check(CLI::IsMember({"identities", "axioms", "model", "flatness"}));
  s_check->add_option("--tol", ma.tol, "tolerance")->capture_default_str()->check(CLI::PositiveNumber);
  s_check->add_option("--samples", ma.samples, "random samples for the identity battery")->capture_default_str()->check(CLI::PositiveNumber);
  add_common(s_check, common, false);

  auto* s_taylor = app.add_subcommand("taylor-check", "privileged-coordinate expansions against their closed forms");
  s_taylor->add_option("--model", ma.name, "model id")->required();
  s_taylor->add_option("--scale", ma.scale, "scale override")->check(CLI::PositiveNumber);
  s_taylor->add_option("--tol", ma.tol, "tolerance")->default_val(1e-5)->check(CLI::PositiveNumber);
  s_taylor->add_option("--samples", ma.samples, "sample directions")->default_val(6)->check(CLI::PositiveNumber);
  add_common(s_taylor, common, false);

  VolumeArgs va;
  auto* s_vol = app.add_subcommand("ball-volume", "Popp volumes of pulled-back Koranyi balls and the expansion fit");
  s_vol->add_option("--model", va.model, "model id")->capture_default_str();
  s_vol->add_option("--scale", va.scale, "scale override")->check(CLI::PositiveNumber);
  s_vol->add_option("--radii", va.radii, "a:b:k or comma list")->capture_default_str();
  s_vol->add_option("--budget", va.budget, "density evaluations per radius")->capture_default_str()->check(CLI::PositiveNumber);
  s_vol->add_option("--seed", va.seed, "seed")->capture_default_str();
  s_vol->add_option("--shells", va.shells, "radial shells per ray")->capture_default_str()->check(CLI::PositiveNumber);
  s_vol->add_option("--tol", va.tol, "ODE tolerance")->capture_default_str()->check(CLI::PositiveNumber);
  s_vol->add_flag("--check", va.check, "fail unless the fit matches the expansion");
  s_vol->add_option("--a-tol", va.a_tol, "relative tolerance on the r^0 coefficient")->capture_default_str();
  s_vol->add_option("--b-tol", va.b_tol, "relative tolerance on the r^2 coefficient")->capture_default_str();
  add_common(s_vol, common, true);

  KernelArgs ka;
  auto* s_kernel = app.add_subcommand("heat-kernel", "heat kernel of the H-type group");
  s_kernel->add_option("--n", ka.n, "horizontal rank")->capture_default_str()->check(CLI::PositiveNumber);
  s_kernel->add_option("--m", ka.m, "vertical rank")->capture_default_str()->check(CLI::PositiveNumber);
  s_kernel->add_option("--t", ka.t, "time")->capture_default_str()->check(CLI::PositiveNumber);
  s_kernel->add_option("--at", ka.at, "comma-separated point (repeatable)");
  s_kernel->add_flag("--contracts", ka.contracts, "run the normalization, PDE, homogeneity and semigroup checks");
  add_common(s_kernel, common, false);

  C1Args c1a;
  auto* s_c1 = app.add_subcommand("c1", "second heat invariant at the base point");
  s_c1->add_option("--model", c1a.model, "model id")->required();
  s_c1->add_option("--scale", c1a.scale, "scale override")->check(CLI::PositiveNumber);
  s_c1->add_option("--tolerance", c1a.tolerance, "requested quadrature accuracy")->capture_default_str()->check(CLI::PositiveNumber);
  s_c1->add_option("--budget", c1a.budget, "Monte Carlo samples per time node for the cross-check (0: skip)")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  s_c1->add_option("--seed", c1a.seed, "Monte Carlo seed")->capture_default_str();
  add_common(s_c1, common, false);

  auto* s_fit = app.add_subcommand("fit-c1", "least-squares fit of c1 on (kappa_H, tau_V)");
  s_fit->add_option("--models", c1a.models, "model ids with optional @scale")->required();
  s_fit->add_option("--tolerance", c1a.tolerance, "requested quadrature accuracy")->capture_default_str()->check(CLI::PositiveNumber);
  add_common(s_fit, common, false);

  SuiteArgs sa;
  auto* s_suite = app.add_subcommand("suite", "batteries");
  s_suite->add_flag("--acceptance", sa.acceptance, "run the acceptance battery");
  s_suite->add_option("--criterion", sa.criteria, "criteria to run (default: all)")->check(CLI::Range(1, 11));
  s_suite->add_option("--budget", sa.budget, "Monte Carlo budget of the volume criterion")->capture_default_str()->check(CLI::PositiveNumber);
  s_suite->add_option("--seed", sa.seed, "seed")->capture_default_str();
  add_common(s_suite, common, false);

  std::vector<std::string> args(argv, argv + argc);
  try {
    args = expand_config(app, args);
    std::vector<const char*> cargs;
    for (const auto& s : args) cargs.push_back(s.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub == s_model) sub = s_info;
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  Outcome out;
  try {
    if (!common.save_config.empty()) atomic_write(common.save_config, config_text(sub));
    if (sub == s_cl) out = run_clifford(ca);
    else if (sub == s_info) out = run_model_info(ma);
    else if (sub == s_inv) out = run_invariants(ma);
    else if (sub == s_check) out = run_check(ma);
    else if (sub == s_taylor) out = run_taylor(ma);
    else if (sub == s_vol) out = run_volume(va, common.threads);
    else if (sub == s_kernel) out = run_kernel(ka, common.threads);
    else if (sub == s_c1) out = run_c1(c1a, common.threads);
    else if (sub == s_fit) out = run_fit(c1a, common.threads);
    else if (sub == s_suite) out = run_suite(sa, common.threads);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n" << sub->help();
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: bad number (" << e.what() << ")\n" << sub->help();
    return 2;
  } catch (const Error& e) {
    // unknown models and inadmissible (n, m) are input errors; anything later is a failed run
    const std::string w = e.what();
    const bool input = w.find("unknown model") != std::string::npos || w.find("admissible") != std::string::npos ||
                       w.find("model id") != std::string::npos || w.find("scale") != std::string::npos;
    std::cerr << "error: " << w << "\n";
    return input ? 2 : 1;
  }

  bool pass = true;
  json checks = json::array();
  for (const Check& c : out.checks) {
    pass = pass && c.pass;
    checks.push_back({{"name", c.name}, {"residual", c.residual}, {"tol", c.tol}, {"pass", c.pass}});
  }
  const std::string command = sub == s_info ? "model info" : sub->get_name();
  json report = {{"schema_version", kSchemaVersion},
                 {"tool", "htype"},
                 {"version", HTYPE_VERSION},
                 {"command", command},
                 {"config", config_echo(sub)},
                 {"conventions", conventions()},
                 {"result", out.result},
                 {"checks", checks},
                 {"pass", pass},
                 {"timestamp",
                  {{"utc", started},
                   {"wall_clock_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}}}};

  const bool json_requested = sub->get_option("--json")->count() > 0;
  const bool json_stdout = json_requested && (common.json_path.empty() || common.json_path == "-");
  try {
    if (json_requested && !json_stdout) atomic_write(common.json_path, report.dump(2) + "\n");
    if (!common.csv_path.empty()) {
      if (out.csv.empty()) throw Error("this command has no CSV table");
      atomic_write(common.csv_path, out.csv);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  if (json_stdout) {
    std::cout << report.dump(2) << std::endl;
  } else if (sub != s_suite) {
    std::cout << out.summary;
    for (const Check& c : out.checks)
      if (!c.pass || out.checks.size() <= 6) std::cout << (c.pass ? "  ok    " : "  FAIL  ") << c.name << " " << c.residual << " (tol " << c.tol << ")\n";
    if (!out.checks.empty())
      std::cout << std::count_if(out.checks.begin(), out.checks.end(), [](const Check& c) { return c.pass; }) << "/"
                << out.checks.size() << " checks pass\n";
  }
  if (!pass) {
    std::cerr << "failing checks:\n";
    for (const Check& c : out.checks)
      if (!c.pass) std::cerr << "  " << c.name << ": residual " << c.residual << " > " << c.tol << "\n";
  }
  return pass ? 0 : 1;
}
