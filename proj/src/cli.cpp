#include "gibbslab/cli.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gibbslab/ctmc.hpp"
#include "gibbslab/entropy.hpp"
#include "gibbslab/parallel.hpp"
#include "gibbslab/serialize.hpp"

namespace gibbslab::cli {

namespace {

using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

void parse_initial(const json& j, const std::string& where, InitialSpec& out,
                   std::vector<std::string>& errors) {
  if (!j.is_object()) {
    errors.push_back(where + ": initial law must be an object");
    return;
  }
  out.kind = j.value("kind", std::string("uniform"));
  if (out.kind != "uniform" && out.kind != "point" && out.kind != "product" &&
      out.kind != "zeros")
    errors.push_back(where + ".kind: unknown initial law '" + out.kind + "'");
  out.state_index = j.value("state_index", std::uint64_t{0});
  if (j.contains("weights")) out.weights = j.at("weights").get<std::vector<double>>();
  if (out.kind == "product" && out.weights.empty())
    errors.push_back(where + ": product initial law needs weights");
}

}  // namespace

ValidationResult validate(const std::string& config_text,
                          const std::filesystem::path& base_dir) {
  return validate(config_text, base_dir, std::string());
}

ValidationResult validate(const std::string& config_text,
                          const std::filesystem::path& base_dir,
                          const std::string& fallback_task) {
  ValidationResult result;
  auto& errors = result.errors;
  json doc;
  try {
    doc = json::parse(config_text);
  } catch (const std::exception& e) {
    errors.push_back(std::string("config is not valid JSON: ") + e.what());
    return result;
  }
  if (!doc.is_object()) {
    errors.push_back("config root must be an object");
    return result;
  }

  ExperimentConfig cfg;
  cfg.raw_text = config_text;

  // ---- model section
  if (!doc.contains("model")) {
    errors.push_back("model: missing section");
  } else {
    const json& m = doc.at("model");
    if (!m.contains("q"))
      errors.push_back("model.q: missing local state count");
    else {
      cfg.q = m.at("q").get<int>();
      if (cfg.q < 2) errors.push_back("model.q: need q >= 2 (single-state space is degenerate)");
    }
    if (!m.contains("torus"))
      errors.push_back("model.torus: missing side lengths");
    else {
      cfg.torus_sides = m.at("torus").get<std::vector<int>>();
      if (cfg.torus_sides.empty()) errors.push_back("model.torus: needs at least one axis");
      for (int s : cfg.torus_sides)
        if (s <= 0) errors.push_back("model.torus: side lengths must be positive");
    }
    cfg.beta = m.value("beta", 1.0);  // negative beta is physical (antiferromagnet)
    cfg.coupling = m.value("coupling", 1.0);
    cfg.field = m.value("field", 0.0);
    if (!m.contains("potential")) {
      errors.push_back("model.potential: missing");
    } else if (m.at("potential").is_string()) {
      cfg.potential_kind = m.at("potential").get<std::string>();
      if (cfg.potential_kind != "zero" && cfg.potential_kind != "ising" &&
          cfg.potential_kind != "potts")
        errors.push_back("model.potential: unknown builtin '" + cfg.potential_kind + "'");
    } else if (m.at("potential").is_object()) {
      const json& p = m.at("potential");
      if (p.contains("file")) {
        cfg.potential_kind = "file";
        cfg.potential_path = base_dir / p.at("file").get<std::string>();
        if (!std::filesystem::exists(cfg.potential_path))
          errors.push_back("model.potential.file: no such file " + cfg.potential_path.string());
      } else if (p.contains("terms")) {
        cfg.potential_kind = "inline";
        json inline_doc = p;
        inline_doc["q"] = cfg.q;
        if (!inline_doc.contains("beta")) inline_doc["beta"] = cfg.beta;
        cfg.potential_inline = inline_doc.dump();
      } else {
        errors.push_back("model.potential: object needs 'file' or 'terms'");
      }
    } else {
      errors.push_back("model.potential: must be a builtin name or an object");
    }
  }

  // ---- dynamics section
  if (!doc.contains("dynamics")) {
    errors.push_back("dynamics: missing section");
  } else if (!doc.at("dynamics").contains("families") ||
             !doc.at("dynamics").at("families").is_array() ||
             doc.at("dynamics").at("families").empty()) {
    errors.push_back("dynamics.families: needs a nonempty array");
  } else {
    for (const auto& f : doc.at("dynamics").at("families")) {
      FamilySpec spec;
      spec.type = f.value("type", std::string());
      spec.weight = f.value("weight", 1.0);
      spec.kappa = f.value("kappa", 1.0);
      if (spec.type == "file") {
        spec.path = base_dir / f.value("path", std::string());
        if (!std::filesystem::exists(spec.path))
          errors.push_back("dynamics.families: no such rate file " + spec.path.string());
      } else if (spec.type != "heat_bath" && spec.type != "cyclic") {
        errors.push_back("dynamics.families: unknown family type '" + spec.type + "'");
      }
      if (spec.weight < 0.0) errors.push_back("dynamics.families: weights must be nonnegative");
      if (spec.type == "cyclic" && spec.kappa <= 0.0)
        errors.push_back("dynamics.families: cyclic needs kappa > 0");
      cfg.families.push_back(std::move(spec));
    }
    double wsum = 0.0;
    for (const auto& f : cfg.families) wsum += f.weight;
    if (wsum == 0.0) errors.push_back("dynamics.families: all weights are zero");
  }

  // ---- task and common fields
  cfg.task = doc.value("task", fallback_task);
  if (cfg.task.empty())
    errors.push_back("task: missing (one of check|evolve|entropy|reverse|simulate)");
  else if (cfg.task != "check" && cfg.task != "evolve" && cfg.task != "entropy" &&
           cfg.task != "reverse" && cfg.task != "simulate")
    errors.push_back("task: unknown task '" + cfg.task + "'");
  cfg.seed = doc.value("seed", std::uint64_t{0});
  cfg.workers = doc.value("workers", 0);
  cfg.out_dir = base_dir / doc.value("out", std::string("out"));

  if (doc.contains("tolerances")) {
    const json& t = doc.at("tolerances");
    cfg.tol.stationarity = t.value("stationarity", cfg.tol.stationarity);
    cfg.tol.dlr = t.value("dlr", cfg.tol.dlr);
    cfg.tol.consistency = t.value("consistency", cfg.tol.consistency);
    cfg.tol.reversal = t.value("reversal", cfg.tol.reversal);
    cfg.tol.oscillation = t.value("oscillation", cfg.tol.oscillation);
    cfg.tol.switching = t.value("switching", cfg.tol.switching);
  }

  if (cfg.task == "evolve") {
    const json e = doc.value("evolve", json::object());
    cfg.evolve_t_max = e.value("t_max", 5.0);
    cfg.evolve_points = e.value("points", 50);
    if (cfg.evolve_t_max < 0.0) errors.push_back("evolve.t_max: must be nonnegative");
    if (cfg.evolve_points < 2) errors.push_back("evolve.points: need at least two points");
    if (e.contains("initial")) parse_initial(e.at("initial"), "evolve.initial", cfg.evolve_initial, errors);
  }
  if (cfg.task == "entropy") {
    if (!doc.contains("entropy")) {
      errors.push_back("entropy: missing task section");
    } else {
      const json& e = doc.at("entropy");
      cfg.entropy_n_max = e.value("n_max", 2);
      if (cfg.entropy_n_max < 1) errors.push_back("entropy.n_max: need n_max >= 1");
      cfg.entropy_mu = e.value("mu", std::string("torus"));
      if (cfg.entropy_mu != "torus" && cfg.entropy_mu != "transfer")
        errors.push_back("entropy.mu: must be 'torus' or 'transfer'");
      if (!e.contains("nu")) {
        errors.push_back("entropy.nu: missing reference law");
      } else {
        const json& nu = e.at("nu");
        cfg.entropy_nu.kind = nu.value("kind", std::string());
        if (cfg.entropy_nu.kind == "product") {
          if (!nu.contains("weights"))
            errors.push_back("entropy.nu: product law needs weights");
          else
            cfg.entropy_nu.weights = nu.at("weights").get<std::vector<double>>();
        } else if (cfg.entropy_nu.kind == "transfer" || cfg.entropy_nu.kind == "exact") {
          if (!nu.contains("beta"))
            errors.push_back("entropy.nu: " + cfg.entropy_nu.kind + " law needs beta");
          else
            cfg.entropy_nu.beta = nu.at("beta").get<double>();
        } else {
          errors.push_back("entropy.nu.kind: must be product|transfer|exact");
        }
      }
    }
  }
  if (cfg.task == "reverse") {
    const json r = doc.value("reverse", json::object());
    cfg.reverse_output = r.value("output", std::string("reversed_rates.json"));
  }
  if (cfg.task == "simulate") {
    if (!doc.contains("simulate")) {
      errors.push_back("simulate: missing task section");
    } else {
      const json& s = doc.at("simulate");
      cfg.sim_horizon = s.value("horizon", 20.0);
      cfg.sim_replicas = s.value("replicas", 1000);
      cfg.sim_window_half = s.value("window_half", 1);
      cfg.sim_event_log = s.value("event_log", false);
      cfg.sim_min_count = s.value("min_count", std::uint64_t{30});
      if (s.contains("times")) cfg.sim_times = s.at("times").get<std::vector<double>>();
      if (cfg.sim_times.empty()) cfg.sim_times = {cfg.sim_horizon};
      for (std::size_t i = 1; i < cfg.sim_times.size(); ++i)
        if (cfg.sim_times[i] < cfg.sim_times[i - 1])
          errors.push_back("simulate.times: must be nondecreasing");
      if (cfg.sim_horizon < 0.0) errors.push_back("simulate.horizon: must be nonnegative");
      if (cfg.sim_replicas < 1) errors.push_back("simulate.replicas: need at least one");
      if (s.contains("initial"))
        parse_initial(s.at("initial"), "simulate.initial", cfg.sim_initial, errors);
    }
  }

  if (errors.empty()) result.config = std::move(cfg);
  return result;
}

namespace {

Potential build_potential(const ExperimentConfig& cfg, int dim) {
  Potential pot;
  if (cfg.potential_kind == "zero") {
    pot = zero_potential(cfg.q);
  } else if (cfg.potential_kind == "ising") {
    if (cfg.q != 2) throw std::invalid_argument("ising potential needs q = 2");
    pot = ising_potential(dim, cfg.coupling, cfg.field);
  } else if (cfg.potential_kind == "potts") {
    pot = potts_potential(dim, cfg.q, cfg.coupling);
  } else if (cfg.potential_kind == "file") {
    pot = load_potential(cfg.potential_path);
    if (pot.q != cfg.q) throw std::invalid_argument("potential file q does not match model.q");
  } else if (cfg.potential_kind == "inline") {
    pot = potential_from_text(cfg.potential_inline);
  } else {
    throw std::invalid_argument("unresolved potential kind");
  }
  pot.beta = cfg.beta;
  pot.q = cfg.q;
  pot.validate();
  return pot;
}

RateFamily build_rates(const ExperimentConfig& cfg, const Specification& spec) {
  RateFamily acc;
  bool first = true;
  for (const auto& f : cfg.families) {
    RateFamily fam;
    if (f.type == "heat_bath")
      fam = make_heat_bath(spec);
    else if (f.type == "cyclic")
      fam = make_cyclic(spec, f.kappa);
    else
      fam = load_rate_family(f.path);
    if (first) {
      acc = mix(f.weight, fam, 0.0, fam);
      first = false;
    } else {
      acc = mix(1.0, acc, f.weight, fam);
    }
  }
  return acc;
}

ProbVector build_initial_distribution(const InitialSpec& init, int q, const Torus& geom) {
  const StateCodec codec(q, geom.site_count());
  const std::size_t n = static_cast<std::size_t>(codec.state_count());
  if (init.kind == "uniform") return ProbVector::uniform(n);
  if (init.kind == "point" || init.kind == "zeros")
    return ProbVector::point_mass(n, init.kind == "zeros" ? 0 : init.state_index);
  if (init.kind == "product") {
    if (init.weights.size() != static_cast<std::size_t>(q))
      throw std::invalid_argument("product initial law needs one weight per spin value");
    ProbVector out;
    out.p.resize(n);
    std::vector<Spin> spins(geom.site_count());
    for (std::size_t s = 0; s < n; ++s) {
      codec.decode(s, spins);
      double p = 1.0;
      for (Spin v : spins) p *= init.weights[v];
      out.p[s] = p;
    }
    out.normalize();
    return out;
  }
  throw std::invalid_argument("unknown initial law kind");
}

InitialLaw build_initial_law(const InitialSpec& init, int q, const Torus& geom) {
  if (init.kind == "uniform") return InitialLaw::uniform(q);
  if (init.kind == "zeros")
    return InitialLaw::point(Configuration(q, std::vector<Spin>(geom.site_count(), 0)));
  if (init.kind == "product") return InitialLaw::product(q, init.weights);
  if (init.kind == "point")
    return InitialLaw::point(decode_config(init.state_index, q, geom.site_count()));
  throw std::invalid_argument("unknown initial law kind");
}

void write_manifest(const ExperimentConfig& cfg) {
  json m;
  std::ostringstream hash;
  hash << std::hex << fnv1a(cfg.raw_text);
  m["config_hash"] = hash.str();
  m["seed"] = cfg.seed;
  m["version"] = kVersion;
  m["workers"] = cfg.workers;
  m["created"] = now_iso8601();  // the only non-reproducible field
  std::ofstream out(cfg.out_dir / "manifest.json");
  out << m.dump(2) << "\n";
}

struct CheckLine {
  std::string name;
  double value;
  double threshold;
  bool pass;
};

int write_summary(const ExperimentConfig& cfg, const std::string& task,
                  const std::vector<CheckLine>& checks, const json& extra = json::object()) {
  json s;
  s["task"] = task;
  bool all = true;
  s["checks"] = json::array();
  for (const auto& c : checks) {
    all = all && c.pass;
    s["checks"].push_back({{"name", c.name},
                           {"value", c.value},
                           {"threshold", c.threshold},
                           {"pass", c.pass}});
  }
  s["pass"] = all;
  for (auto it = extra.begin(); it != extra.end(); ++it) s[it.key()] = it.value();
  std::ofstream out(cfg.out_dir / "summary.json");
  out << s.dump(2) << "\n";
  return all ? 0 : 1;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

int run_check(const ExperimentConfig& cfg) {
  const Torus geom(cfg.torus_sides);
  const Potential pot = build_potential(cfg, geom.dim());
  const Specification spec(pot, geom);
  const RateFamily rates = build_rates(cfg, spec);
  const ProbVector mu = exact_gibbs(pot, geom);
  const SparseGenerator gen = assemble_generator(rates, geom);
  const StateCodec codec(cfg.q, geom.site_count());
  std::mt19937_64 rng(cfg.seed);

  std::vector<CheckLine> checks;

  // specification internals
  checks.push_back({"nonnull_delta_positive", spec.nonnull_delta(), 0.0,
                    spec.nonnull_delta() > 0.0});
  {
    std::vector<int> e1(geom.dim(), 0);
    e1[0] = 1;
    const Window single{{0}};
    const Window pair{{0, geom.translate_site(0, e1)}};
    Window pair_sorted = pair;
    std::sort(pair_sorted.sites.begin(), pair_sorted.sites.end());
    double worst = 0.0;
    for (int rep = 0; rep < 16; ++rep) {
      Configuration eta(cfg.q, std::vector<Spin>(geom.site_count(), 0));
      for (auto& s : eta.spins)
        s = static_cast<Spin>(std::min<int>(cfg.q - 1, static_cast<int>(uniform01(rng) * cfg.q)));
      worst = std::max(worst, consistency_residual(spec, single, pair_sorted, eta));
    }
    checks.push_back({"consistency_residual", worst, cfg.tol.consistency,
                      worst <= cfg.tol.consistency});
    const double d1 = dlr_residual(mu, spec, single);
    const double d2 = dlr_residual(mu, spec, pair_sorted);
    checks.push_back({"dlr_residual_single", d1, cfg.tol.dlr, d1 <= cfg.tol.dlr});
    checks.push_back({"dlr_residual_pair", d2, cfg.tol.dlr, d2 <= cfg.tol.dlr});
  }

  // rate conditions
  const ConditionReport rep = check_rate_conditions(rates, spec, geom);
  checks.push_back({"conditions_r1_r6", rep.all_pass() ? 1.0 : 0.0, 1.0, rep.all_pass()});

  // stationarity of the Gibbs measure
  const double sres = stationarity_residual(mu, gen);
  checks.push_back({"stationarity_residual", sres, cfg.tol.stationarity,
                    sres <= cfg.tol.stationarity});

  // time-reversal algebra
  const RateFamily rhat = time_reversal(rates, spec);
  const RateFamily rhh = time_reversal(rhat, spec);
  const double invol = rate_family_distance(rates, rhh);
  checks.push_back({"reversal_involution", invol, cfg.tol.reversal, invol <= cfg.tol.reversal});

  // oscillation equations on sampled configurations
  {
    double worst = 0.0;
    const int samples = codec.state_count() <= 4096 ? static_cast<int>(codec.state_count()) : 256;
    const bool exhaustive = codec.state_count() <= 4096;
    for (int k = 0; k < samples; ++k) {
      const StateIndex s = exhaustive
                               ? static_cast<StateIndex>(k)
                               : static_cast<StateIndex>(uniform01(rng) *
                                                         static_cast<double>(codec.state_count()));
      const Configuration eta = decode_config(s, cfg.q, geom.site_count());
      for (int z = 0; z < geom.site_count(); ++z)
        for (int i = 0; i < cfg.q; ++i)
          worst = std::max(worst, oscillation_residual(rates, rhat, geom, z,
                                                       static_cast<Spin>(i), eta));
    }
    checks.push_back({"oscillation_residual", worst, cfg.tol.oscillation,
                      worst <= cfg.tol.oscillation});
  }

  // switching identity for random bounded functions
  {
    double worst = 0.0;
    const std::size_t n = static_cast<std::size_t>(codec.state_count());
    std::vector<double> f(n), g(n);
    for (int rep2 = 0; rep2 < 8; ++rep2) {
      for (auto& v : f) v = uniform01(rng) < 0.5 ? 0.0 : 1.0;
      for (auto& v : g) v = uniform01(rng) < 0.5 ? 0.0 : 1.0;
      const Window single{{static_cast<int>(uniform01(rng) * geom.site_count())}};
      worst = std::max(worst, switching_residual(rates, spec, mu, f, g, single));
    }
    checks.push_back({"switching_residual", worst, cfg.tol.switching,
                      worst <= cfg.tol.switching});
  }

  // rate tail vanishes beyond the interaction range
  {
    const double tail = beta_tail(rates, rhat, geom, pot.range() + 1);
    checks.push_back({"beta_tail_beyond_range", tail, 0.0, tail == 0.0});
  }

  json extra;
  extra["l1_sum"] = rep.l1_sum;
  extra["l2_sum"] = rep.l2_sum;
  extra["kappa"] = rep.kappa;
  extra["beta_tail_table"] = rep.beta_tail_table;
  return write_summary(cfg, "check", checks, extra);
}

int run_evolve(const ExperimentConfig& cfg) {
  const Torus geom(cfg.torus_sides);
  const Potential pot = build_potential(cfg, geom.dim());
  const Specification spec(pot, geom);
  const RateFamily rates = build_rates(cfg, spec);
  const SparseGenerator gen = assemble_generator(rates, geom);
  const ProbVector mu = stationary(gen);
  ProbVector nu = build_initial_distribution(cfg.evolve_initial, cfg.q, geom);

  std::ofstream csv(cfg.out_dir / "evolve.csv");
  csv << "t,h,g_generator_form,g_phi_form\n";
  const double dt = cfg.evolve_t_max / (cfg.evolve_points - 1);
  double monotone_worst = 0.0;
  double h_prev = kInf;
  for (int k = 0; k < cfg.evolve_points; ++k) {
    const double t = k * dt;
    if (k > 0) nu = evolve(nu, gen, dt);
    const double h = relative_entropy(nu, mu);
    const double g1 = entropy_loss_generator_form(nu, mu, gen);
    const double g2 = entropy_loss_phi_form(nu, mu, gen);
    csv << format_g17(t) << ',' << format_g17(h) << ',' << format_g17(g1) << ','
        << format_g17(g2) << "\n";
    if (k > 0 && std::isfinite(h_prev)) monotone_worst = std::max(monotone_worst, h - h_prev);
    h_prev = h;
  }
  std::vector<CheckLine> checks;
  checks.push_back({"entropy_nonincreasing", monotone_worst, 1e-10, monotone_worst <= 1e-10});
  return write_summary(cfg, "evolve", checks);
}

int run_entropy(const ExperimentConfig& cfg) {
  const Torus geom(cfg.torus_sides);
  const Potential pot = build_potential(cfg, geom.dim());
  const Specification spec(pot, geom);
  const RateFamily rates = build_rates(cfg, spec);
  const TruncationScheme sch(geom, cfg.entropy_n_max);

  std::unique_ptr<MarginalSource> mu;
  if (cfg.entropy_mu == "torus")
    mu = std::make_unique<ExactTorusSource>(exact_gibbs(pot, geom), cfg.q, geom);
  else
    mu = std::make_unique<TransferSource>(pot);

  std::unique_ptr<MarginalSource> nu;
  if (cfg.entropy_nu.kind == "product") {
    nu = std::make_unique<ProductSource>(cfg.q, cfg.entropy_nu.weights);
  } else {
    Potential alt = pot;
    alt.beta = cfg.entropy_nu.beta;
    if (cfg.entropy_nu.kind == "transfer")
      nu = std::make_unique<TransferSource>(alt);
    else
      nu = std::make_unique<ExactTorusSource>(exact_gibbs(alt, geom), cfg.q, geom);
  }

  std::ofstream csv(cfg.out_dir / "entropy.csv");
  csv << "n,lambda_size,g_n,g_tilde_n,S_n,s_n,G_n_corrected\n";
  std::vector<CheckLine> checks;
  for (int n = 1; n <= cfg.entropy_n_max; ++n) {
    const double lam_size = static_cast<double>(sch.lambda(n).size());
    const double gn = g_n(rates, *nu, *mu, sch, n);
    const double gtn = g_tilde_n(rates, *nu, *mu, sch, n);
    const double Sn = S_n(rates, spec, *nu, *mu, sch, n);
    const double sn = s_n(rates, spec, *nu, sch, n);
    const double corrected = g_correction(n, geom.dim()) * sn / lam_size;
    csv << n << ',' << format_g17(lam_size) << ',' << format_g17(gn) << ','
        << format_g17(gtn) << ',' << format_g17(Sn) << ',' << format_g17(sn) << ','
        << format_g17(corrected) << "\n";
    checks.push_back({"s_n_nonpositive_n" + std::to_string(n), sn, 1e-12, sn <= 1e-12});
  }
  return write_summary(cfg, "entropy", checks);
}

int run_reverse(const ExperimentConfig& cfg) {
  const Torus geom(cfg.torus_sides);
  const Potential pot = build_potential(cfg, geom.dim());
  const Specification spec(pot, geom);
  const RateFamily rates = build_rates(cfg, spec);
  const RateFamily rhat = time_reversal(rates, spec);
  save_rate_family(rhat, cfg.out_dir / cfg.reverse_output);

  const RateFamily reloaded = load_rate_family(cfg.out_dir / cfg.reverse_output);
  const RateFamily back = time_reversal(reloaded, spec);
  const double dist = rate_family_distance(rates, back);
  std::vector<CheckLine> checks;
  checks.push_back({"reversal_round_trip", dist, cfg.tol.reversal, dist <= cfg.tol.reversal});
  return write_summary(cfg, "reverse", checks);
}

int run_simulate(const ExperimentConfig& cfg) {
  const Torus geom(cfg.torus_sides);
  const Potential pot = build_potential(cfg, geom.dim());
  const Specification spec(pot, geom);
  const RateFamily rates = build_rates(cfg, spec);

  SimulationRun run;
  run.rates = rates;
  run.torus = geom;
  run.law = build_initial_law(cfg.sim_initial, cfg.q, geom);
  run.horizon = cfg.sim_horizon;
  run.replicas = cfg.sim_replicas;
  run.seed = cfg.seed;

  const Window w = centered_cube(geom, cfg.sim_window_half);
  const auto marginals = ensemble_window_marginals(run, w, cfg.sim_times);

  std::ofstream csv(cfg.out_dir / "ensemble.csv");
  csv << "t,window_config_index,count\n";
  for (std::size_t k = 0; k < marginals.size(); ++k)
    for (std::size_t i = 0; i < marginals[k].counts.size(); ++i)
      if (marginals[k].counts[i] > 0)
        csv << format_g17(cfg.sim_times[k]) << ',' << i << ',' << marginals[k].counts[i]
            << "\n";

  json extra;
  extra["attractor_residuals"] = json::array();
  std::vector<double> residuals;
  for (std::size_t k = 0; k < marginals.size(); ++k) {
    json row;
    row["t"] = cfg.sim_times[k];
    try {
      const double r = attractor_residual(marginals[k], spec, cfg.sim_min_count);
      residuals.push_back(r);
      row["residual"] = r;
    } catch (const InsufficientDataError& e) {
      row["residual"] = nullptr;
      row["note"] = e.what();
    }
    extra["attractor_residuals"].push_back(row);
  }

  if (cfg.sim_event_log) {
    SimulationRun logged = run;
    logged.log_events = true;
    std::mt19937_64 rng(replica_stream(cfg.seed, 0));
    const Configuration eta0 = logged.law.sample(geom, rng);
    const GillespieResult r = gillespie_run(logged, eta0, 0);
    std::ofstream log(cfg.out_dir / "events.csv");
    log << "time,site,new_spin\n";
    for (const auto& e : r.log)
      log << format_g17(e.time) << ',' << e.site << ',' << static_cast<int>(e.value) << "\n";
  }

  std::vector<CheckLine> checks;
  if (residuals.size() >= 2) {
    const double first = residuals.front();
    const double last = residuals.back();
    checks.push_back({"attractor_residual_shrinks", last, first, last <= first});
  }
  return write_summary(cfg, "simulate", checks, extra);
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg) {
  try {
    par::set_workers(cfg.workers);
    std::filesystem::create_directories(cfg.out_dir);
    write_manifest(cfg);
    if (cfg.task == "check") return run_check(cfg);
    if (cfg.task == "evolve") return run_evolve(cfg);
    if (cfg.task == "entropy") return run_entropy(cfg);
    if (cfg.task == "reverse") return run_reverse(cfg);
    if (cfg.task == "simulate") return run_simulate(cfg);
    std::fprintf(stderr, "unknown task '%s'\n", cfg.task.c_str());
    return 2;
  } catch (const CapacityError& e) {
    std::fprintf(stderr, "capacity exceeded: %s\n", e.what());
    return 3;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "numeric contract violation: %s\n", e.what());
    return 4;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const GeometryError& e) {
    std::fprintf(stderr, "invalid geometry: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid configuration: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

int main_entry(int argc, const char* const* argv) {
  CLI::App app{"lattice spin dynamics and relative entropy laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out_dir;

  const std::vector<std::string> tasks = {"check", "evolve", "entropy", "reverse", "simulate"};
  std::string chosen;
  for (const auto& t : tasks) {
    auto* sub = app.add_subcommand(t);
    sub->add_option("--config", config_path, "experiment configuration file")->required();
    sub->add_option("--seed", seed, "override the configured RNG seed");
    sub->add_option("--workers", workers, "worker threads (0 = library default)");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->callback([&chosen, t] { chosen = t; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  std::ifstream in(config_path);
  if (!in) {
    std::fprintf(stderr, "cannot open config file %s\n", config_path.c_str());
    return 2;
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::filesystem::path base =
      std::filesystem::absolute(config_path).parent_path();

  // the subcommand fixes the task when the file omits it
  auto parsed = validate(ss.str(), base, chosen);
  if (!parsed.ok()) {
    for (const auto& err : parsed.errors)
      std::fprintf(stderr, "config error: %s\n", err.c_str());
    return 2;
  }
  ExperimentConfig cfg = *parsed.config;
  if (cfg.task != chosen) {
    std::fprintf(stderr, "config task '%s' does not match the subcommand '%s'\n",
                 cfg.task.c_str(), chosen.c_str());
    return 2;
  }
  if (seed) cfg.seed = *seed;
  if (workers) cfg.workers = *workers;
  if (out_dir) cfg.out_dir = std::filesystem::absolute(*out_dir);
  return run_experiment(cfg);
}

}  // namespace gibbslab::cli
