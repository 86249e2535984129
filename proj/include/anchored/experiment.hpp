#pragma once

// Experiment configuration and construction of the three synthetic examples
// plus a linear-Gaussian check problem.

#include <fstream>
#include <initializer_list>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "anchored/anchors.hpp"
#include "anchored/engine.hpp"
#include "anchored/field.hpp"
#include "anchored/forward/darcy.hpp"
#include "anchored/forward/eikonal.hpp"
#include "anchored/forward/model.hpp"
#include "anchored/forward/runoff.hpp"
#include "anchored/forward/synthetic.hpp"

namespace anchored {

using Json = nlohmann::json;

struct ExperimentConfig {
  std::string example = "darcy";  // darcy | runoff | eikonal | linear-oracle
  std::vector<int> dims{100};
  std::vector<double> spacing{1.0};
  std::vector<int> coarsen;  // truth grid = dims·coarsen, inversion on dims

  GeostatParams truth{0.0, 15.0, 1.0, 0.0};
  std::uint64_t truth_seed = 1;
  std::uint64_t run_seed = 1;

  std::optional<GeostatPrior> prior;  // default: shape 2, scale ¼ domain, beta(1, 9)
  InitialSpec init;
  EngineConfig engine;
  double error_variance = 0.0;

  int observations = 30;  // darcy head locations
  int linear_points = 1;  // darcy direct measurements
  int oracle_rows = 5;    // linear-oracle data dimension
  bool fixed_geostat = false;

  std::vector<RainEvent> events = default_rain_events();
  RunoffSettings runoff;
  int sources_per_side = 6;
  int receivers_per_side = 10;
  int receivers_top = 15;

  int ensemble_fields = 1000;
  std::string output;
};

namespace detail {

template <typename T>
void read_if(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void check_keys(const Json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed) known = known || item.key() == k;
    if (!known) throw ConfigError("config: unknown key '" + item.key() + "' in " + where);
  }
}

inline Json params_json(const GeostatParams& p) {
  return {{"beta", p.beta}, {"lambda", p.lambda}, {"eta2", p.eta2}, {"tau", p.tau}};
}

inline GeostatParams params_from(const Json& j, GeostatParams p) {
  read_if(j, "beta", p.beta);
  read_if(j, "lambda", p.lambda);
  read_if(j, "eta2", p.eta2);
  read_if(j, "tau", p.tau);
  return p;
}

inline ExperimentConfig example_defaults(const std::string& id) {
  ExperimentConfig c;
  c.example = id;
  if (id == "darcy") {
    c.dims = {100};
    c.truth = {0.0, 15.0, 1.0, 0.0};
    c.init.center = {0.0, 25.0, 1.0, 0.1};
    c.init.beta_sd = 2.0;
  } else if (id == "runoff") {
    c.dims = {150};
    c.truth = {-3.0, 25.0, 0.25, 0.0};
    c.init.center = {-3.0, 37.5, 0.25, 0.1};
    c.init.beta_sd = 1.0;
    // Wider starts put most of the mass on roughness fields the explicit
    // solver cannot march through in reasonable time.
    c.init.log_eta2_sd = 0.5;
    c.init.inflation = 4.0;
  } else if (id == "eikonal") {
    c.dims = {30, 20};
    c.spacing = {2.0, 2.0};
    c.coarsen = {2, 2};
    c.truth = {-8.7, 12.0, 0.005, 0.0};
    c.init.center = {-8.7, 15.0, 0.005, 0.1};
    c.init.beta_sd = 0.5;
  } else if (id == "linear-oracle") {
    c.dims = {20};
    c.truth = {0.0, 5.0, 1.0, 0.05};
    c.fixed_geostat = true;
    c.engine.adapt = false;
    c.engine.iterations = 10;
    c.engine.schedule.sizes = {2000};
    c.ensemble_fields = 200;
  } else {
    throw ConfigError("config: unknown example '" + id + "'");
  }
  c.spacing.resize(c.dims.size(), 1.0);
  c.engine.kde.weighted_local = false;
  c.engine.kde.min_ess = 1.0;
  return c;
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& j) {
  try {
    detail::check_keys(j, "top level",
                       {"example", "grid", "truth", "prior", "initial", "run", "kde", "forward", "ensemble", "output"});
    const std::string id = j.value("example", std::string("darcy"));
    ExperimentConfig c = detail::example_defaults(id);
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      detail::check_keys(g, "grid", {"dims", "spacing", "coarsen"});
      detail::read_if(g, "dims", c.dims);
      detail::read_if(g, "spacing", c.spacing);
      detail::read_if(g, "coarsen", c.coarsen);
    }
    if (j.contains("truth")) {
      const auto& t = j.at("truth");
      detail::check_keys(t, "truth", {"beta", "lambda", "eta2", "tau", "seed"});
      c.truth = detail::params_from(t, c.truth);
      detail::read_if(t, "seed", c.truth_seed);
    }
    if (j.contains("prior")) {
      GeostatPrior p = GeostatPrior::defaults_for(Grid(c.dims, c.spacing));
      const auto& pj = j.at("prior");
      detail::check_keys(pj, "prior", {"range_shape", "range_scale", "nugget_a", "nugget_b"});
      detail::read_if(pj, "range_shape", p.range_shape);
      detail::read_if(pj, "range_scale", p.range_scale);
      detail::read_if(pj, "nugget_a", p.nugget_a);
      detail::read_if(pj, "nugget_b", p.nugget_b);
      c.prior = p;
    }
    if (j.contains("initial")) {
      const auto& ij = j.at("initial");
      detail::check_keys(ij, "initial", {"beta", "lambda", "eta2", "tau", "beta_sd", "log_eta2_sd", "inflation",
                                         "draws", "full_covariance"});
      c.init.center = detail::params_from(ij, c.init.center);
      detail::read_if(ij, "beta_sd", c.init.beta_sd);
      detail::read_if(ij, "log_eta2_sd", c.init.log_eta2_sd);
      detail::read_if(ij, "inflation", c.init.inflation);
      detail::read_if(ij, "draws", c.init.prior_draws);
      detail::read_if(ij, "full_covariance", c.init.full_covariance);
    }
    if (j.contains("run")) {
      const auto& r = j.at("run");
      detail::check_keys(r, "run", {"seed", "iterations", "pca_threshold", "pca", "adapt", "pair_splits", "threads",
                                    "max_failure_fraction", "error_variance", "fixed_geostat", "schedule"});
      auto& e = c.engine;
      detail::read_if(r, "seed", c.run_seed);
      detail::read_if(r, "iterations", e.iterations);
      detail::read_if(r, "pca_threshold", e.pca_threshold);
      detail::read_if(r, "pca", e.use_pca);
      detail::read_if(r, "adapt", e.adapt);
      detail::read_if(r, "pair_splits", e.pair_splits);
      detail::read_if(r, "threads", e.threads);
      detail::read_if(r, "max_failure_fraction", e.max_failure_fraction);
      detail::read_if(r, "error_variance", c.error_variance);
      detail::read_if(r, "fixed_geostat", c.fixed_geostat);
      if (r.contains("schedule")) {
        const auto& s = r.at("schedule");
        detail::check_keys(s, "run.schedule", {"sizes", "base", "extra", "decay"});
        detail::read_if(s, "sizes", e.schedule.sizes);
        detail::read_if(s, "base", e.schedule.base);
        detail::read_if(s, "extra", e.schedule.extra);
        detail::read_if(s, "decay", e.schedule.decay);
      }
    }
    if (j.contains("kde")) {
      const auto& k = j.at("kde");
      detail::check_keys(k, "kde", {"bandwidths", "localizations", "min_ess", "weighted_local"});
      detail::read_if(k, "bandwidths", c.engine.kde.bandwidths);
      detail::read_if(k, "localizations", c.engine.kde.localizations);
      detail::read_if(k, "min_ess", c.engine.kde.min_ess);
      detail::read_if(k, "weighted_local", c.engine.kde.weighted_local);
    }
    if (j.contains("forward")) {
      const auto& f = j.at("forward");
      detail::check_keys(f, "forward", {"observations", "linear_points", "rows", "sources_per_side",
                                        "receivers_per_side", "receivers_top", "bed_slope", "events"});
      detail::read_if(f, "observations", c.observations);
      detail::read_if(f, "linear_points", c.linear_points);
      detail::read_if(f, "rows", c.oracle_rows);
      detail::read_if(f, "sources_per_side", c.sources_per_side);
      detail::read_if(f, "receivers_per_side", c.receivers_per_side);
      detail::read_if(f, "receivers_top", c.receivers_top);
      detail::read_if(f, "bed_slope", c.runoff.bed_slope);
      if (f.contains("events")) {
        c.events.clear();
        for (const auto& ev : f.at("events")) {
          detail::check_keys(ev, "forward.events", {"mm_per_hour", "duration", "observe", "interval", "horizon"});
          RainEvent e;
          e.intensity = RainEvent::mm_per_hour(ev.at("mm_per_hour").get<double>());
          e.duration = ev.at("duration").get<double>();
          const auto obs = ev.at("observe").get<std::string>();
          if (obs != "discharge" && obs != "depth") throw ConfigError("config: observe must be discharge or depth");
          e.observe = obs == "depth" ? RainEvent::Observe::depth : RainEvent::Observe::discharge;
          e.interval = ev.at("interval").get<double>();
          e.horizon = ev.at("horizon").get<double>();
          c.events.push_back(e);
        }
      }
    }
    if (j.contains("ensemble")) {
      detail::check_keys(j.at("ensemble"), "ensemble", {"fields"});
      detail::read_if(j.at("ensemble"), "fields", c.ensemble_fields);
    }
    detail::read_if(j, "output", c.output);

    if (c.dims.empty() || c.dims.size() > 2 || c.spacing.size() != c.dims.size())
      throw ConfigError("config: grid must be 1-D or 2-D with one spacing per axis");
    if (!c.coarsen.empty() && c.coarsen.size() != c.dims.size())
      throw ConfigError("config: coarsen needs one factor per axis");
    if (!(c.engine.pca_threshold > 0.0 && c.engine.pca_threshold <= 1.0))
      throw ConfigError("config: pca_threshold must lie in (0, 1]");
    if (c.engine.iterations < 1) throw ConfigError("config: iterations must be positive");
    for (int n : c.engine.schedule.sizes)
      if (n < 1) throw ConfigError("config: schedule sizes must be positive");
    if (c.engine.schedule.sizes.empty() && !(c.engine.schedule.base > 0.0))
      throw ConfigError("config: schedule base must be positive");
    if (c.error_variance < 0.0) throw ConfigError("config: error_variance must be non-negative");
    return c;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline Json config_json(const ExperimentConfig& c) {
  Json j;
  j["example"] = c.example;
  j["grid"] = {{"dims", c.dims}, {"spacing", c.spacing}};
  if (!c.coarsen.empty()) j["grid"]["coarsen"] = c.coarsen;
  j["truth"] = detail::params_json(c.truth);
  j["truth"]["seed"] = c.truth_seed;
  if (c.prior)
    j["prior"] = {{"range_shape", c.prior->range_shape},
                  {"range_scale", c.prior->range_scale},
                  {"nugget_a", c.prior->nugget_a},
                  {"nugget_b", c.prior->nugget_b}};
  j["initial"] = detail::params_json(c.init.center);
  j["initial"]["beta_sd"] = c.init.beta_sd;
  j["initial"]["log_eta2_sd"] = c.init.log_eta2_sd;
  j["initial"]["inflation"] = c.init.inflation;
  j["initial"]["draws"] = c.init.prior_draws;
  j["initial"]["full_covariance"] = c.init.full_covariance;
  const auto& e = c.engine;
  j["run"] = {{"seed", c.run_seed},
              {"iterations", e.iterations},
              {"pca_threshold", e.pca_threshold},
              {"pca", e.use_pca},
              {"adapt", e.adapt},
              {"pair_splits", e.pair_splits},
              {"max_failure_fraction", e.max_failure_fraction},
              {"error_variance", c.error_variance},
              {"fixed_geostat", c.fixed_geostat}};
  j["run"]["schedule"] = {{"base", e.schedule.base}, {"extra", e.schedule.extra}, {"decay", e.schedule.decay}};
  if (!e.schedule.sizes.empty()) j["run"]["schedule"]["sizes"] = e.schedule.sizes;
  j["kde"] = {{"bandwidths", e.kde.bandwidths}, {"localizations", e.kde.localizations}, {"min_ess", e.kde.min_ess},
              {"weighted_local", e.kde.weighted_local}};
  j["forward"] = {{"observations", c.observations},
                  {"linear_points", c.linear_points},
                  {"rows", c.oracle_rows},
                  {"sources_per_side", c.sources_per_side},
                  {"receivers_per_side", c.receivers_per_side},
                  {"receivers_top", c.receivers_top},
                  {"bed_slope", c.runoff.bed_slope}};
  Json evs = Json::array();
  for (const auto& ev : c.events)
    evs.push_back({{"mm_per_hour", ev.intensity * 1000.0 * 3600.0},
                   {"duration", ev.duration},
                   {"observe", ev.observe == RainEvent::Observe::depth ? "depth" : "discharge"},
                   {"interval", ev.interval},
                   {"horizon", ev.horizon}});
  j["forward"]["events"] = evs;
  j["ensemble"] = {{"fields", c.ensemble_fields}};
  j["output"] = c.output;
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  return parse_config(j);
}

/// Synthetic truth and data shared by every run of one configuration.
struct SyntheticData {
  Grid truth_grid = Grid::line(2);
  Vector truth_fine;
  Vector truth;  // on the inversion grid
  Vector z_obs;
  std::vector<int> linear_cells;
  Matrix oracle_operator;  // linear-oracle only
};

/// Everything a run needs: grid, forward model, data and engine inputs.
struct Experiment {
  ExperimentConfig config;
  Grid grid = Grid::line(2);
  SyntheticData data;
  std::unique_ptr<ForwardModel> forward;
  std::unique_ptr<ForwardModel> truth_forward;  // on the truth grid when it differs
  Problem problem;

  EngineConfig engine_config() const {
    EngineConfig e = config.engine;
    e.seed = config.run_seed;
    return e;
  }
};

namespace detail {

inline std::unique_ptr<ForwardModel> make_forward(const ExperimentConfig& c, const Grid& g, const Grid& truth_grid,
                                                  const Matrix& oracle) {
  if (c.example == "darcy") {
    if (g.ndim() != 1) throw ConfigError("darcy: grid must be 1-D");
    return std::make_unique<DarcyForward>(evenly_spaced_cells(g.n_cells(), c.observations), g.spacing()[0]);
  }
  if (c.example == "runoff") {
    if (g.ndim() != 1) throw ConfigError("runoff: grid must be 1-D");
    RunoffSettings s = c.runoff;
    s.dx = g.spacing()[0];
    return std::make_unique<RunoffForward>(c.events, s);
  }
  if (c.example == "eikonal") {
    if (g.ndim() != 2) throw ConfigError("eikonal: grid must be 2-D");
    return std::make_unique<EikonalForward>(
        g, crosshole_layout(truth_grid, c.sources_per_side, c.receivers_per_side, c.receivers_top));
  }
  return std::make_unique<LinearForward>(oracle);
}

}  // namespace detail

inline Experiment build_experiment(const ExperimentConfig& c) {
  Experiment ex;
  ex.config = c;
  ex.grid = Grid(c.dims, c.spacing);
  auto& d = ex.data;
  if (c.coarsen.empty()) {
    d.truth_grid = ex.grid;
  } else {
    std::vector<int> fd;
    std::vector<double> fs;
    for (std::size_t a = 0; a < c.dims.size(); ++a) {
      fd.push_back(c.dims[a] * c.coarsen[a]);
      fs.push_back(c.spacing[a] / c.coarsen[a]);
    }
    d.truth_grid = Grid(fd, fs);
  }
  c.truth.validate();
  d.truth_fine = make_synthetic_truth(d.truth_grid, c.truth, c.truth_seed);
  d.truth = c.coarsen.empty() ? d.truth_fine : coarsen(d.truth_grid, d.truth_fine, c.coarsen);

  if (c.example == "linear-oracle") {
    Rng rng = substream(c.truth_seed, "oracle-operator");
    d.oracle_operator = Matrix(c.oracle_rows, ex.grid.n_cells());
    std::normal_distribution<double> nd;
    for (Eigen::Index i = 0; i < d.oracle_operator.size(); ++i) d.oracle_operator.data()[i] = nd(rng);
    d.oracle_operator /= std::sqrt(static_cast<double>(ex.grid.n_cells()));
  }
  ex.forward = detail::make_forward(c, ex.grid, d.truth_grid, d.oracle_operator);
  if (!c.coarsen.empty()) {
    ex.truth_forward = detail::make_forward(c, d.truth_grid, d.truth_grid, d.oracle_operator);
    d.z_obs = ex.truth_forward->evaluate(d.truth_fine);
  } else {
    d.z_obs = ex.forward->evaluate(d.truth);
  }

  auto& p = ex.problem;
  p.grid = ex.grid;
  p.prior = c.prior ? *c.prior : GeostatPrior::defaults_for(ex.grid);
  p.z_obs = d.z_obs;
  p.init = c.init;
  if (c.fixed_geostat) p.fixed_geostat = c.truth;
  if (c.example == "darcy" && c.linear_points > 0) {
    Rng rng = substream(c.truth_seed, "linear-cells");
    std::vector<int> all(static_cast<std::size_t>(ex.grid.n_cells()));
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    d.linear_cells.assign(all.begin(), all.begin() + c.linear_points);
    std::sort(d.linear_cells.begin(), d.linear_cells.end());
    Vector vals(c.linear_points);
    for (int i = 0; i < c.linear_points; ++i) vals(i) = d.truth(d.linear_cells[static_cast<std::size_t>(i)]);
    p.linear = LinearData::point_values(ex.grid, d.linear_cells, vals);
  }
  if (c.error_variance > 0.0)
    p.err_cov = Matrix(Matrix::Identity(ex.forward->data_dim(), ex.forward->data_dim()) * c.error_variance);
  return ex;
}

/// Closed-form posterior of the anchors for the linear-Gaussian problem
/// with known geostatistical parameters.
inline GaussianMoments linear_oracle_posterior(const Experiment& ex, const AnchorSet& a) {
  const auto field = DistanceTable(ex.grid).moments(ex.config.truth);
  const Matrix& g = ex.data.oracle_operator;
  Matrix szz = g * field.cov * g.transpose();
  if (ex.problem.err_cov) szz += *ex.problem.err_cov;
  const Matrix sty = a.H() * field.cov * g.transpose();
  const auto f = cholesky_with_jitter(szz, szz.diagonal().maxCoeff());
  GaussianMoments out;
  out.mean = a.H() * field.mean + sty * f.llt.solve(ex.data.z_obs - g * field.mean);
  out.cov = a.H() * field.cov * a.H().transpose() - sty * f.llt.solve(sty.transpose());
  symmetrize(out.cov);
  return out;
}

}  // namespace anchored
