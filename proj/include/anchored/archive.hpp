#pragma once

// Run archives: per-iteration snapshots, resume, final ensemble tables and
// delimiter-separated exports.
//
// Layout of an archive directory:
//   manifest.json          completed iteration count
//   config.json            effective configuration
//   truth.json             synthetic truth, observations, linear data
//   iter_NNN.json          record, anchorsets, quantile tables
//   iter_NNN.mix           posterior mixture (binary doubles)
//   final.json             field-ensemble percentile tables
//   timing.json            wall-clock seconds per iteration

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "anchored/engine.hpp"
#include "anchored/experiment.hpp"

namespace anchored {

namespace fs = std::filesystem;

namespace detail {

inline std::string iter_name(int k, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iter_%03d.%s", k, ext);
  return buf;
}

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IntegrityError("archive: missing file " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& p, const std::string& bytes) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IntegrityError("archive: cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IntegrityError("archive: write failed for " + tmp.string());
  }
  fs::rename(tmp, p);
}

inline void write_json(const fs::path& p, const Json& j) { write_file(p, j.dump(1) + "\n"); }

inline Json read_json(const fs::path& p) {
  try {
    return Json::parse(read_file(p));
  } catch (const Json::exception& e) {
    throw IntegrityError("archive: " + p.string() + " is not valid JSON: " + e.what());
  }
}

inline Json vec_json(const Vector& v) { return std::vector<double>(v.begin(), v.end()); }

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Vector json_vec(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Json mat_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(number_or_null(m(i, j)));
    rows.push_back(r);
  }
  return rows;
}

inline Matrix json_mat(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& v = j.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(c));
      m(i, c) = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    }
  return m;
}

inline Json blocks_json(const std::vector<Block>& blocks) {
  Json out = Json::array();
  for (const auto& b : blocks) out.push_back({b.lo[0], b.lo[1], b.hi[0], b.hi[1]});
  return out;
}

inline std::vector<Block> json_blocks(const Json& j) {
  std::vector<Block> out;
  for (const auto& b : j) {
    Block x;
    x.lo = {b.at(0).get<int>(), b.at(1).get<int>()};
    x.hi = {b.at(2).get<int>(), b.at(3).get<int>()};
    out.push_back(x);
  }
  return out;
}

inline Json record_json(const IterationRecord& r) {
  return {{"iteration", r.iteration},
          {"n", r.n},
          {"anchors", r.anchors},
          {"anchors_after", r.anchors_after},
          {"m", r.m},
          {"explained", r.explained},
          {"lstar", number_or_null(r.lstar)},
          {"lstar_reduced", number_or_null(r.lstar_reduced)},
          {"mad_median", r.mad_median},
          {"mad_max", r.mad_max},
          {"accepted", r.accepted},
          {"accepted_splits", r.accepted_splits},
          {"candidates", r.candidates},
          {"failed", r.failed},
          {"ess", r.ess},
          {"bandwidth", r.bandwidth},
          {"localization", r.localization}};
}

inline double json_double(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline IterationRecord json_record(const Json& j) {
  IterationRecord r;
  r.iteration = j.at("iteration").get<int>();
  r.n = j.at("n").get<int>();
  r.anchors = j.at("anchors").get<int>();
  r.anchors_after = j.at("anchors_after").get<int>();
  r.m = j.at("m").get<int>();
  r.explained = j.value("explained", 1.0);
  r.lstar = json_double(j.at("lstar"));
  r.lstar_reduced = json_double(j.at("lstar_reduced"));
  r.mad_median = j.at("mad_median").get<double>();
  r.mad_max = j.at("mad_max").get<double>();
  r.accepted = j.at("accepted").get<int>();
  r.accepted_splits = j.at("accepted_splits").get<std::vector<int>>();
  r.candidates = j.at("candidates").get<int>();
  r.failed = j.at("failed").get<int>();
  r.ess = j.at("ess").get<double>();
  r.bandwidth = j.at("bandwidth").get<double>();
  r.localization = j.at("localization").get<double>();
  return r;
}

}  // namespace detail

/// Mixture as raw doubles: k, d, weights, means (row-major), then the lower
/// triangle of each covariance.
inline std::string mixture_bytes(const NormalMixture& mix) {
  std::vector<double> buf;
  const auto k = mix.size(), d = mix.dim();
  buf.reserve(static_cast<std::size_t>(2 + k + k * d + k * d * (d + 1) / 2));
  buf.push_back(static_cast<double>(k));
  buf.push_back(static_cast<double>(d));
  for (Eigen::Index i = 0; i < k; ++i) buf.push_back(mix.weights(i));
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < d; ++j) buf.push_back(mix.means(i, j));
  for (const auto& c : mix.covs)
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = 0; b <= a; ++b) buf.push_back(c(a, b));
  return {reinterpret_cast<const char*>(buf.data()), buf.size() * sizeof(double)};
}

inline NormalMixture mixture_from_bytes(const std::string& bytes) {
  if (bytes.size() % sizeof(double) != 0 || bytes.size() < 2 * sizeof(double))
    throw IntegrityError("archive: truncated mixture payload");
  std::vector<double> buf(bytes.size() / sizeof(double));
  std::memcpy(buf.data(), bytes.data(), bytes.size());
  const auto k = static_cast<Eigen::Index>(buf[0]), d = static_cast<Eigen::Index>(buf[1]);
  const auto need = static_cast<std::size_t>(2 + k + k * d + k * d * (d + 1) / 2);
  if (k < 1 || d < 1 || buf.size() != need) throw IntegrityError("archive: mixture payload has the wrong size");
  NormalMixture m;
  std::size_t p = 2;
  m.weights.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) m.weights(i) = buf[p++];
  m.means.resize(k, d);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m.means(i, j) = buf[p++];
  for (Eigen::Index i = 0; i < k; ++i) {
    Matrix c(d, d);
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = 0; b <= a; ++b) c(a, b) = c(b, a) = buf[p++];
    m.covs.push_back(std::move(c));
  }
  return m;
}

/// Percentile tables and accuracy summaries of a posterior field ensemble.
struct EnsembleSummary {
  Matrix percentiles;  // cells × 5
  Vector mean;
  Vector sd;
  double mean_abs_dev = 0.0;  // mean over cells of median_f |y_f − truth|
  double mean_sd = 0.0;
  double truth_range = 0.0;
  double coverage90 = 0.0;  // cells whose truth lies in [p05, p95]
};

inline EnsembleSummary summarize_ensemble(const std::vector<Vector>& fields, const Vector& truth) {
  if (fields.empty()) throw InvalidArgument("ensemble: no fields");
  const auto nc = fields.front().size();
  const auto& ps = summary_probabilities();
  EnsembleSummary s;
  s.percentiles.resize(nc, static_cast<Eigen::Index>(ps.size()));
  s.mean.resize(nc);
  s.sd.resize(nc);
  std::vector<double> col(fields.size()), dev(fields.size());
  int covered = 0;
  double mad_sum = 0.0;
  for (Eigen::Index c = 0; c < nc; ++c) {
    for (std::size_t f = 0; f < fields.size(); ++f) {
      col[f] = fields[f](c);
      dev[f] = std::abs(col[f] - truth(c));
    }
    const double mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
    double ss = 0.0;
    for (double v : col) ss += (v - mean) * (v - mean);
    s.mean(c) = mean;
    s.sd(c) = std::sqrt(ss / static_cast<double>(col.size() > 1 ? col.size() - 1 : 1));
    std::sort(col.begin(), col.end());
    for (std::size_t p = 0; p < ps.size(); ++p) s.percentiles(c, static_cast<Eigen::Index>(p)) = quantile_sorted(col, ps[p]);
    if (truth(c) >= s.percentiles(c, 0) && truth(c) <= s.percentiles(c, 4)) ++covered;
    mad_sum += median(dev);
  }
  s.mean_abs_dev = mad_sum / static_cast<double>(nc);
  s.mean_sd = s.sd.mean();
  s.truth_range = truth.maxCoeff() - truth.minCoeff();
  s.coverage90 = static_cast<double>(covered) / static_cast<double>(nc);
  return s;
}

/// Reader and writer for one archive directory.
class RunArchive {
 public:
  explicit RunArchive(fs::path dir) : dir_(std::move(dir)) {}
  const fs::path& dir() const { return dir_; }

  void create(const ExperimentConfig& cfg, const Experiment& ex) const {
    fs::create_directories(dir_);
    for (const auto& e : fs::directory_iterator(dir_)) {
      const auto name = e.path().filename().string();
      if (name.rfind("iter_", 0) == 0 || name == "final.json" || name == "manifest.json" || name == "timing.json")
        fs::remove(e.path());
    }
    detail::write_json(dir_ / "config.json", config_json(cfg));
    detail::write_json(dir_ / "truth.json", truth_json(ex));
    write_manifest(0, cfg.engine.iterations, false);
  }

  static Json truth_json(const Experiment& ex) {
    const auto& d = ex.data;
    Json j;
    j["grid"] = {{"dims", ex.grid.dims()}, {"spacing", ex.grid.spacing()}};
    j["truth_grid"] = {{"dims", d.truth_grid.dims()}, {"spacing", d.truth_grid.spacing()}};
    j["truth"] = detail::vec_json(d.truth);
    if (d.truth_grid.n_cells() != ex.grid.n_cells()) j["truth_fine"] = detail::vec_json(d.truth_fine);
    j["observations"] = detail::vec_json(d.z_obs);
    j["linear_cells"] = d.linear_cells;
    if (d.oracle_operator.size()) j["operator"] = detail::mat_json(d.oracle_operator);
    j["truth_min"] = d.truth.minCoeff();
    j["truth_max"] = d.truth.maxCoeff();
    return j;
  }

  void write_iteration(const InversionState& st, const IterationSummary& s, const std::vector<std::string>& labels) const {
    const int k = st.iteration;
    const std::string bytes = mixture_bytes(st.posterior);
    detail::write_file(dir_ / detail::iter_name(k, "mix"), bytes);
    Json j;
    j["iteration"] = k;
    j["record"] = detail::record_json(s.record);
    j["anchors_used"] = detail::blocks_json(s.anchors_used);
    j["anchors_after"] = detail::blocks_json(st.anchors.blocks());
    Json hist = Json::array();
    for (const auto& h : st.anchors.history()) hist.push_back({h.parent, h.axis, h.cut});
    j["split_history"] = hist;
    j["labels"] = labels;
    j["seed"] = st.seed;
    j["mad_baseline"] = detail::vec_json(st.mad_baseline);
    Json cl = Json::array();
    for (double v : s.candidate_lstar) cl.push_back(detail::number_or_null(v));
    j["candidate_lstar"] = cl;
    j["anchor_quantiles"] = detail::mat_json(s.anchor_quantiles);
    j["prediction_quantiles"] = detail::mat_json(s.prediction_quantiles);
    j["posterior"] = {{"file", detail::iter_name(k, "mix")},
                      {"components", st.posterior.size()},
                      {"dim", st.posterior.dim()},
                      {"fnv1a64", detail::hex64(detail::fnv1a(bytes))}};
    detail::write_json(dir_ / detail::iter_name(k, "json"), j);

    Json timing = fs::exists(dir_ / "timing.json") ? detail::read_json(dir_ / "timing.json") : Json::object();
    timing[std::to_string(k)] = s.record.wall_seconds;
    detail::write_json(dir_ / "timing.json", timing);
    const auto cfg = detail::read_json(dir_ / "config.json");
    write_manifest(k, cfg.at("run").at("iterations").get<int>(), false);
  }

  void write_final(const EnsembleSummary& e, const Vector& truth, const Json& extra) const {
    Json j = extra;
    j["percentiles"] = detail::mat_json(e.percentiles);
    j["mean"] = detail::vec_json(e.mean);
    j["sd"] = detail::vec_json(e.sd);
    j["truth"] = detail::vec_json(truth);
    j["mean_abs_dev"] = e.mean_abs_dev;
    j["mean_sd"] = e.mean_sd;
    j["truth_range"] = e.truth_range;
    j["coverage90"] = e.coverage90;
    detail::write_json(dir_ / "final.json", j);
    const auto m = manifest();
    write_manifest(m.at("completed").get<int>(), m.at("iterations").get<int>(), true);
  }

  Json manifest() const { return detail::read_json(dir_ / "manifest.json"); }
  ExperimentConfig config() const { return parse_config(detail::read_json(dir_ / "config.json")); }
  Json truth() const { return detail::read_json(dir_ / "truth.json"); }
  Json final_tables() const { return detail::read_json(dir_ / "final.json"); }

  int completed() const { return manifest().at("completed").get<int>(); }

  Json iteration(int k) const {
    const fs::path p = dir_ / detail::iter_name(k, "json");
    if (!fs::exists(p)) throw IntegrityError("archive: snapshot for iteration " + std::to_string(k) + " is missing");
    return detail::read_json(p);
  }

  /// Validate every snapshot and rebuild the state after the last one.
  InversionState load_state(const Experiment& ex, const InversionEngine& engine) const {
    const Json t = truth();
    const Vector obs = detail::json_vec(t.at("observations"));
    if (obs.size() != ex.data.z_obs.size() || obs != ex.data.z_obs)
      throw IntegrityError("archive: stored observations do not match the regenerated experiment");
    InversionState st = engine.init_state();
    const int done = completed();
    for (int k = 1; k <= done; ++k) {
      const Json j = iteration(k);
      if (j.at("iteration").get<int>() != k)
        throw IntegrityError("archive: snapshot " + std::to_string(k) + " names the wrong iteration");
      st.history.push_back(detail::json_record(j.at("record")));
      if (k < done) continue;
      const std::string bytes = detail::read_file(dir_ / detail::iter_name(k, "mix"));
      if (detail::hex64(detail::fnv1a(bytes)) != j.at("posterior").at("fnv1a64").get<std::string>())
        throw IntegrityError("archive: posterior checksum mismatch at iteration " + std::to_string(k));
      st.posterior = mixture_from_bytes(bytes);
      std::vector<SplitRecord> splits;
      for (const auto& h : j.at("split_history")) splits.push_back({h.at(0).get<int>(), h.at(1).get<int>(), h.at(2).get<int>()});
      st.anchors = initial_anchorset(ex.grid).replay(splits);
      if (!(st.anchors.blocks() == detail::json_blocks(j.at("anchors_after"))))
        throw IntegrityError("archive: anchorset replay disagrees with the stored layout at iteration " + std::to_string(k));
      if (st.posterior.dim() != engine.theta1_dim() + st.anchors.size())
        throw IntegrityError("archive: posterior dimension does not match the anchorset at iteration " + std::to_string(k));
      st.posterior.labels = j.at("labels").get<std::vector<std::string>>();
      st.mad_baseline = detail::json_vec(j.at("mad_baseline"));
      st.seed = j.at("seed").get<std::uint64_t>();
      st.iteration = k;
    }
    const fs::path timing = dir_ / "timing.json";
    if (fs::exists(timing)) {
      const Json tj = detail::read_json(timing);
      for (auto& r : st.history)
        if (tj.contains(std::to_string(r.iteration))) r.wall_seconds = tj.at(std::to_string(r.iteration)).get<double>();
    }
    return st;
  }

 private:
  void write_manifest(int completed, int iterations, bool final_written) const {
    detail::write_json(dir_ / "manifest.json",
                       {{"format", 1}, {"completed", completed}, {"iterations", iterations}, {"final", final_written}});
  }

  fs::path dir_;
};

// ---- exports ---------------------------------------------------------------

inline const std::vector<std::string>& export_kinds() {
  static const std::vector<std::string> k{"diagnostics", "ensemble", "anchors", "predictions"};
  return k;
}

inline std::string export_header(const std::string& kind) {
  if (kind == "diagnostics") return "iteration,n,anchors,m,Lstar,mad_median,mad_max";
  if (kind == "ensemble") return "cell_index,p05,p25,p50,p75,p95,truth";
  if (kind == "anchors") return "iteration,anchor_id,support_spec,q05,q25,q50,q75,q95,target_value";
  if (kind == "predictions") return "iteration,dim,observed,q05,q25,q50,q75,q95";
  throw UsageError("export: unknown kind '" + kind + "' (expected diagnostics, ensemble, anchors or predictions)");
}

inline std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// The diagnostics table line printed after each iteration.
inline std::string diagnostics_row(const IterationRecord& r) {
  std::ostringstream o;
  o << r.iteration << ',' << r.n << ',' << r.anchors << ',' << r.m << ',' << fmt(r.lstar) << ','
    << fmt(r.mad_median) << ',' << fmt(r.mad_max);
  return o.str();
}

inline std::string export_table(const RunArchive& ar, const std::string& kind) {
  std::ostringstream o;
  o << export_header(kind) << '\n';
  const int done = ar.completed();
  if (kind == "diagnostics") {
    for (int k = 1; k <= done; ++k) o << diagnostics_row(detail::json_record(ar.iteration(k).at("record"))) << '\n';
  } else if (kind == "ensemble") {
    if (!fs::exists(ar.dir() / "final.json")) throw IntegrityError("export: archive has no final ensemble tables");
    const Json f = ar.final_tables();
    const Matrix p = detail::json_mat(f.at("percentiles"));
    const Vector t = detail::json_vec(f.at("truth"));
    for (Eigen::Index c = 0; c < p.rows(); ++c) {
      o << c;
      for (Eigen::Index q = 0; q < p.cols(); ++q) o << ',' << fmt(p(c, q));
      o << ',' << fmt(t(c)) << '\n';
    }
  } else if (kind == "anchors") {
    const ExperimentConfig cfg = ar.config();
    const Grid g(cfg.dims, cfg.spacing);
    const Vector truth = detail::json_vec(ar.truth().at("truth"));
    for (int k = 1; k <= done; ++k) {
      const Json j = ar.iteration(k);
      const AnchorSet a(g, detail::json_blocks(j.at("anchors_used")));
      const Vector target = apply_anchors(a, truth);
      const Matrix q = detail::json_mat(j.at("anchor_quantiles"));
      for (int s = 0; s < a.size(); ++s) {
        o << k << ',' << s << ',' << a.support_spec(s);
        for (Eigen::Index c = 0; c < q.cols(); ++c) o << ',' << fmt(q(s, c));
        o << ',' << fmt(target(s)) << '\n';
      }
    }
  } else if (kind == "predictions") {
    const Vector obs = detail::json_vec(ar.truth().at("observations"));
    for (int k = 1; k <= done; ++k) {
      const Matrix q = detail::json_mat(ar.iteration(k).at("prediction_quantiles"));
      for (Eigen::Index d = 0; d < q.rows(); ++d) {
        o << k << ',' << d << ',' << fmt(obs(d));
        for (Eigen::Index c = 0; c < q.cols(); ++c) o << ',' << fmt(q(d, c));
        o << '\n';
      }
    }
  }
  return o.str();
}

}  // namespace anchored
