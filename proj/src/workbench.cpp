#include "medtraj/workbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

using nlohmann::json;

namespace medtraj {

namespace {

constexpr int kModelFormatVersion = 1;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---- Eigen <-> JSON -------------------------------------------------------

json mat_to_json(const Eigen::MatrixXd &m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(i, c));
  j["data"] = std::move(data);
  return j;
}

Eigen::MatrixXd mat_from_json(const json &j) {
  const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
  const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
  const auto &data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw std::invalid_argument("model file: matrix size mismatch");
  Eigen::MatrixXd m(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = data[static_cast<std::size_t>(k++)];
  return m;
}

json vec_to_json(const Eigen::VectorXd &v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const json &j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[static_cast<std::size_t>(i)];
  return v;
}

// ---- configs --------------------------------------------------------------

json mediator_cfg_to_json(const MediatorConfig &c) {
  json j;
  j["beta0"] = c.beta0;
  j["gm_variance"] = c.gm_variance;
  j["gm_lengthscale"] = c.gm_lengthscale;
  j["go_variance"] = c.go_variance;
  j["go_time_lengthscale"] = c.go_time_lengthscale;
  j["go_value_lengthscale"] = c.go_value_lengthscale;
  j["q_m"] = c.q_m;
  j["q_o"] = c.q_o;
  j["lag_cap_h"] = c.lag_cap_h;
  j["outcome_pad"] = c.outcome_pad;
  j["outcome_lo"] = c.outcome_lo;
  j["outcome_hi"] = c.outcome_hi;
  j["n_inducing"] = c.n_inducing;
  j["abs_variance"] = c.abs_variance;
  j["abs_lengthscale"] = c.abs_lengthscale;
  j["abs_horizon_h"] = c.abs_horizon_h;
  j["mark_variance"] = c.mark_variance;
  j["mark_lengthscale"] = c.mark_lengthscale;
  j["mark_noise"] = c.mark_noise;
  j["variant"] = c.variant == MediatorVariant::Interacting ? "interacting" : "non_interacting";
  j["quad_per_day"] = c.quad_per_day;
  j["gh_nodes"] = c.gh_nodes;
  j["max_iters"] = c.max_iters;
  j["tol"] = c.tol;
  return j;
}

MediatorConfig mediator_cfg_from_json(const json &j) {
  MediatorConfig c;
  c.beta0 = j.value("beta0", c.beta0);
  c.gm_variance = j.value("gm_variance", c.gm_variance);
  c.gm_lengthscale = j.value("gm_lengthscale", c.gm_lengthscale);
  c.go_variance = j.value("go_variance", c.go_variance);
  c.go_time_lengthscale = j.value("go_time_lengthscale", c.go_time_lengthscale);
  c.go_value_lengthscale = j.value("go_value_lengthscale", c.go_value_lengthscale);
  c.q_m = j.value("q_m", c.q_m);
  c.q_o = j.value("q_o", c.q_o);
  c.lag_cap_h = j.value("lag_cap_h", c.lag_cap_h);
  c.outcome_pad = j.value("outcome_pad", c.outcome_pad);
  c.outcome_lo = j.value("outcome_lo", c.outcome_lo);
  c.outcome_hi = j.value("outcome_hi", c.outcome_hi);
  c.n_inducing = j.value("n_inducing", c.n_inducing);
  c.abs_variance = j.value("abs_variance", c.abs_variance);
  c.abs_lengthscale = j.value("abs_lengthscale", c.abs_lengthscale);
  c.abs_horizon_h = j.value("abs_horizon_h", c.abs_horizon_h);
  c.mark_variance = j.value("mark_variance", c.mark_variance);
  c.mark_lengthscale = j.value("mark_lengthscale", c.mark_lengthscale);
  c.mark_noise = j.value("mark_noise", c.mark_noise);
  if (j.contains("variant")) {
    const std::string v = j.at("variant");
    if (v == "interacting")
      c.variant = MediatorVariant::Interacting;
    else if (v == "non_interacting")
      c.variant = MediatorVariant::NonInteracting;
    else
      throw std::invalid_argument("unknown mediator variant: " + v);
  }
  c.quad_per_day = j.value("quad_per_day", c.quad_per_day);
  c.gh_nodes = j.value("gh_nodes", c.gh_nodes);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.tol = j.value("tol", c.tol);
  return c;
}

json outcome_cfg_to_json(const OutcomeConfig &c) {
  json j;
  j["const_variance"] = c.const_variance;
  j["periodic_variance"] = c.periodic_variance;
  j["periodic_lengthscale"] = c.periodic_lengthscale;
  j["period_h"] = c.period_h;
  j["shape_variance"] = c.shape_variance;
  j["shape_lengthscale"] = c.shape_lengthscale;
  j["t_eff_h"] = c.t_eff_h;
  j["noise_variance"] = c.noise_variance;
  j["magnitude_init"] = c.magnitude_init;
  j["magnitude_prior_scale"] = c.magnitude_prior_scale;
  j["response_variant"] =
      c.response_variant == ResponseVariant::Nonparametric ? "nonparametric" : "constant";
  j["max_iters"] = c.max_iters;
  j["tol"] = c.tol;
  return j;
}

OutcomeConfig outcome_cfg_from_json(const json &j) {
  OutcomeConfig c;
  c.const_variance = j.value("const_variance", c.const_variance);
  c.periodic_variance = j.value("periodic_variance", c.periodic_variance);
  c.periodic_lengthscale = j.value("periodic_lengthscale", c.periodic_lengthscale);
  c.period_h = j.value("period_h", c.period_h);
  c.shape_variance = j.value("shape_variance", c.shape_variance);
  c.shape_lengthscale = j.value("shape_lengthscale", c.shape_lengthscale);
  c.t_eff_h = j.value("t_eff_h", c.t_eff_h);
  c.noise_variance = j.value("noise_variance", c.noise_variance);
  c.magnitude_init = j.value("magnitude_init", c.magnitude_init);
  c.magnitude_prior_scale = j.value("magnitude_prior_scale", c.magnitude_prior_scale);
  if (j.contains("response_variant")) {
    const std::string v = j.at("response_variant");
    if (v == "nonparametric")
      c.response_variant = ResponseVariant::Nonparametric;
    else if (v == "constant")
      c.response_variant = ResponseVariant::Constant;
    else
      throw std::invalid_argument("unknown response variant: " + v);
  }
  c.max_iters = j.value("max_iters", c.max_iters);
  c.tol = j.value("tol", c.tol);
  return c;
}

// ---- models ---------------------------------------------------------------

json sparse_gp_to_json(const SparseGP &gp) {
  json j;
  j["kernel"] = kernel_to_json(gp.kernel);
  j["inducing_inputs"] = mat_to_json(gp.inducing_inputs);
  j["variational_mean"] = vec_to_json(gp.variational_mean);
  j["variational_cov"] = mat_to_json(gp.variational_cov);
  return j;
}

SparseGP sparse_gp_from_json(const json &j) {
  SparseGP gp;
  gp.kernel = kernel_from_json(j.at("kernel"));
  gp.inducing_inputs = mat_from_json(j.at("inducing_inputs"));
  gp.variational_mean = vec_from_json(j.at("variational_mean"));
  gp.variational_cov = mat_from_json(j.at("variational_cov"));
  return gp;
}

json exact_gp_to_json(const ExactGP &gp) {
  json j;
  j["kernel"] = kernel_to_json(gp.kernel);
  j["noise_variance"] = gp.noise_variance;
  j["train_inputs"] = mat_to_json(gp.train_inputs);
  j["train_targets"] = vec_to_json(gp.train_targets);
  return j;
}

ExactGP exact_gp_from_json(const json &j) {
  ExactGP gp;
  gp.kernel = kernel_from_json(j.at("kernel"));
  gp.noise_variance = j.at("noise_variance");
  gp.train_inputs = mat_from_json(j.at("train_inputs"));
  gp.train_targets = vec_from_json(j.at("train_targets"));
  return gp;
}

json mediator_to_json(const MediatorModel &m) {
  json j;
  j["config"] = mediator_cfg_to_json(m.cfg);
  j["beta0"] = m.beta0;
  j["g_m"] = sparse_gp_to_json(m.g_m);
  j["g_o"] = sparse_gp_to_json(m.g_o);
  j["g_abs"] = sparse_gp_to_json(m.g_abs);
  j["mark_gp"] = exact_gp_to_json(m.mark_gp);
  return j;
}

MediatorModel mediator_from_json(const json &j) {
  MediatorModel m;
  m.cfg = mediator_cfg_from_json(j.at("config"));
  m.beta0 = j.at("beta0");
  m.g_m = sparse_gp_from_json(j.at("g_m"));
  m.g_o = sparse_gp_from_json(j.at("g_o"));
  m.g_abs = sparse_gp_from_json(j.at("g_abs"));
  m.mark_gp = exact_gp_from_json(j.at("mark_gp"));
  m.finalize();
  return m;
}

json outcome_to_json(const OutcomeModel &m) {
  json j;
  j["config"] = outcome_cfg_to_json(m.cfg);
  j["mean_offset"] = m.mean_offset;
  json mags = json::object();
  for (const auto &kv : m.magnitudes)
    mags[kv.first] = json{{"intercept", kv.second.intercept}, {"slope", kv.second.slope}};
  j["magnitudes"] = std::move(mags);
  json train = json::array();
  for (const auto &p : m.train) {
    json ev = json::array();
    for (const auto &e : p.events) ev.push_back(json::array({e.time_h, e.mark_g}));
    train.push_back(json{{"patient_id", p.patient_id},
                         {"times", p.times},
                         {"values", p.values},
                         {"events", std::move(ev)}});
  }
  j["train"] = std::move(train);
  return j;
}

OutcomeModel outcome_from_json(const json &j) {
  OutcomeModel m;
  m.cfg = outcome_cfg_from_json(j.at("config"));
  m.mean_offset = j.at("mean_offset");
  for (const auto &kv : j.at("magnitudes").items()) {
    OutcomeModel::Magnitude mag;
    mag.intercept = kv.value().at("intercept");
    mag.slope = kv.value().at("slope");
    m.magnitudes[kv.key()] = mag;
  }
  for (const auto &p : j.at("train")) {
    OutcomeModel::PatientData pd;
    pd.patient_id = p.at("patient_id");
    pd.times = p.at("times").get<std::vector<double>>();
    pd.values = p.at("values").get<std::vector<double>>();
    for (const auto &e : p.at("events")) pd.events.push_back({e.at(0), e.at(1)});
    m.train.push_back(std::move(pd));
  }
  m.finalize();
  return m;
}

// ---- CSV parsing ----------------------------------------------------------

std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_double(const std::string &s, const std::string &path, std::size_t line_no) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument("bad number");
    return v;
  } catch (const std::exception &) {
    throw std::invalid_argument(path + ": line " + std::to_string(line_no) +
                                ": malformed number '" + s + "'");
  }
}

struct RawRow {
  std::string patient;
  Regime regime;
  double t;
  double value;
  std::size_t line = 0;
};

std::vector<RawRow> read_csv(const std::string &path, const std::string &expected_header) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected_header)
    throw std::invalid_argument(path + ": expected header '" + expected_header + "'");
  std::vector<RawRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 4)
      throw std::invalid_argument(path + ": line " + std::to_string(line_no) +
                                  ": expected 4 fields");
    RawRow r;
    r.patient = fields[0];
    try {
      r.regime = regime_from_name(fields[1]);
    } catch (const std::invalid_argument &) {
      throw std::invalid_argument(path + ": line " + std::to_string(line_no) +
                                  ": unknown regime '" + fields[1] + "'");
    }
    r.t = parse_double(fields[2], path, line_no);
    r.value = parse_double(fields[3], path, line_no);
    r.line = line_no;
    if (r.t < 0.0)
      throw std::invalid_argument(path + ": line " + std::to_string(line_no) +
                                  ": negative time");
    rows.push_back(std::move(r));
  }
  return rows;
}

PatientRecord &record_for(StudyDataset &ds, const std::string &pid) {
  for (auto &p : ds.patients)
    if (p.patient_id == pid) return p;
  PatientRecord rec;
  rec.patient_id = pid;
  rec.events_pre.patient_id = rec.events_post.patient_id = pid;
  rec.outcomes_pre.patient_id = rec.outcomes_post.patient_id = pid;
  rec.events_pre.regime = rec.outcomes_pre.regime = Regime::Pre;
  rec.events_post.regime = rec.outcomes_post.regime = Regime::Post;
  ds.patients.push_back(std::move(rec));
  return ds.patients.back();
}

}  // namespace

std::vector<EventSequence> StudyDataset::events(Regime r) const {
  std::vector<EventSequence> out;
  for (const auto &p : patients) {
    const bool has = r == Regime::Pre ? p.has_pre : p.has_post;
    if (has) out.push_back(r == Regime::Pre ? p.events_pre : p.events_post);
  }
  return out;
}

std::vector<OutcomeSeries> StudyDataset::outcomes(Regime r) const {
  std::vector<OutcomeSeries> out;
  for (const auto &p : patients) {
    const bool has = r == Regime::Pre ? p.has_pre : p.has_post;
    if (has) out.push_back(r == Regime::Pre ? p.outcomes_pre : p.outcomes_post);
  }
  return out;
}

StudyDataset load_dataset(const std::string &events_path, const std::string &outcomes_path) {
  const auto event_rows = read_csv(events_path, "patient_id,regime,t_hours,carbs_g");
  const auto outcome_rows = read_csv(outcomes_path, "patient_id,regime,t_hours,glucose_mmol_l");

  StudyDataset ds;
  {
    for (const auto &r : event_rows) {
      if (r.value <= 0.0)
        throw std::invalid_argument(events_path + ": line " + std::to_string(r.line) +
                                    ": carbs_g must be > 0");
      auto &rec = record_for(ds, r.patient);
      auto &seq = r.regime == Regime::Pre ? rec.events_pre : rec.events_post;
      seq.events.push_back({r.t, r.value});
      (r.regime == Regime::Pre ? rec.has_pre : rec.has_post) = true;
      (r.regime == Regime::Pre ? ds.horizon_pre_h : ds.horizon_post_h) =
          std::max(r.regime == Regime::Pre ? ds.horizon_pre_h : ds.horizon_post_h, r.t);
    }
  }
  for (const auto &r : outcome_rows) {
    auto &rec = record_for(ds, r.patient);
    auto &series = r.regime == Regime::Pre ? rec.outcomes_pre : rec.outcomes_post;
    series.points.push_back({r.t, r.value});
    (r.regime == Regime::Pre ? rec.has_pre : rec.has_post) = true;
    (r.regime == Regime::Pre ? ds.horizon_pre_h : ds.horizon_post_h) =
        std::max(r.regime == Regime::Pre ? ds.horizon_pre_h : ds.horizon_post_h, r.t);
  }

  std::sort(ds.patients.begin(), ds.patients.end(),
            [](const PatientRecord &a, const PatientRecord &b) {
              return a.patient_id < b.patient_id;
            });
  for (auto &p : ds.patients) {
    auto by_time = [](const Event &a, const Event &b) { return a.time_h < b.time_h; };
    auto pt_time = [](const OutcomePoint &a, const OutcomePoint &b) { return a.time_h < b.time_h; };
    std::sort(p.events_pre.events.begin(), p.events_pre.events.end(), by_time);
    std::sort(p.events_post.events.begin(), p.events_post.events.end(), by_time);
    std::sort(p.outcomes_pre.points.begin(), p.outcomes_pre.points.end(), pt_time);
    std::sort(p.outcomes_post.points.begin(), p.outcomes_post.points.end(), pt_time);
    p.events_pre.horizon_h = ds.horizon_pre_h;
    p.events_post.horizon_h = ds.horizon_post_h;
    p.events_pre.validate();
    p.events_post.validate();
    p.outcomes_pre.validate();
    p.outcomes_post.validate();
  }
  return ds;
}

EventSequence merge_meals(const EventSequence &events, double window_min) {
  const double window_h = window_min / 60.0;
  EventSequence out = events;
  out.events.clear();
  for (const auto &ev : events.events) {
    if (!out.events.empty() && ev.time_h - out.events.back().time_h <= window_h)
      out.events.back().mark_g += ev.mark_g;  // anchor keeps the earliest time
    else
      out.events.push_back(ev);
  }
  return out;
}

void save_model(const JointModel &pre, const JointModel &post, const std::string &path) {
  json j;
  j["format"] = "medtraj-model";
  j["version"] = kModelFormatVersion;
  j["pre"] = json{{"outcome", outcome_to_json(pre.outcome)},
                  {"mediator", mediator_to_json(pre.mediator)}};
  j["post"] = json{{"outcome", outcome_to_json(post.outcome)},
                   {"mediator", mediator_to_json(post.mediator)}};
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write file: " + path);
  out << j.dump(2) << "\n";
}

std::pair<JointModel, JointModel> load_model(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception &e) {
    throw std::invalid_argument("corrupt model file " + path + ": " + e.what());
  }
  if (!j.contains("format") || j["format"] != "medtraj-model")
    throw std::invalid_argument(path + ": not a model file");
  if (!j.contains("version") || j["version"].get<int>() != kModelFormatVersion)
    throw std::invalid_argument(path + ": unsupported model file version");
  JointModel pre, post;
  pre.outcome = outcome_from_json(j.at("pre").at("outcome"));
  pre.mediator = mediator_from_json(j.at("pre").at("mediator"));
  post.outcome = outcome_from_json(j.at("post").at("outcome"));
  post.mediator = mediator_from_json(j.at("post").at("mediator"));
  return {std::move(pre), std::move(post)};
}

json run_config_to_json(const RunConfig &cfg) {
  json j;
  j["mediator"] = mediator_cfg_to_json(cfg.mediator);
  j["outcome"] = outcome_cfg_to_json(cfg.outcome);
  j["threshold_low"] = cfg.threshold_low;
  j["threshold_high"] = cfg.threshold_high;
  j["grid_points_per_day"] = cfg.grid_points_per_day;
  j["n_replicates"] = cfg.n_replicates;
  j["merge_window_min"] = cfg.merge_window_min;
  j["seed"] = cfg.seed;
  return j;
}

RunConfig run_config_from_json(const json &j) {
  RunConfig cfg;
  if (j.contains("mediator")) cfg.mediator = mediator_cfg_from_json(j.at("mediator"));
  if (j.contains("outcome")) cfg.outcome = outcome_cfg_from_json(j.at("outcome"));
  cfg.threshold_low = j.value("threshold_low", cfg.threshold_low);
  cfg.threshold_high = j.value("threshold_high", cfg.threshold_high);
  cfg.grid_points_per_day = j.value("grid_points_per_day", cfg.grid_points_per_day);
  cfg.n_replicates = j.value("n_replicates", cfg.n_replicates);
  cfg.merge_window_min = j.value("merge_window_min", cfg.merge_window_min);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

json effects_to_json(const EffectEstimate &est) {
  auto track = [](const EffectTrack &t) {
    return json{{"mean", std::vector<double>(t.mean.begin(), t.mean.end())},
                {"se", std::vector<double>(t.se.begin(), t.se.end())}};
  };
  json j;
  j["grid_h"] = est.grid_h;
  j["nde"] = track(est.nde);
  j["nie"] = track(est.nie);
  j["te"] = track(est.te);
  j["n_replicates"] = est.n_replicates;
  j["seed"] = est.seed;
  return j;
}

void write_trajectory_csv(const std::string &path, const std::vector<Trajectory> &trajectories,
                          const std::vector<std::string> &patient_ids,
                          const std::vector<int> &replicates) {
  if (trajectories.size() != patient_ids.size() || trajectories.size() != replicates.size())
    throw std::invalid_argument("write_trajectory_csv: length mismatch");
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write file: " + path);
  out << "patient_id,replicate,regime_pair,kind,time_h,value\n";
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto &tr = trajectories[i];
    const std::string pair = intervention_name(tr.intervention);
    for (const auto &ev : tr.events.events)
      out << patient_ids[i] << "," << replicates[i] << "," << pair << ",event,"
          << fmt_double(ev.time_h) << "," << fmt_double(ev.mark_g) << "\n";
    for (std::size_t k = 0; k < tr.grid_h.size(); ++k)
      out << patient_ids[i] << "," << replicates[i] << "," << pair << ",outcome,"
          << fmt_double(tr.grid_h[k]) << "," << fmt_double(tr.outcome_values[k]) << "\n";
  }
}

namespace {

RunConfig load_config_file(const std::string &path) {
  if (path.empty()) return RunConfig{};
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception &e) {
    throw std::invalid_argument("corrupt config " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

int cmd_fit(const std::string &events_path, const std::string &outcomes_path,
            const std::string &config_path, const std::string &out_path, const std::string &eiv) {
  if (eiv != "none")
    throw std::invalid_argument("--eiv: only 'none' is supported (meal-time correction is out of "
                                "scope)");
  const RunConfig cfg = load_config_file(config_path);
  StudyDataset ds = load_dataset(events_path, outcomes_path);
  for (auto &p : ds.patients) {
    p.events_pre = merge_meals(p.events_pre, cfg.merge_window_min);
    p.events_post = merge_meals(p.events_post, cfg.merge_window_min);
  }
  JointModel pre, post;
  pre.mediator = fit_mediator(ds.events(Regime::Pre), ds.outcomes(Regime::Pre), cfg.mediator);
  post.mediator = fit_mediator(ds.events(Regime::Post), ds.outcomes(Regime::Post), cfg.mediator);
  pre.outcome = fit_outcome(ds.outcomes(Regime::Pre), ds.events(Regime::Pre), cfg.outcome);
  post.outcome = fit_outcome(ds.outcomes(Regime::Post), ds.events(Regime::Post), cfg.outcome);
  save_model(pre, post, out_path);
  return 0;
}

int cmd_simulate(const std::string &model_path, int n_patients, int days, std::uint64_t seed,
                 const std::string &out_path) {
  if (n_patients < 1 || days < 1)
    throw std::invalid_argument("simulate: --patients and --days must be >= 1");
  const auto models = load_model(model_path);
  std::vector<std::string> ids;
  for (const auto &p : models.first.outcome.train) ids.push_back(p.patient_id);
  if (ids.empty()) ids.push_back("p0");
  const double horizon = 24.0 * days;
  const auto grid = default_grid(0.0, horizon, 40);
  const std::vector<PathIntervention> ivs = {{Arm::Natural, Arm::Natural},
                                             {Arm::Natural, Arm::Treated},
                                             {Arm::Treated, Arm::Treated}};
  std::vector<Trajectory> trajectories;
  std::vector<std::string> traj_patients;
  std::vector<int> replicates;
  for (int i = 0; i < n_patients; ++i) {
    const std::string &pid = ids[static_cast<std::size_t>(i) % ids.size()];
    for (const auto &iv : ivs) {
      const auto cm = assemble_counterfactual(models.first, models.second, iv);
      auto res = NoiseReservoir::replicate(seed, static_cast<std::uint64_t>(i));
      auto tr = rollout(*cm.outcome, *cm.mediator, pid, horizon, grid, res);
      tr.intervention = iv;
      trajectories.push_back(std::move(tr));
      traj_patients.push_back(pid);
      replicates.push_back(i);
    }
  }
  write_trajectory_csv(out_path, trajectories, traj_patients, replicates);
  return 0;
}

int cmd_effects(const std::string &model_path, double ta, int n_replicates, std::uint64_t seed,
                const std::string &out_path) {
  const auto models = load_model(model_path);
  const auto grid = default_grid(ta, ta + 24.0, 40);
  const auto est = estimate_effects(models.first, models.second, ta, grid, n_replicates, seed);
  std::ofstream out(out_path);
  if (!out) throw std::invalid_argument("cannot write file: " + out_path);
  out << effects_to_json(est).dump(2) << "\n";
  return 0;
}

int cmd_benchmark(const std::string &config_path, std::uint64_t seed, const std::string &out_path) {
  BenchmarkConfig bcfg;
  bcfg.seed = seed;
  if (!config_path.empty()) {
    const RunConfig cfg = load_config_file(config_path);
    bcfg.mediator_fit_iters = cfg.mediator.max_iters;
    bcfg.outcome_fit_iters = cfg.outcome.max_iters;
  }
  const auto rows = run_benchmark(bcfg);
  std::ofstream out(out_path);
  if (!out) throw std::invalid_argument("cannot write file: " + out_path);
  out << "model,mse_nde,mse_nie,mse_te\n";
  for (const auto &r : rows)
    out << r.model << "," << fmt_double(r.mse_nde) << "," << fmt_double(r.mse_nie) << ","
        << fmt_double(r.mse_te) << "\n";
  return 0;
}

int cmd_metrics(const std::string &traj_path, double low, double high,
                const std::string &out_path) {
  std::ifstream in(traj_path);
  if (!in) throw std::invalid_argument("cannot open file: " + traj_path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(traj_path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "patient_id,replicate,regime_pair,kind,time_h,value")
    throw std::invalid_argument(traj_path + ": unexpected header");
  std::map<std::string, std::vector<double>> by_pair;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 6)
      throw std::invalid_argument(traj_path + ": line " + std::to_string(line_no) +
                                  ": expected 6 fields");
    if (fields[3] != "outcome") continue;
    by_pair[fields[2]].push_back(parse_double(fields[5], traj_path, line_no));
  }
  std::ofstream out(out_path);
  if (!out) throw std::invalid_argument("cannot write file: " + out_path);
  out << "intervention,pct_hypo,pct_ang\n";
  for (const auto &kv : by_pair) {
    const auto m = glycemia_metrics(kv.second, low, high);
    out << kv.first << "," << fmt_double(m.pct_hypo) << "," << fmt_double(m.pct_above_normal)
        << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char *const *argv) {
  CLI::App app{"interacting mediator-outcome trajectory toolkit"};
  app.require_subcommand(1);

  std::string events_path, outcomes_path, config_path, out_path, model_path, traj_path;
  std::string eiv = "none";
  int n_patients = 1, days = 1, n_replicates = 200;
  std::uint64_t seed = 0;
  double ta = 0.0, low = 3.9, high = 5.6;

  auto *fit = app.add_subcommand("fit", "fit mediator and outcome models per regime");
  fit->add_option("--events", events_path, "events CSV")->required();
  fit->add_option("--outcomes", outcomes_path, "outcomes CSV")->required();
  fit->add_option("--config", config_path, "config JSON");
  fit->add_option("--out", out_path, "model output file")->required();
  fit->add_option("--eiv", eiv, "meal-time correction mode (only 'none')");

  auto *sim = app.add_subcommand("simulate", "sample interventional trajectories");
  sim->add_option("--model", model_path, "model file")->required();
  sim->add_option("--patients", n_patients, "number of sampled patients");
  sim->add_option("--days", days, "trajectory length in days");
  sim->add_option("--seed", seed, "master seed");
  sim->add_option("--out", out_path, "trajectory CSV output")->required();

  auto *eff = app.add_subcommand("effects", "estimate NDE/NIE/TE trajectories");
  eff->add_option("--model", model_path, "model file")->required();
  eff->add_option("--ta", ta, "intervention time in hours");
  eff->add_option("--replicates", n_replicates, "Monte Carlo replicates");
  eff->add_option("--seed", seed, "master seed");
  eff->add_option("--out", out_path, "effects JSON output")->required();

  auto *bench = app.add_subcommand("benchmark", "run the synthetic ablation study");
  bench->add_option("--config", config_path, "config JSON");
  bench->add_option("--seed", seed, "master seed");
  bench->add_option("--out", out_path, "benchmark CSV output")->required();

  auto *met = app.add_subcommand("metrics", "glycemia metrics from a trajectory CSV");
  met->add_option("--trajectories", traj_path, "trajectory CSV")->required();
  met->add_option("--low", low, "hypoglycemia threshold (mmol/L)");
  met->add_option("--high", high, "above-normal threshold (mmol/L)");
  met->add_option("--out", out_path, "metrics CSV output")->required();

  try {
    app.parse(argc, const_cast<char **>(argv));
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return 1;
  }

  try {
    if (fit->parsed()) return cmd_fit(events_path, outcomes_path, config_path, out_path, eiv);
    if (sim->parsed()) return cmd_simulate(model_path, n_patients, days, seed, out_path);
    if (eff->parsed()) return cmd_effects(model_path, ta, n_replicates, seed, out_path);
    if (bench->parsed()) return cmd_benchmark(config_path, seed, out_path);
    if (met->parsed()) return cmd_metrics(traj_path, low, high, out_path);
  } catch (const std::invalid_argument &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  }
  return 1;
}

}  // namespace medtraj
