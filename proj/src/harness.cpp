#include "gquant/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "gquant/error.hpp"
#include "gquant/io_util.hpp"
#include "gquant/log.hpp"
#include "gquant/ste.hpp"

namespace gquant {

std::string to_string(ParamScope scope) { return scope == ParamScope::Global ? "global" : "per_axis"; }

ParamScope parse_param_scope(std::string_view name) {
  if (name == "global") return ParamScope::Global;
  if (name == "per_axis") return ParamScope::PerAxis;
  throw ConfigError("unknown parameter scope '" + std::string(name) + "' (expected global or per_axis)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::Raw:
      return "raw";
    case Method::Linear:
      return "linear";
    case Method::Log:
      return "log";
    case Method::Gamma:
      return "gamma";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::Raw, Method::Linear, Method::Log, Method::Gamma}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
  if (kind == QuantKind::GammaUnsigned || kind == QuantKind::Log) {
    throw ConfigError("quantizer kind '" + std::string(to_string(kind)) +
                      "' needs non-negative input; normalized accelerometer windows lie in [-1, 1] "
                      "(use gamma_signed or linear)");
  }
  if (baseline_log) {
    throw ConfigError("the log baseline needs non-negative input and is undefined for signed accelerometer data");
  }
  if (!(gamma0 > 0.0) || !std::isfinite(gamma0)) throw ConfigError("gamma0 must be positive");
  if (!(mu0 > -1.0 && mu0 < 1.0)) throw ConfigError("mu0 must lie in (-1, 1)");
  if (!(eps_stab >= 0.0)) throw ConfigError("eps_stab must be non-negative");
  if (!(eps_log > 0.0)) throw ConfigError("eps_log must be positive");
  if (bit_depths.empty()) throw ConfigError("bit_depths must not be empty");
  for (int b : bit_depths) {
    if (b < BitDepth::kMin || b > BitDepth::kMax) {
      throw ConfigError("bit depth " + std::to_string(b) + " outside [1, 16]");
    }
  }
  if (std::set<int>(bit_depths.begin(), bit_depths.end()).size() != bit_depths.size()) {
    throw ConfigError("bit_depths must be distinct");
  }
  if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be positive");
  if (!(lr > 0.0) || !(weight_decay >= 0.0)) throw ConfigError("lr must be positive and weight_decay non-negative");
  if (schedule_every < 1 || !(schedule_factor > 0.0 && schedule_factor <= 1.0)) {
    throw ConfigError("schedule needs every >= 1 and factor in (0, 1]");
  }
  if (quant_lr && !(*quant_lr > 0.0)) throw ConfigError("quant_lr must be positive");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  if (!(window_s > 0.0) || !(overlap >= 0.0 && overlap < 1.0)) {
    throw ConfigError("window seconds must be positive and overlap in [0, 1)");
  }
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
}

std::vector<Method> ExperimentConfig::methods() const {
  std::vector<Method> out{kind == QuantKind::Linear ? Method::Linear : Method::Gamma};
  if (baseline_linear && out.front() != Method::Linear) out.push_back(Method::Linear);
  if (baseline_log) out.push_back(Method::Log);
  if (baseline_raw) out.push_back(Method::Raw);
  return out;
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"quantizer",
           {{"kind", to_string(kind)},
            {"gamma0", gamma0},
            {"mu0", mu0},
            {"eps_stab", eps_stab},
            {"scope", to_string(scope)},
            {"learn", learn_quantizer}}},
          {"baselines", {{"raw", baseline_raw}, {"linear", baseline_linear}, {"log", baseline_log}, {"eps_log", eps_log}}},
          {"bit_depths", bit_depths},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"schedule", {{"every", schedule_every}, {"factor", schedule_factor}}},
          {"seeds", seeds},
          {"quant_lr", quant_lr ? nlohmann::json(*quant_lr) : nlohmann::json(nullptr)},
          {"normalization", {{"scope", to_string(norm_scope)}, {"full_dataset", norm_full_dataset}}},
          {"window", {{"seconds", window_s}, {"overlap", overlap}}},
          {"class_weighting", class_weighting},
          {"model", {{"channels1", channels1}, {"channels2", channels2}, {"kernel", kernel}, {"pool", pool}}},
          {"jobs", jobs},
          {"save_checkpoints", save_checkpoints}};
}

namespace {

void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown key '" + where + "." + key + "'");
    if (known[key].is_object() && key != "quant_lr") reject_unknown(value, known[key], where + "." + key);
  }
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  reject_unknown(j, c.to_json(), "config");
  try {
    if (j.contains("quantizer")) {
      const auto& q = j["quantizer"];
      if (q.contains("kind")) c.kind = parse_quant_kind(q["kind"].get<std::string>());
      read_key(q, "gamma0", c.gamma0);
      read_key(q, "mu0", c.mu0);
      read_key(q, "eps_stab", c.eps_stab);
      if (q.contains("scope")) c.scope = parse_param_scope(q["scope"].get<std::string>());
      read_key(q, "learn", c.learn_quantizer);
    }
    if (j.contains("baselines")) {
      const auto& b = j["baselines"];
      read_key(b, "raw", c.baseline_raw);
      read_key(b, "linear", c.baseline_linear);
      read_key(b, "log", c.baseline_log);
      read_key(b, "eps_log", c.eps_log);
    }
    read_key(j, "bit_depths", c.bit_depths);
    read_key(j, "epochs", c.epochs);
    read_key(j, "batch_size", c.batch_size);
    read_key(j, "lr", c.lr);
    read_key(j, "weight_decay", c.weight_decay);
    if (j.contains("schedule")) {
      read_key(j["schedule"], "every", c.schedule_every);
      read_key(j["schedule"], "factor", c.schedule_factor);
    }
    read_key(j, "seeds", c.seeds);
    if (j.contains("quant_lr") && !j["quant_lr"].is_null()) c.quant_lr = j["quant_lr"].get<double>();
    if (j.contains("normalization")) {
      const auto& n = j["normalization"];
      if (n.contains("scope")) c.norm_scope = parse_norm_scope(n["scope"].get<std::string>());
      read_key(n, "full_dataset", c.norm_full_dataset);
    }
    if (j.contains("window")) {
      read_key(j["window"], "seconds", c.window_s);
      read_key(j["window"], "overlap", c.overlap);
    }
    read_key(j, "class_weighting", c.class_weighting);
    if (j.contains("model")) {
      const auto& m = j["model"];
      read_key(m, "channels1", c.channels1);
      read_key(m, "channels2", c.channels2);
      read_key(m, "kernel", c.kernel);
      read_key(m, "pool", c.pool);
    }
    read_key(j, "jobs", c.jobs);
    read_key(j, "save_checkpoints", c.save_checkpoints);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Quantizer state

QuantizerSpec spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("quantizer spec must be a JSON object");
  static const std::set<std::string> known{"kind", "bits", "gamma", "mu", "eps_log", "eps_stab", "domain"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown quantizer spec key '" + key + "'");
  }
  try {
    QuantizerSpec s;
    s.kind = parse_quant_kind(j.at("kind").get<std::string>());
    s.bit_depth = BitDepth(j.at("bits").get<int>());
    s.domain = s.kind == QuantKind::GammaSigned ? Domain::SignedUnit : Domain::UnitInterval;
    read_key(j, "gamma", s.gamma);
    read_key(j, "mu", s.mu);
    read_key(j, "eps_log", s.eps_log);
    read_key(j, "eps_stab", s.eps_stab);
    if (j.contains("domain")) s.domain = parse_domain(j["domain"].get<std::string>());
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid quantizer spec: ") + e.what());
  }
}

nlohmann::json spec_to_json(const QuantizerSpec& spec) {
  return {{"kind", to_string(spec.kind)}, {"bits", spec.bit_depth.bits()}, {"gamma", spec.gamma},
          {"mu", spec.mu},                {"eps_log", spec.eps_log},        {"eps_stab", spec.eps_stab},
          {"domain", to_string(spec.domain)}};
}

QuantizerSpec LearnedQuantizer::unit_spec(std::size_t u) const {
  QuantizerSpec s = spec;
  if (!gamma.empty()) s.gamma = gamma.at(gamma.size() == 1 ? 0 : u);
  if (!mu.empty()) s.mu = mu.at(mu.size() == 1 ? 0 : u);
  return s;
}

Tensor LearnedQuantizer::apply(const Tensor& windows) const {
  if (windows.rank() != 3) throw ShapeError("quantizer expects [batch, axes, len], got " + shape_str(windows.shape()));
  const std::size_t batch = windows.dim(0), axes = windows.dim(1), len = windows.dim(2);
  const std::size_t units = std::max(gamma.size(), std::size_t{1});
  if (units != 1 && units != axes) {
    throw ShapeError("quantizer has " + std::to_string(units) + " units for " + std::to_string(axes) + " axes");
  }
  if (units == 1) return ste_forward(windows, unit_spec(0));
  Tensor out(windows.shape());
  Tensor lane(Shape{batch * len});
  for (std::size_t a = 0; a < axes; ++a) {
    for (std::size_t b = 0; b < batch; ++b) std::copy_n(&windows[(b * axes + a) * len], len, &lane[b * len]);
    const Tensor q = ste_forward(lane, unit_spec(a));
    for (std::size_t b = 0; b < batch; ++b) std::copy_n(&q[b * len], len, &out[(b * axes + a) * len]);
  }
  return out;
}

nlohmann::json LearnedQuantizer::to_json() const {
  nlohmann::json j = {{"kind", to_string(spec.kind)},
                      {"domain", to_string(spec.domain)},
                      {"bits", spec.bit_depth.bits()},
                      {"eps_stab", spec.eps_stab},
                      {"eps_log", spec.eps_log}};
  j["gamma"] = gamma;
  j["mu"] = mu;
  return j;
}

LearnedQuantizer LearnedQuantizer::from_json(const nlohmann::json& j) {
  try {
    LearnedQuantizer q;
    q.spec.kind = parse_quant_kind(j.at("kind").get<std::string>());
    q.spec.domain = parse_domain(j.at("domain").get<std::string>());
    q.spec.bit_depth = BitDepth(j.at("bits").get<int>());
    q.spec.eps_stab = j.at("eps_stab").get<double>();
    q.spec.eps_log = j.at("eps_log").get<double>();
    q.gamma = j.at("gamma").get<std::vector<double>>();
    q.mu = j.at("mu").get<std::vector<double>>();
    if (q.spec.has_gamma() && q.gamma.empty()) throw DataError("quantizer is missing gamma values");
    if (q.spec.has_mu() && q.mu.size() != q.gamma.size()) throw DataError("quantizer gamma/mu counts differ");
    for (std::size_t u = 0; u < std::max<std::size_t>(q.gamma.size(), 1); ++u) q.unit_spec(u).validate();
    return q;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed quantizer: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("invalid quantizer: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Metrics

std::vector<std::vector<long>> confusion_matrix(std::span<const int> truth, std::span<const int> pred,
                                                std::size_t num_classes) {
  if (truth.size() != pred.size()) throw DataError("truth and prediction lengths differ");
  std::vector<std::vector<long>> m(num_classes, std::vector<long>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || pred[i] < 0 || static_cast<std::size_t>(truth[i]) >= num_classes ||
        static_cast<std::size_t>(pred[i]) >= num_classes) {
      throw DataError("class index out of range in confusion matrix");
    }
    ++m[truth[i]][pred[i]];
  }
  return m;
}

std::vector<double> class_f1(const std::vector<std::vector<long>>& confusion) {
  const std::size_t n = confusion.size();
  if (n == 0) throw DataError("empty confusion matrix");
  for (const auto& row : confusion) {
    if (row.size() != n) throw DataError("confusion matrix is not square");
    for (long v : row) {
      if (v < 0) throw DataError("confusion matrix has a negative count");
    }
  }
  std::vector<double> f1(n);
  for (std::size_t c = 0; c < n; ++c) {
    long actual = 0, predicted = 0;
    for (std::size_t k = 0; k < n; ++k) {
      actual += confusion[c][k];
      predicted += confusion[k][c];
    }
    const double tp = static_cast<double>(confusion[c][c]);
    if (actual == 0 && predicted == 0) {
      f1[c] = std::nan("");
    } else if (actual == 0 || predicted == 0 || tp == 0.0) {
      f1[c] = 0.0;
    } else {
      const double p = tp / static_cast<double>(predicted);
      const double r = tp / static_cast<double>(actual);
      f1[c] = 2.0 * p * r / (p + r);
    }
  }
  return f1;
}

double macro_f1(const std::vector<std::vector<long>>& confusion) {
  const auto f1 = class_f1(confusion);
  double sum = 0.0;
  std::size_t counted = 0;
  for (double v : f1) {
    if (std::isnan(v)) continue;
    sum += v;
    ++counted;
  }
  if (counted == 0) throw DataError("confusion matrix holds no samples");
  return sum / static_cast<double>(counted);
}

// ---------------------------------------------------------------------------
// Results

std::string RunResult::tag() const {
  return to_string(method) + (bits > 0 ? "_b" + std::to_string(bits) : std::string{}) + "_" + subject + "_seed" +
         std::to_string(seed);
}

namespace {

nlohmann::json nan_to_null(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
  return a;
}

std::vector<double> null_to_nan(const nlohmann::json& a) {
  std::vector<double> v;
  for (const auto& x : a) v.push_back(x.is_null() ? std::nan("") : x.get<double>());
  return v;
}

}  // namespace

nlohmann::json RunResult::to_json() const {
  nlohmann::json j = {{"method", to_string(method)}, {"bits", bits}, {"subject", subject}, {"seed", seed},
                      {"status", ok ? "ok" : "failed"}};
  if (!ok) j["failure"] = failure;
  j["macro_f1"] = ok ? nlohmann::json(macro_f1) : nlohmann::json(nullptr);
  j["class_f1"] = nan_to_null(class_f1);
  j["confusion"] = confusion;
  j["quantizer"] = quantizer ? quantizer->to_json() : nlohmann::json(nullptr);
  nlohmann::json curve_j = nlohmann::json::array();
  for (const auto& e : curve) {
    curve_j.push_back({{"epoch", e.epoch},
                       {"lr", e.lr},
                       {"train_loss", std::isfinite(e.train_loss) ? nlohmann::json(e.train_loss) : nlohmann::json(nullptr)},
                       {"gamma", nan_to_null(e.gamma)},
                       {"mu", nan_to_null(e.mu)}});
  }
  j["curve"] = curve_j;
  return j;
}

std::vector<Aggregate> aggregate_runs(std::span<const RunResult> runs) {
  std::vector<std::pair<Method, int>> keys;
  for (const auto& r : runs) {
    const std::pair key{r.method, r.bits};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  std::vector<Aggregate> out;
  for (const auto& [method, bits] : keys) {
    Aggregate a;
    a.method = method;
    a.bits = bits;
    std::vector<std::uint64_t> seeds;
    std::map<std::uint64_t, std::pair<double, std::size_t>> per_seed;
    for (const auto& r : runs) {
      if (r.method != method || r.bits != bits) continue;
      if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
      if (!r.ok) {
        ++a.failed;
        continue;
      }
      auto& [sum, n] = per_seed[r.seed];
      sum += r.macro_f1;
      ++n;
    }
    for (std::uint64_t s : seeds) {
      const auto it = per_seed.find(s);
      if (it != per_seed.end()) a.seed_means.push_back(it->second.first / static_cast<double>(it->second.second));
    }
    if (!a.seed_means.empty()) {
      a.mean = std::accumulate(a.seed_means.begin(), a.seed_means.end(), 0.0) / static_cast<double>(a.seed_means.size());
      double var = 0.0;
      for (double m : a.seed_means) var += (m - a.mean) * (m - a.mean);
      a.std = std::sqrt(var / static_cast<double>(a.seed_means.size()));
    } else {
      a.mean = std::nan("");
      a.std = std::nan("");
    }
    out.push_back(std::move(a));
  }
  return out;
}

const Aggregate* ExperimentResult::find(Method m, int bits) const {
  for (const auto& a : aggregates) {
    if (a.method == m && a.bits == bits) return &a;
  }
  return nullptr;
}

nlohmann::json ExperimentResult::to_json() const {
  nlohmann::json runs_j = nlohmann::json::array();
  for (const auto& r : runs) runs_j.push_back(r.to_json());
  nlohmann::json agg_j = nlohmann::json::array();
  for (const auto& a : aggregates) {
    agg_j.push_back({{"method", to_string(a.method)},
                     {"bits", a.bits},
                     {"seed_means", a.seed_means},
                     {"mean", std::isfinite(a.mean) ? nlohmann::json(a.mean) : nlohmann::json(nullptr)},
                     {"std", std::isfinite(a.std) ? nlohmann::json(a.std) : nlohmann::json(nullptr)},
                     {"failed", a.failed}});
  }
  return {{"format", "result v1"}, {"config", config.to_json()}, {"class_names", class_names},
          {"subjects", subjects},  {"aggregates", agg_j},         {"runs", runs_j}};
}

std::string ExperimentResult::dump() const { return to_json().dump(2) + "\n"; }

ExperimentResult result_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "result v1") throw DataError("not a 'result v1' document");
    ExperimentResult r;
    r.config = ExperimentConfig::from_json(j.at("config"));
    r.class_names = j.at("class_names").get<std::vector<std::string>>();
    r.subjects = j.at("subjects").get<std::vector<std::string>>();
    for (const auto& rj : j.at("runs")) {
      RunResult run;
      run.method = parse_method(rj.at("method").get<std::string>());
      run.bits = rj.at("bits").get<int>();
      run.subject = rj.at("subject").get<std::string>();
      run.seed = rj.at("seed").get<std::uint64_t>();
      run.ok = rj.at("status") == "ok";
      if (!run.ok) run.failure = rj.value("failure", "");
      run.macro_f1 = rj.at("macro_f1").is_null() ? std::nan("") : rj.at("macro_f1").get<double>();
      run.class_f1 = null_to_nan(rj.at("class_f1"));
      run.confusion = rj.at("confusion").get<std::vector<std::vector<long>>>();
      if (!rj.at("quantizer").is_null()) run.quantizer = LearnedQuantizer::from_json(rj.at("quantizer"));
      for (const auto& e : rj.at("curve")) {
        EpochRecord rec;
        rec.epoch = e.at("epoch").get<int>();
        rec.lr = e.at("lr").get<double>();
        rec.train_loss = e.at("train_loss").is_null() ? std::nan("") : e.at("train_loss").get<double>();
        rec.gamma = null_to_nan(e.at("gamma"));
        rec.mu = null_to_nan(e.at("mu"));
        run.curve.push_back(std::move(rec));
      }
      r.runs.push_back(std::move(run));
    }
    r.aggregates = aggregate_runs(r.runs);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed result document: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("result document has an invalid config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Checkpoints and evaluation

nlohmann::json Checkpoint::to_json() const {
  return {{"format", "checkpoint v1"},
          {"model", model.to_json()},
          {"quantizer", quantizer ? quantizer->to_json() : nlohmann::json(nullptr)},
          {"norm", norm.to_json()},
          {"class_names", class_names},
          {"window", {{"seconds", window_s}, {"overlap", overlap}}}};
}

Checkpoint Checkpoint::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "checkpoint v1") throw DataError("not a 'checkpoint v1' document");
    Checkpoint c{ClassifierModel::from_json(j.at("model")), std::nullopt, NormMeta::from_json(j.at("norm")),
                 j.at("class_names").get<std::vector<std::string>>(), j.at("window").at("seconds").get<double>(),
                 j.at("window").at("overlap").get<double>()};
    if (!j.at("quantizer").is_null()) c.quantizer = LearnedQuantizer::from_json(j.at("quantizer"));
    if (c.class_names.size() != c.model.shape().num_classes) {
      throw DataError("checkpoint class list does not match the model");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

namespace {

std::vector<int> predict_all(const ClassifierModel& model, const std::optional<LearnedQuantizer>& quantizer,
                             const WindowedDataset& ds, std::span<const std::size_t> rows, std::size_t chunk) {
  std::vector<int> pred;
  pred.reserve(rows.size());
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const auto part = rows.subspan(start, std::min(chunk, rows.size() - start));
    Tensor x = ds.batch(part);
    if (quantizer) x = quantizer->apply(x);
    const auto p = model.predict(x);
    pred.insert(pred.end(), p.begin(), p.end());
  }
  return pred;
}

}  // namespace

Evaluation evaluate(const Checkpoint& ckpt, std::span<const Recording> recordings) {
  for (const auto& r : recordings) {
    if (r.class_names != ckpt.class_names) throw DataError("recording '" + r.subject_id + "' has different classes");
  }
  const auto ds = apply_minmax(window_recordings(recordings, ckpt.window_s, ckpt.overlap), ckpt.norm);
  if (ds.size() == 0) throw DataError("no windows to evaluate");
  std::vector<std::size_t> rows(ds.size());
  std::iota(rows.begin(), rows.end(), 0);
  const auto pred = predict_all(ckpt.model, ckpt.quantizer, ds, rows, 256);
  Evaluation e;
  e.confusion = confusion_matrix(ds.labels, pred, ckpt.class_names.size());
  e.class_f1 = class_f1(e.confusion);
  e.macro_f1 = macro_f1(e.confusion);
  e.windows = ds.size();
  return e;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct Job {
  Method method;
  int bits;
  std::size_t split;
  std::uint64_t seed;
};

struct JobOutput {
  RunResult result;
  std::optional<Checkpoint> checkpoint;
};

double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

JobOutput run_job(const ExperimentConfig& cfg, const Job& job, const WindowedDataset& ds, const Split& split) {
  JobOutput out;
  RunResult& res = out.result;
  res.method = job.method;
  res.bits = job.bits;
  res.subject = split.subject;
  res.seed = job.seed;

  const std::size_t axes = ds.axes();
  const std::size_t num_classes = ds.class_names.size();
  ModelShape shape{axes, ds.window_len(), num_classes, cfg.channels1, cfg.channels2, cfg.kernel, cfg.pool};
  // Model initialization and batch order depend on (seed, split) only, so
  // every method sees the same starting point and the same batches.
  std::seed_seq seq{job.seed, static_cast<std::uint64_t>(job.split), std::uint64_t{0x67716e74}};
  std::mt19937_64 rng(seq);
  ClassifierModel model(shape, rng());

  std::vector<int> train_labels;
  for (std::size_t i : split.train) train_labels.push_back(ds.labels[i]);
  const std::vector<double> weights =
      cfg.class_weighting ? inverse_frequency_weights(train_labels, num_classes) : std::vector<double>(num_classes, 1.0);

  // Quantizer state.
  const bool gamma_method = job.method == Method::Gamma;
  const bool learn = gamma_method && cfg.learn_quantizer;
  const std::size_t units = cfg.scope == ParamScope::PerAxis ? axes : 1;
  QuantizerSpec qspec;
  if (job.method == Method::Linear) qspec = QuantizerSpec::linear(BitDepth(job.bits), Domain::SignedUnit);
  if (gamma_method) qspec = QuantizerSpec::gamma_signed(cfg.gamma0, cfg.mu0, cfg.eps_stab, BitDepth(job.bits));
  std::vector<double> gamma_pre(units, learn ? inverse_softplus(cfg.gamma0) : cfg.gamma0);
  std::vector<double> mu_pre(units, learn ? std::atanh(cfg.mu0) : cfg.mu0);

  std::vector<std::size_t> sizes;
  for (const auto& p : model.params()) sizes.push_back(p.value.size());
  Adam adam({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}, sizes);
  const std::size_t qsizes[] = {units, units};
  Adam qadam({cfg.quant_lr.value_or(cfg.lr), 0.9, 0.999, 1e-8, 0.0}, qsizes);

  const auto current_quantizer = [&]() -> std::optional<LearnedQuantizer> {
    if (job.method == Method::Raw) return std::nullopt;
    LearnedQuantizer q{qspec, {}, {}};
    if (gamma_method) {
      // Same elementwise maps as the tape ops.
      Tape t;
      const Var g = learn ? ops::softplus(t.input(Tensor(Shape{units}, gamma_pre))) : t.input(Tensor(Shape{units}, gamma_pre));
      const Var m = learn ? ops::tanh(t.input(Tensor(Shape{units}, mu_pre))) : t.input(Tensor(Shape{units}, mu_pre));
      q.gamma = g.value().values();
      q.mu = m.value().values();
    }
    return q;
  };

  const auto quantizer_problem = [&]() -> std::optional<std::string> {
    const auto q = current_quantizer();
    try {
      for (std::size_t u = 0; u < units; ++u) q->unit_spec(u).validate();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::nullopt;
  };

  std::vector<std::size_t> order = split.train;
  bool diverged = false;
  for (int epoch = 0; epoch < cfg.epochs && !diverged; ++epoch) {
    const double lr = step_schedule(cfg.lr, epoch, cfg.schedule_every, cfg.schedule_factor);
    const double qlr = step_schedule(cfg.quant_lr.value_or(cfg.lr), epoch, cfg.schedule_every, cfg.schedule_factor);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      std::vector<int> labels;
      for (std::size_t r : rows) labels.push_back(ds.labels[r]);
      Tape tape;
      const auto bound = model.bind(tape, true);
      Var x = tape.input(ds.batch(rows));
      std::optional<Var> gpre, mpre;
      if (gamma_method) {
        Var g, m;
        if (learn) {
          gpre = tape.param(Tensor(Shape{units}, gamma_pre));
          mpre = tape.param(Tensor(Shape{units}, mu_pre));
          g = ops::softplus(*gpre);
          m = ops::tanh(*mpre);
        } else {
          g = tape.input(Tensor(Shape{units}, gamma_pre));
          m = tape.input(Tensor(Shape{units}, mu_pre));
        }
        x = ops::quantize_ste(x, qspec, g, m);
      } else if (job.method == Method::Linear) {
        x = ops::quantize_ste(x, qspec);
      }
      const Var l = loss(model.forward(x, bound), labels, weights);
      const double lv = l.value().item();
      if (!std::isfinite(lv)) {
        diverged = true;
        res.failure = "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                      std::to_string(start / cfg.batch_size);
        break;
      }
      tape.backward(l);
      std::vector<std::span<double>> params;
      std::vector<std::span<const double>> grads;
      for (std::size_t i = 0; i < bound.size(); ++i) {
        params.push_back(model.params()[i].value.data());
        grads.push_back(bound[i].grad());
      }
      adam.step(params, grads, lr);
      if (learn) {
        const std::span<double> qp[] = {gamma_pre, mu_pre};
        const std::span<const double> qg[] = {gpre->grad(), mpre->grad()};
        qadam.step(qp, qg, qlr);
        if (const auto why = quantizer_problem()) {
          diverged = true;
          res.failure = "quantizer left its valid range at epoch " + std::to_string(epoch) + ": " + *why;
          break;
        }
      }
      loss_sum += lv * static_cast<double>(rows.size());
      seen += rows.size();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = diverged ? std::nan("") : loss_sum / static_cast<double>(std::max<std::size_t>(seen, 1));
    if (const auto q = current_quantizer()) {
      rec.gamma = q->gamma;
      rec.mu = q->mu;
    }
    res.curve.push_back(std::move(rec));
  }

  res.quantizer = current_quantizer();
  if (diverged) {
    if (learn && quantizer_problem()) res.quantizer.reset();
    res.ok = false;
    log_warn("run " + res.tag() + " diverged: " + res.failure);
    return out;
  }
  for (const auto& p : model.params()) {
    for (double v : p.value.data()) {
      if (!std::isfinite(v)) {
        res.ok = false;
        res.failure = "non-finite parameter in " + p.name;
        log_warn("run " + res.tag() + " diverged: " + res.failure);
        return out;
      }
    }
  }

  const auto pred = predict_all(model, res.quantizer, ds, split.val, 256);
  std::vector<int> truth;
  for (std::size_t i : split.val) truth.push_back(ds.labels[i]);
  res.confusion = confusion_matrix(truth, pred, num_classes);
  res.class_f1 = class_f1(res.confusion);
  res.macro_f1 = macro_f1(res.confusion);
  if (cfg.save_checkpoints) {
    out.checkpoint = Checkpoint{std::move(model), res.quantizer, ds.norm, ds.class_names, cfg.window_s, cfg.overlap};
  }
  return out;
}

}  // namespace

TrainOutputs train_joint(const ExperimentConfig& cfg, std::span<const Recording> recordings) {
  cfg.validate();
  if (recordings.empty()) throw DataError("no recordings to train on");
  const auto windows = window_recordings(recordings, cfg.window_s, cfg.overlap);
  std::vector<std::string> subject_ids;
  for (const auto& r : recordings) subject_ids.push_back(r.subject_id);
  const auto splits = loso_splits(windows, subject_ids);

  std::vector<WindowedDataset> normalized;
  for (const auto& s : splits) {
    const std::span<const std::size_t> rows = cfg.norm_full_dataset ? std::span<const std::size_t>{} : s.train;
    normalized.push_back(apply_minmax(windows, fit_minmax(windows, cfg.norm_scope, rows)));
  }

  std::vector<Job> jobs;
  for (Method m : cfg.methods()) {
    const std::vector<int> depths = m == Method::Raw ? std::vector<int>{0} : cfg.bit_depths;
    for (int bits : depths) {
      for (std::uint64_t seed : cfg.seeds) {
        for (std::size_t s = 0; s < splits.size(); ++s) jobs.push_back({m, bits, s, seed});
      }
    }
  }

  std::vector<JobOutput> outputs(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        outputs[i] = run_job(cfg, jobs[i], normalized[jobs[i].split], splits[jobs[i].split]);
        log_info("finished " + outputs[i].result.tag());
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(cfg.jobs, jobs.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  TrainOutputs out;
  out.result.config = cfg;
  out.result.class_names = windows.class_names;
  for (const auto& s : splits) out.result.subjects.push_back(s.subject);
  for (auto& o : outputs) {
    if (o.checkpoint) out.checkpoints.emplace_back(o.result.tag(), std::move(*o.checkpoint));
    out.result.runs.push_back(std::move(o.result));
  }
  out.result.aggregates = aggregate_runs(out.result.runs);
  return out;
}

void write_outputs(const std::filesystem::path& dir, const TrainOutputs& out) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "trajectories", ec);
  if (!ec && !out.checkpoints.empty()) std::filesystem::create_directories(dir / "checkpoints", ec);
  if (ec) throw DataError("cannot create output directory '" + dir.string() + "': " + ec.message());
  write_file(dir / "result.json", out.result.dump());
  for (const auto& run : out.result.runs) {
    std::ostringstream os;
    const std::size_t units = run.curve.empty() ? 0 : run.curve.front().gamma.size();
    os << "epoch,lr,train_loss";
    for (std::size_t u = 0; u < units; ++u) os << ",gamma" << u;
    for (std::size_t u = 0; u < units; ++u) os << ",mu" << u;
    os << '\n';
    for (const auto& e : run.curve) {
      os << e.epoch << ',' << format_double(e.lr) << ',' << format_double(e.train_loss);
      for (double g : e.gamma) os << ',' << format_double(g);
      for (double m : e.mu) os << ',' << format_double(m);
      os << '\n';
    }
    write_file(dir / "trajectories" / (run.tag() + ".csv"), os.str());
  }
  for (const auto& [tag, ckpt] : out.checkpoints) {
    write_file(dir / "checkpoints" / (tag + ".json"), ckpt.to_json().dump() + "\n");
  }
}

// ---------------------------------------------------------------------------
// Curves

void export_curves(std::span<const QuantizerSpec> specs, std::span<const std::string> names, std::ostream& os,
                   std::size_t samples) {
  if (specs.empty()) throw ConfigError("export_curves needs at least one spec");
  if (names.size() != specs.size()) throw ConfigError("export_curves needs one name per spec");
  if (samples < 2) throw ConfigError("export_curves needs at least two samples");
  for (const auto& s : specs) {
    s.validate();
    if (s.domain != specs.front().domain) throw ConfigError("export_curves specs must share a domain");
  }
  const bool is_signed = specs.front().domain == Domain::SignedUnit;
  os << 'x';
  for (const auto& n : names) os << ',' << n << "_value," << n << "_code";
  os << '\n';
  for (std::size_t i = 0; i < samples; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(samples - 1);
    const double x = is_signed ? 2.0 * t - 1.0 : t;
    os << format_double(x);
    for (const auto& s : specs) os << ',' << format_double(transfer(x, s)) << ',' << quantize(x, s).value;
    os << '\n';
  }
}

double compare_log_gamma(double eps_log, double gamma, int bits, std::size_t grid) {
  if (grid < 2) throw ConfigError("compare_log_gamma needs at least two grid points");
  const auto log_spec = QuantizerSpec::log(eps_log, BitDepth(bits));
  const auto pow_spec = QuantizerSpec::gamma_unsigned(gamma, BitDepth(bits));
  log_spec.validate();
  pow_spec.validate();
  const double levels = log_spec.levels();
  double worst = 0.0;
  for (std::size_t i = 0; i < grid; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(grid - 1);
    worst = std::max(worst, std::abs(transfer(x, log_spec) / levels - transfer(x, pow_spec) / levels));
  }
  return worst;
}

std::string compare_table(const ExperimentResult& a, const ExperimentResult& b) {
  std::vector<std::pair<std::string, const ExperimentResult*>> sides{{"A", &a}, {"B", &b}};
  std::vector<std::pair<std::string, std::pair<const ExperimentResult*, Method>>> columns;
  std::set<int> depths;
  for (const auto& [label, res] : sides) {
    std::vector<Method> seen;
    for (const auto& agg : res->aggregates) {
      if (agg.bits > 0) depths.insert(agg.bits);
      if (std::find(seen.begin(), seen.end(), agg.method) == seen.end()) {
        seen.push_back(agg.method);
        columns.push_back({label + ":" + to_string(agg.method), {res, agg.method}});
      }
    }
  }
  const auto cell = [](const Aggregate* agg) -> std::string {
    if (agg == nullptr) return "-";
    if (!std::isfinite(agg->mean)) return "failed";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f +- %.2f", 100.0 * agg->mean, 100.0 * agg->std);
    return buf;
  };
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-6s", "bits");
  os << buf;
  for (const auto& [name, _] : columns) {
    std::snprintf(buf, sizeof buf, " | %-16s", name.c_str());
    os << buf;
  }
  os << '\n';
  std::vector<int> rows(depths.begin(), depths.end());
  bool has_raw = false;
  for (const auto& [name, col] : columns) has_raw = has_raw || col.second == Method::Raw;
  if (has_raw) rows.push_back(0);
  for (int bits : rows) {
    std::snprintf(buf, sizeof buf, "%-6s", bits == 0 ? "raw" : std::to_string(bits).c_str());
    os << buf;
    for (const auto& [name, col] : columns) {
      const Aggregate* agg = col.first->find(col.second, col.second == Method::Raw ? 0 : bits);
      if (bits == 0 && col.second != Method::Raw) agg = nullptr;
      std::snprintf(buf, sizeof buf, " | %-16s", cell(agg).c_str());
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace gquant
