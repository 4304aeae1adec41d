#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "gquant/error.hpp"
#include "gquant/harness.hpp"
#include "gquant/io_util.hpp"
#include "gquant/log.hpp"

using namespace gquant;

namespace {

struct QuietLog {
  LogSink previous;
  std::vector<std::string> warnings;
  QuietLog() {
    previous = set_log_sink([this](LogLevel level, std::string_view m) {
      if (level == LogLevel::Warn) warnings.emplace_back(m);
    });
  }
  ~QuietLog() { set_log_sink(std::move(previous)); }
};

std::vector<Recording> small_recordings(std::size_t subjects = 3) {
  SynthConfig s;
  s.num_subjects = subjects;
  s.duration_s = 30.0;
  return generate_synthetic(s);
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.bit_depths = {2};
  c.epochs = 2;
  c.lr = 1e-3;
  c.seeds = {0, 1};
  c.channels1 = 4;
  c.channels2 = 8;
  c.batch_size = 32;
  return c;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> row;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) row.push_back(field);
    rows.push_back(row);
  }
  return rows;
}

RunResult fake_run(Method m, int bits, std::string subject, std::uint64_t seed, double f1, bool ok = true) {
  RunResult r;
  r.method = m;
  r.bits = bits;
  r.subject = std::move(subject);
  r.seed = seed;
  r.macro_f1 = f1;
  r.ok = ok;
  return r;
}

}  // namespace

TEST_CASE("macro F1 on hand-built confusion matrices") {
  CHECK(macro_f1({{5, 0}, {0, 7}}) == doctest::Approx(1.0));
  // Everything predicted as class 0 with balanced truth: F1 = 2/3 and 0.
  CHECK(macro_f1({{10, 0}, {10, 0}}) == doctest::Approx(1.0 / 3.0));
  // Class 2 never occurs and is never predicted, so it does not count.
  const std::vector<std::vector<long>> absent{{3, 1, 0}, {1, 3, 0}, {0, 0, 0}};
  const auto f1 = class_f1(absent);
  CHECK(std::isnan(f1[2]));
  CHECK(macro_f1(absent) == doctest::Approx(0.75));
  // Predicted but never true still counts, with F1 0.
  CHECK(macro_f1({{2, 2}, {0, 0}}) == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(macro_f1({{0, 0}, {0, 0}}), DataError);
  CHECK_THROWS_AS(macro_f1({}), DataError);
  CHECK_THROWS_AS(macro_f1({{1, 0}}), DataError);
}

TEST_CASE("confusion matrix counts truth by prediction") {
  const std::vector<int> truth{0, 0, 1, 2, 2, 2};
  const std::vector<int> pred{0, 1, 1, 2, 0, 2};
  const auto m = confusion_matrix(truth, pred, 3);
  CHECK(m == std::vector<std::vector<long>>{{1, 1, 0}, {0, 1, 0}, {1, 0, 2}});
  const std::vector<int> bad{0, 3};
  const std::vector<int> two{0, 0};
  CHECK_THROWS_AS(confusion_matrix(bad, two, 3), DataError);
  CHECK_THROWS_AS(confusion_matrix(truth, two, 3), DataError);
}

TEST_CASE("aggregation averages splits per seed, then seeds") {
  const std::vector<RunResult> runs{
      fake_run(Method::Gamma, 2, "a", 0, 0.6), fake_run(Method::Gamma, 2, "b", 0, 0.8),
      fake_run(Method::Gamma, 2, "a", 1, 0.5), fake_run(Method::Gamma, 2, "b", 1, 0.5, false),
      fake_run(Method::Linear, 2, "a", 0, 0.4),
  };
  const auto agg = aggregate_runs(runs);
  REQUIRE(agg.size() == 2);
  CHECK(agg[0].method == Method::Gamma);
  REQUIRE(agg[0].seed_means.size() == 2);
  CHECK(agg[0].seed_means[0] == doctest::Approx(0.7));
  CHECK(agg[0].seed_means[1] == doctest::Approx(0.5));
  CHECK(agg[0].mean == doctest::Approx(0.6));
  CHECK(agg[0].std == doctest::Approx(0.1));
  CHECK(agg[0].failed == 1);
  CHECK(agg[1].mean == doctest::Approx(0.4));
  CHECK(agg[1].std == 0.0);

  // A single seed over identical splits reproduces the per-run value.
  const std::vector<RunResult> same{fake_run(Method::Raw, 0, "a", 3, 0.25), fake_run(Method::Raw, 0, "b", 3, 0.25)};
  CHECK(aggregate_runs(same)[0].mean == 0.25);

  const std::vector<RunResult> all_failed{fake_run(Method::Raw, 0, "a", 3, 0.0, false)};
  CHECK(std::isnan(aggregate_runs(all_failed)[0].mean));
}

TEST_CASE("exported linear curve is a staircase") {
  const QuantizerSpec specs[] = {QuantizerSpec::linear(BitDepth(2))};
  const std::string names[] = {"lin"};
  std::ostringstream os;
  export_curves(specs, names, os, 5);
  const auto rows = parse_csv(os.str());
  REQUIRE(rows.size() == 6);
  CHECK(rows[0] == std::vector<std::string>{"x", "lin_value", "lin_code"});
  const char* codes[] = {"0", "0", "1", "2", "3"};
  for (std::size_t i = 0; i < 5; ++i) CHECK(rows[i + 1][2] == codes[i]);
  CHECK(std::stod(rows[3][1]) == doctest::Approx(1.5));
}

TEST_CASE("exported power curve is monotone and covers every code") {
  const QuantizerSpec specs[] = {QuantizerSpec::gamma_unsigned(0.294, BitDepth(4)),
                                 QuantizerSpec::linear(BitDepth(4))};
  const std::string names[] = {"g", "l"};
  std::ostringstream os;
  export_curves(specs, names, os);
  const auto rows = parse_csv(os.str());
  REQUIRE(rows.size() == 4097);
  long prev = -1;
  double prev_value = -1.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const long code = std::stol(rows[i][2]);
    const double value = std::stod(rows[i][1]);
    CHECK(code >= prev);
    CHECK(value >= prev_value);
    // The power curve sits above the linear one on the interior.
    CHECK(value >= std::stod(rows[i][3]) - 1e-12);
    prev = code;
    prev_value = value;
  }
  CHECK(prev == 15);
  CHECK(std::stol(rows[1][2]) == 0);
}

TEST_CASE("signed curve is centred on mu") {
  const QuantizerSpec specs[] = {QuantizerSpec::gamma_signed(0.5, -0.2, 0.0, BitDepth(4))};
  const std::string names[] = {"s"};
  std::ostringstream os;
  export_curves(specs, names, os, 11);
  const auto rows = parse_csv(os.str());
  REQUIRE(rows.size() == 12);
  CHECK(std::stod(rows[1][0]) == -1.0);
  CHECK(std::stod(rows[11][0]) == 1.0);
  // Row 5 is x = -0.2 up to rounding of the grid.
  CHECK(std::stod(rows[5][0]) == doctest::Approx(-0.2));
  CHECK(std::stod(rows[5][1]) == doctest::Approx(7.5).epsilon(1e-6));
  CHECK(rows[5][2] == "8");
  // |x - mu| < 1 at the left edge, so code 0 is never reached.
  CHECK(rows[1][2] == "1");
  CHECK(rows[11][2] == "15");
}

TEST_CASE("export_curves rejects bad input") {
  const QuantizerSpec mixed[] = {QuantizerSpec::linear(BitDepth(2)),
                                 QuantizerSpec::linear(BitDepth(2), Domain::SignedUnit)};
  const std::string names[] = {"a", "b"};
  std::ostringstream os;
  CHECK_THROWS_AS(export_curves(mixed, names, os), ConfigError);
  CHECK_THROWS_AS(export_curves(std::span(mixed, 1), names, os), ConfigError);
  CHECK_THROWS_AS(export_curves(std::span(mixed, 1), std::span(names, 1), os, 1), ConfigError);
}

TEST_CASE("log and power curves") {
  const double eps = 1.0 / 4096.0;
  // Frozen from an independent grid search over gamma in [0.1, 0.5].
  CHECK(compare_log_gamma(eps, 0.20417, 8) == doctest::Approx(0.09968).epsilon(1e-3));
  CHECK(compare_log_gamma(eps, 0.294, 8) == doctest::Approx(0.22600).epsilon(1e-3));
  CHECK(compare_log_gamma(eps, 0.359, 8) == doctest::Approx(0.29936).epsilon(1e-3));
  CHECK(compare_log_gamma(eps, 0.136, 8) == doctest::Approx(0.23931).epsilon(1e-3));
  // A very large eps makes the log curve linear.
  CHECK(compare_log_gamma(1e6, 1.0, 8) < 1e-5);
  // The comparison uses continuous curves, so the bit depth does not matter.
  CHECK(compare_log_gamma(eps, 0.3, 2) == doctest::Approx(compare_log_gamma(eps, 0.3, 16)).epsilon(1e-12));
  CHECK_THROWS_AS(compare_log_gamma(0.0, 0.3, 8), ConfigError);
  CHECK_THROWS_AS(compare_log_gamma(eps, 0.3, 8, 1), ConfigError);
}

TEST_CASE("config JSON round trip and validation") {
  ExperimentConfig c = small_config();
  c.quant_lr = 0.01;
  c.scope = ParamScope::Global;
  c.norm_scope = NormScope::PerAxis;
  const auto j = c.to_json();
  CHECK(ExperimentConfig::from_json(j).to_json() == j);
  CHECK(ExperimentConfig::from_json(nlohmann::json::object()).to_json() == ExperimentConfig{}.to_json());

  CHECK_THROWS_AS(ExperimentConfig::from_json({{"epoch", 3}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"quantizer", {{"gama0", 0.3}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"epochs", "three"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"quantizer", {{"kind", "log"}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"quantizer", {{"kind", "gamma_unsigned"}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"baselines", {{"log", true}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"bit_depths", {2, 2}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"bit_depths", {17}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"quantizer", {{"gamma0", 0.0}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"quantizer", {{"mu0", 1.0}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"seeds", nlohmann::json::array()}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"quantizer", {{"scope", "per_channel"}}}}), ConfigError);

  ExperimentConfig lin;
  lin.kind = QuantKind::Linear;
  lin.baseline_raw = true;
  CHECK(lin.methods() == std::vector<Method>{Method::Linear, Method::Raw});
  CHECK(ExperimentConfig{}.methods() == std::vector<Method>{Method::Gamma, Method::Linear});
}

TEST_CASE("learned quantizer applies one spec per axis") {
  LearnedQuantizer q{QuantizerSpec::gamma_signed(0.5, 0.0, 0.0, BitDepth(2)), {0.5, 1.0}, {0.0, 0.5}};
  Tensor x(Shape{2, 2, 3}, std::vector<double>{-1, 0, 1, -1, 0.5, 1, 0.2, -0.2, 0.9, 0.1, 0.6, 0.4});
  const Tensor y = q.apply(x);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t a = 0; a < 2; ++a) {
      for (std::size_t t = 0; t < 3; ++t) {
        const std::size_t i = (b * 2 + a) * 3 + t;
        CHECK(y[i] == dequantize(quantize(x[i], q.unit_spec(a)), q.unit_spec(a)));
      }
    }
  }
  CHECK_THROWS_AS(q.apply(Tensor(Shape{1, 3, 2})), ShapeError);
  CHECK(LearnedQuantizer::from_json(q.to_json()).to_json() == q.to_json());
  auto broken = q.to_json();
  broken["mu"] = {0.0};
  CHECK_THROWS_AS(LearnedQuantizer::from_json(broken), DataError);

  // gamma 1, mu 0, no stabilizer at 16 bits is within one code of identity.
  LearnedQuantizer fine{QuantizerSpec::gamma_signed(1.0, 0.0, 0.0, BitDepth(16)), {1.0}, {0.0}};
  const Tensor z = fine.apply(x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(z[i] - x[i]) <= 2.0 / 65535.0);
}

TEST_CASE("joint training records the quantizer for each method and scope") {
  QuietLog quiet;
  const auto recs = small_recordings();
  auto cfg = small_config();
  cfg.seeds = {0};
  cfg.epochs = 1;
  const auto out = train_joint(cfg, recs);
  REQUIRE(out.result.runs.size() == 6);
  CHECK(out.result.subjects == std::vector<std::string>{"s1", "s2", "s3"});
  CHECK(out.checkpoints.size() == 6);
  for (const auto& r : out.result.runs) {
    CHECK(r.ok);
    CHECK(r.macro_f1 >= 0.0);
    CHECK(r.macro_f1 <= 1.0);
    REQUIRE(r.quantizer);
    REQUIRE(r.curve.size() == 1);
    if (r.method == Method::Linear) {
      CHECK(r.quantizer->gamma.empty());
      CHECK(r.quantizer->mu.empty());
      CHECK(r.curve[0].gamma.empty());
    } else {
      CHECK(r.quantizer->gamma.size() == 3);
      CHECK(r.quantizer->mu.size() == 3);
      // Learning moves the parameters away from their initial values.
      CHECK(r.quantizer->gamma[0] != doctest::Approx(0.4).epsilon(1e-9));
    }
  }
  CHECK(out.result.runs[0].tag() == "gamma_b2_s1_seed0");
  CHECK(out.result.runs[3].tag() == "linear_b2_s1_seed0");

  cfg.scope = ParamScope::Global;
  cfg.baseline_linear = false;
  const auto global = train_joint(cfg, recs);
  for (const auto& r : global.result.runs) CHECK(r.quantizer->gamma.size() == 1);

  // Frozen parameters stay at their initial values, both for gamma 1 and 0.4.
  cfg.learn_quantizer = false;
  for (double g0 : {1.0, 0.4}) {
    cfg.gamma0 = g0;
    const auto frozen = train_joint(cfg, recs);
    for (const auto& r : frozen.result.runs) {
      CHECK(r.ok);
      CHECK(r.quantizer->gamma[0] == g0);
      CHECK(r.quantizer->mu[0] == 0.0);
    }
  }
}

TEST_CASE("training is deterministic") {
  QuietLog quiet;
  const auto recs = small_recordings();
  const auto cfg = small_config();
  const std::string a = train_joint(cfg, recs).result.dump();
  const std::string b = train_joint(cfg, recs).result.dump();
  CHECK(a == b);
  // Parallel execution keeps the job order and the results.
  auto par = cfg;
  par.jobs = 3;
  auto pj = nlohmann::json::parse(train_joint(par, recs).result.dump());
  auto aj = nlohmann::json::parse(a);
  pj["config"].erase("jobs");
  aj["config"].erase("jobs");
  CHECK(pj == aj);
}

TEST_CASE("methods share model initialization and batches") {
  QuietLog quiet;
  const auto recs = small_recordings();
  auto cfg = small_config();
  cfg.seeds = {0};
  cfg.bit_depths = {16};
  cfg.learn_quantizer = false;
  cfg.gamma0 = 1.0;
  cfg.eps_stab = 0.0;
  cfg.baseline_linear = false;
  cfg.baseline_raw = true;
  const auto out = train_joint(cfg, recs);
  REQUIRE(out.result.runs.size() == 6);
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& g = out.result.runs[s];
    const auto& raw = out.result.runs[s + 3];
    CHECK(raw.method == Method::Raw);
    CHECK(raw.tag() == "raw_" + raw.subject + "_seed0");
    CHECK_FALSE(raw.quantizer);
    // Identity-like quantizer at 16 bits: the loss curve tracks the raw run.
    CHECK(g.curve[0].train_loss == doctest::Approx(raw.curve[0].train_loss).epsilon(1e-3));
    CHECK(std::abs(g.macro_f1 - raw.macro_f1) < 0.05);
  }
}

TEST_CASE("diverged runs are recorded and the sweep continues") {
  QuietLog quiet;
  const auto recs = small_recordings();
  auto cfg = small_config();
  cfg.seeds = {0};
  cfg.lr = 1e300;
  cfg.epochs = 3;
  cfg.weight_decay = 0.0;
  const auto out = train_joint(cfg, recs);
  REQUIRE(out.result.runs.size() == 6);
  std::size_t failed = 0;
  for (const auto& r : out.result.runs) {
    if (!r.ok) {
      ++failed;
      CHECK_FALSE(r.failure.empty());
    }
  }
  CHECK(failed > 0);
  CHECK(quiet.warnings.size() >= failed);
  std::size_t counted = 0;
  for (const auto& a : out.result.aggregates) counted += a.failed;
  CHECK(counted == failed);
  const auto j = out.result.to_json();
  CHECK_NOTHROW(result_from_json(j));
}

TEST_CASE("checkpoints reproduce validation scores") {
  QuietLog quiet;
  const auto recs = small_recordings();
  auto cfg = small_config();
  cfg.seeds = {4};
  const auto out = train_joint(cfg, recs);
  REQUIRE(out.checkpoints.size() == out.result.runs.size());
  for (std::size_t i = 0; i < out.result.runs.size(); ++i) {
    const auto& run = out.result.runs[i];
    const auto& [tag, ckpt] = out.checkpoints[i];
    CHECK(tag == run.tag());
    const auto restored = Checkpoint::from_json(nlohmann::json::parse(ckpt.to_json().dump()));
    std::vector<Recording> held_out;
    for (const auto& r : recs) {
      if (r.subject_id == run.subject) held_out.push_back(r);
    }
    const auto e = evaluate(restored, held_out);
    CHECK(e.macro_f1 == run.macro_f1);
    CHECK(e.confusion == run.confusion);
  }
  auto bad = out.checkpoints[0].second.to_json();
  bad["format"] = "checkpoint v0";
  CHECK_THROWS_AS(Checkpoint::from_json(bad), DataError);
  bad = out.checkpoints[0].second.to_json();
  bad["class_names"] = {"x"};
  CHECK_THROWS_AS(Checkpoint::from_json(bad), DataError);
}

TEST_CASE("outputs on disk and result round trip") {
  QuietLog quiet;
  const auto recs = small_recordings();
  auto cfg = small_config();
  cfg.seeds = {0};
  cfg.epochs = 1;
  const auto out = train_joint(cfg, recs);
  const auto dir = std::filesystem::temp_directory_path() / "gquant_test_harness_out";
  std::filesystem::remove_all(dir);
  write_outputs(dir, out);
  CHECK(read_file(dir / "result.json") == out.result.dump());
  const auto traj = parse_csv(read_file(dir / "trajectories" / "gamma_b2_s2_seed0.csv"));
  REQUIRE(traj.size() == 2);
  CHECK(traj[0] == std::vector<std::string>{"epoch", "lr", "train_loss", "gamma0", "gamma1", "gamma2", "mu0", "mu1",
                                            "mu2"});
  CHECK(parse_csv(read_file(dir / "trajectories" / "linear_b2_s2_seed0.csv"))[0].size() == 3);
  CHECK(std::filesystem::exists(dir / "checkpoints" / "linear_b2_s3_seed0.json"));

  const auto back = result_from_json(nlohmann::json::parse(read_file(dir / "result.json")));
  CHECK(back.dump() == out.result.dump());
  CHECK_THROWS_AS(result_from_json({{"format", "result v2"}}), DataError);

  const std::string table = compare_table(out.result, back);
  CHECK(table.find("A:gamma") != std::string::npos);
  CHECK(table.find("B:linear") != std::string::npos);
  const auto* g = out.result.find(Method::Gamma, 2);
  REQUIRE(g);
  char cell[32];
  std::snprintf(cell, sizeof cell, "%.2f +- %.2f", 100.0 * g->mean, 100.0 * g->std);
  CHECK(table.find(cell) != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("train_joint input errors") {
  QuietLog quiet;
  auto cfg = small_config();
  CHECK_THROWS_AS(train_joint(cfg, std::vector<Recording>{}), DataError);
  const auto one = small_recordings(1);
  CHECK_THROWS_AS(train_joint(cfg, one), DataError);
  cfg.kind = QuantKind::Log;
  CHECK_THROWS_AS(train_joint(cfg, small_recordings()), ConfigError);
}
