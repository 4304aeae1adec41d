#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "gquant/error.hpp"
#include "gquant/harness.hpp"
#include "gquant/imaging.hpp"
#include "gquant/io_util.hpp"

namespace gquant::cli {

namespace {

/// Errors in flag values or config files: exit code 1.
struct UsageError : Error {
  using Error::Error;
};

nlohmann::json load_json(const std::string& flag, const std::string& value) {
  // Inline JSON is accepted anywhere a JSON file is.
  const bool inline_json = !value.empty() && (value.front() == '{' || value.front() == '[');
  std::string text;
  if (inline_json) {
    text = value;
  } else {
    try {
      text = read_file(value);
    } catch (const Error& e) {
      throw UsageError(flag + ": " + e.what());
    }
  }
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(flag + " '" + (inline_json ? std::string("<inline>") : value) + "': " + e.what());
  }
}

template <typename T, typename F>
T with_context(const std::string& context, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw UsageError(context + ": " + e.what());
  }
}

QuantizerSpec load_spec(const std::string& flag, const std::string& value) {
  return with_context<QuantizerSpec>(flag + " '" + value + "'", [&] { return spec_from_json(load_json(flag, value)); });
}

// Returns false when the text went to `out` ("-").
bool write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path == "-") {
    out << text;
    return false;
  }
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  write_file(path, text);
  return true;
}

bool has_extension(const std::string& path, const char* ext) {
  auto e = std::filesystem::path(path).extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e == ext;
}

std::string aggregate_table(const ExperimentResult& r) {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-8s %-5s %-20s %s\n", "method", "bits", "macro F1 (%)", "failed");
  os << buf;
  for (const auto& a : r.aggregates) {
    const std::string cell = std::isfinite(a.mean) ? [&] {
      char c[48];
      std::snprintf(c, sizeof c, "%.2f +- %.2f", 100.0 * a.mean, 100.0 * a.std);
      return std::string(c);
    }()
                                                   : std::string("failed");
    std::snprintf(buf, sizeof buf, "%-8s %-5s %-20s %zu\n", to_string(a.method).c_str(),
                  a.bits == 0 ? "-" : std::to_string(a.bits).c_str(), cell.c_str(), a.failed);
    os << buf;
  }
  return os.str();
}

// --- subcommands ----------------------------------------------------------

struct GenArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> subjects;
  std::optional<double> duration;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
  SynthConfig cfg;
  if (!a.config.empty()) {
    cfg = with_context<SynthConfig>("--config '" + a.config + "'",
                                    [&] { return SynthConfig::from_json(load_json("--config", a.config)); });
  }
  if (a.seed) cfg.rng_seed = *a.seed;
  if (a.subjects) cfg.num_subjects = *a.subjects;
  if (a.duration) cfg.duration_s = *a.duration;
  with_context<int>("gen", [&] {
    cfg.validate();
    return 0;
  });
  const auto recs = generate_synthetic(cfg);
  write_dataset(a.out, recs, cfg.to_json());
  out << "wrote " << recs.size() << " recordings to " << a.out << "\n";
  return kOk;
}

struct TrainArgs {
  std::string config, data, out;
  std::vector<std::uint64_t> seeds;
  std::vector<int> bits;
  std::optional<int> epochs;
  std::optional<std::size_t> jobs;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  ExperimentConfig cfg;
  if (!a.config.empty()) {
    cfg = with_context<ExperimentConfig>("--config '" + a.config + "'",
                                         [&] { return ExperimentConfig::from_json(load_json("--config", a.config)); });
  }
  if (!a.seeds.empty()) cfg.seeds = a.seeds;
  if (!a.bits.empty()) cfg.bit_depths = a.bits;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.jobs) cfg.jobs = *a.jobs;
  with_context<int>("train", [&] {
    cfg.validate();
    return 0;
  });
  const auto recs = read_dataset(a.data);
  const auto result = train_joint(cfg, recs);
  write_outputs(a.out, result);
  out << aggregate_table(result.result);
  out << "wrote " << (std::filesystem::path(a.out) / "result.json").string() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, data, out;
  std::vector<std::string> subjects;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(a.checkpoint));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("--checkpoint '" + a.checkpoint + "': " + e.what());
  }
  Checkpoint ckpt = [&] {
    try {
      return Checkpoint::from_json(j);
    } catch (const DataError& e) {
      throw DataError("--checkpoint '" + a.checkpoint + "': " + e.what());
    }
  }();
  auto recs = read_dataset(a.data);
  if (!a.subjects.empty()) {
    for (const auto& s : a.subjects) {
      if (std::none_of(recs.begin(), recs.end(), [&](const Recording& r) { return r.subject_id == s; })) {
        throw UsageError("--subject '" + s + "' is not in " + a.data);
      }
    }
    std::erase_if(recs, [&](const Recording& r) {
      return std::find(a.subjects.begin(), a.subjects.end(), r.subject_id) == a.subjects.end();
    });
  }
  const auto e = evaluate(ckpt, recs);
  char buf[64];
  std::snprintf(buf, sizeof buf, "macro F1 %.4f over %zu windows\n", e.macro_f1, e.windows);
  out << buf;
  for (std::size_t c = 0; c < e.class_f1.size(); ++c) {
    std::snprintf(buf, sizeof buf, "  %-12s %s\n", ckpt.class_names[c].c_str(),
                  std::isnan(e.class_f1[c]) ? "absent" : format_double(e.class_f1[c]).c_str());
    out << buf;
  }
  if (!a.out.empty()) {
    nlohmann::json f1 = nlohmann::json::array();
    for (double v : e.class_f1) f1.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    const nlohmann::json m = {{"format", "eval v1"}, {"macro_f1", e.macro_f1}, {"class_f1", f1},
                              {"confusion", e.confusion}, {"windows", e.windows}, {"class_names", ckpt.class_names}};
    write_text(a.out, m.dump(2) + "\n", out);
  }
  return kOk;
}

struct QuantizeArgs {
  std::string spec, in, out;
};

int cmd_quantize(const QuantizeArgs& a, std::ostream& out) {
  const QuantizerSpec spec = load_spec("--spec", a.spec);
  if (has_extension(a.in, ".pgm")) {
    const RawImage raw = read_pgm(a.in);
    const Tensor planes = with_context<Tensor>("--spec '" + a.spec + "'", [&] { return image_pipeline(raw, spec); });
    std::ostringstream os;
    write_planes(os, planes);
    if (write_text(a.out, os.str(), out))
      out << "wrote " << planes.dim(0) << "x" << planes.dim(1) << "x" << planes.dim(2) << " planes to " << a.out << "\n";
    return kOk;
  }
  if (!has_extension(a.in, ".csv")) throw UsageError("--in '" + a.in + "': expected a .csv or .pgm file");
  // Recording CSV: sample columns are replaced by codes, values taken as-is
  // (clamped to the spec's domain).
  const Recording rec = load_csv(a.in);
  std::vector<std::uint32_t> codes(rec.samples.size());
  quantize_batch(rec.samples.data(), spec, codes);
  std::ostringstream os;
  os << "subject,timestamp";
  for (std::size_t k = 0; k < rec.axes(); ++k) os << ",ax" << k;
  os << ",label\n";
  for (std::size_t t = 0; t < rec.length(); ++t) {
    os << rec.subject_id << ',' << format_double(static_cast<double>(t) / rec.sample_rate_hz);
    for (std::size_t k = 0; k < rec.axes(); ++k) os << ',' << codes[t * rec.axes() + k];
    os << ',' << rec.class_names[rec.labels[t]] << '\n';
  }
  if (write_text(a.out, os.str(), out))
    out << "wrote " << rec.length() << " rows to " << a.out << "\n";
  return kOk;
}

struct CurvesArgs {
  std::vector<std::string> specs, names;
  std::size_t samples = 4096;
  std::string out;
};

int cmd_curves(const CurvesArgs& a, std::ostream& out) {
  std::vector<QuantizerSpec> specs;
  for (const auto& s : a.specs) specs.push_back(load_spec("--spec", s));
  std::vector<std::string> names = a.names;
  if (names.empty()) {
    for (std::size_t i = 0; i < specs.size(); ++i) names.push_back("q" + std::to_string(i));
  }
  if (names.size() != specs.size()) throw UsageError("--name must be given once per --spec");
  std::ostringstream os;
  with_context<int>("curves", [&] {
    export_curves(specs, names, os, a.samples);
    return 0;
  });
  if (write_text(a.out, os.str(), out))
    out << "wrote " << a.samples << " samples to " << a.out << "\n";
  return kOk;
}

struct LutArgs {
  std::string spec, out;
  int in_bits = 12;
};

int cmd_export_lut(const LutArgs& a, std::ostream& out) {
  const QuantizerSpec spec = load_spec("--spec", a.spec);
  const Lut lut = with_context<Lut>("--in-bits", [&] { return materialize_lut(spec, a.in_bits); });
  std::ostringstream os;
  write_lut(os, lut);
  if (write_text(a.out, os.str(), out))
    out << "wrote " << lut.codes.size() << " entries to " << a.out << "\n";
  return kOk;
}

struct CompareArgs {
  std::string a, b;
};

ExperimentResult load_result(const std::string& flag, const std::string& path) {
  try {
    return result_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(flag + " '" + path + "': " + e.what());
  } catch (const DataError& e) {
    throw DataError(flag + " '" + path + "': " + e.what());
  }
}

int cmd_compare(const CompareArgs& a, std::ostream& out) {
  out << compare_table(load_result("--result-a", a.a), load_result("--result-b", a.b));
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learnable power-law quantization for simulated sensor front ends", "gquant"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic accelerometer dataset");
  g->add_option("--config", gen.config, "Generator config JSON");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--subjects", gen.subjects, "Number of subjects");
  g->add_option("--duration", gen.duration, "Seconds per subject");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train quantizers and classifiers over leave-one-subject-out splits");
  t->add_option("--config", train.config, "Experiment config JSON");
  t->add_option("--data", train.data, "Dataset directory")->required();
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--seed", train.seeds, "Seed (repeatable); replaces the config seeds");
  t->add_option("--bits", train.bits, "Bit depth (repeatable); replaces the config bit depths");
  t->add_option("--epochs", train.epochs, "Epochs");
  t->add_option("--jobs", train.jobs, "Parallel jobs");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint JSON")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--subject", ev.subjects, "Restrict to these subjects (repeatable)");
  e->add_option("--out", ev.out, "Metrics JSON");

  QuantizeArgs qa;
  auto* q = app.add_subcommand("quantize", "Quantize a recording CSV or a raw PGM");
  q->add_option("--spec", qa.spec, "Quantizer spec JSON file or inline JSON")->required();
  q->add_option("--in", qa.in, "Input .csv or .pgm")->required();
  q->add_option("--out", qa.out, "Output file ('-' for stdout)")->required();

  CurvesArgs ca;
  auto* c = app.add_subcommand("curves", "Export transfer curves as CSV");
  c->add_option("--spec", ca.specs, "Quantizer spec (repeatable)")->required();
  c->add_option("--name", ca.names, "Column name per spec (repeatable)");
  c->add_option("--samples", ca.samples, "Samples over the domain")->check(CLI::Range(2, 1 << 24));
  c->add_option("--out", ca.out, "Output CSV ('-' for stdout)")->required();

  LutArgs la;
  auto* l = app.add_subcommand("export-lut", "Write a lookup table for a fixed input bit depth");
  l->add_option("--spec", la.spec, "Quantizer spec")->required();
  l->add_option("--in-bits", la.in_bits, "Input bit depth")->check(CLI::Range(1, 16));
  l->add_option("--out", la.out, "Output file ('-' for stdout)")->required();

  CompareArgs cmp;
  auto* m = app.add_subcommand("compare", "Print a per-bit-depth table of two results");
  m->add_option("--result-a", cmp.a, "First result.json")->required();
  m->add_option("--result-b", cmp.b, "Second result.json")->required();

  std::vector<std::string> args(argv.size() > 1 ? argv.begin() + 1 : argv.end(), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsage;
  }

  try {
    if (g->parsed()) return cmd_gen(gen, out);
    if (t->parsed()) return cmd_train(train, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (q->parsed()) return cmd_quantize(qa, out);
    if (c->parsed()) return cmd_curves(ca, out);
    if (l->parsed()) return cmd_export_lut(la, out);
    if (m->parsed()) return cmd_compare(cmp, out);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsage;
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsage;
  } catch (const DataError& ex) {
    err << "error: " << ex.what() << "\n";
    return kData;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace gquant::cli
