#include "gquant/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "gquant/error.hpp"
#include "gquant/io_util.hpp"
#include "gquant/log.hpp"

namespace gquant {

void Recording::validate() const {
  if (samples.rank() != 2 || samples.dim(1) == 0) {
    throw DataError("recording '" + subject_id + "' needs samples shaped [time, axes], got " +
                    shape_str(samples.shape()));
  }
  if (labels.size() != length()) {
    throw DataError("recording '" + subject_id + "' has " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(length()) + " samples");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= class_names.size()) {
      throw DataError("recording '" + subject_id + "' has label " + std::to_string(y) + " outside " +
                      std::to_string(class_names.size()) + " classes");
    }
  }
  if (!(sample_rate_hz > 0.0)) throw DataError("recording '" + subject_id + "' has a non-positive sample rate");
}

std::string to_string(NormScope scope) { return scope == NormScope::Dataset ? "dataset" : "per_axis"; }

NormScope parse_norm_scope(std::string_view name) {
  if (name == "dataset") return NormScope::Dataset;
  if (name == "per_axis") return NormScope::PerAxis;
  throw ConfigError("unknown normalization scope '" + std::string(name) + "' (expected dataset or per_axis)");
}

double NormMeta::normalize(double x, std::size_t axis) const {
  const std::size_t g = scope == NormScope::Dataset ? 0 : axis;
  const double y = 2.0 * (x - lo.at(g)) / (hi.at(g) - lo.at(g)) - 1.0;
  return std::clamp(y, -1.0, 1.0);
}

double NormMeta::denormalize(double y, std::size_t axis) const {
  const std::size_t g = scope == NormScope::Dataset ? 0 : axis;
  return (y + 1.0) * (hi.at(g) - lo.at(g)) / 2.0 + lo.at(g);
}

nlohmann::json NormMeta::to_json() const {
  return {{"scope", to_string(scope)}, {"lo", lo}, {"hi", hi}};
}

NormMeta NormMeta::from_json(const nlohmann::json& j) {
  try {
    NormMeta m;
    m.scope = parse_norm_scope(j.at("scope").get<std::string>());
    m.lo = j.at("lo").get<std::vector<double>>();
    m.hi = j.at("hi").get<std::vector<double>>();
    if (m.lo.size() != m.hi.size()) throw DataError("normalization lo/hi lengths differ");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed normalization metadata: ") + e.what());
  }
}

WindowedDataset WindowedDataset::subset(std::span<const std::size_t> rows) const {
  WindowedDataset out;
  out.windows = batch(rows);
  out.class_names = class_names;
  out.norm = norm;
  for (std::size_t r : rows) {
    out.labels.push_back(labels[r]);
    out.subjects.push_back(subjects[r]);
  }
  return out;
}

Tensor WindowedDataset::batch(std::span<const std::size_t> rows) const {
  const std::size_t per = axes() * window_len();
  Tensor out(Shape{rows.size(), axes(), window_len()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= size()) throw DataError("window index " + std::to_string(rows[i]) + " out of range");
    std::copy_n(&windows[rows[i] * per], per, &out[i * per]);
  }
  return out;
}

WindowedDataset concat(std::span<const WindowedDataset> parts) {
  WindowedDataset out;
  if (parts.empty()) return out;
  const auto& first = parts.front();
  std::vector<double> values;
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.axes() != first.axes() || p.window_len() != first.window_len() ||
        p.class_names != first.class_names) {
      throw DataError("cannot concatenate datasets with different axes, window lengths or classes");
    }
    values.insert(values.end(), p.windows.data().begin(), p.windows.data().end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.subjects.insert(out.subjects.end(), p.subjects.begin(), p.subjects.end());
    n += p.size();
  }
  out.windows = Tensor(Shape{n, first.axes(), first.window_len()}, std::move(values));
  out.class_names = first.class_names;
  out.norm = first.norm;
  return out;
}

std::size_t window_count(std::size_t length, std::size_t window_len, std::size_t hop) {
  if (window_len == 0 || hop == 0) throw ConfigError("window length and hop must be positive");
  if (length < window_len) return 0;
  return (length - window_len) / hop + 1;
}

WindowedDataset sliding_windows(const Recording& rec, double window_s, double overlap) {
  rec.validate();
  if (!(window_s > 0.0) || !(overlap >= 0.0 && overlap < 1.0)) {
    throw ConfigError("window length must be positive and overlap in [0, 1)");
  }
  const auto len = static_cast<std::size_t>(std::llround(rec.sample_rate_hz * window_s));
  if (len == 0) throw ConfigError("window shorter than one sample");
  const std::size_t hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(len * (1.0 - overlap))));
  const std::size_t axes = rec.axes();
  const std::size_t n = window_count(rec.length(), len, hop);

  WindowedDataset out;
  out.class_names = rec.class_names;
  out.windows = Tensor(Shape{n, axes, len});
  if (n == 0) {
    log_warn("recording '" + rec.subject_id + "' has " + std::to_string(rec.length()) +
             " samples, fewer than one window of " + std::to_string(len) + "; no windows produced");
    return out;
  }
  std::vector<std::size_t> votes(rec.class_names.size());
  for (std::size_t w = 0; w < n; ++w) {
    const std::size_t start = w * hop;
    for (std::size_t a = 0; a < axes; ++a) {
      for (std::size_t t = 0; t < len; ++t) out.windows[(w * axes + a) * len + t] = rec.at(start + t, a);
    }
    std::fill(votes.begin(), votes.end(), 0);
    for (std::size_t t = 0; t < len; ++t) ++votes[rec.labels[start + t]];
    // max_element returns the first maximum, i.e. the lowest class index.
    out.labels.push_back(static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin()));
    out.subjects.push_back(rec.subject_id);
  }
  return out;
}

NormMeta fit_minmax(const WindowedDataset& ds, NormScope scope, std::span<const std::size_t> rows) {
  const std::size_t axes = ds.axes(), len = ds.window_len();
  const std::size_t groups = scope == NormScope::Dataset ? 1 : axes;
  NormMeta m{scope, std::vector<double>(groups, INFINITY), std::vector<double>(groups, -INFINITY)};
  const auto visit = [&](std::size_t r) {
    for (std::size_t a = 0; a < axes; ++a) {
      const std::size_t g = scope == NormScope::Dataset ? 0 : a;
      const double* w = &ds.windows[(r * axes + a) * len];
      for (std::size_t t = 0; t < len; ++t) {
        m.lo[g] = std::min(m.lo[g], w[t]);
        m.hi[g] = std::max(m.hi[g], w[t]);
      }
    }
  };
  if (rows.empty()) {
    for (std::size_t r = 0; r < ds.size(); ++r) visit(r);
  } else {
    for (std::size_t r : rows) {
      if (r >= ds.size()) throw DataError("window index " + std::to_string(r) + " out of range");
      visit(r);
    }
  }
  if (ds.size() == 0) throw DataError("cannot fit normalization on an empty dataset");
  for (std::size_t g = 0; g < groups; ++g) {
    if (!(m.hi[g] > m.lo[g])) {
      throw ConfigError(scope == NormScope::Dataset
                            ? std::string("signal is constant across all axes; cannot min-max normalize")
                            : "axis " + std::to_string(g) + " is constant; cannot min-max normalize");
    }
  }
  return m;
}

WindowedDataset apply_minmax(const WindowedDataset& ds, const NormMeta& meta) {
  const std::size_t axes = ds.axes(), len = ds.window_len();
  if (meta.empty() || (meta.scope == NormScope::PerAxis && meta.lo.size() != axes)) {
    throw ConfigError("normalization metadata does not match " + std::to_string(axes) + " axes");
  }
  WindowedDataset out = ds;
  out.norm = meta;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (std::size_t a = 0; a < axes; ++a) {
      double* w = &out.windows[(r * axes + a) * len];
      for (std::size_t t = 0; t < len; ++t) w[t] = meta.normalize(w[t], a);
    }
  }
  return out;
}

WindowedDataset minmax_normalize(const WindowedDataset& ds, NormScope scope) {
  return apply_minmax(ds, fit_minmax(ds, scope));
}

std::vector<Split> loso_splits(const WindowedDataset& ds, std::span<const std::string> expected) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> rows;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto [it, inserted] = rows.try_emplace(ds.subjects[i]);
    if (inserted) order.push_back(ds.subjects[i]);
    it->second.push_back(i);
  }
  if (!expected.empty()) {
    for (const auto& s : expected) {
      if (!rows.contains(s)) log_warn("subject '" + s + "' has no windows; its LOSO split is skipped");
    }
  }
  if (order.size() < 2) {
    throw DataError("leave-one-subject-out needs at least two subjects with windows, found " +
                    std::to_string(order.size()));
  }
  std::vector<Split> splits;
  for (const auto& s : order) {
    Split split{s, {}, rows[s]};
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.subjects[i] != s) split.train.push_back(i);
    }
    splits.push_back(std::move(split));
  }
  return splits;
}

void SynthConfig::validate() const {
  if (num_subjects == 0 || num_classes == 0 || axes == 0) {
    throw ConfigError("synthetic config needs at least one subject, class and axis");
  }
  if (!(duration_s > 0) || !(sample_rate_hz > 0) || !(segment_s > 0) || !(base_freq_hz > 0)) {
    throw ConfigError("synthetic durations, rates and frequencies must be positive");
  }
  if (!(noise_std >= 0) || !(harmonic >= 0) || !(subject_jitter >= 0 && subject_jitter < 1) ||
      !(glitch_rate >= 0 && glitch_rate <= 1) || !(full_scale > 0)) {
    throw ConfigError("synthetic noise, harmonic, jitter and glitch settings out of range");
  }
  if (gravity_bias.size() != axes) {
    throw ConfigError("gravity_bias has " + std::to_string(gravity_bias.size()) + " entries for " +
                      std::to_string(axes) + " axes");
  }
  if (class_signal_amp.size() != num_classes) {
    throw ConfigError("class_signal_amp has " + std::to_string(class_signal_amp.size()) + " entries for " +
                      std::to_string(num_classes) + " classes");
  }
  for (double a : class_signal_amp) {
    if (!(a >= 0)) throw ConfigError("class amplitudes must be non-negative");
  }
}

nlohmann::json SynthConfig::to_json() const {
  return {{"num_subjects", num_subjects},
          {"num_classes", num_classes},
          {"axes", axes},
          {"duration_s", duration_s},
          {"sample_rate_hz", sample_rate_hz},
          {"segment_s", segment_s},
          {"noise_std", noise_std},
          {"gravity_bias", gravity_bias},
          {"class_signal_amp", class_signal_amp},
          {"null_class", null_class},
          {"base_freq_hz", base_freq_hz},
          {"harmonic", harmonic},
          {"subject_jitter", subject_jitter},
          {"glitch_rate", glitch_rate},
          {"full_scale", full_scale},
          {"rng_seed", rng_seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("synthetic config must be a JSON object");
  SynthConfig c;
  const nlohmann::json defaults = c.to_json();
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown synthetic config key '" + key + "'");
  }
  try {
    c.num_subjects = j.value("num_subjects", c.num_subjects);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.axes = j.value("axes", c.axes);
    c.duration_s = j.value("duration_s", c.duration_s);
    c.sample_rate_hz = j.value("sample_rate_hz", c.sample_rate_hz);
    c.segment_s = j.value("segment_s", c.segment_s);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.gravity_bias = j.value("gravity_bias", c.gravity_bias);
    c.class_signal_amp = j.value("class_signal_amp", c.class_signal_amp);
    c.null_class = j.value("null_class", c.null_class);
    c.base_freq_hz = j.value("base_freq_hz", c.base_freq_hz);
    c.harmonic = j.value("harmonic", c.harmonic);
    c.subject_jitter = j.value("subject_jitter", c.subject_jitter);
    c.glitch_rate = j.value("glitch_rate", c.glitch_rate);
    c.full_scale = j.value("full_scale", c.full_scale);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid synthetic config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::string> default_class_names(std::size_t num_classes, bool null_class) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < num_classes; ++c) {
    names.push_back(null_class && num_classes > 1 && c == 0 ? "null" : "activity" + std::to_string(c));
  }
  return names;
}

std::vector<Recording> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::mt19937_64 rng(cfg.rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Class signatures are shared by all subjects: a frequency per class and a
  // phase per (class, axis) for the fundamental and the harmonic.
  const bool has_null = cfg.null_class && cfg.num_classes > 1;
  std::vector<double> freq(cfg.num_classes);
  std::vector<double> phase1(cfg.num_classes * cfg.axes), phase2(cfg.num_classes * cfg.axes);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const std::size_t rank = has_null ? (c == 0 ? 0 : c - 1) : c;
    freq[c] = cfg.base_freq_hz * (1.0 + 0.75 * static_cast<double>(rank));
    for (std::size_t a = 0; a < cfg.axes; ++a) {
      phase1[c * cfg.axes + a] = two_pi * unit(rng);
      phase2[c * cfg.axes + a] = two_pi * unit(rng);
    }
  }

  const auto length = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.sample_rate_hz));
  const auto seg_len = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.segment_s * cfg.sample_rate_hz)));
  const auto names = default_class_names(cfg.num_classes, cfg.null_class);
  std::vector<Recording> out;
  for (std::size_t s = 0; s < cfg.num_subjects; ++s) {
    Recording rec;
    rec.subject_id = "s" + std::to_string(s + 1);
    rec.sample_rate_hz = cfg.sample_rate_hz;
    rec.class_names = names;
    rec.samples = Tensor(Shape{length, cfg.axes});
    rec.labels.resize(length);
    const double amp_scale = 1.0 + cfg.subject_jitter * (2.0 * unit(rng) - 1.0);
    const double freq_scale = 1.0 + cfg.subject_jitter * (2.0 * unit(rng) - 1.0);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(cfg.num_classes) - 1);
    int cls = 0;
    for (std::size_t t = 0; t < length; ++t) {
      if (t % seg_len == 0) cls = pick(rng);
      rec.labels[t] = cls;
      const double time = static_cast<double>(t) / cfg.sample_rate_hz;
      const double w = two_pi * freq[cls] * freq_scale * time;
      const double amp = cfg.class_signal_amp[cls] * amp_scale / (1.0 + cfg.harmonic);
      for (std::size_t a = 0; a < cfg.axes; ++a) {
        const std::size_t k = cls * cfg.axes + a;
        double v = cfg.gravity_bias[a] + amp * (std::sin(w + phase1[k]) + cfg.harmonic * std::sin(2.0 * w + phase2[k]));
        if (cfg.noise_std > 0) v += cfg.noise_std * gauss(rng);
        rec.samples[t * cfg.axes + a] = std::clamp(v, -cfg.full_scale, cfg.full_scale);
      }
    }
    if (cfg.glitch_rate > 0 && length > 0) {
      std::uniform_int_distribution<std::size_t> any_t(0, length - 1);
      std::uniform_int_distribution<std::size_t> any_axis(0, cfg.axes - 1);
      // Every axis saturates at least once in each direction.
      for (std::size_t a = 0; a < cfg.axes; ++a) {
        rec.samples[any_t(rng) * cfg.axes + a] = cfg.full_scale;
        rec.samples[any_t(rng) * cfg.axes + a] = -cfg.full_scale;
      }
      for (std::size_t t = 0; t < length; ++t) {
        if (unit(rng) < cfg.glitch_rate) {
          rec.samples[t * cfg.axes + any_axis(rng)] = unit(rng) < 0.5 ? cfg.full_scale : -cfg.full_scale;
        }
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void write_csv(const Recording& rec, std::ostream& os) {
  rec.validate();
  os << "subject,timestamp";
  for (std::size_t a = 0; a < rec.axes(); ++a) os << ",ax" << a;
  os << ",label\n";
  for (std::size_t t = 0; t < rec.length(); ++t) {
    os << rec.subject_id << ',' << format_double(static_cast<double>(t) / rec.sample_rate_hz);
    for (std::size_t a = 0; a < rec.axes(); ++a) os << ',' << format_double(rec.at(t, a));
    os << ',' << rec.class_names[rec.labels[t]] << '\n';
  }
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

}  // namespace

Recording read_csv(std::istream& is, const std::string& where, std::span<const std::string> class_names,
                   double sample_rate_hz) {
  std::string line;
  if (!std::getline(is, line) || trim(line).empty()) throw ParseError(where, 1, "empty CSV file");
  const auto header = split_fields(trim(line));
  if (header.size() < 4 || header[0] != "subject" || header[1] != "timestamp" || header.back() != "label") {
    throw ParseError(where, 1, "expected header 'subject,timestamp,ax0..axK,label'");
  }
  const std::size_t axes = header.size() - 3;
  for (std::size_t a = 0; a < axes; ++a) {
    if (header[2 + a] != "ax" + std::to_string(a)) {
      throw ParseError(where, 1, "column " + std::to_string(3 + a) + " should be 'ax" + std::to_string(a) + "'");
    }
  }

  struct Row {
    double time;
    std::vector<double> values;
    std::string label;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::string subject;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto f = split_fields(text);
    if (f.size() != header.size()) {
      throw ParseError(where, line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                           std::to_string(f.size()));
    }
    if (rows.empty()) {
      subject = std::string(f[0]);
      if (subject.empty()) throw ParseError(where, line_no, "empty subject id");
    } else if (f[0] != subject) {
      throw ParseError(where, line_no, "subject '" + std::string(f[0]) + "' differs from '" + subject +
                                           "'; one subject per file");
    }
    Row row{0.0, std::vector<double>(axes), std::string(trim(f.back())), line_no};
    try {
      row.time = parse_double(f[1], "timestamp");
      for (std::size_t a = 0; a < axes; ++a) row.values[a] = parse_double(f[2 + a], "ax" + std::to_string(a));
    } catch (const Error& e) {
      throw ParseError(where, line_no, e.what());
    }
    if (!std::isfinite(row.time)) throw ParseError(where, line_no, "timestamp is not finite");
    for (double v : row.values) {
      if (!std::isfinite(v)) throw ParseError(where, line_no, "sample value is not finite");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(where, 0, "CSV file has a header but no rows");

  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.time < b.time; });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (!(rows[i].time > rows[i - 1].time)) {
      throw ParseError(where, rows[i].line, "timestamp " + format_double(rows[i].time) + " repeats line " +
                                                std::to_string(rows[i - 1].line) + "; timestamps must be strictly increasing");
    }
  }

  Recording rec;
  rec.subject_id = subject;
  rec.sample_rate_hz = sample_rate_hz;
  if (class_names.empty()) {
    std::set<std::string> found;
    for (const auto& r : rows) found.insert(r.label);
    rec.class_names.assign(found.begin(), found.end());
  } else {
    rec.class_names.assign(class_names.begin(), class_names.end());
  }
  std::map<std::string, int> index;
  for (std::size_t c = 0; c < rec.class_names.size(); ++c) index[rec.class_names[c]] = static_cast<int>(c);
  std::vector<double> values;
  values.reserve(rows.size() * axes);
  for (const auto& r : rows) {
    const auto it = index.find(r.label);
    if (it == index.end()) throw ParseError(where, r.line, "unknown label '" + r.label + "'");
    rec.labels.push_back(it->second);
    values.insert(values.end(), r.values.begin(), r.values.end());
  }
  rec.samples = Tensor(Shape{rows.size(), axes}, std::move(values));
  return rec;
}

Recording load_csv(const std::filesystem::path& path, std::span<const std::string> class_names,
                   double sample_rate_hz) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  return read_csv(in, path.string(), class_names, sample_rate_hz);
}

void write_dataset(const std::filesystem::path& dir, std::span<const Recording> recordings,
                   const nlohmann::json& generator) {
  if (recordings.empty()) throw DataError("no recordings to write");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory '" + dir.string() + "': " + ec.message());
  nlohmann::json files = nlohmann::json::array();
  for (const auto& rec : recordings) {
    if (rec.class_names != recordings.front().class_names) {
      throw DataError("recordings in one dataset must share class names");
    }
    std::ostringstream os;
    write_csv(rec, os);
    const std::string file = rec.subject_id + ".csv";
    write_file(dir / file, os.str());
    files.push_back({{"subject", rec.subject_id},
                     {"file", file},
                     {"rows", rec.length()},
                     {"fnv1a64", fnv1a64_hex(os.str())}});
  }
  const nlohmann::json manifest = {{"format", "dataset v1"},
                                   {"sample_rate_hz", recordings.front().sample_rate_hz},
                                   {"axes", recordings.front().axes()},
                                   {"class_names", recordings.front().class_names},
                                   {"generator", generator},
                                   {"files", files}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<Recording> read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + manifest_path.string() + "' is not valid JSON: " + e.what());
  }
  std::vector<Recording> out;
  try {
    if (manifest.at("format") != "dataset v1") {
      throw DataError("'" + manifest_path.string() + "' is not a 'dataset v1' manifest");
    }
    const auto names = manifest.at("class_names").get<std::vector<std::string>>();
    const double rate = manifest.at("sample_rate_hz").get<double>();
    for (const auto& f : manifest.at("files")) {
      const auto path = dir / f.at("file").get<std::string>();
      const std::string text = read_file(path);
      if (fnv1a64_hex(text) != f.at("fnv1a64").get<std::string>()) {
        throw DataError("checksum mismatch for '" + path.string() + "'");
      }
      std::istringstream is(text);
      out.push_back(read_csv(is, path.string(), names, rate));
      if (out.back().subject_id != f.at("subject").get<std::string>()) {
        throw DataError("'" + path.string() + "' holds subject '" + out.back().subject_id + "', manifest says '" +
                        f.at("subject").get<std::string>() + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest '" + manifest_path.string() + "': " + e.what());
  }
  return out;
}

WindowedDataset window_recordings(std::span<const Recording> recordings, double window_s, double overlap) {
  std::vector<WindowedDataset> parts;
  for (const auto& r : recordings) parts.push_back(sliding_windows(r, window_s, overlap));
  return concat(parts);
}

}  // namespace gquant
