#pragma once

// Accelerometer recordings: synthetic generation, CSV storage, sliding-window
// segmentation, min-max normalization and leave-one-subject-out splits.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gquant/tensor.hpp"

namespace gquant {

/// One subject's continuous recording.
struct Recording {
  std::string subject_id;
  double sample_rate_hz = 50.0;
  Tensor samples;           // [time, axes]
  std::vector<int> labels;  // one class index per sample
  std::vector<std::string> class_names;

  std::size_t length() const { return samples.rank() == 2 ? samples.dim(0) : 0; }
  std::size_t axes() const { return samples.rank() == 2 ? samples.dim(1) : 0; }
  double at(std::size_t t, std::size_t axis) const { return samples[t * axes() + axis]; }

  /// Throws DataError on inconsistent sizes or out-of-range labels.
  void validate() const;
};

enum class NormScope { Dataset, PerAxis };

std::string to_string(NormScope scope);
NormScope parse_norm_scope(std::string_view name);

/// Min/max used to map raw values to [-1, 1]. One entry for Dataset scope,
/// one per axis for PerAxis scope.
struct NormMeta {
  NormScope scope = NormScope::Dataset;
  std::vector<double> lo;
  std::vector<double> hi;

  bool empty() const noexcept { return lo.empty(); }
  double normalize(double x, std::size_t axis) const;
  double denormalize(double y, std::size_t axis) const;

  nlohmann::json to_json() const;
  static NormMeta from_json(const nlohmann::json& j);
  friend bool operator==(const NormMeta&, const NormMeta&) = default;
};

struct WindowedDataset {
  Tensor windows;  // [n, axes, window_len]
  std::vector<int> labels;
  std::vector<std::string> subjects;
  std::vector<std::string> class_names;
  NormMeta norm;  // empty until normalized

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t axes() const { return windows.rank() == 3 ? windows.dim(1) : 0; }
  std::size_t window_len() const { return windows.rank() == 3 ? windows.dim(2) : 0; }

  /// Windows at `rows`, in that order.
  WindowedDataset subset(std::span<const std::size_t> rows) const;
  /// Windows at `rows` stacked as [rows, axes, window_len].
  Tensor batch(std::span<const std::size_t> rows) const;
};

/// Concatenates datasets with identical axes, window length and classes.
WindowedDataset concat(std::span<const WindowedDataset> parts);

/// Window length is round(rate * window_s); consecutive windows start
/// round(len * (1 - overlap)) samples apart. Window label is the majority
/// sample label, ties going to the lowest class index. A recording shorter
/// than one window yields an empty dataset and a warning.
WindowedDataset sliding_windows(const Recording& rec, double window_s = 1.0, double overlap = 0.5);

/// Number of windows sliding_windows produces for `length` samples.
std::size_t window_count(std::size_t length, std::size_t window_len, std::size_t hop);

/// Min/max over the given rows (all rows when `rows` is empty).
/// Throws ConfigError when a scope group is constant.
NormMeta fit_minmax(const WindowedDataset& ds, NormScope scope, std::span<const std::size_t> rows = {});

/// Applies `meta`, clamping values outside its range to [-1, 1].
WindowedDataset apply_minmax(const WindowedDataset& ds, const NormMeta& meta);

/// fit_minmax over every window followed by apply_minmax.
WindowedDataset minmax_normalize(const WindowedDataset& ds, NormScope scope);

struct Split {
  std::string subject;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// One split per subject, in order of first appearance. Subjects listed in
/// `expected` that own no windows are skipped with a warning. Throws
/// DataError when fewer than two subjects own windows.
std::vector<Split> loso_splits(const WindowedDataset& ds, std::span<const std::string> expected = {});

struct SynthConfig {
  std::size_t num_subjects = 4;
  std::size_t num_classes = 4;
  std::size_t axes = 3;
  double duration_s = 120.0;
  double sample_rate_hz = 50.0;
  double segment_s = 4.0;
  double noise_std = 0.02;
  std::vector<double> gravity_bias{0.3, 0.0, -0.2};
  // Index 0 is the background class when `null_class` is set.
  std::vector<double> class_signal_amp{0.01, 0.08, 0.08, 0.08};
  bool null_class = true;
  double base_freq_hz = 1.0;
  double harmonic = 0.5;         // relative amplitude of the second harmonic
  double subject_jitter = 0.05;  // relative per-subject amplitude/frequency spread
  // Rare saturation glitches at +/- full_scale, independent of the class.
  double glitch_rate = 0.002;
  double full_scale = 1.0;
  std::uint64_t rng_seed = 1;

  /// Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

std::vector<std::string> default_class_names(std::size_t num_classes, bool null_class);

/// Deterministic in `cfg`.
std::vector<Recording> generate_synthetic(const SynthConfig& cfg);

/// Header `subject,timestamp,ax0..axK,label`; labels are written by name.
void write_csv(const Recording& rec, std::ostream& os);
/// Rows are sorted by timestamp. Labels must be in `class_names`; when it is
/// empty the sorted set of labels found becomes the class list.
Recording read_csv(std::istream& is, const std::string& where,
                   std::span<const std::string> class_names = {}, double sample_rate_hz = 50.0);
Recording load_csv(const std::filesystem::path& path, std::span<const std::string> class_names = {},
                   double sample_rate_hz = 50.0);

/// Writes one CSV per subject plus manifest.json with the generator config,
/// class names and per-file checksums.
void write_dataset(const std::filesystem::path& dir, std::span<const Recording> recordings,
                   const nlohmann::json& generator = nullptr);
/// Reads a directory written by write_dataset, verifying checksums.
std::vector<Recording> read_dataset(const std::filesystem::path& dir);

/// Windows every recording and concatenates the results.
WindowedDataset window_recordings(std::span<const Recording> recordings, double window_s = 1.0,
                                  double overlap = 0.5);

}  // namespace gquant
