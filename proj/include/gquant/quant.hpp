#pragma once

// Simulated analog-to-digital conversion: linear, logarithmic and power-law
// (gamma) quantizers, their inverse, and exhaustive lookup tables that realize
// a quantizer for a fixed high-bit input grid.
//
// Every quantizer is split into a continuous transfer curve that maps the
// (clamped) analog input to a value in [0, 2^bits - 1], followed by a code
// stage that floors or rounds that value. The batch paths share the transfer
// with the scalar paths and vectorize the code stage, so both agree bit for bit.

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gquant {

class BitDepth {
 public:
  static constexpr int kMin = 1;
  static constexpr int kMax = 16;

  /// Throws ConfigError unless 1 <= bits <= 16.
  explicit BitDepth(int bits);

  int bits() const noexcept { return bits_; }
  /// Largest output code, 2^bits - 1.
  std::uint32_t levels() const noexcept { return (std::uint32_t{1} << bits_) - 1; }

  friend auto operator<=>(const BitDepth&, const BitDepth&) = default;

 private:
  int bits_;
};

struct QuantCode {
  std::uint32_t value = 0;
  friend auto operator<=>(const QuantCode&, const QuantCode&) = default;
};

enum class QuantKind { Linear, Log, GammaUnsigned, GammaSigned };
enum class Domain { UnitInterval, SignedUnit };

std::string_view to_string(QuantKind kind) noexcept;
std::string_view to_string(Domain domain) noexcept;
QuantKind parse_quant_kind(std::string_view name);
Domain parse_domain(std::string_view name);

inline constexpr double kDefaultEpsStab = 1e-3;
inline constexpr double kDefaultEpsLog = 1.0;

struct QuantizerSpec {
  QuantKind kind = QuantKind::Linear;
  double gamma = 1.0;
  double mu = 0.0;
  double eps_log = kDefaultEpsLog;
  double eps_stab = kDefaultEpsStab;
  BitDepth bit_depth{8};
  Domain domain = Domain::UnitInterval;

  static QuantizerSpec linear(BitDepth bits, Domain domain = Domain::UnitInterval);
  static QuantizerSpec log(double eps, BitDepth bits);
  static QuantizerSpec gamma_unsigned(double gamma, BitDepth bits);
  static QuantizerSpec gamma_signed(double gamma, double mu, double eps_stab, BitDepth bits);

  /// Throws ConfigError when parameters or the kind/domain pairing are invalid.
  void validate() const;

  bool has_gamma() const noexcept {
    return kind == QuantKind::GammaUnsigned || kind == QuantKind::GammaSigned;
  }
  bool has_mu() const noexcept { return kind == QuantKind::GammaSigned; }
  std::uint32_t levels() const noexcept { return bit_depth.levels(); }

  friend bool operator==(const QuantizerSpec&, const QuantizerSpec&) = default;
};

/// Bounds of log(x + eps) over a declared input domain.
struct LogRange {
  double min;
  double max;
  static LogRange over(Domain domain, double eps);
};

QuantCode quantize_linear(double x, BitDepth bits);
/// round((x + 1) / 2 * (2^bits - 1)) on [-1, 1].
QuantCode quantize_linear_signed(double x, BitDepth bits);
QuantCode quantize_log(double x, double eps, BitDepth bits, double range_min, double range_max);
QuantCode quantize_gamma_unsigned(double x, double gamma, BitDepth bits);
QuantCode quantize_gamma_signed(double x, double gamma, double mu, double eps_stab, BitDepth bits);

QuantCode quantize(double x, const QuantizerSpec& spec);
double dequantize(QuantCode code, const QuantizerSpec& spec);

/// Continuous pre-rounding value in code units. Clamps x to the spec's domain.
/// The spec is assumed valid.
double transfer(double x, const QuantizerSpec& spec) noexcept;

/// True when the spec's code stage rounds (signed domain) rather than floors.
bool rounds_to_nearest(const QuantizerSpec& spec) noexcept;

/// Batch forms. Throw DomainError on a non-finite input.
void quantize_batch(std::span<const double> x, const QuantizerSpec& spec,
                    std::span<std::uint32_t> codes);
void dequantize_batch(std::span<const std::uint32_t> codes, const QuantizerSpec& spec,
                      std::span<double> out);
/// dequantize(quantize(x)) elementwise.
void fake_quantize_batch(std::span<const double> x, const QuantizerSpec& spec,
                         std::span<double> out);

/// The i-th point of a uniform `bits`-bit grid over the domain.
double grid_point(std::uint32_t i, int bits, Domain domain) noexcept;

struct Lut {
  QuantizerSpec spec;
  int input_bits = 0;
  std::vector<std::uint32_t> codes;

  QuantCode at(std::uint32_t input_code) const { return QuantCode{codes.at(input_code)}; }
};

/// Entry i is quantize(grid_point(i, input_bits, spec.domain), spec).
Lut materialize_lut(const QuantizerSpec& spec, int input_bits);

/// `lut v1 in_bits=<k> out_bits=<n> kind=<kind> gamma=<g> mu=<m>` then one code per line.
void write_lut(std::ostream& os, const Lut& lut);
Lut read_lut(std::istream& is, const std::string& where);

}  // namespace gquant
