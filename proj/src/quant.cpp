#include "gquant/quant.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "gquant/error.hpp"
#include "gquant/io_util.hpp"
#include "gquant/kernels.hpp"

namespace gquant {

BitDepth::BitDepth(int bits) : bits_(bits) {
  if (bits < kMin || bits > kMax) {
    throw ConfigError("bit depth must be in [1, 16], got " + std::to_string(bits));
  }
}

std::string_view to_string(QuantKind kind) noexcept {
  switch (kind) {
    case QuantKind::Linear:
      return "linear";
    case QuantKind::Log:
      return "log";
    case QuantKind::GammaUnsigned:
      return "gamma_unsigned";
    case QuantKind::GammaSigned:
      return "gamma_signed";
  }
  return "unknown";
}

std::string_view to_string(Domain domain) noexcept {
  return domain == Domain::UnitInterval ? "unit" : "signed";
}

QuantKind parse_quant_kind(std::string_view name) {
  for (auto k : {QuantKind::Linear, QuantKind::Log, QuantKind::GammaUnsigned, QuantKind::GammaSigned}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown quantizer kind '" + std::string(name) + "'");
}

Domain parse_domain(std::string_view name) {
  if (name == "unit") return Domain::UnitInterval;
  if (name == "signed") return Domain::SignedUnit;
  throw ConfigError("unknown input domain '" + std::string(name) + "' (expected unit|signed)");
}

QuantizerSpec QuantizerSpec::linear(BitDepth bits, Domain domain) {
  QuantizerSpec s;
  s.kind = QuantKind::Linear;
  s.bit_depth = bits;
  s.domain = domain;
  return s;
}

QuantizerSpec QuantizerSpec::log(double eps, BitDepth bits) {
  QuantizerSpec s;
  s.kind = QuantKind::Log;
  s.eps_log = eps;
  s.bit_depth = bits;
  s.validate();
  return s;
}

QuantizerSpec QuantizerSpec::gamma_unsigned(double gamma, BitDepth bits) {
  QuantizerSpec s;
  s.kind = QuantKind::GammaUnsigned;
  s.gamma = gamma;
  s.bit_depth = bits;
  s.validate();
  return s;
}

QuantizerSpec QuantizerSpec::gamma_signed(double gamma, double mu, double eps_stab, BitDepth bits) {
  QuantizerSpec s;
  s.kind = QuantKind::GammaSigned;
  s.gamma = gamma;
  s.mu = mu;
  s.eps_stab = eps_stab;
  s.bit_depth = bits;
  s.domain = Domain::SignedUnit;
  s.validate();
  return s;
}

namespace {

void check_gamma(double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw ConfigError("gamma must be a positive finite number, got " + format_double(gamma));
  }
}

void check_mu(double mu) {
  if (!(std::abs(mu) < 1.0)) throw ConfigError("mu must lie in (-1, 1), got " + format_double(mu));
}

void check_eps_stab(double eps) {
  if (!(eps >= 0.0) || !std::isfinite(eps)) {
    throw ConfigError("eps_stab must be non-negative, got " + format_double(eps));
  }
}

void check_finite(double x) {
  if (!std::isfinite(x)) throw DomainError("quantizer input is not finite");
}

double sign(double v) noexcept { return static_cast<double>((v > 0.0) - (v < 0.0)); }

// Transfer curves in code units; inputs already clamped.
double linear_unit_value(double x, double levels) noexcept { return x * levels; }

double linear_signed_value(double x, double levels) noexcept { return ((x + 1.0) / 2.0) * levels; }

double log_value(double x, double eps, double lo, double hi, double levels) noexcept {
  return (std::log(x + eps) - lo) / (hi - lo) * levels;
}

double gamma_unsigned_value(double x, double gamma, double levels) noexcept {
  return std::pow(x, gamma) * levels;
}

double gamma_signed_value(double x, double gamma, double mu, double eps, double levels) noexcept {
  const double d = x - mu;
  const double g = sign(d) * std::pow(std::abs(d) + eps, gamma);
  return ((g + 1.0) / 2.0) * levels;
}

std::uint32_t floor_code(double v, std::uint32_t levels) noexcept {
  return static_cast<std::uint32_t>(std::clamp(std::floor(v), 0.0, static_cast<double>(levels)));
}

std::uint32_t round_code(double v, std::uint32_t levels) noexcept {
  return static_cast<std::uint32_t>(std::clamp(std::round(v), 0.0, static_cast<double>(levels)));
}

double clamp_to(Domain domain, double x) noexcept {
  return domain == Domain::UnitInterval ? std::clamp(x, 0.0, 1.0) : std::clamp(x, -1.0, 1.0);
}

}  // namespace

void QuantizerSpec::validate() const {
  switch (kind) {
    case QuantKind::Linear:
      break;
    case QuantKind::Log:
      if (domain != Domain::UnitInterval) throw ConfigError("log quantizer requires the unit domain");
      if (!(eps_log > 0.0) || !std::isfinite(eps_log)) {
        throw ConfigError("eps_log must be positive, got " + format_double(eps_log));
      }
      break;
    case QuantKind::GammaUnsigned:
      if (domain != Domain::UnitInterval) {
        throw ConfigError("gamma_unsigned quantizer requires the unit domain");
      }
      check_gamma(gamma);
      break;
    case QuantKind::GammaSigned:
      if (domain != Domain::SignedUnit) {
        throw ConfigError("gamma_signed quantizer requires the signed domain");
      }
      check_gamma(gamma);
      check_mu(mu);
      check_eps_stab(eps_stab);
      break;
  }
}

LogRange LogRange::over(Domain domain, double eps) {
  const double lo = domain == Domain::UnitInterval ? 0.0 : -1.0;
  return LogRange{std::log(lo + eps), std::log(1.0 + eps)};
}

QuantCode quantize_linear(double x, BitDepth bits) {
  check_finite(x);
  const double v = linear_unit_value(std::clamp(x, 0.0, 1.0), bits.levels());
  return QuantCode{floor_code(v, bits.levels())};
}

QuantCode quantize_linear_signed(double x, BitDepth bits) {
  check_finite(x);
  const double v = linear_signed_value(std::clamp(x, -1.0, 1.0), bits.levels());
  return QuantCode{round_code(v, bits.levels())};
}

QuantCode quantize_log(double x, double eps, BitDepth bits, double range_min, double range_max) {
  check_finite(x);
  if (!(eps > 0.0)) throw ConfigError("eps_log must be positive, got " + format_double(eps));
  if (!(range_max > range_min)) {
    throw ConfigError("log range is empty: max " + format_double(range_max) + " <= min " +
                      format_double(range_min));
  }
  const double v =
      log_value(std::clamp(x, 0.0, 1.0), eps, range_min, range_max, bits.levels());
  return QuantCode{floor_code(v, bits.levels())};
}

QuantCode quantize_gamma_unsigned(double x, double gamma, BitDepth bits) {
  check_finite(x);
  check_gamma(gamma);
  const double v = gamma_unsigned_value(std::clamp(x, 0.0, 1.0), gamma, bits.levels());
  return QuantCode{floor_code(v, bits.levels())};
}

QuantCode quantize_gamma_signed(double x, double gamma, double mu, double eps_stab, BitDepth bits) {
  check_finite(x);
  check_gamma(gamma);
  check_mu(mu);
  check_eps_stab(eps_stab);
  const double v =
      gamma_signed_value(std::clamp(x, -1.0, 1.0), gamma, mu, eps_stab, bits.levels());
  return QuantCode{round_code(v, bits.levels())};
}

double transfer(double x, const QuantizerSpec& spec) noexcept {
  const double levels = spec.levels();
  const double xc = clamp_to(spec.domain, x);
  switch (spec.kind) {
    case QuantKind::Linear:
      return spec.domain == Domain::UnitInterval ? linear_unit_value(xc, levels)
                                                 : linear_signed_value(xc, levels);
    case QuantKind::Log: {
      const LogRange r = LogRange::over(spec.domain, spec.eps_log);
      return log_value(xc, spec.eps_log, r.min, r.max, levels);
    }
    case QuantKind::GammaUnsigned:
      return gamma_unsigned_value(xc, spec.gamma, levels);
    case QuantKind::GammaSigned:
      return gamma_signed_value(xc, spec.gamma, spec.mu, spec.eps_stab, levels);
  }
  return 0.0;
}

bool rounds_to_nearest(const QuantizerSpec& spec) noexcept {
  return spec.domain == Domain::SignedUnit;
}

QuantCode quantize(double x, const QuantizerSpec& spec) {
  spec.validate();
  check_finite(x);
  const double v = transfer(x, spec);
  return QuantCode{rounds_to_nearest(spec) ? round_code(v, spec.levels())
                                           : floor_code(v, spec.levels())};
}

double dequantize(QuantCode code, const QuantizerSpec& spec) {
  const double levels = spec.levels();
  const double c = code.value;
  return spec.domain == Domain::UnitInterval ? c / levels : (2.0 * c) / levels - 1.0;
}

void quantize_batch(std::span<const double> x, const QuantizerSpec& spec,
                    std::span<std::uint32_t> codes) {
  if (codes.size() != x.size()) throw ShapeError("quantize_batch: output size mismatch");
  spec.validate();
  std::vector<double> values(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    check_finite(x[i]);
    values[i] = transfer(x[i], spec);
  }
  const auto& k = kernels::active();
  const auto encode = rounds_to_nearest(spec) ? k.encode_round : k.encode_floor;
  encode(values.data(), codes.data(), values.size(), spec.levels());
}

void dequantize_batch(std::span<const std::uint32_t> codes, const QuantizerSpec& spec,
                      std::span<double> out) {
  if (codes.size() != out.size()) throw ShapeError("dequantize_batch: output size mismatch");
  const std::uint32_t levels = spec.levels();
  for (auto c : codes) {
    if (c > levels) throw DataError("code " + std::to_string(c) + " exceeds bit depth");
  }
  const auto& k = kernels::active();
  const auto decode = spec.domain == Domain::UnitInterval ? k.decode_unit : k.decode_signed;
  decode(codes.data(), out.data(), codes.size(), levels);
}

void fake_quantize_batch(std::span<const double> x, const QuantizerSpec& spec,
                         std::span<double> out) {
  std::vector<std::uint32_t> codes(x.size());
  quantize_batch(x, spec, codes);
  dequantize_batch(codes, spec, out);
}

double grid_point(std::uint32_t i, int bits, Domain domain) noexcept {
  const double levels = static_cast<double>((std::uint32_t{1} << bits) - 1);
  const double c = i;
  return domain == Domain::UnitInterval ? c / levels : (2.0 * c) / levels - 1.0;
}

Lut materialize_lut(const QuantizerSpec& spec, int input_bits) {
  if (input_bits < 1 || input_bits > 16) {
    throw ConfigError("input bits must be in [1, 16], got " + std::to_string(input_bits));
  }
  spec.validate();
  const std::uint32_t n = std::uint32_t{1} << input_bits;
  std::vector<double> grid(n);
  for (std::uint32_t i = 0; i < n; ++i) grid[i] = grid_point(i, input_bits, spec.domain);
  Lut lut{spec, input_bits, std::vector<std::uint32_t>(n)};
  quantize_batch(grid, spec, lut.codes);
  return lut;
}

void write_lut(std::ostream& os, const Lut& lut) {
  os << "lut v1 in_bits=" << lut.input_bits << " out_bits=" << lut.spec.bit_depth.bits()
     << " kind=" << to_string(lut.spec.kind) << " gamma=" << format_double(lut.spec.gamma)
     << " mu=" << format_double(lut.spec.mu) << '\n';
  for (auto c : lut.codes) os << c << '\n';
}

Lut read_lut(std::istream& is, const std::string& where) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(where, 1, "empty LUT file");
  std::istringstream header(line);
  std::string magic;
  std::string version;
  header >> magic >> version;
  if (magic != "lut" || version != "v1") throw ParseError(where, 1, "expected 'lut v1' header");

  Lut lut;
  int out_bits = 0;
  std::string token;
  while (header >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw ParseError(where, 1, "malformed header field '" + token + "'");
    const std::string key = token.substr(0, eq);
    const std::string value = token.substr(eq + 1);
    try {
      if (key == "in_bits") {
        lut.input_bits = static_cast<int>(parse_int(value, key));
      } else if (key == "out_bits") {
        out_bits = static_cast<int>(parse_int(value, key));
      } else if (key == "kind") {
        lut.spec.kind = parse_quant_kind(value);
      } else if (key == "gamma") {
        lut.spec.gamma = parse_double(value, key);
      } else if (key == "mu") {
        lut.spec.mu = parse_double(value, key);
      } else {
        throw ParseError(where, 1, "unknown header field '" + key + "'");
      }
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(where, 1, e.what());
    }
  }
  if (lut.input_bits < 1 || lut.input_bits > 16) throw ParseError(where, 1, "in_bits out of range");
  try {
    lut.spec.bit_depth = BitDepth(out_bits);
  } catch (const Error& e) {
    throw ParseError(where, 1, e.what());
  }
  lut.spec.domain = lut.spec.kind == QuantKind::GammaSigned ? Domain::SignedUnit : Domain::UnitInterval;

  const std::size_t n = std::size_t{1} << lut.input_bits;
  lut.codes.reserve(n);
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (lut.codes.size() == n) throw ParseError(where, line_no, "more entries than 2^in_bits");
    long long code = 0;
    try {
      code = parse_int(line, "LUT entry");
    } catch (const Error& e) {
      throw ParseError(where, line_no, e.what());
    }
    if (code < 0 || code > static_cast<long long>(lut.spec.levels())) {
      throw ParseError(where, line_no, "code " + std::to_string(code) + " exceeds out_bits");
    }
    lut.codes.push_back(static_cast<std::uint32_t>(code));
  }
  if (lut.codes.size() != n) {
    throw ParseError(where, line_no,
                     "expected " + std::to_string(n) + " entries, got " + std::to_string(lut.codes.size()));
  }
  return lut;
}

}  // namespace gquant
