#include "gquant/ste.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "gquant/error.hpp"
#include "gquant/kernels.hpp"

namespace gquant {
namespace {

double sign(double v) noexcept { return static_cast<double>((v > 0.0) - (v < 0.0)); }

// d/dx of a^p at a = 0 is only finite for p >= 1.
double power_slope(double a, double p) noexcept {
  if (a > 0.0) return p * std::pow(a, p - 1.0);
  return p == 1.0 ? 1.0 : 0.0;
}

void encode_and_decode(std::vector<double>& values, const QuantizerSpec& spec, std::span<double> out) {
  const auto& k = kernels::active();
  std::vector<std::uint32_t> codes(values.size());
  const auto encode = rounds_to_nearest(spec) ? k.encode_round : k.encode_floor;
  encode(values.data(), codes.data(), values.size(), spec.levels());
  const auto decode = spec.domain == Domain::UnitInterval ? k.decode_unit : k.decode_signed;
  decode(codes.data(), out.data(), codes.size(), spec.levels());
}

void check_finite(const Tensor& x) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw DomainError("quantizer input is not finite");
  }
}

}  // namespace

SurrogatePartials surrogate_partials(double x, const QuantizerSpec& spec) noexcept {
  const double lo = spec.domain == Domain::UnitInterval ? 0.0 : -1.0;
  const bool inside = x >= lo && x <= 1.0;
  const double xc = x < lo ? lo : (x > 1.0 ? 1.0 : x);
  const double pass = inside ? 1.0 : 0.0;

  switch (spec.kind) {
    case QuantKind::Linear:
      return {xc, pass, 0.0, 0.0};
    case QuantKind::Log: {
      const LogRange r = LogRange::over(spec.domain, spec.eps_log);
      const double span = r.max - r.min;
      return {(std::log(xc + spec.eps_log) - r.min) / span, pass / ((xc + spec.eps_log) * span), 0.0, 0.0};
    }
    case QuantKind::GammaUnsigned: {
      const double p = std::pow(xc, spec.gamma);
      const double d_gamma = xc > 0.0 ? p * std::log(xc) : 0.0;
      return {p, pass * power_slope(xc, spec.gamma), d_gamma, 0.0};
    }
    case QuantKind::GammaSigned: {
      const double d = xc - spec.mu;
      const double a = std::abs(d) + spec.eps_stab;
      const double p = std::pow(a, spec.gamma);
      const double s = sign(d);
      const double slope = power_slope(a, spec.gamma);
      const double d_gamma = a > 0.0 ? s * p * std::log(a) : 0.0;
      return {s * p, pass * slope, d_gamma, -slope};
    }
  }
  return {0.0, 0.0, 0.0, 0.0};
}

Tensor ste_forward(const Tensor& x, const QuantizerSpec& spec) {
  spec.validate();
  check_finite(x);
  std::vector<double> values(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) values[i] = transfer(x[i], spec);
  Tensor out(x.shape());
  encode_and_decode(values, spec, out.data());
  return out;
}

GammaMuGrad grad_gamma_mu(const Tensor& x, const QuantizerSpec& spec, const Tensor& upstream) {
  if (!spec.has_gamma()) {
    throw ConfigError("quantizer kind '" + std::string(to_string(spec.kind)) + "' has no learnable parameters");
  }
  spec.validate();
  if (upstream.shape() != x.shape()) {
    throw ShapeError("grad_gamma_mu: upstream " + shape_str(upstream.shape()) + " vs input " +
                     shape_str(x.shape()));
  }
  GammaMuGrad g;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto p = surrogate_partials(x[i], spec);
    g.gamma += upstream[i] * p.d_gamma;
    g.mu += upstream[i] * p.d_mu;
  }
  return g;
}

namespace ops {

Var quantize_ste(Var x, const QuantizerSpec& spec) {
  Tensor out = ste_forward(x.value(), spec);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, spec](Tape& t, std::size_t self) {
    const auto go = t.grad(self);
    const auto& xv = t.value(ix);
    auto gx = t.grad(ix);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * surrogate_partials(xv[i], spec).d_x;
  });
}

Var quantize_ste(Var x, const QuantizerSpec& spec, Var gamma, std::optional<Var> mu) {
  if (!spec.has_gamma()) {
    throw ConfigError("quantizer kind '" + std::string(to_string(spec.kind)) + "' has no learnable parameters");
  }
  if (spec.has_mu() != mu.has_value()) {
    throw ConfigError(spec.has_mu() ? "signed gamma quantizer needs a mu parameter"
                                    : "unsigned gamma quantizer takes no mu parameter");
  }
  const Shape& sx = x.shape();
  const std::size_t units = gamma.value().size();
  if (gamma.shape().size() != 1 || (mu && mu->shape() != gamma.shape())) {
    throw ShapeError("quantizer parameters must be one-dimensional and equally shaped");
  }
  std::size_t inner = x.value().size();
  if (units != 1) {
    if (sx.size() != 3 || sx[1] != units) {
      throw ShapeError("per-unit quantizer parameters " + shape_str(gamma.shape()) + " do not match input " +
                       shape_str(sx));
    }
    inner = sx[2];
  }
  check_finite(x.value());

  std::vector<QuantizerSpec> unit_specs(units, spec);
  for (std::size_t u = 0; u < units; ++u) {
    unit_specs[u].gamma = gamma.value()[u];
    if (mu) unit_specs[u].mu = mu->value()[u];
    unit_specs[u].validate();
  }
  const auto unit_of = [inner, units](std::size_t i) { return units == 1 ? 0 : (i / inner) % units; };

  const auto& xv = x.value();
  std::vector<double> values(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) values[i] = transfer(xv[i], unit_specs[unit_of(i)]);
  Tensor out(sx);
  encode_and_decode(values, spec, out.data());

  const std::size_t ix = x.id();
  const std::size_t ig = gamma.id();
  const std::size_t im = mu ? mu->id() : 0;
  const bool has_mu = mu.has_value();
  Tape& tape = x.tape();
  auto backward = [ix, ig, im, has_mu, unit_specs = std::move(unit_specs), unit_of](Tape& t, std::size_t self) {
    const auto go = t.grad(self);
    const auto& xs = t.value(ix);
    const bool gx = t.needs_grad(ix);
    const bool gg = t.needs_grad(ig);
    const bool gm = has_mu && t.needs_grad(im);
    for (std::size_t i = 0; i < go.size(); ++i) {
      const std::size_t u = unit_of(i);
      const auto p = surrogate_partials(xs[i], unit_specs[u]);
      if (gx) t.grad(ix)[i] += go[i] * p.d_x;
      if (gg) t.grad(ig)[u] += go[i] * p.d_gamma;
      if (gm) t.grad(im)[u] += go[i] * p.d_mu;
    }
  };
  return has_mu ? tape.record(std::move(out), {x, gamma, *mu}, std::move(backward))
                : tape.record(std::move(out), {x, gamma}, std::move(backward));
}

}  // namespace ops
}  // namespace gquant
