#pragma once

// Straight-through quantization.
//
// The forward value is the discrete dequantize(quantize(x)). The backward pass
// differentiates a continuous surrogate instead: the transfer curve followed by
// the inverse of the code scaling, i.e. the quantizer with the floor/round step
// replaced by the identity. For the signed power law that surrogate is exactly
// g(x) = sign(x - mu) * (|x - mu| + eps)^gamma, because dequantization inverts
// the affine map (g + 1) / 2 * (2^bits - 1); the unsigned power law reduces to
// x^gamma in the same way.

#include <optional>

#include "gquant/autograd.hpp"
#include "gquant/quant.hpp"
#include "gquant/tensor.hpp"

namespace gquant {

struct SurrogatePartials {
  double value;    // continuous surrogate in the dequantized domain
  double d_x;      // zero outside the input domain (clamping)
  double d_gamma;  // zero for kinds without gamma
  double d_mu;     // zero for kinds without mu
};

/// Partial derivatives of the surrogate at x. sign(0) = 0, and the unsigned
/// gamma partials at x = 0 are taken as their limits (0 for d_gamma).
SurrogatePartials surrogate_partials(double x, const QuantizerSpec& spec) noexcept;

/// Elementwise dequantize(quantize(x)).
Tensor ste_forward(const Tensor& x, const QuantizerSpec& spec);

struct GammaMuGrad {
  double gamma = 0.0;
  double mu = 0.0;
};

/// Accumulated surrogate gradients of sum(upstream * ste_forward(x)) with
/// respect to gamma and mu. Throws ConfigError for Linear and Log kinds.
GammaMuGrad grad_gamma_mu(const Tensor& x, const QuantizerSpec& spec, const Tensor& upstream);

namespace ops {

/// Quantizer with fixed parameters; gradients reach x only.
Var quantize_ste(Var x, const QuantizerSpec& spec);

/// Quantizer whose gamma (and mu, for the signed kind) are tape values of
/// shape [units]. units == 1 shares them across the input; otherwise x must be
/// [batch, units, len] and unit u applies to x[:, u, :]. The values of `spec`
/// other than gamma and mu (kind, eps, bit depth, domain) are used as given.
Var quantize_ste(Var x, const QuantizerSpec& spec, Var gamma, std::optional<Var> mu);

}  // namespace ops

}  // namespace gquant
