#pragma once

// Bayer raw front end: PGM mosaics, analog simulation, RGGB debayering and
// the quantize-then-debayer pipeline.

#include <filesystem>
#include <iosfwd>
#include <string>

#include "gquant/quant.hpp"
#include "gquant/tensor.hpp"

namespace gquant {

/// RGGB mosaic of integer codes.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  int bit_depth = 12;
  Tensor mosaic;  // [height, width], integer codes in [0, 2^bit_depth - 1]
  std::string pattern = "RGGB";

  /// Throws DataError on odd dimensions, bad depth or out-of-range codes.
  void validate() const;
};

/// Binary P5 PGM. Samples wider than 8 bits are stored big-endian as the
/// format requires. The bit depth comes from `<file>.meta`
/// (`raw v1 bits=<N> pattern=RGGB`) or, without a sidecar, from a maxval of
/// the form 2^N - 1.
RawImage read_pgm(const std::filesystem::path& path);
RawImage read_pgm(std::istream& is, const std::string& where);
/// Writes the image with maxval 2^bit_depth - 1 plus its sidecar.
void write_pgm(const std::filesystem::path& path, const RawImage& img);
void write_pgm(std::ostream& os, const RawImage& img);

std::string sidecar_text(const RawImage& img);
std::filesystem::path sidecar_path(const std::filesystem::path& pgm);

/// code / (2^N - 1). Warns when N < 10, since the source is then too coarse
/// to stand in for an analog signal.
Tensor simulate_analog(const RawImage& raw);

/// [H, W] mosaic to [3, H/2, W/2]: R is the top-left sample, G the mean of
/// the two greens, B the bottom-right sample.
Tensor debayer_rggb(const Tensor& mosaic);

/// simulate_analog, quantize each mosaic sample with `spec` (unit interval
/// domain), debayer the codes, scale by 255 / (2^n - 1).
Tensor image_pipeline(const RawImage& raw, const QuantizerSpec& spec);

/// One JSON header line ({"format":"planes v1","shape":[...],"scale":...})
/// followed by the values as little-endian float64.
void write_planes(std::ostream& os, const Tensor& planes, double scale = 255.0);
Tensor read_planes(std::istream& is, const std::string& where);

}  // namespace gquant
