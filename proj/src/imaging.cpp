#include "gquant/imaging.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "gquant/error.hpp"
#include "gquant/io_util.hpp"
#include "gquant/log.hpp"

namespace gquant {

namespace {

double max_code(int bits) { return std::ldexp(1.0, bits) - 1.0; }

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& is, const std::string& where) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw ParseError(where, 0, "truncated PGM header");
  return tok;
}

int bits_from_maxval(long long maxval) {
  for (int b = 1; b <= 16; ++b) {
    if (maxval == (1LL << b) - 1) return b;
  }
  return 0;
}

struct Sidecar {
  int bits = 0;
  std::string pattern;
};

Sidecar parse_sidecar(const std::string& text, const std::string& where) {
  std::istringstream is(text);
  std::string magic, version;
  is >> magic >> version;
  if (magic != "raw" || version != "v1") throw ParseError(where, 1, "expected 'raw v1 bits=<N> pattern=RGGB'");
  Sidecar s;
  std::string field;
  while (is >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ParseError(where, 1, "malformed field '" + field + "'");
    const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
    if (key == "bits") {
      s.bits = static_cast<int>(parse_int(value, where + ": bits"));
    } else if (key == "pattern") {
      s.pattern = value;
    } else {
      throw ParseError(where, 1, "unknown field '" + key + "'");
    }
  }
  if (s.bits == 0 || s.pattern.empty()) throw ParseError(where, 1, "sidecar needs bits and pattern");
  return s;
}

}  // namespace

void RawImage::validate() const {
  if (bit_depth < 1 || bit_depth > 16) throw DataError("raw bit depth must lie in [1, 16], got " + std::to_string(bit_depth));
  if (pattern != "RGGB") throw DataError("unsupported Bayer pattern '" + pattern + "' (only RGGB)");
  if (width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0) {
    throw DataError("raw image dimensions must be even and non-zero, got " + std::to_string(width) + "x" +
                    std::to_string(height));
  }
  if (mosaic.shape() != Shape{height, width}) {
    throw DataError("mosaic shape " + shape_str(mosaic.shape()) + " does not match " + std::to_string(height) + "x" +
                    std::to_string(width));
  }
  const double top = max_code(bit_depth);
  for (std::size_t i = 0; i < mosaic.size(); ++i) {
    const double v = mosaic[i];
    if (!(v >= 0.0 && v <= top) || v != std::floor(v)) {
      throw DataError("mosaic code " + format_double(v) + " at index " + std::to_string(i) + " exceeds " +
                      std::to_string(bit_depth) + "-bit range");
    }
  }
}

std::string sidecar_text(const RawImage& img) {
  return "raw v1 bits=" + std::to_string(img.bit_depth) + " pattern=" + img.pattern + "\n";
}

std::filesystem::path sidecar_path(const std::filesystem::path& pgm) {
  auto p = pgm;
  p += ".meta";
  return p;
}

RawImage read_pgm(std::istream& is, const std::string& where) {
  if (pgm_token(is, where) != "P5") throw ParseError(where, 0, "not a binary PGM (P5)");
  const long long w = parse_int(pgm_token(is, where), where + ": width");
  const long long h = parse_int(pgm_token(is, where), where + ": height");
  const long long maxval = parse_int(pgm_token(is, where), where + ": maxval");
  if (w <= 0 || h <= 0) throw ParseError(where, 0, "PGM dimensions must be positive");
  if (maxval <= 0 || maxval > 65535) throw ParseError(where, 0, "PGM maxval must lie in [1, 65535]");
  RawImage img;
  img.width = static_cast<std::size_t>(w);
  img.height = static_cast<std::size_t>(h);
  img.bit_depth = bits_from_maxval(maxval);
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> buf(img.width * img.height * bytes_per);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size()) throw ParseError(where, 0, "truncated PGM pixel data");
  img.mosaic = Tensor(Shape{img.height, img.width});
  for (std::size_t i = 0; i < img.mosaic.size(); ++i) {
    const unsigned v = bytes_per == 2 ? (unsigned{buf[2 * i]} << 8) | buf[2 * i + 1] : buf[i];
    if (v > maxval) throw ParseError(where, 0, "pixel " + std::to_string(i) + " exceeds maxval");
    img.mosaic[i] = v;
  }
  return img;
}

RawImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  RawImage img = read_pgm(in, path.string());
  const auto meta = sidecar_path(path);
  if (std::filesystem::exists(meta)) {
    const Sidecar s = parse_sidecar(read_file(meta), meta.string());
    img.bit_depth = s.bits;
    img.pattern = s.pattern;
  } else if (img.bit_depth == 0) {
    throw DataError("'" + path.string() + "' has no sidecar and its maxval is not 2^N - 1");
  }
  try {
    img.validate();
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return img;
}

void write_pgm(std::ostream& os, const RawImage& img) {
  img.validate();
  const auto maxval = static_cast<unsigned>(max_code(img.bit_depth));
  os << "P5\n" << img.width << ' ' << img.height << '\n' << maxval << '\n';
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> buf(img.mosaic.size() * bytes_per);
  for (std::size_t i = 0; i < img.mosaic.size(); ++i) {
    const auto v = static_cast<unsigned>(img.mosaic[i]);
    if (bytes_per == 2) {
      buf[2 * i] = static_cast<unsigned char>(v >> 8);
      buf[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
    } else {
      buf[i] = static_cast<unsigned char>(v);
    }
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void write_pgm(const std::filesystem::path& path, const RawImage& img) {
  std::ostringstream os;
  write_pgm(os, img);
  write_file(path, os.str());
  write_file(sidecar_path(path), sidecar_text(img));
}

Tensor simulate_analog(const RawImage& raw) {
  raw.validate();
  if (raw.bit_depth < 10) {
    log_warn("raw source depth of " + std::to_string(raw.bit_depth) +
             " bits is coarse for an analog simulation (10 or more recommended)");
  }
  const double scale = max_code(raw.bit_depth);
  Tensor out(raw.mosaic.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = raw.mosaic[i] / scale;
  return out;
}

Tensor debayer_rggb(const Tensor& mosaic) {
  if (mosaic.rank() != 2) throw ShapeError("debayer expects [height, width], got " + shape_str(mosaic.shape()));
  const std::size_t h = mosaic.dim(0), w = mosaic.dim(1);
  if (h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0) {
    throw DataError("debayer needs even non-zero dimensions, got " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out(Shape{3, oh, ow});
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      const std::size_t top = 2 * y * w + 2 * x, bottom = top + w;
      out[y * ow + x] = mosaic[top];
      out[(oh + y) * ow + x] = 0.5 * (mosaic[top + 1] + mosaic[bottom]);
      out[(2 * oh + y) * ow + x] = mosaic[bottom + 1];
    }
  }
  return out;
}

Tensor image_pipeline(const RawImage& raw, const QuantizerSpec& spec) {
  spec.validate();
  if (spec.domain != Domain::UnitInterval) throw ConfigError("image pipeline needs a unit-interval quantizer");
  const Tensor analog = simulate_analog(raw);
  std::vector<std::uint32_t> codes(analog.size());
  quantize_batch(analog.data(), spec, codes);
  Tensor coded(analog.shape());
  for (std::size_t i = 0; i < codes.size(); ++i) coded[i] = codes[i];
  Tensor planes = debayer_rggb(coded);
  const double scale = 255.0 / static_cast<double>(spec.levels());
  for (double& v : planes.data()) v *= scale;
  return planes;
}

void write_planes(std::ostream& os, const Tensor& planes, double scale) {
  const nlohmann::json header = {{"format", "planes v1"}, {"shape", planes.shape()}, {"scale", scale}, {"dtype", "f64le"}};
  os << header.dump() << '\n';
  std::vector<unsigned char> buf(planes.size() * 8);
  for (std::size_t i = 0; i < planes.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(planes[i]);
    for (int b = 0; b < 8; ++b) buf[8 * i + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

Tensor read_planes(std::istream& is, const std::string& where) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(where, 1, "missing planes header");
  nlohmann::json header;
  Shape shape;
  try {
    header = nlohmann::json::parse(line);
    if (header.at("format") != "planes v1" || header.at("dtype") != "f64le") {
      throw ParseError(where, 1, "expected a 'planes v1' f64le header");
    }
    shape = header.at("shape").get<Shape>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where, 1, std::string("bad planes header: ") + e.what());
  }
  Tensor out(shape);
  std::vector<unsigned char> buf(out.size() * 8);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size()) throw ParseError(where, 0, "truncated planes data");
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{buf[8 * i + b]} << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

}  // namespace gquant
