#include "bdgp/raster_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "bdgp/error.hpp"

namespace bdgp {

using nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void append_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char buf[8];
  for (int k = 0; k < 8; ++k) buf[k] = static_cast<char>((bits >> (8 * k)) & 0xFFu);
  out.append(buf, 8);
}

double load_le(const char* p) {
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[k])) << (8 * k);
  return std::bit_cast<double>(bits);
}

ordered_json geom_header(const GridGeom& g) {
  ordered_json h;
  h["magic"] = kRasterMagic;
  h["version"] = kRasterVersion;
  h["n_rows"] = g.n_rows;
  h["n_cols"] = g.n_cols;
  h["pixel_size_m"] = g.pixel_size_m;
  h["origin"] = {g.origin[0], g.origin[1]};
  return h;
}

ordered_json timestamp_json(const Raster& r) {
  return r.timestamp_days() ? ordered_json(*r.timestamp_days()) : ordered_json(nullptr);
}

template <typename T>
T require(const ordered_json& h, const char* key) {
  if (!h.contains(key)) throw FormatError(std::string("raster header lacks \"") + key + "\"");
  try {
    return h.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string("raster header field \"") + key + "\" has the wrong type");
  }
}

GridGeom parse_geom(const ordered_json& h) {
  if (!h.is_object()) throw FormatError("raster header is not a JSON object");
  if (!h.contains("magic") || h["magic"] != kRasterMagic) throw FormatError("bad raster magic");
  if (require<int>(h, "version") != kRasterVersion) throw FormatError("unsupported raster version");
  const auto n_rows = require<std::int64_t>(h, "n_rows");
  const auto n_cols = require<std::int64_t>(h, "n_cols");
  if (n_rows < 1 || n_cols < 1) throw FormatError("raster dimensions must be positive");
  const auto origin = require<std::vector<double>>(h, "origin");
  if (origin.size() != 2) throw FormatError("raster origin must have two entries");
  GridGeom g{static_cast<std::size_t>(n_rows), static_cast<std::size_t>(n_cols),
             require<double>(h, "pixel_size_m"), {origin[0], origin[1]}};
  if (!(g.pixel_size_m > 0.0)) throw FormatError("pixel_size_m must be positive");
  return g;
}

std::optional<double> parse_timestamp(const ordered_json& h) {
  if (!h.contains("timestamp_days") || h["timestamp_days"].is_null()) return std::nullopt;
  if (!h["timestamp_days"].is_number()) throw FormatError("timestamp_days must be a number or null");
  return h["timestamp_days"].get<double>();
}

// Builds a layer from raw payload values. Without an explicit mask, NaN marks
// invalid pixels; with one, valid pixels must be finite and invalid ones NaN.
Raster build_layer(const GridGeom& g, const char* payload, const ordered_json* valid_rle,
                   std::optional<double> t) {
  const std::size_t n = g.size();
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = load_le(payload + 8 * i);

  std::vector<std::uint8_t> valid(n);
  if (valid_rle != nullptr) {
    std::vector<std::uint64_t> runs;
    try {
      runs = valid_rle->get<std::vector<std::uint64_t>>();
    } catch (const nlohmann::json::exception&) {
      throw FormatError("valid_rle must be an array of non-negative integers");
    }
    valid = decode_rle(runs, n);
    for (std::size_t i = 0; i < n; ++i) {
      if (valid[i] != 0 && !std::isfinite(values[i]))
        throw ValidityError("non-finite value at valid pixel " + std::to_string(i), i);
      if (valid[i] == 0 && !std::isnan(values[i]))
        throw FormatError("invalid pixel " + std::to_string(i) + " does not store NaN");
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      if (std::isnan(values[i])) {
        valid[i] = 0;
      } else if (!std::isfinite(values[i])) {
        throw ValidityError("non-finite value at valid pixel " + std::to_string(i), i);
      } else {
        valid[i] = 1;
      }
    }
  }
  return Raster(g, std::move(values), std::move(valid), t);
}

void append_payload(std::string& out, const Raster& r) {
  for (std::size_t i = 0; i < r.geom().size(); ++i) append_le(out, r.is_valid(i) ? r[i] : kNaN);
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on " + path.string());
  return bytes;
}

void spit(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on " + path.string());
}

std::pair<ordered_json, std::size_t> split_header(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw FormatError("raster header line is not terminated");
  ordered_json h;
  try {
    h = ordered_json::parse(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(nl));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("malformed raster header: ") + e.what());
  }
  return {std::move(h), nl + 1};
}

void check_payload(std::size_t have, std::size_t need) {
  if (have != need) {
    throw DimensionError("raster payload has " + std::to_string(have) + " bytes, header implies " +
                         std::to_string(need));
  }
}

std::string encode_layered(const LayeredRaster& lr) {
  ordered_json h = geom_header(lr.geom);
  h["n_layers"] = lr.layers.size();
  h["role"] = lr.role;
  ordered_json layers = ordered_json::array();
  for (const auto& l : lr.layers) {
    if (!compatible(l.geom(), lr.geom)) throw ArgumentError("layer geometry differs from file geometry");
    layers.push_back({{"timestamp_days", timestamp_json(l)}, {"valid_rle", encode_rle(l.valid())}});
  }
  h["layers"] = std::move(layers);
  for (const auto& [k, v] : lr.attrs.items()) {
    if (h.contains(k)) throw ArgumentError("attribute \"" + k + "\" collides with a reserved header field");
    h[k] = v;
  }
  std::string out = h.dump() + "\n";
  out.reserve(out.size() + lr.layers.size() * lr.geom.size() * 8);
  for (const auto& l : lr.layers) append_payload(out, l);
  return out;
}

LayeredRaster decode_layered(const std::string& bytes) {
  auto [h, offset] = split_header(bytes);
  LayeredRaster lr;
  lr.geom = parse_geom(h);
  const auto n_layers = require<std::int64_t>(h, "n_layers");
  if (n_layers < 0) throw FormatError("n_layers must be non-negative");
  lr.role = require<std::string>(h, "role");
  const auto& layers = h.contains("layers") ? h["layers"] : ordered_json();
  if (!layers.is_array() || layers.size() != static_cast<std::size_t>(n_layers))
    throw FormatError("layers array does not match n_layers");
  const std::size_t layer_bytes = lr.geom.size() * 8;
  check_payload(bytes.size() - offset, layer_bytes * static_cast<std::size_t>(n_layers));
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& meta = layers[k];
    if (!meta.is_object()) throw FormatError("layer metadata must be an object");
    const ordered_json* rle = meta.contains("valid_rle") ? &meta["valid_rle"] : nullptr;
    lr.layers.push_back(build_layer(lr.geom, bytes.data() + offset + k * layer_bytes, rle, parse_timestamp(meta)));
  }
  static const char* reserved[] = {"magic", "version", "n_rows", "n_cols", "pixel_size_m",
                                   "origin", "n_layers", "role", "layers"};
  for (const auto& [k, v] : h.items()) {
    if (std::find(std::begin(reserved), std::end(reserved), k) == std::end(reserved)) lr.attrs[k] = v;
  }
  return lr;
}

}  // namespace

std::string encode_raster(const Raster& r) {
  ordered_json h = geom_header(r.geom());
  h["timestamp_days"] = timestamp_json(r);
  h["valid_rle"] = encode_rle(r.valid());
  std::string out = h.dump() + "\n";
  out.reserve(out.size() + r.geom().size() * 8);
  append_payload(out, r);
  return out;
}

Raster decode_raster(const std::string& bytes) {
  auto [h, offset] = split_header(bytes);
  const GridGeom g = parse_geom(h);
  if (h.contains("n_layers")) throw FormatError("file holds a multi-layer raster");
  check_payload(bytes.size() - offset, g.size() * 8);
  const ordered_json* rle = h.contains("valid_rle") ? &h["valid_rle"] : nullptr;
  return build_layer(g, bytes.data() + offset, rle, parse_timestamp(h));
}

void write_raster(const Raster& r, const std::filesystem::path& path) { spit(path, encode_raster(r)); }

Raster read_raster(const std::filesystem::path& path) { return decode_raster(slurp(path)); }

void write_layered(const LayeredRaster& lr, const std::filesystem::path& path) {
  spit(path, encode_layered(lr));
}

LayeredRaster read_layered(const std::filesystem::path& path) { return decode_layered(slurp(path)); }

void write_stack(const RasterStack& stack, const std::filesystem::path& path) {
  write_layered(LayeredRaster{stack.geom(), "stack", stack.layers(), ordered_json::object()}, path);
}

RasterStack read_stack(const std::filesystem::path& path) {
  LayeredRaster lr = read_layered(path);
  if (lr.role != "stack") throw FormatError(path.string() + " holds role \"" + lr.role + "\", expected \"stack\"");
  try {
    return RasterStack(lr.geom, std::move(lr.layers));
  } catch (const ArgumentError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace bdgp
