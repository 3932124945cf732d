#include "bdgp/partition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "json.hpp"

#include "bdgp/error.hpp"
#include "bdgp/raster_io.hpp"

namespace bdgp {

using nlohmann::ordered_json;

namespace {

constexpr const char* kMaskMagic = "BDGP-MASKS";
constexpr const char* kPartitionRole = "partition-labels";

std::string slurp_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

MaskSet parse_masks(const std::string& text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("malformed mask file: ") + e.what());
  }
  try {
    if (!doc.is_object() || doc.value("magic", "") != kMaskMagic) throw FormatError("bad mask-set magic");
    if (doc.at("version").get<int>() != 1) throw FormatError("unsupported mask-set version");
    const auto n_rows = doc.at("n_rows").get<std::int64_t>();
    const auto n_cols = doc.at("n_cols").get<std::int64_t>();
    if (n_rows < 1 || n_cols < 1) throw FormatError("mask-set dimensions must be positive");
    MaskSet m;
    m.geom.n_rows = static_cast<std::size_t>(n_rows);
    m.geom.n_cols = static_cast<std::size_t>(n_cols);
    if (doc.contains("pixel_size_m")) m.geom.pixel_size_m = doc["pixel_size_m"].get<double>();
    if (doc.contains("origin")) {
      const auto o = doc["origin"].get<std::vector<double>>();
      if (o.size() != 2) throw FormatError("mask-set origin must have two entries");
      m.geom.origin = {o[0], o[1]};
    }
    if (!(m.geom.pixel_size_m > 0.0)) throw FormatError("pixel_size_m must be positive");
    const auto& masks = doc.at("masks");
    if (!masks.is_array()) throw FormatError("\"masks\" must be an array");
    for (std::size_t k = 0; k < masks.size(); ++k) {
      const auto runs = masks[k].at("rle").get<std::vector<std::uint64_t>>();
      try {
        m.masks.push_back(decode_rle(runs, m.geom.size()));
      } catch (const FormatError& e) {
        throw FormatError("mask " + std::to_string(k) + ": " + e.what());
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed mask file: ") + e.what());
  }
}

std::string format_masks(const MaskSet& m) {
  ordered_json doc;
  doc["magic"] = kMaskMagic;
  doc["version"] = 1;
  doc["n_rows"] = m.geom.n_rows;
  doc["n_cols"] = m.geom.n_cols;
  doc["pixel_size_m"] = m.geom.pixel_size_m;
  doc["origin"] = {m.geom.origin[0], m.geom.origin[1]};
  ordered_json masks = ordered_json::array();
  for (const auto& mask : m.masks) {
    if (mask.size() != m.geom.size()) throw DimensionError("mask size differs from the mask-set geometry");
    masks.push_back({{"rle", encode_rle(mask)}});
  }
  doc["masks"] = std::move(masks);
  return doc.dump() + "\n";
}

MaskSet read_masks(const std::filesystem::path& path) { return parse_masks(slurp_text(path)); }

void write_masks(const MaskSet& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << format_masks(m);
  if (!out) throw IoError("write failure on " + path.string());
}

Partition::Partition(GridGeom geom, std::vector<RegionId> labels) : geom_(geom), labels_(std::move(labels)) {
  geom_.validate();
  if (labels_.size() != geom_.size()) throw DimensionError("label array size differs from geometry");
  n_regions_ = labels_.empty() ? 0 : *std::max_element(labels_.begin(), labels_.end());
  pixels_.assign(static_cast<std::size_t>(n_regions_) + 1, {});
  for (std::size_t i = 0; i < labels_.size(); ++i) pixels_[labels_[i]].push_back(i);
  for (RegionId r = 1; r <= n_regions_; ++r) {
    if (pixels_[r].empty()) throw ArgumentError("region " + std::to_string(r) + " has no pixels");
  }
}

std::span<const std::size_t> Partition::region_pixels(RegionId id) const {
  if (id > n_regions_) throw ArgumentError("unknown region id " + std::to_string(id));
  return pixels_[id];
}

Partition Partition::rebind(const GridGeom& geom) const {
  if (geom.n_rows != geom_.n_rows || geom.n_cols != geom_.n_cols)
    throw DimensionError("cannot rebind a partition to a grid of different dimensions");
  return Partition(geom, labels_);
}

Raster Partition::to_raster() const {
  std::vector<double> v(labels_.begin(), labels_.end());
  return Raster(geom_, std::move(v), std::vector<std::uint8_t>(labels_.size(), 1));
}

Partition Partition::from_raster(const Raster& r) {
  std::vector<RegionId> labels(r.geom().size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = r[i];
    if (!r.is_valid(i) || v < 0 || v != std::floor(v) || v > 4.0e9)
      throw FormatError("pixel " + std::to_string(i) + " does not hold a region label");
    labels[i] = static_cast<RegionId>(v);
  }
  return Partition(r.geom(), std::move(labels));
}

void write_partition(const Partition& p, const std::filesystem::path& path) {
  LayeredRaster lr{p.geom(), kPartitionRole, {p.to_raster()}, ordered_json::object()};
  lr.attrs["n_regions"] = p.region_count();
  write_layered(lr, path);
}

Partition read_partition(const std::filesystem::path& path) {
  LayeredRaster lr = read_layered(path);
  if (lr.role != kPartitionRole || lr.layers.size() != 1)
    throw FormatError(path.string() + " does not hold a partition");
  try {
    return Partition::from_raster(lr.layers.front());
  } catch (const ArgumentError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Partition refine_masks(const MaskSet& m, std::size_t min_area) {
  const std::size_t n = m.geom.size();
  struct Candidate {
    std::size_t input_index;
    std::size_t area;
  };
  std::vector<Candidate> kept;
  for (std::size_t k = 0; k < m.masks.size(); ++k) {
    if (m.masks[k].size() != n) throw DimensionError("mask " + std::to_string(k) + " size differs from geometry");
    const auto area = static_cast<std::size_t>(std::count_if(m.masks[k].begin(), m.masks[k].end(),
                                                             [](std::uint8_t b) { return b != 0; }));
    if (area >= min_area) kept.push_back({k, area});
  }
  // Largest first; equal areas keep input order.
  std::stable_sort(kept.begin(), kept.end(), [](const Candidate& a, const Candidate& b) { return a.area > b.area; });

  // Each visited mask removes its pixels from earlier ones, so a pixel ends up
  // owned by the last visited mask that contains it.
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(n, kNone);
  for (std::size_t order = 0; order < kept.size(); ++order) {
    const auto& mask = m.masks[kept[order].input_index];
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i] != 0) owner[i] = order;
    }
  }
  std::vector<std::size_t> surviving(kept.size(), 0);
  for (std::size_t o : owner) {
    if (o != kNone) ++surviving[o];
  }
  std::vector<RegionId> id_of(kept.size(), kBackground);
  RegionId next = 1;
  for (std::size_t order = 0; order < kept.size(); ++order) {
    if (surviving[order] > 0) id_of[order] = next++;
  }
  std::vector<RegionId> labels(n, kBackground);
  for (std::size_t i = 0; i < n; ++i) {
    if (owner[i] != kNone) labels[i] = id_of[owner[i]];
  }
  return Partition(m.geom, std::move(labels));
}

Neighborhood dilate_region(const Partition& p, RegionId region_id, double radius_px) {
  if (region_id < 1 || region_id > p.region_count())
    throw ArgumentError("unknown region id " + std::to_string(region_id));
  if (!(radius_px >= 0.0) || !std::isfinite(radius_px)) throw ArgumentError("dilation radius must be >= 0");
  const GridGeom& g = p.geom();
  Neighborhood nb;
  nb.region_id = region_id;
  const auto core = p.region_pixels(region_id);
  nb.core_pixels.assign(core.begin(), core.end());

  const double r2 = radius_px * radius_px * (1.0 + 1e-12);
  const auto reach = static_cast<std::ptrdiff_t>(std::floor(radius_px));
  std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>> offsets;
  for (std::ptrdiff_t di = -reach; di <= reach; ++di) {
    for (std::ptrdiff_t dj = -reach; dj <= reach; ++dj) {
      if (static_cast<double>(di * di + dj * dj) <= r2) offsets.emplace_back(di, dj);
    }
  }
  std::vector<std::uint8_t> hit(g.size(), 0);
  const auto rows = static_cast<std::ptrdiff_t>(g.n_rows);
  const auto cols = static_cast<std::ptrdiff_t>(g.n_cols);
  for (std::size_t idx : core) {
    const auto i = static_cast<std::ptrdiff_t>(g.row_of(idx));
    const auto j = static_cast<std::ptrdiff_t>(g.col_of(idx));
    for (auto [di, dj] : offsets) {
      const auto a = i + di;
      const auto b = j + dj;
      if (a >= 0 && a < rows && b >= 0 && b < cols) hit[g.index(static_cast<std::size_t>(a), static_cast<std::size_t>(b))] = 1;
    }
  }
  for (std::size_t i = 0; i < hit.size(); ++i) {
    if (hit[i] != 0) nb.dilated_pixels.push_back(i);
  }
  return nb;
}

std::vector<RegionStats> partition_stats(const Partition& p) {
  const GridGeom& g = p.geom();
  std::vector<RegionStats> out;
  for (RegionId r = 0; r <= p.region_count(); ++r) {
    RegionStats s;
    s.id = r;
    const auto px = p.region_pixels(r);
    s.area = px.size();
    if (!px.empty()) {
      s.row_min = s.col_min = static_cast<std::size_t>(-1);
      for (std::size_t idx : px) {
        s.row_min = std::min(s.row_min, g.row_of(idx));
        s.row_max = std::max(s.row_max, g.row_of(idx));
        s.col_min = std::min(s.col_min, g.col_of(idx));
        s.col_max = std::max(s.col_max, g.col_of(idx));
      }
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace bdgp
