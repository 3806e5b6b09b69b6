#include "owodlab/proposals.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace owodlab {

void SelectiveSearchConfig::validate() const {
  if (scale <= 0.0 || sigma <= 0.0 || min_size == 0 || min_box_pixels == 0)
    throw std::invalid_argument("selective search config: all fields must be positive");
}

namespace {

// Per-channel separable Gaussian blur with border replication.
std::vector<double> gaussian_smooth(const RasterImage& img, double sigma) {
  const std::size_t w = img.width, h = img.height;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    ksum += kernel[i + radius];
  }
  for (double& k : kernel) k /= ksum;

  std::vector<double> src(w * h * 3), tmp(w * h * 3), dst(w * h * 3);
  for (std::size_t i = 0; i < src.size(); ++i) src[i] = img.pixels[i];

  auto clampi = [](long v, long lo, long hi) { return std::min(std::max(v, lo), hi); };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const long xx = clampi(static_cast<long>(x) + i, 0, static_cast<long>(w) - 1);
          acc += kernel[i + radius] * src[(y * w + xx) * 3 + c];
        }
        tmp[(y * w + x) * 3 + c] = acc;
      }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const long yy = clampi(static_cast<long>(y) + i, 0, static_cast<long>(h) - 1);
          acc += kernel[i + radius] * tmp[(yy * w + x) * 3 + c];
        }
        dst[(y * w + x) * 3 + c] = acc;
      }
  return dst;
}

struct DisjointSet {
  std::vector<std::size_t> parent, size;
  std::vector<double> threshold;  // internal difference + scale / |component|

  DisjointSet(std::size_t n, double scale) : parent(n), size(n, 1), threshold(n, scale) {
    std::iota(parent.begin(), parent.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    if (size[a] < size[b]) std::swap(a, b);
    parent[b] = a;
    size[a] += size[b];
  }
};

struct Edge {
  std::size_t a, b;
  double w;
};

}  // namespace

std::vector<std::size_t> felzenszwalb_segment(const RasterImage& img, double scale, double sigma,
                                              std::size_t min_size) {
  if (img.width == 0 || img.height == 0) throw std::invalid_argument("segment: empty image");
  const std::size_t w = img.width, h = img.height, n = w * h;
  const std::vector<double> sm = gaussian_smooth(img, sigma);

  auto diff = [&](std::size_t p, std::size_t q) {
    const double dr = sm[p * 3] - sm[q * 3];
    const double dg = sm[p * 3 + 1] - sm[q * 3 + 1];
    const double db = sm[p * 3 + 2] - sm[q * 3 + 2];
    return std::sqrt(dr * dr + dg * dg + db * db);
  };

  std::vector<Edge> edges;
  edges.reserve(2 * n);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      if (x + 1 < w) edges.push_back({p, p + 1, diff(p, p + 1)});
      if (y + 1 < h) edges.push_back({p, p + w, diff(p, p + w)});
    }
  // ties keep construction (edge-index) order
  std::stable_sort(edges.begin(), edges.end(),
                   [](const Edge& a, const Edge& b) { return a.w < b.w; });

  DisjointSet ds(n, scale);
  for (const Edge& e : edges) {
    const std::size_t a = ds.find(e.a), b = ds.find(e.b);
    if (a == b) continue;
    if (e.w <= ds.threshold[a] && e.w <= ds.threshold[b]) {
      ds.unite(a, b);
      const std::size_t root = ds.find(a);
      ds.threshold[root] = e.w + scale / static_cast<double>(ds.size[root]);
    }
  }
  // absorb undersized components
  for (const Edge& e : edges) {
    const std::size_t a = ds.find(e.a), b = ds.find(e.b);
    if (a != b && (ds.size[a] < min_size || ds.size[b] < min_size)) ds.unite(a, b);
  }

  std::vector<std::size_t> labels(n);
  std::map<std::size_t, std::size_t> compact;  // root -> id, raster first-seen order
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t root = ds.find(p);
    auto it = compact.find(root);
    if (it == compact.end()) it = compact.emplace(root, compact.size()).first;
    labels[p] = it->second;
  }
  return labels;
}

namespace {

constexpr std::size_t kColorBins = 25;    // per HSV channel
constexpr std::size_t kTextureBins = 8;   // gradient orientations per channel

std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  double hdeg = 0.0;
  if (d > 0.0) {
    if (mx == r)
      hdeg = 60.0 * std::fmod((g - b) / d + 6.0, 6.0);
    else if (mx == g)
      hdeg = 60.0 * ((b - r) / d + 2.0);
    else
      hdeg = 60.0 * ((r - g) / d + 4.0);
  }
  const double s = mx > 0.0 ? d / mx : 0.0;
  return {hdeg / 360.0, s, mx};
}

std::size_t bin_of(double unit_value, std::size_t bins) {
  const auto b = static_cast<std::size_t>(unit_value * static_cast<double>(bins));
  return std::min(b, bins - 1);
}

void l1_normalize(std::vector<double>& hist) {
  double s = std::accumulate(hist.begin(), hist.end(), 0.0);
  if (s <= 0.0) {  // featureless region: fall back to a uniform histogram
    std::fill(hist.begin(), hist.end(), 1.0 / static_cast<double>(hist.size()));
    return;
  }
  for (double& x : hist) x /= s;
}

double histogram_intersection(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::min(a[i], b[i]);
  return s;
}

std::vector<double> merge_histograms(const std::vector<double>& a, std::size_t na,
                                     const std::vector<double>& b, std::size_t nb) {
  std::vector<double> out(a.size());
  const double wa = static_cast<double>(na), wb = static_cast<double>(nb);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (wa * a[i] + wb * b[i]) / (wa + wb);
  return out;
}

double similarity(const Region& a, const Region& b, double image_pixels) {
  const double s_color = histogram_intersection(a.color_hist, b.color_hist);
  const double s_texture = histogram_intersection(a.texture_hist, b.texture_hist);
  const double sa = static_cast<double>(a.pixel_count), sb = static_cast<double>(b.pixel_count);
  const double s_size = 1.0 - (sa + sb) / image_pixels;
  const double bb_w = static_cast<double>(std::max(a.max_x, b.max_x) -
                                          std::min(a.min_x, b.min_x) + 1);
  const double bb_h = static_cast<double>(std::max(a.max_y, b.max_y) -
                                          std::min(a.min_y, b.min_y) + 1);
  const double s_fill = 1.0 - (bb_w * bb_h - sa - sb) / image_pixels;
  return s_color + s_texture + s_size + s_fill;
}

Region merge_regions(const Region& a, const Region& b) {
  Region m;
  m.pixel_count = a.pixel_count + b.pixel_count;
  m.min_x = std::min(a.min_x, b.min_x);
  m.min_y = std::min(a.min_y, b.min_y);
  m.max_x = std::max(a.max_x, b.max_x);
  m.max_y = std::max(a.max_y, b.max_y);
  m.color_hist = merge_histograms(a.color_hist, a.pixel_count, b.color_hist, b.pixel_count);
  m.texture_hist = merge_histograms(a.texture_hist, a.pixel_count, b.texture_hist, b.pixel_count);
  return m;
}

std::vector<Region> initial_regions(const std::vector<std::size_t>& labels,
                                    const RasterImage& img) {
  const std::size_t w = img.width, h = img.height;
  const std::size_t count = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<Region> regions(count);
  for (Region& r : regions) {
    r.min_x = w;
    r.min_y = h;
    r.color_hist.assign(3 * kColorBins, 0.0);
    r.texture_hist.assign(3 * kTextureBins, 0.0);
  }

  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      Region& r = regions[labels[y * w + x]];
      r.pixel_count += 1;
      r.min_x = std::min(r.min_x, x);
      r.min_y = std::min(r.min_y, y);
      r.max_x = std::max(r.max_x, x);
      r.max_y = std::max(r.max_y, y);

      const std::uint8_t* pix = img.at(x, y);
      const auto hsv = rgb_to_hsv(pix[0] / 255.0, pix[1] / 255.0, pix[2] / 255.0);
      for (std::size_t c = 0; c < 3; ++c)
        r.color_hist[c * kColorBins + bin_of(hsv[c], kColorBins)] += 1.0;

      // magnitude-weighted gradient orientations, central differences
      const std::size_t xl = x > 0 ? x - 1 : x, xr = x + 1 < w ? x + 1 : x;
      const std::size_t yu = y > 0 ? y - 1 : y, yd = y + 1 < h ? y + 1 : y;
      for (std::size_t c = 0; c < 3; ++c) {
        const double gx = static_cast<double>(img.at(xr, y)[c]) - img.at(xl, y)[c];
        const double gy = static_cast<double>(img.at(x, yd)[c]) - img.at(x, yu)[c];
        const double mag = std::sqrt(gx * gx + gy * gy);
        if (mag <= 0.0) continue;
        const double angle = std::atan2(gy, gx);  // [-pi, pi]
        const double unit = (angle + 3.14159265358979323846) / (2.0 * 3.14159265358979323846);
        r.texture_hist[c * kTextureBins + bin_of(std::min(unit, 1.0), kTextureBins)] += mag;
      }
    }

  for (Region& r : regions) {
    l1_normalize(r.color_hist);
    l1_normalize(r.texture_hist);
  }
  return regions;
}

}  // namespace

std::vector<BoundingBox> hierarchical_group(const std::vector<std::size_t>& label_map,
                                            const RasterImage& img,
                                            std::size_t min_box_pixels) {
  const std::size_t w = img.width, h = img.height;
  if (label_map.size() != w * h) throw std::invalid_argument("group: label map size mismatch");
  const double image_pixels = static_cast<double>(w * h);

  std::vector<Region> regions = initial_regions(label_map, img);

  using Pair = std::pair<std::size_t, std::size_t>;
  std::map<Pair, double> sims;  // adjacency with similarity; ordered for determinism
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t a = label_map[y * w + x];
      if (x + 1 < w) {
        const std::size_t b = label_map[y * w + x + 1];
        if (a != b) sims[{std::min(a, b), std::max(a, b)}] = 0.0;
      }
      if (y + 1 < h) {
        const std::size_t b = label_map[(y + 1) * w + x];
        if (a != b) sims[{std::min(a, b), std::max(a, b)}] = 0.0;
      }
    }
  for (auto& [key, s] : sims) s = similarity(regions[key.first], regions[key.second], image_pixels);

  while (!sims.empty()) {
    // highest similarity; ties resolved by the map's pair ordering
    auto best = sims.begin();
    for (auto it = std::next(sims.begin()); it != sims.end(); ++it)
      if (it->second > best->second) best = it;
    const auto [ra, rb] = best->first;

    const std::size_t rm = regions.size();
    regions.push_back(merge_regions(regions[ra], regions[rb]));

    std::set<std::size_t> neighbors;
    for (auto it = sims.begin(); it != sims.end();) {
      const auto [p, q] = it->first;
      if (p == ra || p == rb || q == ra || q == rb) {
        const std::size_t other = (p == ra || p == rb) ? q : p;
        if (other != ra && other != rb) neighbors.insert(other);
        it = sims.erase(it);
      } else {
        ++it;
      }
    }
    for (std::size_t nb : neighbors)
      sims[{std::min(nb, rm), std::max(nb, rm)}] = similarity(regions[nb], regions[rm], image_pixels);
  }

  std::vector<BoundingBox> boxes;
  std::set<std::array<std::size_t, 4>> seen;
  for (const Region& r : regions) {
    if (r.pixel_count < min_box_pixels) continue;
    if (!seen.insert({r.min_x, r.min_y, r.max_x, r.max_y}).second) continue;
    boxes.push_back(BoundingBox::from_corners(
        static_cast<double>(r.min_x), static_cast<double>(r.min_y),
        static_cast<double>(r.max_x + 1), static_cast<double>(r.max_y + 1)));
  }
  return boxes;
}

std::vector<BoundingBox> selective_search(const RasterImage& img,
                                          const SelectiveSearchConfig& cfg) {
  cfg.validate();
  const auto labels = felzenszwalb_segment(img, cfg.scale, cfg.sigma, cfg.min_size);
  const auto pixel_boxes = hierarchical_group(labels, img, cfg.min_box_pixels);
  std::vector<BoundingBox> out;
  out.reserve(pixel_boxes.size());
  for (const BoundingBox& b : pixel_boxes)
    out.push_back(BoundingBox::from_corners(b.x1() / static_cast<double>(img.width),
                                            b.y1() / static_cast<double>(img.height),
                                            b.x2() / static_cast<double>(img.width),
                                            b.y2() / static_cast<double>(img.height)));
  return out;
}

void write_proposals(std::ostream& out, const std::vector<ProposalRecord>& records) {
  for (const ProposalRecord& rec : records) {
    nlohmann::json j;
    j["image_id"] = rec.image_id;
    auto& arr = j["boxes"] = nlohmann::json::array();
    for (const BoundingBox& b : rec.boxes) arr.push_back({b.x1(), b.y1(), b.x2(), b.y2()});
    out << j.dump() << '\n';
  }
}

std::vector<ProposalRecord> read_proposals(std::istream& in) {
  std::vector<ProposalRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    ProposalRecord rec;
    rec.image_id = j.at("image_id").get<std::string>();
    for (const auto& b : j.at("boxes"))
      rec.boxes.push_back(BoundingBox::from_corners(b.at(0).get<double>(), b.at(1).get<double>(),
                                                    b.at(2).get<double>(), b.at(3).get<double>()));
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace owodlab
