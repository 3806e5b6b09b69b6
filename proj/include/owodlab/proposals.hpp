#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "owodlab/geometry.hpp"
#include "owodlab/image.hpp"

namespace owodlab {

struct SelectiveSearchConfig {
  double scale = 500.0;
  double sigma = 0.9;
  std::size_t min_size = 200;
  std::size_t min_box_pixels = 2000;
  void validate() const;
};

// Per-region features used by the grouping stage. Histograms are
// L1-normalized (uniform when a region has no signal, e.g. zero gradients).
struct Region {
  std::size_t pixel_count = 0;
  std::size_t min_x = 0, min_y = 0, max_x = 0, max_y = 0;  // inclusive, pixel units
  std::vector<double> color_hist;    // HSV, 25 bins per channel
  std::vector<double> texture_hist;  // 8 orientation bins per channel
};

// Graph-based over-segmentation (Gaussian smoothing is the caller's job).
// Returns a per-pixel region id in [0, region count); ids are compact and
// assigned in raster order of each region's first pixel.
std::vector<std::size_t> felzenszwalb_segment(const RasterImage& img, double scale,
                                              double sigma, std::size_t min_size);

// Bottom-up grouping of adjacent regions by color/texture/size/fill
// similarity (equal weights). Emits the box of every region ever formed,
// deduplicated, skipping regions smaller than min_box_pixels.
std::vector<BoundingBox> hierarchical_group(const std::vector<std::size_t>& label_map,
                                            const RasterImage& img,
                                            std::size_t min_box_pixels);

// Full pipeline; boxes come back in normalized image coordinates.
std::vector<BoundingBox> selective_search(const RasterImage& img,
                                          const SelectiveSearchConfig& cfg = {});

struct ProposalRecord {
  std::string image_id;
  std::vector<BoundingBox> boxes;  // normalized corner boxes on disk
};

// JSON-lines: one {"image_id", "boxes": [[x1,y1,x2,y2], ...]} object per line.
void write_proposals(std::ostream& out, const std::vector<ProposalRecord>& records);
std::vector<ProposalRecord> read_proposals(std::istream& in);

}  // namespace owodlab
