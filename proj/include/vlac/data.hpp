// Synthetic hierarchical-factor images plus a raw on-disk dataset format.
//
// Each synthetic image is a glyph (shape identity, the high-level factor)
// drawn with a stroke thickness (mid-level) and a foreground hue (low-level)
// over a background brightness (low-level). Every factor is sampled
// independently and uniformly, and every factor is returned as a separate
// ground-truth label channel, so the same images admit several valid
// clusterings.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlac/tensor.hpp"

namespace vlac {

struct FactorSpec {
  int height = 16;
  int width = 16;
  int channels = 3;
  int shapes = 4;        // glyph identity: cross, square outline, diagonal bar, disc
  int thicknesses = 1;   // stroke-thickness levels
  int hues = 4;          // foreground hue palette size
  int brightnesses = 1;  // background brightness levels
  double jitter = 1.0;   // sub-pixel translation magnitude, in pixels

  int label_channels() const { return 4; }
  std::vector<int> cardinalities() const { return {shapes, thicknesses, hues, brightnesses}; }
};

// Immutable after construction. Pixels are row-major [n, H, W, C] in [0,1],
// already quantised to the 8-bit grid so disk round-trips are bit-exact.
// Labels are 0-based factor levels, label_channels per record.
struct Dataset {
  int height = 0;
  int width = 0;
  int channels = 0;
  int label_channels = 0;
  std::vector<int> cardinalities;  // per label channel
  std::vector<uint16_t> labels;    // n * label_channels
  std::vector<double> pixels;      // n * H*W*C

  int64_t x_dim() const { return static_cast<int64_t>(height) * width * channels; }
  int64_t n() const { return x_dim() == 0 ? 0 : static_cast<int64_t>(pixels.size()) / x_dim(); }
  uint16_t label(int64_t i, int channel) const { return labels[i * label_channels + channel]; }
  // one image as an Array [H*W*C]
  Array image(int64_t i) const;
};

Dataset synth_generate(const FactorSpec& spec, int64_t n, uint64_t seed);

// Raw format: magic "VLCD", then five little-endian u32 (n, H, W, C,
// label_channels), then per record label_channels u16 labels followed by
// H*W*C u8 pixels. Pixels scale to [0,1] on load. Cardinalities are not
// stored; load infers them as max level + 1 per channel.
void save_raw(const Dataset& ds, const std::string& path);
Dataset load_raw(const std::string& path);

struct Batch {
  Array x;                       // [B, H*W*C]
  std::vector<uint16_t> labels;  // B * label_channels
  std::vector<int64_t> indices;  // rows of the dataset in batch order
};

// Per-epoch Fisher-Yates order, a pure function of (seed, epoch) so any
// step's batch can be reproduced without replaying the stream.
std::vector<int64_t> epoch_order(int64_t n, uint64_t seed, int64_t epoch);

// Batch for a given global step: epoch = step / steps_per_epoch, position =
// step % steps_per_epoch. The final batch of an epoch may be short.
Batch batch_at(const Dataset& ds, int64_t batch_size, uint64_t seed, int64_t step);

int64_t steps_per_epoch(int64_t n, int64_t batch_size);

// Convenience stream over batch_at with an internal step counter.
class BatchStream {
 public:
  BatchStream(const Dataset& ds, int64_t batch_size, uint64_t seed)
      : ds_(&ds), batch_size_(batch_size), seed_(seed) {}
  Batch next() { return batch_at(*ds_, batch_size_, seed_, step_++); }
  void seek(int64_t step) { step_ = step; }
  int64_t step() const { return step_; }

 private:
  const Dataset* ds_;
  int64_t batch_size_;
  uint64_t seed_;
  int64_t step_ = 0;
};

// PPM (P6, maxval 255). pixels: [H,W,3] (or [H,W,1], replicated to grey).
void write_ppm(const std::string& path, const Array& image);

// Tiles equally-shaped [H,W,C] images into a [rows*H, cols*W, C] sheet,
// row-major, padding missing cells with zeros.
Array contact_sheet(const std::vector<Array>& images, int cols);

}  // namespace vlac
