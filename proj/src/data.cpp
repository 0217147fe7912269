#include "vlac/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vlac {

Array Dataset::image(int64_t i) const {
  const int64_t d = x_dim();
  Array a = Array::zeros({height, width, channels});
  std::copy(pixels.begin() + i * d, pixels.begin() + (i + 1) * d, a.data.begin());
  return a;
}

namespace {

constexpr double kTwoPi = 6.2831853071795864769;

// Palette component floor keeps every hue strictly brighter than any
// background level, so the glyph support is hue-independent.
double hue_component(int level, int levels, int channel) {
  const double phase = kTwoPi * channel / 3.0;
  const double angle = kTwoPi * level / std::max(1, levels);
  return 0.25 + 0.75 * (0.5 + 0.5 * std::cos(angle + phase));
}

double background_level(int level) { return 0.05 + 0.10 * level; }

double stroke_width(int level) { return 1.6 + 0.8 * level; }

// Glyph membership test in image coordinates (sub-pixel point px,py against
// a glyph centred at cx,cy with half-extent r and stroke t).
bool in_glyph(int shape, double px, double py, double cx, double cy, double r, double t) {
  const double dx = px - cx, dy = py - cy;
  const double ax = std::fabs(dx), ay = std::fabs(dy);
  switch (shape % 4) {
    case 0:  // cross
      return (ax <= t / 2 && ay <= r) || (ay <= t / 2 && ax <= r);
    case 1: {  // square outline
      const double m = std::max(ax, ay);
      return m <= r && m >= r - t;
    }
    case 2:  // diagonal bar
      return ax <= r && ay <= r && std::fabs(dx - dy) <= t * 0.7071067811865476;
    default:  // disc
      return dx * dx + dy * dy <= r * r;
  }
}

// 2x2 supersampled coverage of the glyph over one pixel.
double coverage(int shape, int x, int y, double cx, double cy, double r, double t) {
  static const double off[2] = {0.25, 0.75};
  int hits = 0;
  for (double oy : off)
    for (double ox : off)
      if (in_glyph(shape, x + ox, y + oy, cx, cy, r, t)) hits++;
  return hits / 4.0;
}

double quantize8(double v) {
  const double clamped = std::min(1.0, std::max(0.0, v));
  return std::round(clamped * 255.0) / 255.0;
}

void render(const FactorSpec& spec, int shape, int thickness, int hue, int brightness,
            double jx, double jy, double* out) {
  const double cx = spec.width / 2.0 + jx;
  const double cy = spec.height / 2.0 + jy;
  const double r = 0.35 * std::min(spec.width, spec.height);
  const double t = stroke_width(thickness);
  const double bg = background_level(brightness);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const double cov = coverage(shape, x, y, cx, cy, r, t);
      for (int c = 0; c < spec.channels; ++c) {
        const double fg = hue_component(hue, spec.hues, c);
        out[(y * spec.width + x) * spec.channels + c] = quantize8(bg * (1.0 - cov) + cov * fg);
      }
    }
  }
}

void validate(const FactorSpec& spec) {
  if (spec.height < 8 || spec.width < 8)
    throw std::invalid_argument("factor spec: images must be at least 8x8");
  if (spec.channels < 1) throw std::invalid_argument("factor spec: need at least one channel");
  for (int c : spec.cardinalities())
    if (c < 1) throw std::invalid_argument("factor spec: cardinalities must be positive");
  if (spec.jitter < 0) throw std::invalid_argument("factor spec: jitter must be non-negative");
}

}  // namespace

Dataset synth_generate(const FactorSpec& spec, int64_t n, uint64_t seed) {
  validate(spec);
  if (n < 1) throw std::invalid_argument("synth_generate: n must be at least 1");
  Rng rng(seed);
  Dataset ds;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.channels = spec.channels;
  ds.label_channels = spec.label_channels();
  ds.cardinalities = spec.cardinalities();
  ds.labels.reserve(n * ds.label_channels);
  ds.pixels.resize(n * ds.x_dim());
  for (int64_t i = 0; i < n; ++i) {
    const int shape = static_cast<int>(rng.below(spec.shapes));
    const int thickness = static_cast<int>(rng.below(spec.thicknesses));
    const int hue = static_cast<int>(rng.below(spec.hues));
    const int brightness = static_cast<int>(rng.below(spec.brightnesses));
    const double jx = (2.0 * rng.uniform() - 1.0) * spec.jitter;
    const double jy = (2.0 * rng.uniform() - 1.0) * spec.jitter;
    ds.labels.push_back(static_cast<uint16_t>(shape));
    ds.labels.push_back(static_cast<uint16_t>(thickness));
    ds.labels.push_back(static_cast<uint16_t>(hue));
    ds.labels.push_back(static_cast<uint16_t>(brightness));
    render(spec, shape, thickness, hue, brightness, jx, jy, ds.pixels.data() + i * ds.x_dim());
  }
  return ds;
}

// ---- raw format -------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'V', 'L', 'C', 'D'};

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

[[noreturn]] void malformed(const std::string& path, size_t offset, const std::string& what) {
  throw std::runtime_error("malformed dataset file '" + path + "' at byte " +
                           std::to_string(offset) + ": " + what);
}

}  // namespace

void save_raw(const Dataset& ds, const std::string& path) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, static_cast<uint32_t>(ds.n()));
  put_u32(buf, static_cast<uint32_t>(ds.height));
  put_u32(buf, static_cast<uint32_t>(ds.width));
  put_u32(buf, static_cast<uint32_t>(ds.channels));
  put_u32(buf, static_cast<uint32_t>(ds.label_channels));
  const int64_t d = ds.x_dim();
  for (int64_t i = 0; i < ds.n(); ++i) {
    for (int c = 0; c < ds.label_channels; ++c) {
      const uint16_t v = ds.label(i, c);
      buf.push_back(static_cast<char>(v & 0xff));
      buf.push_back(static_cast<char>((v >> 8) & 0xff));
    }
    for (int64_t j = 0; j < d; ++j)
      buf.push_back(static_cast<char>(
          static_cast<uint8_t>(std::lround(ds.pixels[i * d + j] * 255.0))));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("short write to '" + path + "'");
}

Dataset load_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  size_t off = 0;
  auto need = [&](size_t n, const char* what) {
    if (off + n > buf.size()) malformed(path, off, std::string("truncated ") + what);
  };
  need(4, "magic");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) malformed(path, 0, "bad magic");
  off = 4;
  auto get_u32 = [&](const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[off + i])) << (8 * i);
    off += 4;
    return v;
  };
  Dataset ds;
  const uint32_t n = get_u32("record count");
  ds.height = static_cast<int>(get_u32("height"));
  ds.width = static_cast<int>(get_u32("width"));
  ds.channels = static_cast<int>(get_u32("channel count"));
  ds.label_channels = static_cast<int>(get_u32("label channel count"));
  if (ds.height < 1 || ds.width < 1 || ds.channels < 1 || ds.label_channels < 0)
    malformed(path, 8, "nonsensical header extents");
  const int64_t d = ds.x_dim();
  ds.labels.reserve(static_cast<size_t>(n) * ds.label_channels);
  ds.pixels.reserve(static_cast<size_t>(n) * d);
  for (uint32_t i = 0; i < n; ++i) {
    for (int c = 0; c < ds.label_channels; ++c) {
      need(2, "label");
      const uint16_t v = static_cast<uint16_t>(static_cast<uint8_t>(buf[off])) |
                         static_cast<uint16_t>(static_cast<uint8_t>(buf[off + 1])) << 8;
      ds.labels.push_back(v);
      off += 2;
    }
    need(static_cast<size_t>(d), "pixel block");
    for (int64_t j = 0; j < d; ++j)
      ds.pixels.push_back(static_cast<uint8_t>(buf[off + j]) / 255.0);
    off += static_cast<size_t>(d);
  }
  if (off != buf.size()) malformed(path, off, "trailing bytes after last record");
  ds.cardinalities.assign(ds.label_channels, 1);
  for (uint32_t i = 0; i < n; ++i)
    for (int c = 0; c < ds.label_channels; ++c)
      ds.cardinalities[c] = std::max(ds.cardinalities[c], static_cast<int>(ds.label(i, c)) + 1);
  return ds;
}

// ---- batching ---------------------------------------------------------------

int64_t steps_per_epoch(int64_t n, int64_t batch_size) {
  if (n < 1 || batch_size < 1)
    throw std::invalid_argument("steps_per_epoch: need positive n and batch size");
  return (n + batch_size - 1) / batch_size;
}

std::vector<int64_t> epoch_order(int64_t n, uint64_t seed, int64_t epoch) {
  std::vector<int64_t> order(n);
  for (int64_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(epoch + 1)));
  for (int64_t i = n - 1; i > 0; --i)
    std::swap(order[i], order[rng.below(static_cast<uint64_t>(i + 1))]);
  return order;
}

Batch batch_at(const Dataset& ds, int64_t batch_size, uint64_t seed, int64_t step) {
  const int64_t n = ds.n();
  const int64_t spe = steps_per_epoch(n, batch_size);
  const int64_t epoch = step / spe;
  const int64_t pos = step % spe;
  const auto order = epoch_order(n, seed, epoch);
  const int64_t begin = pos * batch_size;
  const int64_t size = std::min(batch_size, n - begin);
  Batch b;
  b.indices.assign(order.begin() + begin, order.begin() + begin + size);
  const int64_t d = ds.x_dim();
  b.x = Array::zeros({size, d});
  b.labels.reserve(size * ds.label_channels);
  for (int64_t r = 0; r < size; ++r) {
    const int64_t i = b.indices[r];
    std::copy(ds.pixels.begin() + i * d, ds.pixels.begin() + (i + 1) * d,
              b.x.data.begin() + r * d);
    for (int c = 0; c < ds.label_channels; ++c) b.labels.push_back(ds.label(i, c));
  }
  return b;
}

// ---- image export -----------------------------------------------------------

void write_ppm(const std::string& path, const Array& image) {
  if (image.shape.size() != 3 || (image.shape[2] != 3 && image.shape[2] != 1))
    throw std::invalid_argument("write_ppm: image must be [H,W,3] or [H,W,1], got " +
                                shape_str(image.shape));
  const int64_t h = image.shape[0], w = image.shape[1], c = image.shape[2];
  std::string buf = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t ch = 0; ch < 3; ++ch) {
        const double v = image.data[(y * w + x) * c + (c == 3 ? ch : 0)];
        buf.push_back(static_cast<char>(
            static_cast<uint8_t>(std::lround(std::min(1.0, std::max(0.0, v)) * 255.0))));
      }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("short write to '" + path + "'");
}

Array contact_sheet(const std::vector<Array>& images, int cols) {
  if (images.empty()) throw std::invalid_argument("contact_sheet: no images");
  if (cols < 1) throw std::invalid_argument("contact_sheet: cols must be positive");
  const Shape& s = images[0].shape;
  if (s.size() != 3) throw std::invalid_argument("contact_sheet: images must be [H,W,C]");
  for (const Array& im : images)
    if (im.shape != s)
      throw std::invalid_argument("contact_sheet: images must share one shape");
  const int64_t h = s[0], w = s[1], c = s[2];
  const int64_t rows = (static_cast<int64_t>(images.size()) + cols - 1) / cols;
  Array sheet = Array::zeros({rows * h, cols * w, c});
  for (size_t i = 0; i < images.size(); ++i) {
    const int64_t r0 = (static_cast<int64_t>(i) / cols) * h;
    const int64_t c0 = (static_cast<int64_t>(i) % cols) * w;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        for (int64_t ch = 0; ch < c; ++ch)
          sheet.data[((r0 + y) * cols * w + c0 + x) * c + ch] =
              images[i].data[(y * w + x) * c + ch];
  }
  return sheet;
}

}  // namespace vlac
