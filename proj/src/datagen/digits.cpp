#include "datagen/digits.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace xdd::datagen {

namespace {

struct Pt {
  double x, y;
};
using Stroke = std::vector<Pt>;

void arc(Stroke& s, double cx, double cy, double rx, double ry, double a0,
         double a1, int n) {
  for (int i = 0; i <= n; ++i) {
    double a = a0 + (a1 - a0) * i / n;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
}

// Stroke skeletons in a unit box, y pointing down.
std::vector<Stroke> glyph(int label) {
  const double pi = M_PI;
  std::vector<Stroke> g;
  switch (label) {
    case 0: {
      Stroke s;
      arc(s, 0.5, 0.5, 0.26, 0.37, 0, 2 * pi, 28);
      g.push_back(s);
      break;
    }
    case 1: {
      g.push_back({{0.36, 0.28}, {0.54, 0.13}, {0.54, 0.87}});
      g.push_back({{0.38, 0.87}, {0.68, 0.87}});
      break;
    }
    case 2: {
      Stroke s;
      arc(s, 0.5, 0.33, 0.22, 0.2, -pi, -0.15 * pi, 14);
      s.push_back({0.32, 0.86});
      s.push_back({0.74, 0.86});
      g.push_back(s);
      break;
    }
    case 3: {
      Stroke s;
      arc(s, 0.46, 0.31, 0.2, 0.17, -0.85 * pi, 0.4 * pi, 14);
      arc(s, 0.46, 0.67, 0.23, 0.19, -0.4 * pi, 0.85 * pi, 14);
      g.push_back(s);
      break;
    }
    case 4: {
      g.push_back({{0.63, 0.13}, {0.24, 0.62}, {0.8, 0.62}});
      g.push_back({{0.63, 0.13}, {0.63, 0.88}});
      break;
    }
    case 5: {
      Stroke s;
      s.push_back({0.72, 0.14});
      s.push_back({0.34, 0.14});
      s.push_back({0.31, 0.46});
      arc(s, 0.47, 0.65, 0.23, 0.21, -0.45 * pi, 0.8 * pi, 14);
      g.push_back(s);
      break;
    }
    case 6: {
      Stroke s;
      s.push_back({0.66, 0.15});
      s.push_back({0.42, 0.42});
      arc(s, 0.5, 0.66, 0.21, 0.2, -0.95 * pi, 1.05 * pi, 20);
      g.push_back(s);
      break;
    }
    case 7: {
      g.push_back({{0.26, 0.15}, {0.76, 0.15}, {0.42, 0.88}});
      break;
    }
    case 8: {
      Stroke a8, b8;
      arc(a8, 0.5, 0.31, 0.18, 0.17, -pi / 2, 1.5 * pi, 20);
      arc(b8, 0.5, 0.67, 0.22, 0.2, -pi / 2, 1.5 * pi, 20);
      g.push_back(a8);
      g.push_back(b8);
      break;
    }
    case 9: {
      Stroke s;
      arc(s, 0.5, 0.34, 0.2, 0.19, 0, 2 * pi, 20);
      g.push_back(s);
      g.push_back({{0.7, 0.36}, {0.66, 0.64}, {0.56, 0.87}});
      break;
    }
    default:
      throw InvalidArgument("digit label must be 0-9, got " +
                            std::to_string(label));
  }
  return g;
}

double dist_to_segment(double px, double py, const Pt& a, const Pt& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double qx = a.x + t * dx - px, qy = a.y + t * dy - py;
  return std::sqrt(qx * qx + qy * qy);
}

uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated idx file: " + path);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | b[3];
}

}  // namespace

GrayscaleDigit render_digit(int label, int size, uint64_t seed) {
  XDD_CHECK_ARG(size >= 8, "digit raster size too small");
  std::vector<Stroke> strokes = glyph(label);
  Rng rng(mix_seed(seed, static_cast<uint64_t>(label) + 7919));

  // Seeded deformation: rotation, anisotropic scale, shear, translation.
  const double rot = (rng.uniform() - 0.5) * 0.42;
  const double sc = 0.78 + rng.uniform() * 0.3;
  const double aspect = 0.88 + rng.uniform() * 0.24;
  const double shear = (rng.uniform() - 0.5) * 0.45;
  const double tx = (rng.uniform() - 0.5) * 0.1;
  const double ty = (rng.uniform() - 0.5) * 0.1;
  const double thick = 0.055 + rng.uniform() * 0.05;

  const double cr = std::cos(rot), sr = std::sin(rot);
  // Smooth low-frequency wobble along each stroke.
  const double wob_amp = rng.uniform() * 0.025;
  const double wob_freq = 1.0 + rng.uniform() * 2.0;
  const double wob_phase = rng.uniform() * 2 * M_PI;

  for (auto& s : strokes) {
    for (size_t i = 0; i < s.size(); ++i) {
      double u = static_cast<double>(i) / std::max<size_t>(1, s.size() - 1);
      double px = s[i].x - 0.5, py = s[i].y - 0.5;
      px += wob_amp * std::sin(2 * M_PI * wob_freq * u + wob_phase);
      py += wob_amp * std::cos(2 * M_PI * wob_freq * u + 1.7 * wob_phase);
      px += shear * py;
      double rx = cr * px - sr * py;
      double ry = sr * px + cr * py;
      s[i].x = 0.5 + sc * aspect * rx + tx;
      s[i].y = 0.5 + (sc / aspect) * ry + ty;
    }
  }

  GrayscaleDigit d;
  d.size = size;
  d.label = label;
  d.intensity.assign(static_cast<size_t>(size) * size, 0);

  const double margin = 0.1;
  const double span = 1.0 - 2 * margin;
  const double half = thick / 2.0;
  const double aa = 1.2 / size;  // soft edge width in glyph units
  const double reach = half + aa;

  std::vector<float> dist(static_cast<size_t>(size) * size, 1e9f);
  for (const auto& s : strokes) {
    for (size_t i = 0; i + 1 < s.size(); ++i) {
      const Pt &a = s[i], &b = s[i + 1];
      // Pixel bounding box of this segment plus stroke reach.
      auto to_px = [&](double v) { return (margin + span * v) * size - 0.5; };
      int x0 = static_cast<int>(std::floor(to_px(std::min(a.x, b.x) ) - reach * span * size)) - 1;
      int x1 = static_cast<int>(std::ceil(to_px(std::max(a.x, b.x)) + reach * span * size)) + 1;
      int y0 = static_cast<int>(std::floor(to_px(std::min(a.y, b.y)) - reach * span * size)) - 1;
      int y1 = static_cast<int>(std::ceil(to_px(std::max(a.y, b.y)) + reach * span * size)) + 1;
      x0 = std::max(x0, 0); y0 = std::max(y0, 0);
      x1 = std::min(x1, size - 1); y1 = std::min(y1, size - 1);
      for (int py = y0; py <= y1; ++py) {
        const double gy = ((py + 0.5) / size - margin) / span;
        for (int px = x0; px <= x1; ++px) {
          const double gx = ((px + 0.5) / size - margin) / span;
          const double dd = dist_to_segment(gx, gy, a, b);
          float& cell = dist[static_cast<size_t>(py) * size + px];
          cell = std::min(cell, static_cast<float>(dd));
        }
      }
    }
  }
  for (size_t i = 0; i < dist.size(); ++i) {
    const double v = std::clamp((half + aa - dist[i]) / aa, 0.0, 1.0);
    d.intensity[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return d;
}

std::vector<GrayscaleDigit> synth_digits(int count, int size, uint64_t seed) {
  XDD_CHECK_ARG(count >= 0, "negative digit count");
  std::vector<GrayscaleDigit> out;
  out.reserve(static_cast<size_t>(count));
  Rng labels(mix_seed(seed, 0x1abe15));
  for (int i = 0; i < count; ++i) {
    const int label = static_cast<int>(labels.uniform_index(10));
    out.push_back(render_digit(label, size, mix_seed(seed, static_cast<uint64_t>(i))));
  }
  return out;
}

std::vector<GrayscaleDigit> load_idx_digits(const std::string& images_path,
                                            const std::string& labels_path,
                                            int size) {
  std::ifstream im(images_path, std::ios::binary);
  if (!im) throw IoError("cannot open idx images: " + images_path);
  std::ifstream lb(labels_path, std::ios::binary);
  if (!lb) throw IoError("cannot open idx labels: " + labels_path);

  if (read_be32(im, images_path) != 2051)
    throw IoError("bad idx image magic in " + images_path);
  const uint32_t n = read_be32(im, images_path);
  const uint32_t h = read_be32(im, images_path);
  const uint32_t w = read_be32(im, images_path);
  if (read_be32(lb, labels_path) != 2049)
    throw IoError("bad idx label magic in " + labels_path);
  const uint32_t nl = read_be32(lb, labels_path);
  if (n != nl)
    throw IoError("idx image/label count mismatch: " + images_path);

  std::vector<GrayscaleDigit> out(n);
  std::vector<uint8_t> buf(static_cast<size_t>(h) * w);
  for (uint32_t i = 0; i < n; ++i) {
    im.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    char lab = 0;
    lb.read(&lab, 1);
    if (!im || !lb) throw IoError("truncated idx data: " + images_path);
    GrayscaleDigit d;
    d.size = size;
    d.label = lab;
    d.intensity = (static_cast<int>(w) == size && static_cast<int>(h) == size)
                      ? buf
                      : resize_gray(buf, static_cast<int>(w), static_cast<int>(h), size, size);
    out[i] = std::move(d);
  }
  return out;
}

namespace {
template <int C>
std::vector<uint8_t> resize_impl(const std::vector<uint8_t>& src, int sw,
                                 int sh, int dw, int dh) {
  std::vector<uint8_t> dst(static_cast<size_t>(dw) * dh * C);
  for (int y = 0; y < dh; ++y) {
    const double fy = (y + 0.5) * sh / dh - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, sh - 1);
    const int y1 = std::min(y0 + 1, sh - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < dw; ++x) {
      const double fx = (x + 0.5) * sw / dw - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, sw - 1);
      const int x1 = std::min(x0 + 1, sw - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < C; ++c) {
        const double v00 = src[(static_cast<size_t>(y0) * sw + x0) * C + c];
        const double v01 = src[(static_cast<size_t>(y0) * sw + x1) * C + c];
        const double v10 = src[(static_cast<size_t>(y1) * sw + x0) * C + c];
        const double v11 = src[(static_cast<size_t>(y1) * sw + x1) * C + c];
        const double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                         wy * ((1 - wx) * v10 + wx * v11);
        dst[(static_cast<size_t>(y) * dw + x) * C + c] =
            static_cast<uint8_t>(std::lround(v));
      }
    }
  }
  return dst;
}
}  // namespace

std::vector<uint8_t> resize_gray(const std::vector<uint8_t>& src, int sw,
                                 int sh, int dw, int dh) {
  return resize_impl<1>(src, sw, sh, dw, dh);
}

std::vector<uint8_t> resize_rgb(const std::vector<uint8_t>& src, int sw, int sh,
                                int dw, int dh) {
  return resize_impl<3>(src, sw, sh, dw, dh);
}

}  // namespace xdd::datagen
