#include "datagen/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xdd::datagen {

namespace {
constexpr int kManifestVersion = 1;

void check_color(const Rgb& c) {
  for (float v : c)
    XDD_CHECK_ARG(v >= 0.0f && v <= 1.0f,
                  "color component out of [0,1]: " + std::to_string(v));
}

std::vector<uint8_t> digit_at_resolution(const GrayscaleDigit& d, int res) {
  if (d.size == res) return d.intensity;
  return resize_gray(d.intensity, d.size, d.size, res, res);
}

io::ImageU8 quantize(const Tensor& img01) {
  io::ImageU8 out;
  out.height = img01.dim(0);
  out.width = img01.dim(1);
  out.rgb.resize(img01.numel());
  const float* p = img01.data();
  for (size_t i = 0; i < out.rgb.size(); ++i)
    out.rgb[i] = static_cast<uint8_t>(std::lround(std::clamp(p[i], 0.0f, 1.0f) * 255.0f));
  return out;
}
}  // namespace

Rgb vivid_color(double hue) {
  hue -= std::floor(hue);
  const double h6 = hue * 6.0;
  const int sector = static_cast<int>(h6) % 6;
  const float f = static_cast<float>(h6 - std::floor(h6));
  switch (sector) {
    case 0: return {1.0f, f, 0.0f};
    case 1: return {1.0f - f, 1.0f, 0.0f};
    case 2: return {0.0f, 1.0f, f};
    case 3: return {0.0f, 1.0f - f, 1.0f};
    case 4: return {f, 0.0f, 1.0f};
    default: return {1.0f, 0.0f, 1.0f - f};
  }
}

Tensor colorize_digit(const GrayscaleDigit& digit, const Rgb& color,
                      int resolution) {
  check_color(color);
  XDD_CHECK_ARG(digit.size > 0, "empty digit");
  const std::vector<uint8_t> gray = digit_at_resolution(digit, resolution);
  std::vector<float> v(static_cast<size_t>(resolution) * resolution * 3);
  for (size_t i = 0; i < gray.size(); ++i) {
    const float in = gray[i] / 255.0f;
    v[i * 3 + 0] = in * color[0];
    v[i * 3 + 1] = in * color[1];
    v[i * 3 + 2] = in * color[2];
  }
  return Tensor::from_data({resolution, resolution, 3}, std::move(v));
}

Tensor colorize_background(const GrayscaleDigit& digit, const Rgb& color,
                           int resolution) {
  check_color(color);
  XDD_CHECK_ARG(digit.size > 0, "empty digit");
  const std::vector<uint8_t> gray = digit_at_resolution(digit, resolution);
  std::vector<float> v(static_cast<size_t>(resolution) * resolution * 3);
  for (size_t i = 0; i < gray.size(); ++i) {
    const float in = gray[i] / 255.0f;
    v[i * 3 + 0] = in + (1.0f - in) * color[0];
    v[i * 3 + 1] = in + (1.0f - in) * color[1];
    v[i * 3 + 2] = in + (1.0f - in) * color[2];
  }
  return Tensor::from_data({resolution, resolution, 3}, std::move(v));
}

DatasetSplit build_split(const std::vector<GrayscaleDigit>& base_digits,
                         const std::string& split_name, uint64_t seed,
                         int count, int resolution) {
  XDD_CHECK_ARG(!base_digits.empty(), "build_split: empty base digit set");
  XDD_CHECK_ARG(count >= 0 && static_cast<size_t>(count) <= base_digits.size(),
                "build_split: count exceeds available base digits");
  const uint64_t split_seed = mix_seed(seed, hash_str(split_name));

  DatasetSplit split;
  split.split_name = split_name;
  split.seed = seed;
  split.resolution = resolution;
  split.has_ground_truth = true;
  split.samples.resize(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    // Per-sample generator: evaluation-order independent and worker safe.
    Rng rng(mix_seed(split_seed, 0xc0106 + static_cast<uint64_t>(i)));
    PairedSample& s = split.samples[static_cast<size_t>(i)];
    s.digit = base_digits[static_cast<size_t>(i)];
    s.label = s.digit.label;
    s.digit_color = vivid_color(rng.uniform());
    s.background_color = vivid_color(rng.uniform());
    s.x = quantize(colorize_digit(s.digit, s.digit_color, resolution));
    s.y = quantize(colorize_background(s.digit, s.background_color, resolution));
    s.has_ground_truth = true;
    if (s.digit.size != resolution) {
      s.digit.intensity = digit_at_resolution(s.digit, resolution);
      s.digit.size = resolution;
    }
  }
  return split;
}

DatasetSplit synth_mnist_cdcb(const std::string& split_name, uint64_t seed,
                              int count, int resolution) {
  const uint64_t digit_seed = mix_seed(seed, hash_str(split_name) ^ 0xd161f5);
  return build_split(synth_digits(count, resolution, digit_seed), split_name,
                     seed, count, resolution);
}

void export_split(const DatasetSplit& split, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory: " + dir);

  json labels = json::array();
  json dig_colors = json::array();
  json bg_colors = json::array();
  for (size_t i = 0; i < split.samples.size(); ++i) {
    const PairedSample& s = split.samples[i];
    XDD_CHECK_ARG(s.x.width == split.resolution && s.y.width == split.resolution,
                  "export_split: sample resolution mismatch");
    io::ImageU8 pair;
    pair.height = split.resolution;
    pair.width = 2 * split.resolution;
    pair.rgb.resize(static_cast<size_t>(pair.height) * pair.width * 3);
    for (int y = 0; y < pair.height; ++y) {
      std::copy_n(s.x.rgb.data() + s.x.idx(y, 0), static_cast<size_t>(split.resolution) * 3,
                  pair.rgb.data() + pair.idx(y, 0));
      std::copy_n(s.y.rgb.data() + s.y.idx(y, 0), static_cast<size_t>(split.resolution) * 3,
                  pair.rgb.data() + pair.idx(y, split.resolution));
    }
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.png", i);
    io::write_png((fs::path(dir) / name).string(), pair);

    labels.push_back(s.label);
    dig_colors.push_back({s.digit_color[0], s.digit_color[1], s.digit_color[2]});
    bg_colors.push_back({s.background_color[0], s.background_color[1], s.background_color[2]});
  }

  json manifest = {
      {"format_version", kManifestVersion},
      {"dataset", "mnist-cdcb"},
      {"split_name", split.split_name},
      {"seed", split.seed},
      {"resolution", split.resolution},
      {"count", split.samples.size()},
      {"palette", split.has_ground_truth ? "hsv-vivid" : "unknown"},
      {"labels", labels},
      {"digit_colors", dig_colors},
      {"background_colors", bg_colors},
  };
  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw IoError("cannot write manifest in " + dir);
  mf << manifest.dump(2) << "\n";
}

namespace {

void split_pair_png(const io::ImageU8& pair, int resolution, io::ImageU8& x,
                    io::ImageU8& y, const std::string& path) {
  if (pair.width % 2 != 0)
    throw IoError("side-by-side pair has odd width: " + path);
  const int half = pair.width / 2;
  io::ImageU8 xi, yi;
  xi.width = half; xi.height = pair.height;
  yi.width = half; yi.height = pair.height;
  xi.rgb.resize(static_cast<size_t>(half) * pair.height * 3);
  yi.rgb.resize(xi.rgb.size());
  for (int r = 0; r < pair.height; ++r) {
    std::copy_n(pair.rgb.data() + pair.idx(r, 0), static_cast<size_t>(half) * 3,
                xi.rgb.data() + xi.idx(r, 0));
    std::copy_n(pair.rgb.data() + pair.idx(r, half), static_cast<size_t>(half) * 3,
                yi.rgb.data() + yi.idx(r, 0));
  }
  auto fit = [&](io::ImageU8& im) {
    if (im.width != resolution || im.height != resolution) {
      im.rgb = resize_rgb(im.rgb, im.width, im.height, resolution, resolution);
      im.width = im.height = resolution;
    }
  };
  fit(xi);
  fit(yi);
  x = std::move(xi);
  y = std::move(yi);
}

std::vector<std::string> sorted_pngs(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png")
      names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace

DatasetSplit load_paired_directory(const std::string& dir, int resolution) {
  const fs::path root(dir);
  if (!fs::exists(root) || !fs::is_directory(root))
    throw IoError("dataset directory not found: " + dir);

  DatasetSplit split;
  split.resolution = resolution;
  split.split_name = "loaded";

  // Mirrored-subdirectory layout.
  fs::path sub_a, sub_b;
  if (fs::is_directory(root / "A") && fs::is_directory(root / "B")) {
    sub_a = root / "A";
    sub_b = root / "B";
  } else if (fs::is_directory(root / "X") && fs::is_directory(root / "Y")) {
    sub_a = root / "X";
    sub_b = root / "Y";
  }
  if (!sub_a.empty()) {
    auto names_a = sorted_pngs(sub_a);
    auto names_b = sorted_pngs(sub_b);
    if (names_a.size() != names_b.size())
      throw IoError("mirrored dataset count mismatch between " +
                    sub_a.string() + " and " + sub_b.string());
    for (size_t i = 0; i < names_a.size(); ++i) {
      if (names_a[i] != names_b[i])
        throw IoError("mirrored dataset filename mismatch: " + names_a[i] +
                      " vs " + names_b[i]);
      PairedSample s;
      io::ImageU8 xa = io::read_png((sub_a / names_a[i]).string());
      io::ImageU8 yb = io::read_png((sub_b / names_b[i]).string());
      auto fit = [&](io::ImageU8& im) {
        if (im.width != resolution || im.height != resolution) {
          im.rgb = resize_rgb(im.rgb, im.width, im.height, resolution, resolution);
          im.width = im.height = resolution;
        }
      };
      fit(xa);
      fit(yb);
      s.x = std::move(xa);
      s.y = std::move(yb);
      split.samples.push_back(std::move(s));
    }
    return split;
  }

  // Side-by-side layout, optionally with a manifest.
  json manifest;
  const fs::path mpath = root / "manifest.json";
  if (fs::exists(mpath)) {
    std::ifstream mf(mpath);
    if (!mf) throw IoError("cannot read manifest: " + mpath.string());
    try {
      mf >> manifest;
    } catch (const json::exception& e) {
      throw IoError("malformed manifest " + mpath.string() + ": " + e.what());
    }
  }

  auto names = sorted_pngs(root);
  const bool vivid =
      manifest.is_object() && manifest.value("palette", "") == "hsv-vivid";
  if (manifest.is_object()) {
    const size_t want = manifest.value("count", names.size());
    if (want != names.size())
      throw IoError("manifest count " + std::to_string(want) + " != " +
                    std::to_string(names.size()) + " PNG files in " + dir);
    split.split_name = manifest.value("split_name", "loaded");
    split.seed = manifest.value("seed", 0ull);
  }

  for (size_t i = 0; i < names.size(); ++i) {
    PairedSample s;
    const std::string path = (root / names[i]).string();
    io::ImageU8 pair = io::read_png(path);
    split_pair_png(pair, resolution, s.x, s.y, path);
    if (manifest.is_object()) {
      if (i < manifest["labels"].size()) s.label = manifest["labels"][i];
      auto rd = [&](const char* key, Rgb& dst) {
        if (i < manifest[key].size()) {
          for (int c = 0; c < 3; ++c) dst[static_cast<size_t>(c)] = manifest[key][i][static_cast<size_t>(c)];
        }
      };
      if (manifest.contains("digit_colors")) rd("digit_colors", s.digit_color);
      if (manifest.contains("background_colors")) rd("background_colors", s.background_color);
      if (vivid) {
        // Vivid palette colors have a zero channel, so the digit intensity
        // is exactly the min channel of the MNIST-CB image.
        s.digit.size = resolution;
        s.digit.label = s.label;
        s.digit.intensity.resize(static_cast<size_t>(resolution) * resolution);
        for (size_t p = 0; p < s.digit.intensity.size(); ++p) {
          uint8_t m = std::min({s.y.rgb[p * 3], s.y.rgb[p * 3 + 1], s.y.rgb[p * 3 + 2]});
          s.digit.intensity[p] = m;
        }
        s.has_ground_truth = true;
      }
    }
    split.samples.push_back(std::move(s));
  }
  split.has_ground_truth = vivid && !split.samples.empty();
  return split;
}

Tensor images_to_batch(const std::vector<const io::ImageU8*>& images) {
  XDD_CHECK_ARG(!images.empty(), "images_to_batch: empty batch");
  const int h = images[0]->height, w = images[0]->width;
  std::vector<float> v(images.size() * static_cast<size_t>(h) * w * 3);
  float* dst = v.data();
  for (const io::ImageU8* img : images) {
    XDD_CHECK_ARG(img->height == h && img->width == w,
                  "images_to_batch: inconsistent image sizes");
    for (size_t i = 0; i < img->rgb.size(); ++i)
      dst[i] = img->rgb[i] / 127.5f - 1.0f;
    dst += img->rgb.size();
  }
  return Tensor::from_data({static_cast<int>(images.size()), h, w, 3},
                           std::move(v));
}

Tensor image_to_batch(const io::ImageU8& image) {
  return images_to_batch({&image});
}

io::ImageU8 batch_to_image(const Tensor& batch, int index) {
  XDD_CHECK_ARG(batch.ndim() == 4 && batch.dim(3) == 3,
                "batch_to_image expects [B,H,W,3]");
  XDD_CHECK_ARG(index >= 0 && index < batch.dim(0), "batch index out of range");
  io::ImageU8 out;
  out.height = batch.dim(1);
  out.width = batch.dim(2);
  out.rgb.resize(static_cast<size_t>(out.height) * out.width * 3);
  const float* src = batch.data() + static_cast<size_t>(index) * out.rgb.size();
  for (size_t i = 0; i < out.rgb.size(); ++i) {
    const float v01 = (std::clamp(src[i], -1.0f, 1.0f) + 1.0f) * 0.5f;
    out.rgb[i] = static_cast<uint8_t>(std::lround(v01 * 255.0f));
  }
  return out;
}

std::vector<uint8_t> digit_mask_x(const io::ImageU8& img) {
  std::vector<uint8_t> mask(static_cast<size_t>(img.width) * img.height);
  for (size_t p = 0; p < mask.size(); ++p) {
    uint8_t m = std::max({img.rgb[p * 3], img.rgb[p * 3 + 1], img.rgb[p * 3 + 2]});
    mask[p] = m > 127 ? 1 : 0;
  }
  return mask;
}

std::vector<uint8_t> digit_mask_y(const io::ImageU8& img) {
  std::vector<uint8_t> mask(static_cast<size_t>(img.width) * img.height);
  for (size_t p = 0; p < mask.size(); ++p) {
    uint8_t m = std::min({img.rgb[p * 3], img.rgb[p * 3 + 1], img.rgb[p * 3 + 2]});
    mask[p] = m > 127 ? 1 : 0;
  }
  return mask;
}

double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
  XDD_CHECK_ARG(a.size() == b.size(), "mask_iou: size mismatch");
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] & b[i]);
    uni += (a[i] | b[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace xdd::datagen
