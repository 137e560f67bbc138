#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "core/tensor.hpp"
#include "datagen/digits.hpp"
#include "io/png_io.hpp"

namespace xdd::datagen {

using Rgb = std::array<float, 3>;

// Fully saturated HSV color for a hue in [0,1); every such color has at
// least one zero channel, which keeps digit masks exactly recoverable from
// MNIST-CB images.
Rgb vivid_color(double hue);

// Domain X (MNIST-CD): pixel = intensity * color, black background kept.
// Output is [H,W,3] float in [0,1] at `resolution`.
Tensor colorize_digit(const GrayscaleDigit& digit, const Rgb& color,
                      int resolution);

// Domain Y (MNIST-CB): pixel = intensity * white + (1-intensity) * color.
Tensor colorize_background(const GrayscaleDigit& digit, const Rgb& color,
                           int resolution);

// One aligned (x in MNIST-CD, y in MNIST-CB) pair. Images are stored as
// 8-bit rasters; batch assembly maps them into the model's [-1,1] range.
struct PairedSample {
  io::ImageU8 x, y;
  int label = -1;  // evaluation only
  Rgb digit_color{0, 0, 0};
  Rgb background_color{0, 0, 0};
  GrayscaleDigit digit;          // empty when ground truth is unavailable
  bool has_ground_truth = false;
};

struct DatasetSplit {
  std::vector<PairedSample> samples;
  std::string split_name;  // "train" or "test"
  uint64_t seed = 0;
  int resolution = 0;
  bool has_ground_truth = false;

  size_t size() const { return samples.size(); }
};

// Colorizes `count` base digits into paired samples. Color draws come from
// a per-sample generator derived from (seed, split_name, index), so the
// result is independent of evaluation order and identical across runs.
DatasetSplit build_split(const std::vector<GrayscaleDigit>& base_digits,
                         const std::string& split_name, uint64_t seed,
                         int count, int resolution);

// Convenience: procedural digits + build_split in one call (the built-in
// "mnist-cdcb" dataset). Digit shapes derive from the same (seed, split) pair.
DatasetSplit synth_mnist_cdcb(const std::string& split_name, uint64_t seed,
                              int count, int resolution);

// On-disk format: one side-by-side PNG per pair (X left, Y right), zero
// padded filenames, plus manifest.json with seed/palette/counts/labels.
void export_split(const DatasetSplit& split, const std::string& dir);

// Loads side-by-side pairs (or mirrored A/ B/ subdirectories with identical
// filenames) in stable filename order. When the manifest marks the vivid
// palette, labels/colors/digits are restored so evaluation ground truth
// survives a round trip.
DatasetSplit load_paired_directory(const std::string& dir, int resolution);

// ---- batch assembly ----
// u8 [0,255] -> float [-1,1]
Tensor images_to_batch(const std::vector<const io::ImageU8*>& images);
Tensor image_to_batch(const io::ImageU8& image);
io::ImageU8 batch_to_image(const Tensor& batch, int index);  // clamps

// Digit-shape mask at threshold 0.5 of the recovered intensity.
// Domain X uses the max channel (colored digit on black), domain Y the min
// channel (white digit on colored background).
std::vector<uint8_t> digit_mask_x(const io::ImageU8& img);
std::vector<uint8_t> digit_mask_y(const io::ImageU8& img);
double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);

}  // namespace xdd::datagen
