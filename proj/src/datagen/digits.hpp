#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xdd::datagen {

// Square grayscale digit raster; intensities 0..255 map to [0,1].
// The label is carried for evaluation only and never enters training.
struct GrayscaleDigit {
  int size = 0;
  std::vector<uint8_t> intensity;  // size*size
  int label = -1;

  float at(int y, int x) const {
    return intensity[static_cast<size_t>(y) * size + x] / 255.0f;
  }
};

// Renders one handwritten-style digit: a stroke skeleton per class, warped by
// a seeded affine transform plus smooth per-point jitter, rasterized with a
// soft-edged stroke. Same (label, size, seed) always yields the same raster.
GrayscaleDigit render_digit(int label, int size, uint64_t seed);

// Deterministic stream of digits with uniformly drawn labels.
std::vector<GrayscaleDigit> synth_digits(int count, int size, uint64_t seed);

// Reads MNIST-format idx files (ubyte images + labels), resizing to `size`.
std::vector<GrayscaleDigit> load_idx_digits(const std::string& images_path,
                                            const std::string& labels_path,
                                            int size);

// Bilinear resampling helpers shared with the dataset loaders.
std::vector<uint8_t> resize_gray(const std::vector<uint8_t>& src, int sw,
                                 int sh, int dw, int dh);
std::vector<uint8_t> resize_rgb(const std::vector<uint8_t>& src, int sw, int sh,
                                int dw, int dh);

}  // namespace xdd::datagen
