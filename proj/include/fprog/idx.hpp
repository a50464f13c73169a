#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fprog/tensor.hpp"

namespace fprog {

// A labeled ubyte image set in the classic IDX container (big-endian dims,
// one byte per pixel / label).
struct DigitDataset {
    std::int64_t count = 0;
    int rows = 0, cols = 0;
    std::vector<std::uint8_t> images; // count * rows * cols, row-major
    std::vector<std::uint8_t> labels; // one class id (0..9) per image
};

void write_idx_images(const std::string& path, std::int64_t count, int rows, int cols,
                      const std::vector<std::uint8_t>& pixels);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

// Reads an images/labels pair, checking magic numbers, dimension headers and
// that the two files agree on the sample count.
DigitDataset load_digit_dataset(const std::string& images_path, const std::string& labels_path);

// Synthetic digits: seven-segment style glyphs drawn into a 20x20 box, placed
// with +-2 pixel jitter on the canvas, with per-image brightness variation
// and additive background noise.  Labels cycle 0..9 so classes stay balanced.
// Deterministic for a given seed.
DigitDataset synth_digits(std::int64_t count, int rows, int cols, std::uint64_t seed);

// Sample i as a (h, w, 1) tensor scaled to [0, 1], center-cropped.
Tensor sample_tensor(const DigitDataset& ds, std::int64_t i, int h, int w);

} // namespace fprog
