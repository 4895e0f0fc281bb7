#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tvgan/tensor.hpp"

namespace tvgan {

struct ImageSize {
  int height = 0;
  int width = 0;
  bool operator==(const ImageSize&) const = default;
};

// Decoded 8-bit image before resizing.
struct RawImage {
  ImageSize size;
  int channels = 0;
  std::vector<std::uint8_t> pixels;  // HWC, RGB order for colour
};

// PNG or JPEG (anything OpenCV decodes). `channels` is 1 (luminance) or 3 (RGB).
RawImage decode_image(const std::filesystem::path& path, int channels);

// Bilinear resize to resolution x resolution and rescale to [-1, 1].
ImageTensor to_tensor(const RawImage& raw, int resolution);

ImageTensor read_image(const std::filesystem::path& path, int channels, int resolution);

// Quantizes [-1, 1] to 8 bits, clamping out-of-range values.
std::uint8_t quantize(Scalar v);
std::vector<std::uint8_t> to_u8_hwc(const ImageTensor& image);
ImageTensor from_u8_hwc(const std::vector<std::uint8_t>& pixels, int channels, int height,
                        int width);

// Writes an 8-bit PNG (1 or 3 channels).
void write_png(const std::filesystem::path& path, const ImageTensor& image);

}  // namespace tvgan
