#include "tvgan/imageio.hpp"

#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tvgan/error.hpp"

namespace tvgan {

RawImage decode_image(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) throw InvalidArgument("decode_image: channels must be 1 or 3");
  if (!std::filesystem::exists(path)) throw LoadError("image not found: " + path.string());
  cv::Mat mat = cv::imread(path.string(), channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  if (mat.empty()) throw LoadError("cannot decode image: " + path.string());
  if (mat.depth() != CV_8U) mat.convertTo(mat, CV_8U);
  if (channels == 3) cv::cvtColor(mat, mat, cv::COLOR_BGR2RGB);
  RawImage raw;
  raw.size = {mat.rows, mat.cols};
  raw.channels = channels;
  raw.pixels.assign(mat.data, mat.data + static_cast<std::size_t>(mat.total()) * channels);
  if (!mat.isContinuous()) {
    raw.pixels.clear();
    for (int r = 0; r < mat.rows; ++r) {
      const auto* row = mat.ptr<std::uint8_t>(r);
      raw.pixels.insert(raw.pixels.end(), row, row + static_cast<std::size_t>(mat.cols) * channels);
    }
  }
  return raw;
}

ImageTensor to_tensor(const RawImage& raw, int resolution) {
  cv::Mat mat(raw.size.height, raw.size.width, CV_8UC(raw.channels),
              const_cast<std::uint8_t*>(raw.pixels.data()));
  cv::Mat resized;
  if (raw.size.height == resolution && raw.size.width == resolution) {
    resized = mat;
  } else {
    cv::resize(mat, resized, cv::Size(resolution, resolution), 0, 0, cv::INTER_LINEAR);
  }
  std::vector<std::uint8_t> pixels(resized.data,
                                   resized.data + static_cast<std::size_t>(resized.total()) *
                                                      raw.channels);
  return from_u8_hwc(pixels, raw.channels, resolution, resolution);
}

ImageTensor read_image(const std::filesystem::path& path, int channels, int resolution) {
  return to_tensor(decode_image(path, channels), resolution);
}

std::uint8_t quantize(Scalar v) {
  const Scalar scaled = std::round((v + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

std::vector<std::uint8_t> to_u8_hwc(const ImageTensor& image) {
  std::vector<std::uint8_t> out(image.size());
  const int c = image.channels();
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      for (int k = 0; k < c; ++k)
        out[(static_cast<std::size_t>(y) * image.width() + x) * c + k] = quantize(image.at(k, y, x));
  return out;
}

ImageTensor from_u8_hwc(const std::vector<std::uint8_t>& pixels, int channels, int height,
                        int width) {
  ImageTensor image(channels, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int k = 0; k < channels; ++k)
        image.at(k, y, x) =
            pixels[(static_cast<std::size_t>(y) * width + x) * channels + k] / 127.5 - 1.0;
  return image;
}

void write_png(const std::filesystem::path& path, const ImageTensor& image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw InvalidArgument("write_png: expected 1 or 3 channels, got " + image.shape_string());
  }
  auto pixels = to_u8_hwc(image);
  cv::Mat mat(image.height(), image.width(), CV_8UC(image.channels()), pixels.data());
  cv::Mat out;
  if (image.channels() == 3) {
    cv::cvtColor(mat, out, cv::COLOR_RGB2BGR);
  } else {
    out = mat;
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) throw LoadError("cannot write image: " + path.string());
}

}  // namespace tvgan
