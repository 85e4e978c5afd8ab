#include "dsurf/image_io.hpp"

#include <cstring>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "dsurf/error.hpp"

namespace dsurf {

void write_png_rgb(const std::filesystem::path& path, int height, int width,
                   std::span<const float> rgb) {
  if (rgb.size() != static_cast<std::size_t>(height) * width * 3) {
    throw DataError("write_png_rgb: size mismatch for " + path.string());
  }
  cv::Mat img(height, width, CV_8UC3);
  for (int r = 0; r < height; ++r) {
    auto* row = img.ptr<cv::Vec3b>(r);
    for (int c = 0; c < width; ++c) {
      const std::size_t i = (static_cast<std::size_t>(r) * width + c) * 3;
      row[c] = cv::Vec3b(to_byte(rgb[i + 2]), to_byte(rgb[i + 1]), to_byte(rgb[i]));  // BGR
    }
  }
  if (!cv::imwrite(path.string(), img)) throw DataError("cannot write " + path.string());
}

void write_png_gray(const std::filesystem::path& path, int height, int width,
                    std::span<const std::uint8_t> gray) {
  if (gray.size() != static_cast<std::size_t>(height) * width) {
    throw DataError("write_png_gray: size mismatch for " + path.string());
  }
  cv::Mat img(height, width, CV_8UC1, const_cast<std::uint8_t*>(gray.data()));
  if (!cv::imwrite(path.string(), img)) throw DataError("cannot write " + path.string());
}

std::vector<float> read_png_rgb(const std::filesystem::path& path, int& height, int& width) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw DataError("cannot read image " + path.string());
  if (img.depth() != CV_8U) throw DataError("expected an 8-bit image: " + path.string());
  height = img.rows;
  width = img.cols;
  std::vector<float> out(static_cast<std::size_t>(height) * width * 3);
  for (int r = 0; r < height; ++r) {
    const auto* row = img.ptr<cv::Vec3b>(r);
    for (int c = 0; c < width; ++c) {
      const std::size_t i = (static_cast<std::size_t>(r) * width + c) * 3;
      out[i] = row[c][2] / 255.f;
      out[i + 1] = row[c][1] / 255.f;
      out[i + 2] = row[c][0] / 255.f;
    }
  }
  return out;
}

std::vector<std::uint8_t> read_png_gray(const std::filesystem::path& path, int& height,
                                        int& width) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (img.empty()) throw DataError("cannot read image " + path.string());
  height = img.rows;
  width = img.cols;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(height) * width);
  for (int r = 0; r < height; ++r) std::memcpy(&out[static_cast<std::size_t>(r) * width], img.ptr(r), width);
  return out;
}

void write_float_map(const std::filesystem::path& path, int height, int width,
                     std::span<const float> values) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw DataError("write_float_map: size mismatch for " + path.string());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::uint32_t h = height, w = width;
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
}

std::vector<float> read_float_map(const std::filesystem::path& path, int& height, int& width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::uint32_t h = 0, w = 0;
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  if (!in || h == 0 || w == 0 || h > 65536 || w > 65536) {
    throw DataError("bad float map header in " + path.string());
  }
  std::vector<float> values(static_cast<std::size_t>(h) * w);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!in) throw DataError("truncated float map " + path.string());
  height = static_cast<int>(h);
  width = static_cast<int>(w);
  return values;
}

}  // namespace dsurf
