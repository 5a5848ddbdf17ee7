#include "fss/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fss/error.hpp"

namespace fss {

std::string to_string(Task task) { return task == Task::i2s ? "i2s" : "s2i"; }

Task parse_task(const std::string& text) {
  if (text == "i2s") return Task::i2s;
  if (text == "s2i") return Task::s2i;
  throw ConfigError("unknown task '" + text + "' (expected i2s or s2i)");
}

cv::Mat read_image(const std::filesystem::path& path, int channels) {
  cv::Mat raw = cv::imread(path.string(), channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  if (raw.empty()) throw DataError("cannot read image " + path.string());
  if (channels == 3) cv::cvtColor(raw, raw, cv::COLOR_BGR2RGB);
  return raw;
}

void write_image(const std::filesystem::path& path, const cv::Mat& image) {
  cv::Mat out = image;
  if (image.channels() == 3) cv::cvtColor(image, out, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Fixed compression level keeps the bytes reproducible.
  if (!cv::imwrite(path.string(), out, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
    throw Error("cannot write image " + path.string());
  }
}

cv::Mat letterbox(const cv::Mat& image, int size, unsigned char pad, Letterbox* transform) {
  if (image.empty() || size <= 0) throw GeometryError("letterbox: empty image or non-positive size");
  const double scale = std::min(static_cast<double>(size) / image.cols,
                                static_cast<double>(size) / image.rows);
  const int w = std::clamp(static_cast<int>(std::lround(image.cols * scale)), 1, size);
  const int h = std::clamp(static_cast<int>(std::lround(image.rows * scale)), 1, size);
  cv::Mat resized;
  cv::resize(image, resized, cv::Size(w, h), 0, 0, scale < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR);
  cv::Mat canvas(size, size, image.type(), cv::Scalar::all(pad));
  const int ox = (size - w) / 2;
  const int oy = (size - h) / 2;
  resized.copyTo(canvas(cv::Rect(ox, oy, w, h)));
  if (transform != nullptr) *transform = Letterbox{scale, ox, oy, size};
  return canvas;
}

cv::Mat gray_to_rgb(const cv::Mat& gray) {
  if (gray.channels() == 3) return gray.clone();
  cv::Mat rgb;
  cv::cvtColor(gray, rgb, cv::COLOR_GRAY2RGB);
  return rgb;
}

torch::Tensor image_to_tensor(const cv::Mat& image, torch::Dtype dtype) {
  if (image.empty() || image.depth() != CV_8U) throw ShapeError("image_to_tensor expects a non-empty 8-bit image");
  cv::Mat contiguous = image.isContinuous() ? image : image.clone();
  auto t = torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols, contiguous.channels()},
                            torch::kUInt8)
               .permute({2, 0, 1})
               .to(dtype)
               .contiguous();
  return t.div_(127.5).sub_(1.0);
}

cv::Mat tensor_to_image(const torch::Tensor& tensor) {
  auto t = tensor.detach().to(torch::kCPU);
  if (t.dim() == 4) {
    if (t.size(0) != 1) throw ShapeError("tensor_to_image expects a batch of one");
    t = t.squeeze(0);
  }
  if (t.dim() != 3 || (t.size(0) != 1 && t.size(0) != 3)) {
    throw ShapeError("tensor_to_image expects [C,H,W] with C in {1,3}");
  }
  auto bytes = t.to(torch::kFloat64).add(1.0).mul(127.5).round().clamp(0, 255).to(torch::kUInt8);
  bytes = bytes.permute({1, 2, 0}).contiguous();
  const int channels = static_cast<int>(bytes.size(2));
  cv::Mat out(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC(channels));
  std::memcpy(out.data, bytes.data_ptr<uint8_t>(), bytes.numel());
  return out;
}

}  // namespace fss
