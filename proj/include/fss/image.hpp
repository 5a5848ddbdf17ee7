#pragma once

#include <filesystem>
#include <string>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace fss {

/// Translation direction.
enum class Task { i2s, s2i };

std::string to_string(Task task);
Task parse_task(const std::string& text);

/// Channels of the input and output domain for a task.
inline int input_channels(Task task) { return task == Task::i2s ? 3 : 1; }
inline int output_channels(Task task) { return task == Task::i2s ? 1 : 3; }

/// Scale + offset mapping original pixel coordinates into a letterboxed square.
struct Letterbox {
  double scale = 1.0;
  int offset_x = 0;
  int offset_y = 0;
  int size = 0;

  cv::Point2d map(cv::Point2d p) const {
    return {p.x * scale + offset_x, p.y * scale + offset_y};
  }
};

/// Reads a PNG/JPEG. channels = 3 yields RGB order, channels = 1 grayscale.
cv::Mat read_image(const std::filesystem::path& path, int channels);

/// Writes an 8-bit RGB or grayscale image (RGB order for 3 channels).
void write_image(const std::filesystem::path& path, const cv::Mat& image);

/// Aspect-preserving resize into a size x size canvas, centered, padded with `pad`.
cv::Mat letterbox(const cv::Mat& image, int size, unsigned char pad, Letterbox* transform = nullptr);

/// Replicates a single-channel image to three channels.
cv::Mat gray_to_rgb(const cv::Mat& gray);

/// 8-bit HxWxC image -> [C,H,W] tensor scaled to [-1,1].
torch::Tensor image_to_tensor(const cv::Mat& image, torch::Dtype dtype = torch::kFloat32);

/// [C,H,W] or [1,C,H,W] tensor in [-1,1] -> 8-bit image (rounded, clamped).
cv::Mat tensor_to_image(const torch::Tensor& tensor);

}  // namespace fss
