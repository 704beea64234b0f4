#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace shades {

/// Reads an 8- or 16-bit PNG/JPEG as a float32 [3,H,W] RGB tensor in [0,1].
/// Grayscale files are replicated to three channels.
torch::Tensor load_image(const std::filesystem::path& path);

/// Reads a single-channel 16-bit PNG as raw integer counts in a float64 [H,W] tensor.
torch::Tensor load_png16_raw(const std::filesystem::path& path);

/// Writes [3,H,W], [1,H,W] or [H,W] values in [0,1] as an 8-bit PNG. The file
/// is written to a temporary sibling and renamed into place.
void save_png8(const std::filesystem::path& path, const torch::Tensor& image);

/// Same as save_png8 with 16-bit quantization.
void save_png16(const std::filesystem::path& path, const torch::Tensor& image);

/// Writes a text file atomically (temporary sibling + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

/// Image files (png/jpg/jpeg) in `dir`, ordered by the numeric value of their
/// stem when every stem is numeric, lexicographically otherwise.
std::vector<std::filesystem::path> list_image_files(const std::filesystem::path& dir);

}  // namespace shades
