#pragma once

#include <string>
#include <vector>

#include "udm/common.hpp"

namespace udm {

// An RGB raster held as a float32 CPU tensor of shape [3, H, W] with values
// in [0, 1]. The constructor clamps; pipeline-facing entry points enforce the
// minimum-size invariant.
class Image {
 public:
  Image() = default;
  explicit Image(torch::Tensor chw, std::string source_id = {});

  const torch::Tensor& tensor() const { return chw_; }
  std::int64_t height() const { return chw_.defined() ? chw_.size(1) : 0; }
  std::int64_t width() const { return chw_.defined() ? chw_.size(2) : 0; }
  bool defined() const { return chw_.defined(); }
  const std::string& source_id() const { return source_id_; }
  void set_source_id(std::string id) { source_id_ = std::move(id); }

  // Enforces H, W >= 32; throws SizeError otherwise.
  void require_pipeline_size() const;

  // Quantizes to 8 bits per channel, the on-disk representation.
  std::vector<std::uint8_t> to_u8_rgb() const;
  static Image from_u8_rgb(const std::uint8_t* data, std::int64_t h, std::int64_t w,
                           std::string source_id = {});

 private:
  torch::Tensor chw_;
  std::string source_id_;
};

// PNG (always) and JPEG (input only) codecs. save_png uses fixed encoder
// settings so identical pixels produce identical bytes.
Image load_image(const std::string& path);
void save_png(const Image& img, const std::string& path);

bool images_equal(const Image& a, const Image& b);

}  // namespace udm
