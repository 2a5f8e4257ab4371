#pragma once

#include <string>
#include <vector>

#include "udm/image.hpp"

namespace udm {

// Procedural pristine image: oriented color gradient, multi-octave smooth
// noise, and a handful of soft shapes. Textured enough that every degradation
// kind has a visible effect. Deterministic in (h, w, seed).
Image make_pristine_image(std::int64_t h, std::int64_t w, std::uint64_t seed);

// Writes `count` pristine PNGs named img_%03d.png into dir (created if
// needed); returns the file paths in order.
std::vector<std::string> write_pristine_corpus(const std::string& dir, int count,
                                               std::int64_t h, std::int64_t w,
                                               std::uint64_t seed);

// Narrow image family for the toy generator used by restoration experiments:
// dark background with 1..3 soft bright blobs. Shape [3,64,64].
torch::Tensor make_toy_image(std::uint64_t seed);
torch::Tensor make_toy_batch(int count, std::uint64_t seed);

}  // namespace udm
