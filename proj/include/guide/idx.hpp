#pragma once

#include <string>

#include "guide/dataset.hpp"

namespace guide {

// Loads an IDX image/label file pair (the MNIST-family distribution format).
// Plain and gzip-compressed files are both accepted; compression is detected
// from the 0x1f8b header. Pixels are scaled by 1/255 into [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path, const std::string& name = "idx");

}  // namespace guide
