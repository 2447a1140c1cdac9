#pragma once

#include <cstdint>

#include "guide/dataset.hpp"

namespace guide {

// Deterministic synthetic image corpus: class k is a bright multi-blob glyph
// at class-specific locations over a noisy background. Linearly separable by
// construction at low noise; used for fast property tests and for shift
// experiments (two specs with different layout_seed give an ID/OOD pair).
struct BlobSpec {
    double radius = 2.0;       // gaussian blob radius (pixels)
    double intensity = 1.0;    // peak value before clamping
    double noise = 0.0;        // background noise amplitude
    double jitter = 0.0;       // per-sample center jitter (pixels)
    int blobs_per_class = 1;   // glyph complexity
    uint64_t layout_seed = 0;  // selects the class-center layout family
};

Dataset synth_blobs(uint64_t seed, size_t n_per_class, size_t num_classes, size_t image_side, const BlobSpec& spec,
                    const std::string& name = "synth");

}  // namespace guide
