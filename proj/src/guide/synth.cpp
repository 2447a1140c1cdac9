#include "guide/synth.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "guide/rng.hpp"

namespace guide {

namespace {

struct Point {
    double y, x;
};

// Well-separated glyph anchors, reproducible from the layout seed alone.
std::vector<Point> class_layout(uint64_t layout_seed, size_t num_classes, int blobs_per_class, size_t side) {
    Rng rng = derive_stream(layout_seed, 0xb10b);
    std::vector<Point> pts;
    const double margin = static_cast<double>(side) * 0.18;
    const double lo = margin, hi = static_cast<double>(side) - margin;
    const size_t total = num_classes * static_cast<size_t>(blobs_per_class);
    const double min_dist = (hi - lo) / std::max(2.0, std::sqrt(static_cast<double>(total)) * 1.15);
    size_t attempts = 0;
    while (pts.size() < total) {
        Point p{lo + rng.u01() * (hi - lo), lo + rng.u01() * (hi - lo)};
        bool ok = true;
        for (const auto& q : pts) {
            const double dy = p.y - q.y, dx = p.x - q.x;
            if (dy * dy + dx * dx < min_dist * min_dist) {
                ok = false;
                break;
            }
        }
        if (ok || ++attempts > 4000) {
            pts.push_back(p);
            attempts = 0;
        }
    }
    return pts;
}

}  // namespace

Dataset synth_blobs(uint64_t seed, size_t n_per_class, size_t num_classes, size_t image_side, const BlobSpec& spec,
                    const std::string& name) {
    if (num_classes < 2) throw DataError("synth_blobs: need at least two classes");
    if (n_per_class == 0 || image_side < 8) throw DataError("synth_blobs: degenerate size parameters");
    if (spec.radius <= 0.0 || spec.intensity <= 0.0 || spec.noise < 0.0 || spec.jitter < 0.0 ||
        spec.blobs_per_class < 1) {
        throw DataError("synth_blobs: invalid blob spec");
    }
    const auto layout = class_layout(spec.layout_seed, num_classes, spec.blobs_per_class, image_side);
    const size_t n = n_per_class * num_classes;
    Dataset ds;
    ds.name = name;
    ds.images = Tensor({n, image_side, image_side, size_t{1}});
    ds.labels.resize(n);

    const double inv_2r2 = 1.0 / (2.0 * spec.radius * spec.radius);
    for (size_t i = 0; i < n; ++i) {
        const size_t k = i % num_classes;
        ds.labels[i] = static_cast<int>(k);
        Rng rng = derive_stream(seed, 0x5a17, i);
        double* img = ds.images.data() + i * image_side * image_side;
        for (size_t px = 0; px < image_side * image_side; ++px) {
            img[px] = spec.noise > 0.0 ? std::clamp(spec.noise * std::abs(rng.normal()), 0.0, 1.0) : 0.0;
        }
        for (int b = 0; b < spec.blobs_per_class; ++b) {
            const Point& anchor = layout[k * static_cast<size_t>(spec.blobs_per_class) + static_cast<size_t>(b)];
            const double cy = anchor.y + (spec.jitter > 0.0 ? (rng.u01() * 2.0 - 1.0) * spec.jitter : 0.0);
            const double cx = anchor.x + (spec.jitter > 0.0 ? (rng.u01() * 2.0 - 1.0) * spec.jitter : 0.0);
            for (size_t y = 0; y < image_side; ++y) {
                for (size_t x = 0; x < image_side; ++x) {
                    const double dy = static_cast<double>(y) - cy;
                    const double dx = static_cast<double>(x) - cx;
                    img[y * image_side + x] += spec.intensity * std::exp(-(dy * dy + dx * dx) * inv_2r2);
                }
            }
        }
        for (size_t px = 0; px < image_side * image_side; ++px) img[px] = std::clamp(img[px], 0.0, 1.0);
    }
    return ds;
}

}  // namespace guide
