#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "guide/tensor.hpp"

namespace guide {

// Raised for malformed or inconsistent input data. The CLI maps it to exit
// code 3.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Labelled image set. Images are (N,H,W,C) with values in [0,1].
struct Dataset {
    Tensor images;
    std::vector<int> labels;
    std::string name;

    size_t count() const { return images.rank() ? images.dim(0) : 0; }
    size_t num_classes() const;
    std::vector<size_t> sample_shape() const;

    // Rows `indices` as a new dataset (copies).
    Dataset subset(const std::vector<size_t>& indices) const;
    // One sample as a (1, H, W, C) batch tensor.
    Tensor sample_batch(size_t index) const;
    // Several samples as a (n, H, W, C) batch tensor.
    Tensor gather_batch(const std::vector<size_t>& indices) const;

    void validate() const;
};

struct SplitSpec {
    // Either absolute counts or fractions; fractions are used when all
    // counts are zero. Remainders stay unassigned.
    size_t train_count = 0, val_count = 0, test_count = 0;
    double train_frac = 0.0, val_frac = 0.0, test_frac = 0.0;
    bool stratified = true;
    uint64_t seed = 0;
};

struct SplitResult {
    Dataset train, val, test;
};

// Disjoint stratified partition; per-class proportions hold within one
// sample per split. Throws DataError when a class is too small to appear in
// every requested partition.
SplitResult split(const Dataset& ds, const SplitSpec& spec);

// Deterministic stratified subsample of `count` items.
Dataset stratified_subset(const Dataset& ds, size_t count, uint64_t seed);

// Binary cache (tensor framing + label payload); round-trips bit-exactly.
void dataset_save(const Dataset& ds, const std::string& path);
Dataset dataset_load(const std::string& path);

}  // namespace guide
