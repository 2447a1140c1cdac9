#pragma once

#include <cstdint>
#include <vector>

#include "guide/dataset.hpp"
#include "guide/layers.hpp"

namespace guide {

struct TrainHistory {
    std::vector<double> epoch_loss;      // mean cross-entropy per epoch
    std::vector<double> epoch_accuracy;  // training accuracy per epoch
};

// Cross-entropy training with Adam. The model comes back frozen; a frozen
// input model is rejected. Fixed seed + config reproduces parameters
// bit-for-bit.
TrainHistory train_base(Model& model, const Dataset& train, size_t epochs, double lr, size_t batch_size,
                        uint64_t seed);

// Argmax-accuracy of the model's probabilities on a dataset.
double accuracy(const Model& model, const Dataset& ds);

// Class predictions (argmax of final output).
std::vector<int> predict(const Model& model, const Dataset& ds);

}  // namespace guide
