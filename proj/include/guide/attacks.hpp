#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "guide/dataset.hpp"
#include "guide/evidential.hpp"
#include "guide/layers.hpp"

namespace guide {

enum class AttackKind { Fgsm, L2Pgd, SaltPepper };

AttackKind parse_attack(const std::string& name);
const char* attack_name(AttackKind kind);

struct AttackConfig {
    AttackKind kind = AttackKind::L2Pgd;
    double epsilon = 1.0;   // L2 radius (l2pgd), step magnitude (fgsm), pixel fraction (salt_pepper)
    size_t steps = 40;      // l2pgd only
    double step_size = 0.0; // l2pgd; 0 selects 2.5 * eps / steps
    uint64_t seed = 0;      // salt_pepper noise and the pgd random start
    bool attack_pipeline = false;  // differentiate through base+meta instead of base only
};

// Gradient target: either the frozen base alone (cross-entropy on its
// softmax) or the composite pipeline (cross-entropy on the Dirichlet mean).
struct AttackTarget {
    const Model* base = nullptr;
    const MetaModel* meta = nullptr;  // null = attack the base softmax

    // d(cross-entropy)/d(input) for a single sample image.
    Tensor input_gradient(const Tensor& image, int label) const;
    double true_class_confidence(const Tensor& image, int label) const;
};

Tensor fgsm(const AttackTarget& target, const Tensor& image, int label, double epsilon);
Tensor l2pgd(const AttackTarget& target, const Tensor& image, int label, double epsilon, size_t steps,
             double step_size, uint64_t seed);
// Sets exactly round(fraction * H * W) pixels (without replacement) to 0 or
// 1 with equal probability across all channels.
Tensor salt_pepper(const Tensor& image, double fraction, uint64_t seed);

// Whole-dataset attack; labels are carried over unchanged.
Dataset attack_dataset(const AttackTarget& target, const Dataset& ds, const AttackConfig& config, size_t threads = 1);

// Disk cache keyed by model checksum + config.
void save_attack_cache(const Dataset& adv, const std::string& path, uint64_t model_checksum,
                       const AttackConfig& config);
Dataset load_attack_cache(const std::string& path, uint64_t model_checksum);

}  // namespace guide
