#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "guide/tensor.hpp"

namespace guide {

enum class LayerKind : uint8_t {
    Dense = 0,
    Conv2d = 1,
    AvgPool2d = 2,
    MaxPool2d = 3,
    Flatten = 4,
    Tanh = 5,
    Relu = 6,
    Softmax = 7,
};

const char* layer_kind_name(LayerKind kind);
bool layer_kind_has_params(LayerKind kind);
bool layer_kind_is_activation(LayerKind kind);

// One layer of a feed-forward net. Parameter layouts:
//   dense  : weight (in, out), bias (out); y = x W + b
//   conv2d : weight (k, k, Cin, Cout), bias (Cout); NHWC, square kernel,
//            symmetric zero padding
// Pooling layers use kernel/stride only.
struct Layer {
    LayerKind kind;
    std::string name;  // canonical, derived from position (conv1, pool1, fc1, ...)
    Tensor weight;
    Tensor bias;
    size_t kernel = 0;
    size_t stride = 0;
    size_t pad = 0;
    std::vector<size_t> in_shape;   // per-sample, no batch dim
    std::vector<size_t> out_shape;  // per-sample
};

// A semantically meaningful feature tap: the post-activation output of a
// conv/dense/pool block. `layer_index` is the layer whose output realises the
// feature (the trailing elementwise activation when one exists).
struct FeaturePoint {
    size_t layer_index;
    std::string name;  // the producing block's name
    size_t dim;        // flattened feature width
};

class Model {
public:
    std::vector<Layer> layers;
    std::vector<size_t> input_shape;  // per-sample
    size_t num_classes = 0;
    bool frozen = false;

    // Chains shapes, assigns canonical names, checks the softmax placement
    // invariant. Must be called after any structural edit.
    void finalize();

    size_t param_count() const;
    // Index of the layer producing the logits (last non-softmax layer).
    size_t logits_layer() const;
    bool has_terminal_softmax() const;

    // Post-activation feature taps eligible for relevance accounting:
    // conv/dense/pool block outputs. Softmax heads are excluded, and a
    // flatten that merely reshapes an already-tapped feature is skipped.
    std::vector<FeaturePoint> feature_points() const;

    uint64_t param_checksum() const;
};

// Propagation record of one batch. outputs[i] is layer i's batch output.
struct ForwardTrace {
    Tensor input;                                    // (N, sample...)
    std::vector<Tensor> outputs;                     // per layer
    std::vector<std::vector<uint32_t>> pool_argmax;  // per layer; filled for max-pool
    size_t batch = 0;

    const Tensor& logits(const Model& m) const { return outputs.at(m.logits_layer()); }
    const Tensor& final_output() const { return outputs.back(); }
    // Flattened feature row for one sample at a feature point.
    std::vector<double> feature_row(size_t layer_index, size_t sample) const;
};

// Runs the model on a batch (leading batch dimension). With keep_trace=false
// only the final layers' outputs needed downstream are retained.
ForwardTrace forward(const Model& model, const Tensor& batch, bool keep_trace = true);

// Builders.
Model make_mlp(size_t input_dim, const std::vector<size_t>& hidden, size_t num_classes,
               LayerKind activation = LayerKind::Tanh, bool terminal_softmax = true);
// The classic LeNet-5 layout: conv(6,5,same)+tanh, avgpool,
// conv(16,5,valid)+tanh, avgpool, conv(120,5,valid)+tanh, flatten,
// fc(84)+tanh, fc(K)+softmax.
Model make_lenet5(size_t height, size_t width, size_t channels, size_t num_classes);
Model make_architecture(const std::string& id, const std::vector<size_t>& input_shape, size_t num_classes);

// Deterministic parameter init (scaled uniform fan-in).
void init_params(Model& model, uint64_t seed);

}  // namespace guide
