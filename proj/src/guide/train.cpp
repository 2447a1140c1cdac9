#include "guide/train.hpp"

#include <numeric>
#include <stdexcept>

#include "guide/autodiff.hpp"
#include "guide/optimizer.hpp"
#include "guide/rng.hpp"

namespace guide {

TrainHistory train_base(Model& model, const Dataset& train, size_t epochs, double lr, size_t batch_size,
                        uint64_t seed) {
    if (model.frozen) throw std::logic_error("train_base: model is already frozen");
    if (train.count() == 0) throw DataError("train_base: empty dataset");
    if (batch_size == 0) throw std::invalid_argument("train_base: batch_size must be positive");

    TrainHistory history;
    AdamConfig cfg;
    cfg.lr = lr;
    AdamState adam(model, cfg);
    const size_t n = train.count();

    for (size_t epoch = 0; epoch < epochs; ++epoch) {
        Rng rng = derive_stream(seed, 0x7a41, epoch);
        const auto order = rng.permutation(n);
        double loss_sum = 0.0;
        size_t correct = 0;
        for (size_t start = 0; start < n; start += batch_size) {
            const size_t m = std::min(batch_size, n - start);
            std::vector<size_t> idx(order.begin() + start, order.begin() + start + m);
            const Tensor batch = train.gather_batch(idx);
            std::vector<int> labels(m);
            for (size_t j = 0; j < m; ++j) labels[j] = train.labels[idx[j]];

            const ForwardTrace trace = forward(model, batch, true);
            const CrossEntropy objective(labels);
            const Tensor& probs = trace.final_output();
            loss_sum += objective.value(probs) * static_cast<double>(m);
            const size_t k = model.num_classes;
            for (size_t j = 0; j < m; ++j) {
                size_t best = 0;
                for (size_t c = 1; c < k; ++c) {
                    if (probs[j * k + c] > probs[j * k + best]) best = c;
                }
                if (static_cast<int>(best) == labels[j]) ++correct;
            }
            const auto grads = grad_params(model, trace, objective);
            adam.step(model, grads);
        }
        history.epoch_loss.push_back(loss_sum / static_cast<double>(n));
        history.epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(n));
    }
    model.frozen = true;
    return history;
}

std::vector<int> predict(const Model& model, const Dataset& ds) {
    const ForwardTrace trace = forward(model, ds.images, false);
    const Tensor& out = trace.final_output();
    const size_t k = model.num_classes;
    std::vector<int> pred(ds.count());
    for (size_t i = 0; i < ds.count(); ++i) {
        size_t best = 0;
        for (size_t c = 1; c < k; ++c) {
            if (out[i * k + c] > out[i * k + best]) best = c;
        }
        pred[i] = static_cast<int>(best);
    }
    return pred;
}

double accuracy(const Model& model, const Dataset& ds) {
    const auto pred = predict(model, ds);
    size_t correct = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == ds.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(std::max<size_t>(1, pred.size()));
}

}  // namespace guide
