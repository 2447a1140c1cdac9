#include "guide/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "guide/rng.hpp"
#include "guide/serialize.hpp"

namespace guide {

size_t Dataset::num_classes() const {
    int k = 0;
    for (int y : labels) k = std::max(k, y + 1);
    return static_cast<size_t>(k);
}

std::vector<size_t> Dataset::sample_shape() const {
    return {images.dim(1), images.dim(2), images.dim(3)};
}

Dataset Dataset::subset(const std::vector<size_t>& indices) const {
    Dataset out;
    out.name = name;
    out.images = gather_batch(indices);
    out.labels.reserve(indices.size());
    for (size_t i : indices) out.labels.push_back(labels.at(i));
    return out;
}

Tensor Dataset::sample_batch(size_t index) const {
    return gather_batch({index});
}

Tensor Dataset::gather_batch(const std::vector<size_t>& indices) const {
    const size_t per = images.size() / images.dim(0);
    std::vector<size_t> shape = images.shape();
    shape[0] = indices.size();
    Tensor out(shape);
    for (size_t i = 0; i < indices.size(); ++i) {
        std::memcpy(out.data() + i * per, images.data() + indices[i] * per, per * sizeof(double));
    }
    return out;
}

void Dataset::validate() const {
    if (images.rank() != 4) throw DataError("dataset images must be (N,H,W,C)");
    if (labels.size() != images.dim(0)) throw DataError("dataset label count mismatch");
    for (double v : images.vec()) {
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("dataset pixel outside [0,1]");
    }
    const int k = static_cast<int>(num_classes());
    for (int y : labels) {
        if (y < 0 || y >= k) throw DataError("dataset label out of range");
    }
}

namespace {

std::vector<std::vector<size_t>> by_class(const Dataset& ds) {
    std::vector<std::vector<size_t>> buckets(ds.num_classes());
    for (size_t i = 0; i < ds.labels.size(); ++i) buckets[static_cast<size_t>(ds.labels[i])].push_back(i);
    return buckets;
}

}  // namespace

SplitResult split(const Dataset& ds, const SplitSpec& spec) {
    const size_t n = ds.count();
    size_t want_train = spec.train_count, want_val = spec.val_count, want_test = spec.test_count;
    if (want_train + want_val + want_test == 0) {
        want_train = static_cast<size_t>(spec.train_frac * static_cast<double>(n));
        want_val = static_cast<size_t>(spec.val_frac * static_cast<double>(n));
        want_test = static_cast<size_t>(spec.test_frac * static_cast<double>(n));
    }
    if (want_train + want_val + want_test > n) throw DataError("split: requested counts exceed dataset size");

    std::vector<size_t> train_idx, val_idx, test_idx;
    Rng rng = derive_stream(spec.seed, 0x517u);
    if (!spec.stratified) {
        auto perm = rng.permutation(n);
        train_idx.assign(perm.begin(), perm.begin() + want_train);
        val_idx.assign(perm.begin() + want_train, perm.begin() + want_train + want_val);
        test_idx.assign(perm.begin() + want_train + want_val, perm.begin() + want_train + want_val + want_test);
    } else {
        auto buckets = by_class(ds);
        const size_t parts_needed = (want_train ? 1 : 0) + (want_val ? 1 : 0) + (want_test ? 1 : 0);
        for (const auto& b : buckets) {
            if (b.size() < parts_needed) {
                throw DataError("split: a class has fewer samples than requested partitions");
            }
        }
        // Largest-remainder allocation per class keeps proportions within
        // one sample of the global fractions.
        auto allocate = [&](size_t want, const std::vector<size_t>& bucket_sizes) {
            std::vector<size_t> quota(bucket_sizes.size(), 0);
            if (want == 0) return quota;
            std::vector<std::pair<double, size_t>> rem;
            size_t assigned = 0;
            for (size_t c = 0; c < bucket_sizes.size(); ++c) {
                const double exact =
                    static_cast<double>(want) * static_cast<double>(bucket_sizes[c]) / static_cast<double>(n);
                quota[c] = static_cast<size_t>(exact);
                assigned += quota[c];
                rem.push_back({exact - static_cast<double>(quota[c]), c});
            }
            std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            for (size_t i = 0; assigned < want && i < rem.size(); ++i, ++assigned) quota[rem[i].second]++;
            return quota;
        };
        std::vector<size_t> sizes;
        for (const auto& b : buckets) sizes.push_back(b.size());
        const auto q_train = allocate(want_train, sizes);
        const auto q_val = allocate(want_val, sizes);
        const auto q_test = allocate(want_test, sizes);
        for (size_t c = 0; c < buckets.size(); ++c) {
            if (q_train[c] + q_val[c] + q_test[c] > buckets[c].size()) {
                throw DataError("split: class " + std::to_string(c) + " has too few samples");
            }
            auto perm = rng.permutation(buckets[c].size());
            size_t pos = 0;
            for (size_t i = 0; i < q_train[c]; ++i) train_idx.push_back(buckets[c][perm[pos++]]);
            for (size_t i = 0; i < q_val[c]; ++i) val_idx.push_back(buckets[c][perm[pos++]]);
            for (size_t i = 0; i < q_test[c]; ++i) test_idx.push_back(buckets[c][perm[pos++]]);
        }
        std::sort(train_idx.begin(), train_idx.end());
        std::sort(val_idx.begin(), val_idx.end());
        std::sort(test_idx.begin(), test_idx.end());
    }
    SplitResult out;
    out.train = ds.subset(train_idx);
    out.val = ds.subset(val_idx);
    out.test = ds.subset(test_idx);
    out.train.name = ds.name + ":train";
    out.val.name = ds.name + ":val";
    out.test.name = ds.name + ":test";
    return out;
}

Dataset stratified_subset(const Dataset& ds, size_t count, uint64_t seed) {
    SplitSpec spec;
    spec.train_count = count;
    spec.seed = seed;
    spec.stratified = true;
    auto parts = split(ds, spec);
    parts.train.name = ds.name;
    return std::move(parts.train);
}

void dataset_save(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    write_tag(out, "GUIDEDS1");
    write_tensor(out, ds.images);
    Tensor label_tensor({ds.labels.size()});
    for (size_t i = 0; i < ds.labels.size(); ++i) label_tensor[i] = static_cast<double>(ds.labels[i]);
    write_tensor(out, label_tensor);
    write_string(out, ds.name);
    if (!out) throw DataError("write failed: " + path);
}

Dataset dataset_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    expect_tag(in, "GUIDEDS1");
    Dataset ds;
    ds.images = read_tensor(in);
    const Tensor label_tensor = read_tensor(in);
    ds.labels.reserve(label_tensor.size());
    for (size_t i = 0; i < label_tensor.size(); ++i) ds.labels.push_back(static_cast<int>(label_tensor[i]));
    ds.name = read_string(in);
    if (!in) throw DataError("truncated dataset cache: " + path);
    return ds;
}

}  // namespace guide
