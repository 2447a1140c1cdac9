#include "guide/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <sstream>

namespace guide {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
}  // namespace

Tensor::Tensor(std::vector<size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size()) {
        throw std::invalid_argument("tensor: shape " + shape_str(shape_) + " does not match payload of " +
                                    std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::full(std::vector<size_t> shape, double value) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
}

Tensor Tensor::reshaped(std::vector<size_t> shape) const {
    if (shape_product(shape) != data_.size()) {
        throw std::invalid_argument("reshape: " + shape_str(shape_) + " -> " + shape_str(shape) + " changes size");
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::require_finite(const std::string& context) const {
    if (!all_finite()) throw NumericError("non-finite values in " + context);
}

size_t shape_product(const std::vector<size_t>& shape) {
    size_t p = 1;
    for (size_t d : shape) p *= d;
    return p;
}

std::string shape_str(const std::vector<size_t>& shape) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

void matmul(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    MapMat C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    C.noalias() = CMapMat(a, m, k) * CMapMat(b, k, n);
}

void matmul_at_b_accum(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    MapMat C(c, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    C.noalias() += CMapMat(a, m, k).transpose() * CMapMat(b, m, n);
}

void matmul_a_bt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    MapMat C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    C.noalias() = CMapMat(a, m, k) * CMapMat(b, n, k).transpose();
}

double pairwise_sum(std::span<const double> values) {
    const size_t n = values.size();
    if (n == 0) return 0.0;
    if (n <= 8) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    const size_t half = n / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

double mean(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("mean of empty range");
    return pairwise_sum(values) / static_cast<double>(values.size());
}

double l1_norm(std::span<const double> values) {
    double s = 0.0;
    for (double v : values) s += std::abs(v);
    return s;
}

double l2_norm(std::span<const double> values) {
    double s = 0.0;
    for (double v : values) s += v * v;
    return std::sqrt(s);
}

}  // namespace guide
