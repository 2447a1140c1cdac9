#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace guide {

// Raised when a computation produces NaN/Inf or otherwise leaves the numeric
// domain. The CLI maps it to exit code 4.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major f64 tensor. The one value carrier of the project: images,
// activations, parameters, relevance maps, probability maps all live here.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<size_t> shape);
    Tensor(std::vector<size_t> shape, std::vector<double> data);
    Tensor(std::initializer_list<size_t> shape) : Tensor(std::vector<size_t>(shape)) {}

    static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<size_t> shape, double value);

    const std::vector<size_t>& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t dim(size_t i) const { return shape_.at(i); }
    size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    double& at2(size_t i, size_t j) { return data_[i * shape_[1] + j]; }
    double at2(size_t i, size_t j) const { return data_[i * shape_[1] + j]; }

    // Reshape without copying; product of dims must match.
    Tensor reshaped(std::vector<size_t> shape) const;

    bool all_finite() const;
    void require_finite(const std::string& context) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    std::vector<size_t> shape_;
    std::vector<double> data_;
};

size_t shape_product(const std::vector<size_t>& shape);
std::string shape_str(const std::vector<size_t>& shape);

// C(m,n) = A(m,k) * B(k,n), all row-major. Eigen under the hood.
void matmul(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
// C += A^T * B with A(m,k), B(m,n), C(k,n).
void matmul_at_b_accum(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
// C = A * B^T with A(m,k), B(n,k), C(m,n).
void matmul_a_bt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);

// Order-deterministic pairwise summation; used for every statistic that a
// test pins to a tight tolerance.
double pairwise_sum(std::span<const double> values);
double mean(std::span<const double> values);

double l1_norm(std::span<const double> values);
double l2_norm(std::span<const double> values);

}  // namespace guide
