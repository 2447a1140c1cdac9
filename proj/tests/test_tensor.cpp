#include <doctest.h>

#include <cmath>

#include "guide/tensor.hpp"

using namespace guide;

TEST_CASE("tensor shape/data invariants") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK_THROWS(Tensor({2, 3}, std::vector<double>(5)));
    CHECK_THROWS(t.reshaped({4, 2}));
    const Tensor r = t.reshaped({3, 2});
    CHECK(r.dim(0) == 3);
}

TEST_CASE("finite guards") {
    Tensor t({2});
    t[0] = 1.0;
    t[1] = std::nan("");
    CHECK(!t.all_finite());
    CHECK_THROWS_AS(t.require_finite("test"), NumericError);
}

TEST_CASE("matmul against hand results") {
    // A(2x3) * B(3x2)
    const double a[] = {1, 2, 3, 4, 5, 6};
    const double b[] = {7, 8, 9, 10, 11, 12};
    double c[4];
    matmul(a, b, c, 2, 3, 2);
    CHECK(c[0] == doctest::Approx(58));
    CHECK(c[1] == doctest::Approx(64));
    CHECK(c[2] == doctest::Approx(139));
    CHECK(c[3] == doctest::Approx(154));
}

TEST_CASE("pairwise sum matches naive on benign data and is deterministic") {
    std::vector<double> v(1000);
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::sin(static_cast<double>(i));
    double naive = 0.0;
    for (double x : v) naive += x;
    CHECK(std::abs(pairwise_sum(v) - naive) < 1e-9);
    CHECK(pairwise_sum(v) == pairwise_sum(v));
    CHECK(mean(std::vector<double>{1.0, 2.0, 3.0}) == doctest::Approx(2.0));
}
