#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "covnat/ops.hpp"
#include "covnat/random.hpp"
#include "covnat/tensor.hpp"

using namespace covnat;

namespace {

// Independent triple-loop product used as the matmul oracle.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  Index m, Index k, Index n) {
    std::vector<double> c(static_cast<std::size_t>(m * n), 0.0);
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < n; ++j)
            for (Index t = 0; t < k; ++t)
                c[static_cast<std::size_t>(i * n + j)] +=
                    a[static_cast<std::size_t>(i * k + t)] * b[static_cast<std::size_t>(t * n + j)];
    return c;
}

Tensor leaf(const Shape& s, std::vector<double> v, bool grad = false) {
    Tensor t = Tensor::from_values(s, std::move(v));
    t.set_requires_grad(grad);
    return t;
}

}  // namespace

TEST_CASE("matmul identity") {
    Tensor i2 = leaf({2, 2}, {1, 0, 0, 1});
    Tensor m = leaf({2, 2}, {1, 2, 3, 4});
    Tensor c = matmul(i2, m);
    CHECK(c.values() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("matmul against triple-loop oracle") {
    std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8};
    auto expect = matmul_oracle(a, b, 2, 2, 2);
    CHECK(expect == std::vector<double>{19, 22, 43, 50});
    Tensor c = matmul(leaf({2, 2}, a), leaf({2, 2}, b));
    CHECK(c.values() == expect);

    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Index m = 1 + static_cast<Index>(rng.bounded(5));
        Index k = 1 + static_cast<Index>(rng.bounded(5));
        Index n = 1 + static_cast<Index>(rng.bounded(5));
        std::vector<double> av(static_cast<std::size_t>(m * k)), bv(static_cast<std::size_t>(k * n));
        for (double& v : av) v = rng.uniform(-2, 2);
        for (double& v : bv) v = rng.uniform(-2, 2);
        Tensor c2 = matmul(leaf({m, k}, av), leaf({k, n}, bv));
        auto want = matmul_oracle(av, bv, m, k, n);
        for (std::size_t i = 0; i < want.size(); ++i)
            CHECK(c2.values()[i] == Catch::Approx(want[i]).margin(1e-12));
    }
}

TEST_CASE("matmul row sum of ones") {
    Tensor r = leaf({1, 3}, {1, 1, 1});
    Tensor c = leaf({3, 1}, {1, 1, 1});
    CHECK(matmul(r, c).value() == 3.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a = leaf({2, 3}, std::vector<double>(6, 0.0));
    Tensor b = leaf({2, 2}, std::vector<double>(4, 0.0));
    CHECK_THROWS_WITH(matmul(a, b), Catch::Matchers::ContainsSubstring("(2,3)") &&
                                        Catch::Matchers::ContainsSubstring("(2,2)"));
}

TEST_CASE("matmul batched rank 3") {
    Tensor a = leaf({2, 1, 2}, {1, 2, 3, 4});
    Tensor b = leaf({2, 2, 1}, {1, 1, 1, 1});
    Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 1, 1});
    CHECK(c.values() == std::vector<double>{3, 7});
}

TEST_CASE("softmax uniform logits") {
    Tensor y = softmax_lastdim(leaf({2}, {0, 0}));
    CHECK(y.values()[0] == Catch::Approx(0.5).margin(1e-15));
    CHECK(y.values()[1] == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("softmax large logits are stable") {
    Tensor y = softmax_lastdim(leaf({3}, {1000, 1000, 1000}));
    for (double v : y.values()) CHECK(v == Catch::Approx(1.0 / 3).margin(1e-15));
}

TEST_CASE("softmax matches exp-normalize oracle") {
    std::vector<double> x{std::log(1.0), std::log(2.0), std::log(3.0)};
    // Direct exp-normalize oracle.
    double z = 0;
    std::vector<double> want(3);
    for (int i = 0; i < 3; ++i) z += std::exp(x[static_cast<std::size_t>(i)]);
    for (int i = 0; i < 3; ++i) want[static_cast<std::size_t>(i)] = std::exp(x[static_cast<std::size_t>(i)]) / z;
    Tensor y = softmax_lastdim(leaf({3}, x));
    for (int i = 0; i < 3; ++i) {
        CHECK(y.values()[static_cast<std::size_t>(i)] == Catch::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-12));
        CHECK(y.values()[static_cast<std::size_t>(i)] == Catch::Approx((i + 1) / 6.0).epsilon(1e-12));
    }
}

TEST_CASE("softmax rejects NaN") {
    CHECK_THROWS_AS(softmax_lastdim(leaf({2}, {0.0, std::nan("")})), NumericError);
}

TEST_CASE("softmax rows sum to one and lie in [0,1]") {
    Rng rng(5);
    for (int seed = 0; seed < 50; ++seed) {
        Index r = 1 + static_cast<Index>(rng.bounded(5));
        Index c = 1 + static_cast<Index>(rng.bounded(5));
        std::vector<double> v(static_cast<std::size_t>(r * c));
        for (double& x : v) x = rng.uniform(-30, 30);
        Tensor y = softmax_lastdim(leaf({r, c}, v));
        for (Index i = 0; i < r; ++i) {
            double s = 0;
            for (Index j = 0; j < c; ++j) {
                double p = y.at(i, j);
                CHECK(p >= 0.0);
                CHECK(p <= 1.0);
                s += p;
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("masked softmax zeroes masked keys exactly") {
    Tensor x = leaf({2, 3}, {5, 1, 2, 0, 0, 0});
    Tensor mask = leaf({3}, {1, 1, 0});
    Tensor y = masked_softmax_lastdim(x, mask);
    CHECK(y.at(0, 2) == 0.0);
    CHECK(y.at(1, 2) == 0.0);
    CHECK(y.at(1, 0) == Catch::Approx(0.5).margin(1e-15));
    CHECK_THROWS_AS(masked_softmax_lastdim(x, leaf({3}, {0, 0, 0})), ContractError);
}

TEST_CASE("relu definition") {
    CHECK(relu(leaf({3}, {-1, 0, 2})).values() == std::vector<double>{0, 0, 2});
    CHECK(relu(leaf({3}, {-5, -1, -0.5})).values() == std::vector<double>{0, 0, 0});
}

TEST_CASE("relu gradient masks non-positive inputs") {
    Tensor x = leaf({2}, {-1, 2}, true);
    backward(sum_all(relu(x)));
    CHECK(x.grad() == std::vector<double>{0, 1});
}

TEST_CASE("min_clamp1 definition and subgradient") {
    Tensor x = leaf({2}, {0.3, 1.1}, true);
    Tensor y = min_clamp1(x);
    CHECK(y.values() == std::vector<double>{0.3, 1.0});
    backward(sum_all(y));
    CHECK(x.grad() == std::vector<double>{1, 0});

    Tensor b = leaf({1}, {1.0}, true);
    Tensor yb = min_clamp1(b);
    CHECK(yb.values() == std::vector<double>{1.0});
    backward(sum_all(yb));
    CHECK(b.grad() == std::vector<double>{0});
}

TEST_CASE("min_clamp1 output bounded by one and by input") {
    Rng rng(17);
    for (int t = 0; t < 200; ++t) {
        double v = rng.uniform(-2, 3);
        Tensor y = min_clamp1(leaf({1}, {v}));
        CHECK(y.at(0) <= 1.0);
        CHECK(y.at(0) <= v);
    }
}

TEST_CASE("layer_norm constant row maps to bias") {
    Tensor gain = leaf({3}, {1, 1, 1});
    Tensor bias = leaf({3}, {0, 0, 0});
    Tensor y = layer_norm(leaf({3}, {1, 1, 1}), gain, bias);
    for (double v : y.values()) CHECK(v == Catch::Approx(0.0).margin(1e-12));

    Tensor bias5 = leaf({2}, {5, 5});
    Tensor y5 = layer_norm(leaf({2}, {7, 7}), leaf({2}, {1, 1}), bias5);
    for (double v : y5.values()) CHECK(v == Catch::Approx(5.0).margin(1e-12));
}

TEST_CASE("layer_norm matches hand normalization") {
    // x = [1,3]: mean 2, population variance 1 -> normalized [-1, 1] up to eps.
    Tensor y = layer_norm(leaf({2}, {1, 3}), leaf({2}, {1, 1}), leaf({2}, {0, 0}));
    CHECK(y.at(0) == Catch::Approx(-1.0).margin(1e-5));
    CHECK(y.at(1) == Catch::Approx(1.0).margin(1e-5));
}

TEST_CASE("cross entropy of uniform logits is log vocab") {
    Tensor logits = leaf({1, 4}, {0.7, 0.7, 0.7, 0.7});
    CHECK(cross_entropy_from_logits(logits, {2}).value() == Catch::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy hand example matches per-position oracle") {
    std::vector<double> row0{0.2, -0.3, 1.5};
    std::vector<double> row1{-1.0, 0.4, 0.0};
    std::vector<int> targets{2, 1};
    // Direct softmax+log oracle.
    auto nll = [](const std::vector<double>& row, int t) {
        double mx = *std::max_element(row.begin(), row.end());
        double z = 0;
        for (double v : row) z += std::exp(v - mx);
        return -(row[static_cast<std::size_t>(t)] - mx - std::log(z));
    };
    double want = (nll(row0, 2) + nll(row1, 1)) / 2.0;
    Tensor logits = leaf({2, 3}, {0.2, -0.3, 1.5, -1.0, 0.4, 0.0});
    CHECK(cross_entropy_from_logits(logits, targets).value() == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("cross entropy of near-certain target is near zero") {
    Tensor logits = leaf({1, 4}, {100, 0, 0, 0});
    CHECK(cross_entropy_from_logits(logits, {0}).value() == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("l2 distance") {
    Tensor v = leaf({2}, {3, -1});
    CHECK(l2_distance(v, v).value() == 0.0);
    CHECK(l2_distance(leaf({2}, {1, 2}), leaf({2}, {1, 0})).value() == 2.0);
}

TEST_CASE("embedding lookup gathers rows and rejects bad ids") {
    Tensor table = leaf({3, 2}, {0, 1, 10, 11, 20, 21});
    Tensor e = embedding_lookup(table, {2, 0});
    CHECK(e.values() == std::vector<double>{20, 21, 0, 1});
    CHECK_THROWS_AS(embedding_lookup(table, {3}), std::out_of_range);
    CHECK_THROWS_AS(embedding_lookup(table, {-1}), std::out_of_range);
}

TEST_CASE("exclusive prefix sum matches loop oracle") {
    Tensor a = leaf({3, 2}, {0.5, 0.5, 0.6, 0.4, 0.7, 0.3});
    Tensor c = exclusive_prefix_sum_rows(a);
    CHECK(c.values() == std::vector<double>{0, 0, 0.5, 0.5, 1.1, 0.9});
}

TEST_CASE("mean over axis") {
    Tensor x = leaf({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor m0 = mean_over_axis(x, 0);
    CHECK(m0.shape() == Shape{3});
    CHECK(m0.values() == std::vector<double>{2.5, 3.5, 4.5});
    Tensor m1 = mean_over_axis(x, 1);
    CHECK(m1.values() == std::vector<double>{2, 5});
}

TEST_CASE("mean over axis is exactly permutation invariant") {
    Rng rng(23);
    for (int t = 0; t < 30; ++t) {
        std::vector<double> rows(5 * 3);
        for (double& v : rows) v = rng.uniform(-1, 1) * std::pow(10.0, rng.uniform(-12, 2));
        Tensor m = mean_over_axis(leaf({5, 3}, rows), 0);
        std::vector<double> permuted(rows.size());
        std::vector<int> order{3, 0, 4, 1, 2};
        for (int r = 0; r < 5; ++r)
            for (int c = 0; c < 3; ++c)
                permuted[static_cast<std::size_t>(r * 3 + c)] =
                    rows[static_cast<std::size_t>(order[static_cast<std::size_t>(r)] * 3 + c)];
        Tensor mp = mean_over_axis(leaf({5, 3}, permuted), 0);
        CHECK(m.values() == mp.values());
    }
}

TEST_CASE("concat and slices round trip") {
    Tensor a = leaf({2, 2}, {1, 2, 3, 4});
    Tensor b = leaf({2, 1}, {9, 8});
    Tensor c = concat({a, b}, 1);
    CHECK(c.shape() == Shape{2, 3});
    CHECK(c.values() == std::vector<double>{1, 2, 9, 3, 4, 8});
    CHECK(col_slice(c, 0, 2).values() == a.values());
    CHECK(col_slice(c, 2, 3).values() == b.values());
    CHECK(row_slice(c, 1, 2).values() == std::vector<double>{3, 4, 8});
}

TEST_CASE("transpose last two") {
    Tensor x = leaf({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor t = transpose_last_two(x);
    CHECK(t.shape() == Shape{3, 2});
    CHECK(t.values() == std::vector<double>{1, 4, 2, 5, 3, 6});
}

TEST_CASE("backward of sum gives ones") {
    Tensor x = leaf({3}, {5, 6, 7}, true);
    backward(sum_all(x));
    CHECK(x.grad() == std::vector<double>{1, 1, 1});
}

TEST_CASE("backward of x squared") {
    Tensor x = leaf({1}, {2}, true);
    backward(sum_all(elementwise_mul(x, x)));
    CHECK(x.grad() == std::vector<double>{4});
}

TEST_CASE("backward requires scalar loss") {
    Tensor x = leaf({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(add(x, x)), ContractError);
}

TEST_CASE("repeated backward accumulates, zero_grad resets") {
    Tensor x = leaf({2}, {1, 2}, true);
    Tensor loss = sum_all(x);
    backward(loss);
    backward(loss);
    CHECK(x.grad() == std::vector<double>{2, 2});
    x.zero_grad();
    backward(loss);
    CHECK(x.grad() == std::vector<double>{1, 1});
}

TEST_CASE("backward is deterministic bit for bit") {
    auto run = [] {
        Rng rng(99);
        std::vector<double> av(12), bv(12);
        for (double& v : av) v = rng.uniform(-1, 1);
        for (double& v : bv) v = rng.uniform(-1, 1);
        Tensor a = leaf({3, 4}, av, true);
        Tensor b = leaf({4, 3}, bv, true);
        Tensor y = softmax_lastdim(matmul(a, b));
        backward(sum_all(elementwise_mul(y, y)));
        auto g = a.grad();
        auto h = b.grad();
        g.insert(g.end(), h.begin(), h.end());
        return g;
    };
    CHECK(run() == run());
}

TEST_CASE("scalar_mul with zero scale is exactly zero bias") {
    Tensor s = leaf({1}, {0.0}, true);
    Tensor x = leaf({3}, {0.25, 0.5, 1.0});
    Tensor y = scalar_mul(s, x);
    for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("dropout disabled is identity, enabled rescales") {
    Rng rng(3);
    Tensor x = leaf({4}, {1, 2, 3, 4});
    Tensor y = dropout(x, 0.0, rng);
    CHECK(y.values() == x.values());
    Tensor z = dropout(x, 0.5, rng);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK((z.values()[i] == 0.0 || z.values()[i] == Catch::Approx(2.0 * x.values()[i])));
    }
}
