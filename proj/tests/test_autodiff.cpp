#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "autodiff.h"
#include "error.h"
#include "rng.h"

#include <cmath>
#include <cstring>

using namespace gridvla;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, double lo = -2.0, double hi = 2.0) {
    Rng rng(seed);
    std::vector<double> v((size_t) shape.numel());
    for (double & x : v) x = lo + (hi - lo) * rng.uniform();
    return Tensor(std::move(shape), std::move(v));
}

} // namespace

TEST_CASE("matmul basics") {
    Tape t;
    Tensor identity({2, 2}, {1, 0, 0, 1});
    Tensor a({2, 2}, {1, 2, 3, 4});
    CHECK(t.matmul(identity, a).values() == std::vector<double>{1, 2, 3, 4});

    // hand multiplication oracle
    Tensor b({2, 2}, {5, 6, 7, 8});
    CHECK(t.matmul(a, b).values() == std::vector<double>{19, 22, 43, 50});

    Tensor z = Tensor::zeros({2, 3});
    Tensor any = random_tensor({3, 4}, 11);
    Tensor annihilated = t.matmul(z, any);
    for (double v : annihilated.values()) CHECK(v == 0.0);

    CHECK_THROWS_WITH_AS(t.matmul(a, Tensor::zeros({3, 2})),
                         doctest::Contains("[2,2] x [3,2]"), Error);
}

TEST_CASE("elementwise examples") {
    Tape t;
    CHECK(t.add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4})).values() == std::vector<double>{4, 6});
    CHECK(t.gelu(Tensor::scalar(0.0)).scalar_value() == 0.0);
    CHECK(t.gelu(Tensor::scalar(3.0)).scalar_value() == doctest::Approx(2.9964).epsilon(1e-3));
    CHECK_THROWS_AS(t.add(Tensor({2}, {1, 2}), Tensor({3}, {1, 2, 3})), Error);
    CHECK(t.scale(Tensor({2}, {1, -2}), 3.0).values() == std::vector<double>{3, -6});
    CHECK(t.sub(Tensor({2}, {1, 2}), Tensor({2}, {3, 1})).values() == std::vector<double>{-2, 1});
    CHECK(t.mul(Tensor({2}, {2, 3}), Tensor({2}, {4, 5})).values() == std::vector<double>{8, 15});
}

TEST_CASE("softmax") {
    Tape t;
    Tensor uniform = t.softmax(Tensor({3}, {0, 0, 0}));
    for (double v : uniform.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

    // no overflow on extreme logits
    Tensor extreme = t.softmax(Tensor({2}, {1000, 0}));
    CHECK(extreme.values()[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(extreme.values()[1] < 1e-300);
    CHECK(extreme.all_finite());

    // closed form: softmax(ln k) proportional to k
    Tensor logs = t.softmax(Tensor({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
    CHECK(std::abs(logs.values()[0] - 1.0 / 6) < 1e-12);
    CHECK(std::abs(logs.values()[1] - 2.0 / 6) < 1e-12);
    CHECK(std::abs(logs.values()[2] - 3.0 / 6) < 1e-12);

    // slices sum to 1 and shifting a slice by a constant changes nothing
    Tensor x = random_tensor({4, 7}, 21);
    Tensor y = t.softmax(x);
    for (int r = 0; r < 4; ++r) {
        double sum = 0;
        for (int c = 0; c < 7; ++c) sum += y.values()[(size_t) (r * 7 + c)];
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    std::vector<double> shifted = x.values();
    for (int c = 0; c < 7; ++c) shifted[(size_t) (2 * 7 + c)] += 13.75;
    Tensor y2 = t.softmax(Tensor({4, 7}, shifted));
    for (int c = 0; c < 7; ++c) {
        CHECK(std::abs(y.values()[(size_t) (2 * 7 + c)] - y2.values()[(size_t) (2 * 7 + c)]) < 1e-12);
    }
}

TEST_CASE("layer_norm") {
    Tape t;
    Tensor gamma = Tensor::full({4}, 1.0);
    Tensor beta  = Tensor::zeros({4});

    // constant row: zero variance absorbed by eps
    Tensor out = t.layer_norm(Tensor({1, 4}, {5, 5, 5, 5}), gamma, beta, 1e-5);
    for (double v : out.values()) CHECK(v == 0.0);

    // mean 2, std 1
    Tensor two = t.layer_norm(Tensor({1, 2}, {1, 3}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-12);
    CHECK(two.values()[0] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(two.values()[1] == doctest::Approx(1.0).epsilon(1e-6));

    // gamma 0 leaves only beta
    Tensor beta_only = t.layer_norm(random_tensor({3, 4}, 5), Tensor::zeros({4}),
                                    Tensor({4}, {7, 8, 9, 10}), 1e-5);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            CHECK(beta_only.values()[(size_t) (r * 4 + c)] == doctest::Approx(7.0 + c));
        }
    }
}

TEST_CASE("embedding_lookup") {
    Tape t;
    Tensor table = random_tensor({5, 3}, 31);

    Tensor first = t.embedding_lookup(table, {0});
    for (int c = 0; c < 3; ++c) CHECK(first.values()[(size_t) c] == table.values()[(size_t) c]);

    Tensor empty = t.embedding_lookup(table, {});
    CHECK(empty.shape() == Shape{0, 3});
    CHECK(empty.values().empty());

    CHECK_THROWS_WITH_AS(t.embedding_lookup(table, {5}), doctest::Contains("id 5"), Error);

    // duplicate ids accumulate gradient on the shared row
    Tape t2;
    Tensor leaf = t2.leaf(table);
    Tensor loss = t2.sum_all(t2.embedding_lookup(leaf, {2, 2}));
    Tensor grad = t2.backward(loss).grad(leaf);
    for (int c = 0; c < 3; ++c) {
        CHECK(grad.values()[(size_t) (2 * 3 + c)] == 2.0);
        CHECK(grad.values()[(size_t) c] == 0.0);
    }
}

TEST_CASE("masked_cross_entropy") {
    Tape t;

    // confident correct prediction contributes ~0
    std::vector<double> confident(4, 0.0);
    confident[1] = 1e6;
    Tensor one_loss = t.masked_cross_entropy(Tensor({1, 4}, confident), {1}, {1});
    CHECK(one_loss.scalar_value() < 1e-6);

    // uniform logits: -log(1/V)
    Tensor uniform = Tensor::zeros({3, 4});
    Tensor ln4 = t.masked_cross_entropy(uniform, {0, 1, 2}, {1, 1, 1});
    CHECK(std::abs(ln4.scalar_value() - std::log(4.0)) < 1e-12);

    // changing a target under a zero mask bit leaves the value bitwise unchanged
    Tensor logits = random_tensor({4, 5}, 77);
    std::vector<int> targets      = {1, 2, 3, 0};
    std::vector<uint8_t> mask     = {1, 0, 1, 0};
    double base = t.masked_cross_entropy(logits, targets, mask).scalar_value();
    std::vector<int> perturbed = targets;
    perturbed[1] = 4;
    perturbed[3] = 2;
    double same = t.masked_cross_entropy(logits, perturbed, mask).scalar_value();
    CHECK(std::memcmp(&base, &same, sizeof(double)) == 0);

    // flipping a supervised target changes the loss
    std::vector<int> flipped = targets;
    flipped[0] = 3;
    CHECK(t.masked_cross_entropy(logits, flipped, mask).scalar_value() != base);

    CHECK_THROWS_WITH_AS(t.masked_cross_entropy(logits, targets, {0, 0, 0, 0}),
                         doctest::Contains("no supervised positions"), Error);
    CHECK_THROWS_AS(t.masked_cross_entropy(logits, {1, 2, 3, 9}, mask), Error);
}

TEST_CASE("backward basics") {
    // d(sum)/dx is all ones
    Tape t;
    Tensor x    = t.leaf(random_tensor({3, 2}, 41));
    Tensor loss = t.sum_all(x);
    Tensor g    = t.backward(loss).grad(x);
    CHECK(g.shape() == x.shape());
    for (double v : g.values()) CHECK(v == 1.0);

    // product rule on scalars
    Tape t2;
    Tensor xs = t2.leaf(Tensor::scalar(3.0));
    Tensor ys = t2.leaf(Tensor::scalar(-2.5));
    GradientMap grads = t2.backward(t2.mul(xs, ys));
    CHECK(grads.grad(xs).scalar_value() == -2.5);
    CHECK(grads.grad(ys).scalar_value() == 3.0);

    // rank and state errors
    Tape t3;
    Tensor vec = t3.leaf(Tensor({2}, {1, 2}));
    CHECK_THROWS_WITH_AS(t3.backward(vec), doctest::Contains("scalar"), Error);
    CHECK_THROWS_AS(t3.backward(Tensor::scalar(1.0)), Error);
}

TEST_CASE("backward determinism is bitwise") {
    auto run = [](uint64_t seed) {
        Tape t;
        Tensor x = t.leaf(random_tensor({6, 6}, seed));
        Tensor w = t.leaf(random_tensor({6, 6}, seed + 1));
        Tensor h = t.gelu(t.matmul(x, w));
        Tensor s = t.softmax(h);
        Tensor loss = t.masked_cross_entropy(s, {1, 2, 3, 4, 5, 0}, {1, 1, 0, 1, 0, 1});
        GradientMap g = t.backward(loss);
        return std::make_pair(g.grad(x).values(), g.grad(w).values());
    };
    auto a = run(2024);
    auto b = run(2024);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("finite differences: closed-form cases") {
    // quadratic: exact up to rounding
    auto sum_sq = [](Tape & t, const Tensor & x) { return t.sum_all(t.mul(x, x)); };
    double err = finite_diff_check(sum_sq, Tensor({3}, {1, 2, 3}), 1e-5);
    CHECK(err < 1e-8);

    // constant function: both sides zero
    auto constant = [](Tape & t, const Tensor & x) {
        (void) x;
        Tensor c = t.leaf(Tensor::scalar(4.0));
        return t.scale(c, 1.0);
    };
    CHECK(finite_diff_check(constant, Tensor({3}, {1, 2, 3}), 1e-5) == 0.0);

    CHECK_THROWS_AS(finite_diff_check(sum_sq, Tensor({2}, {1, 2}), 0.5), Error);
}

TEST_CASE("finite differences: every differentiable op") {
    const double eps = 1e-5;
    const double tol = 1e-4;

    auto check = [&](const char * what, const std::function<Tensor(Tape &, const Tensor &)> & f,
                     const Tensor & x) {
        double err = finite_diff_check(f, x, eps);
        INFO(what);
        CHECK(err < tol);
    };

    Tensor m34 = random_tensor({3, 4}, 101);
    Tensor m43 = random_tensor({4, 3}, 102);
    Tensor m33 = random_tensor({3, 3}, 103);
    Tensor v4  = random_tensor({4}, 104);

    check("matmul lhs", [&](Tape & t, const Tensor & x) { return t.sum_all(t.gelu(t.matmul(x, m43))); }, m34);
    check("matmul rhs", [&](Tape & t, const Tensor & x) { return t.sum_all(t.gelu(t.matmul(m34, x))); }, m43);
    check("transpose", [&](Tape & t, const Tensor & x) { return t.sum_all(t.matmul(t.transpose(x), m34)); }, m34);
    check("add", [&](Tape & t, const Tensor & x) { return t.sum_all(t.mul(t.add(x, m33), t.add(x, 1.5))); }, m33);
    check("sub", [&](Tape & t, const Tensor & x) { return t.sum_all(t.mul(t.sub(x, m33), x)); }, m33);
    check("mul", [&](Tape & t, const Tensor & x) { return t.sum_all(t.mul(x, t.mul(x, m33))); }, m33);
    check("scale", [&](Tape & t, const Tensor & x) { return t.sum_all(t.scale(t.gelu(x), -1.25)); }, m33);
    check("gelu", [&](Tape & t, const Tensor & x) { return t.sum_all(t.gelu(x)); }, m34);
    check("softmax",
          [&](Tape & t, const Tensor & x) { return t.sum_all(t.mul(t.softmax(x), m34)); }, m34);
    check("layer_norm x",
          [&](Tape & t, const Tensor & x) {
              return t.sum_all(t.mul(t.layer_norm(x, v4, v4, 1e-5), m34));
          },
          m34);
    check("layer_norm gamma",
          [&](Tape & t, const Tensor & x) {
              return t.sum_all(t.mul(t.layer_norm(m34, x, v4, 1e-5), m34));
          },
          v4);
    check("layer_norm beta",
          [&](Tape & t, const Tensor & x) {
              return t.sum_all(t.mul(t.layer_norm(m34, v4, x, 1e-5), m34));
          },
          v4);
    check("embedding table",
          [&](Tape & t, const Tensor & x) {
              return t.sum_all(t.gelu(t.embedding_lookup(x, {0, 2, 2, 1})));
          },
          m34);
    check("masked CE logits",
          [&](Tape & t, const Tensor & x) {
              return t.masked_cross_entropy(x, {0, 3, 1}, {1, 0, 1});
          },
          m34);
    check("slice_rows", [&](Tape & t, const Tensor & x) { return t.sum_all(t.gelu(t.slice_rows(x, 1, 2))); }, m34);
    check("slice_cols", [&](Tape & t, const Tensor & x) { return t.sum_all(t.gelu(t.slice_cols(x, 1, 2))); }, m34);
    check("concat_rows",
          [&](Tape & t, const Tensor & x) {
              std::vector<Tensor> parts = {x, m34};
              return t.sum_all(t.gelu(t.concat_rows(parts)));
          },
          m34);
    check("concat_cols",
          [&](Tape & t, const Tensor & x) {
              std::vector<Tensor> parts = {x, m34};
              return t.sum_all(t.gelu(t.concat_cols(parts)));
          },
          m34);
    check("broadcast_rows",
          [&](Tape & t, const Tensor & x) {
              return t.sum_all(t.mul(t.broadcast_rows(x, 3), m34));
          },
          v4);
}

TEST_CASE("finite differences: two-layer network under masked CE") {
    Tensor w1 = random_tensor({5, 6}, 301, -0.5, 0.5);
    Tensor w2 = random_tensor({6, 7}, 302, -0.5, 0.5);
    Tensor x  = random_tensor({4, 5}, 303);
    std::vector<int> targets  = {1, 5, 0, 6};
    std::vector<uint8_t> mask = {1, 1, 0, 1};

    auto net = [&](Tape & t, const Tensor & w) {
        Tensor h = t.gelu(t.matmul(x, w));
        Tensor logits = t.matmul(h, w2);
        return t.masked_cross_entropy(logits, targets, mask);
    };
    CHECK(finite_diff_check(net, w1, 1e-5) < 1e-4);

    auto net2 = [&](Tape & t, const Tensor & w) {
        Tensor h = t.gelu(t.matmul(x, w1));
        Tensor logits = t.matmul(h, w);
        return t.masked_cross_entropy(logits, targets, mask);
    };
    CHECK(finite_diff_check(net2, w2, 1e-5) < 1e-4);
}

TEST_CASE("shape validation") {
    CHECK_THROWS_AS(Shape({-1, 2}), Error);
    CHECK_THROWS_AS(Shape(std::vector<int64_t>{}), Error);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, {1, 2, 3}), Error);
    CHECK(Shape({2, 3}).numel() == 6);
    CHECK(Shape({0, 3}).numel() == 0);
    CHECK(Shape({2, 3}).str() == "[2,3]");
}
