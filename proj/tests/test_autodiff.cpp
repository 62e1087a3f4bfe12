#include <doctest.h>

#include <cmath>

#include "mmpt/gradcheck.hpp"
#include "mmpt/optim.hpp"
#include "mmpt/param.hpp"
#include "mmpt/rng.hpp"
#include "mmpt/tensor.hpp"

using namespace mmpt;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, Real stddev = 1.0) {
    std::vector<Real> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.normal(0.0, stddev);
    return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("matmul worked examples") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor m({2, 2}, {5, 6, 7, 8});
    Tensor r = matmul(eye, m);
    for (size_t i = 0; i < 4; ++i) CHECK(r.data()[i] == doctest::Approx(m.data()[i]));

    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 1}, {1, 1});
    Tensor c = matmul(a, b);
    CHECK(c.data()[0] == doctest::Approx(3.0));
    CHECK(c.data()[1] == doctest::Approx(7.0));
}

TEST_CASE("silu worked examples") {
    Tensor x({3}, {0.0, 1.0, -1.0});
    Tensor y = silu(x);
    CHECK(y.data()[0] == doctest::Approx(0.0));
    CHECK(y.data()[1] == doctest::Approx(0.731059).epsilon(1e-4));

    Tensor z = Tensor({1}, {0.0}, true);
    sum(silu(z)).backward();
    CHECK(z.grad()[0] == doctest::Approx(0.5));
}

TEST_CASE("layer_norm centers and scales a row") {
    Tensor x({1, 2}, {1.0, 3.0});
    Tensor g = Tensor::full({2}, 1.0);
    Tensor b = Tensor::zeros({2});
    Tensor y = layer_norm(x, g, b);
    CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("cross entropy on uniform logits is log vocab") {
    const int vocab = 11;
    Tensor logits = Tensor::zeros({3, vocab});
    Tensor loss = softmax_cross_entropy(logits, {0, 5, 10}, {1, 1, 1});
    CHECK(loss.item() == doctest::Approx(std::log(static_cast<Real>(vocab))));
}

TEST_CASE("cross entropy ignores masked positions") {
    Tensor logits({2, 3}, {10.0, 0.0, 0.0, 0.0, 10.0, 0.0});
    Tensor all = softmax_cross_entropy(logits, {0, 0}, {1, 1});
    Tensor first = softmax_cross_entropy(logits, {0, 0}, {1, 0});
    CHECK(first.item() < all.item());
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 0}, {0, 0}), Error);
}

TEST_CASE("gradients accumulate until reset") {
    Tensor x = Tensor({2}, {1.0, 2.0}, true);
    Tensor loss = sum(mul(x, x));
    loss.backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    loss.backward();
    CHECK(x.grad()[0] == doctest::Approx(4.0));
    CHECK(x.grad()[1] == doctest::Approx(8.0));
    x.zero_grad();
    loss.backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("a tensor used twice gets both contributions") {
    Tensor x = Tensor({1}, {3.0}, true);
    // y = x*x + 2x, dy/dx = 2x + 2 = 8.
    Tensor y = add(mul(x, x), scale(x, 2.0));
    sum(y).backward();
    CHECK(x.grad()[0] == doctest::Approx(8.0));
}

TEST_CASE("no grad guard disables recording") {
    Tensor x = Tensor({2}, {1.0, 2.0}, true);
    {
        NoGradGuard guard;
        Tensor y = sum(mul(x, x));
        CHECK_FALSE(y.requires_grad());
        CHECK(y.node()->parents.empty());
    }
    Tensor y = sum(mul(x, x));
    CHECK(y.requires_grad());
}

TEST_CASE("backward rejects non-scalars") {
    Tensor x = Tensor({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(mul(x, x).backward(), ShapeError);
}

TEST_CASE("shape mismatches are rejected") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2}, {1, 2});
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(matmul(a, Tensor({3, 2}, {1, 2, 3, 4, 5, 6})), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), ShapeError);
}

TEST_CASE("embedding rejects out of range ids and accumulates repeats") {
    Tensor table = Tensor({4, 2}, {0, 1, 2, 3, 4, 5, 6, 7}, true);
    CHECK_THROWS_AS(embedding(table, {4}), DataError);
    CHECK_THROWS_AS(embedding(table, {-1}), DataError);

    Tensor rows = embedding(table, {1, 1, 2});
    sum(rows).backward();
    CHECK(table.grad()[2] == doctest::Approx(2.0));
    CHECK(table.grad()[4] == doctest::Approx(1.0));
    CHECK(table.grad()[0] == doctest::Approx(0.0));
}

TEST_CASE("masked softmax zeroes banned entries") {
    Tensor x({2, 3}, {1.0, 2.0, 3.0, 1.0, 1.0, 1.0});
    std::vector<uint8_t> allowed = {1, 1, 0, 1, 1, 1};
    Tensor p = masked_softmax_lastdim(x, allowed);
    CHECK(p.data()[2] == 0.0);
    CHECK(p.data()[0] + p.data()[1] == doctest::Approx(1.0));
    CHECK(p.data()[3] == doctest::Approx(1.0 / 3.0));

    std::vector<uint8_t> empty_row = {0, 0, 0, 1, 1, 1};
    CHECK_THROWS_AS(masked_softmax_lastdim(x, empty_row), ShapeError);
}

TEST_CASE("grid resize is exact identity at equal size") {
    Rng rng(7);
    Tensor x = random_tensor({16 * 16, 8}, rng);
    Tensor y = bilinear_resize_grid(x, 16, 16, 16, 16);
    for (size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("grid resize preserves a constant field") {
    Tensor x = Tensor::full({4 * 4, 3}, 2.5);
    Tensor y = bilinear_resize_grid(x, 4, 4, 9, 9);
    CHECK(y.dim(0) == 81);
    for (Real v : y.data()) CHECK(v == doctest::Approx(2.5));
}

TEST_CASE("grid resize reproduces a linear ramp exactly") {
    // Bilinear interpolation is exact on functions linear in row and column.
    std::vector<Real> v;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) v.push_back(2.0 * r + 3.0 * c);
    Tensor x({16, 1}, v);
    Tensor y = bilinear_resize_grid(x, 4, 4, 7, 7);
    for (int r = 0; r < 7; ++r) {
        for (int c = 0; c < 7; ++c) {
            const Real rr = static_cast<Real>(r) * 3 / 6;
            const Real cc = static_cast<Real>(c) * 3 / 6;
            CHECK(y.data()[static_cast<size_t>(r * 7 + c)] ==
                  doctest::Approx(2.0 * rr + 3.0 * cc));
        }
    }
}

TEST_CASE("finite differences confirm gradients of every op") {
    Rng rng(1234);
    const int cases = 5;
    for (int i = 0; i < cases; ++i) {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({3, 4}, rng);
        Tensor m2 = random_tensor({4, 2}, rng);
        Tensor bias = random_tensor({4}, rng);
        Tensor gain = random_tensor({4}, rng, 0.5);
        Tensor b3 = random_tensor({2, 3, 4}, rng);
        Tensor c3 = random_tensor({2, 4, 3}, rng);
        Tensor w44 = random_tensor({4, 4}, rng);

        CHECK(finite_difference_check([&](const Tensor& x) { return sum(add(x, b)); }, a) < 1e-4);
        CHECK(finite_difference_check([&](const Tensor& x) { return sum(sub(b, x)); }, a) < 1e-4);
        CHECK(finite_difference_check([&](const Tensor& x) { return sum(mul(x, b)); }, a) < 1e-4);
        CHECK(finite_difference_check([&](const Tensor& x) { return sum(scale(x, -1.7)); }, a) < 1e-4);
        CHECK(finite_difference_check(
                  [&](const Tensor& x) { return sum(mul(concat_rows({slice_rows(x, 0, 2), slice_rows(x, 1, 3)}),
                                                        w44)); },
                  a) < 1e-4);
        CHECK(finite_difference_check([&](const Tensor& x) { return sum(add_bias(x, bias)); }, a) < 1e-4);
        CHECK(finite_difference_check([&](const Tensor& x) { return sum(matmul(x, m2)); }, a) < 1e-4);
        CHECK(finite_difference_check([&](const Tensor& x) { return sum(bmm(x, c3)); }, b3) < 1e-4);
        CHECK(finite_difference_check([&](const Tensor& x) { return sum(transpose(x)); }, a) < 1e-4);
        CHECK(finite_difference_check([&](const Tensor& x) { return sum(mul(transpose_last2(x), transpose_last2(b3))); }, b3) < 1e-4);
        CHECK(finite_difference_check([&](const Tensor& x) { return sum(silu(x)); }, a) < 1e-4);
        CHECK(finite_difference_check([&](const Tensor& x) { return sum(tanh_t(x)); }, a) < 1e-4);
        CHECK(finite_difference_check([&](const Tensor& x) { return sum(mul(softmax_lastdim(x), b)); }, a) < 1e-4);
        CHECK(finite_difference_check([&](const Tensor& x) { return sum(mul(layer_norm(x, gain, bias), b)); }, a) < 1e-4);
        CHECK(finite_difference_check(
                  [&](const Tensor& x) {
                      return softmax_cross_entropy(x, {0, 3, 1}, {1, 0, 1});
                  },
                  a) < 1e-4);
        CHECK(finite_difference_check(
                  [&](const Tensor& x) { return sum(mul(bilinear_resize_grid(x, 3, 4, 5, 6),
                                                        Tensor::full({30, 1}, 0.3))); },
                  random_tensor({12, 1}, rng)) < 1e-4);
        Tensor rows4 = random_tensor({4, 4}, rng);
        CHECK(finite_difference_check(
                  [&](const Tensor& x) { return sum(mul(embedding(x, {0, 2, 2, 1}), rows4)); },
                  a) < 1e-4);
        Tensor h3 = random_tensor({2, 3, 2}, rng);
        CHECK(finite_difference_check(
                  [&](const Tensor& x) { return sum(mul(split_heads(x, 2), h3)); }, a) < 1e-4);
        CHECK(finite_difference_check(
                  [&](const Tensor& x) { return sum(mul(merge_heads(x), a)); }, h3) < 1e-4);
        Tensor w43 = random_tensor({4, 3}, rng);
        CHECK(finite_difference_check(
                  [&](const Tensor& x) { return sum(mul(reshape(x, {4, 3}), w43)); }, a) < 1e-4);
    }
}

TEST_CASE("scale_by routes gradients to both factor and gate") {
    Tensor x = Tensor({3}, {1.0, 2.0, 3.0}, true);
    Tensor gate = Tensor({1}, {0.5}, true);
    sum(scale_by(x, gate)).backward();
    CHECK(x.grad()[0] == doctest::Approx(0.5));
    CHECK(gate.grad()[0] == doctest::Approx(6.0));

    CHECK(finite_difference_check(
              [&](const Tensor& x2) { return sum(scale_by(x2, Tensor({1}, {0.25}))); },
              Tensor({3}, {1.0, -2.0, 0.5})) < 1e-4);
}

}  // TEST_SUITE

TEST_SUITE("optim") {

TEST_CASE("adamw matches a hand computed first step") {
    ParamStore store;
    Parameter& p = store.add("w", Tensor({2}, {1.0, -1.0}));
    store.zero_grads();
    auto& g = p.value.node()->grad;
    g[0] = 0.5;
    g[1] = -0.25;

    AdamWConfig cfg;
    AdamW opt(cfg);
    opt.step(store, 0.1);

    // First step: mhat = g, vhat = g^2, so the Adam term is g/(|g|+eps), and
    // decay subtracts lr*wd*w.
    const Real expected0 = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0);
    const Real expected1 = -1.0 - 0.1 * (-0.25 / (0.25 + 1e-8) + 0.01 * -1.0);
    CHECK(p.value.data()[0] == doctest::Approx(expected0).epsilon(1e-12));
    CHECK(p.value.data()[1] == doctest::Approx(expected1).epsilon(1e-12));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw decays weights with zero gradient") {
    ParamStore store;
    Parameter& p = store.add("w", Tensor({1}, {2.0}));
    store.zero_grads();
    AdamW opt;
    opt.step(store, 0.5);
    CHECK(p.value.data()[0] == doctest::Approx(2.0 - 0.5 * 0.01 * 2.0));
}

TEST_CASE("adamw requires populated gradients and skips frozen") {
    ParamStore store;
    store.add("trainable", Tensor({1}, {1.0}));
    Parameter& f = store.add("frozen", Tensor({1}, {5.0}), /*frozen=*/true);
    AdamW opt;
    CHECK_THROWS_AS(opt.step(store, 0.1), Error);

    store.zero_grads();
    opt.step(store, 0.1);
    CHECK(f.value.data()[0] == 5.0);
    CHECK(opt.slots().count("frozen") == 0);
}

TEST_CASE("global norm clip rescales to the limit") {
    ParamStore store;
    Parameter& a = store.add("a", Tensor({2}, {0.0, 0.0}));
    Parameter& b = store.add("b", Tensor({1}, {0.0}));
    store.zero_grads();
    a.value.node()->grad = {3.0, 0.0};
    b.value.node()->grad = {4.0};

    const Real before = clip_global_norm(store, 1.0);
    CHECK(before == doctest::Approx(5.0));
    Real sq = 0.0;
    for (Real g : a.value.grad()) sq += g * g;
    for (Real g : b.value.grad()) sq += g * g;
    CHECK(std::sqrt(sq) == doctest::Approx(1.0));

    // Under the limit nothing changes.
    store.zero_grads();
    a.value.node()->grad = {0.1, 0.0};
    b.value.node()->grad = {0.0};
    clip_global_norm(store, 1.0);
    CHECK(a.value.grad()[0] == doctest::Approx(0.1));
}

TEST_CASE("param store rejects duplicates and tracks trainables") {
    ParamStore store;
    store.add("a", Tensor({1}, {0.0}));
    store.add("b", Tensor({1}, {0.0}), /*frozen=*/true);
    CHECK_THROWS_AS(store.add("a", Tensor({1}, {0.0})), ConfigError);
    auto t = store.trainable();
    REQUIRE(t.size() == 1);
    CHECK(t[0]->name == "a");
    CHECK_FALSE(store.at("b").value.requires_grad());
}

}  // TEST_SUITE
