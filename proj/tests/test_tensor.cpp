#include <doctest.h>

#include <cmath>
#include <complex>

#include "parkcast/fft.hpp"
#include "parkcast/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace parkcast;
using parkcast::testing::fd_grad;
using parkcast::testing::max_rel_err;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
    return Tensor::uniform(std::move(shape), rng, -2.0, 2.0, requires_grad);
}

// Runs analytic backward for scalar loss_fn(x) and compares against central
// finite differences on x.
void check_grad(Tensor x, const std::function<Tensor()>& loss_fn, double tol = 1e-4) {
    Tensor loss = loss_fn();
    backward(loss);
    const std::vector<double> analytic = x.grad();
    const std::vector<double> numeric = fd_grad(x, [&]() { return loss_fn().value(); });
    CHECK(max_rel_err(analytic, numeric) < tol);
}

} // namespace

TEST_CASE("matmul identity case") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor out = matmul(eye, m);
    CHECK(out.data() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("matmul shape error names both shapes") {
    Tensor a({2, 3});
    Tensor b({4, 5});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("(2,3)"), ShapeError);
}

TEST_CASE("matmul gradient of sum(A*B) w.r.t. A is B^T rows") {
    Rng rng(11);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng, false);
    Tensor loss = sum(matmul(a, b));
    backward(loss);
    // d/dA[i,p] sum_j (A B)[i,j] = sum_j B[p,j]
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t p = 0; p < 4; ++p) {
            double expect = 0.0;
            for (std::size_t j = 0; j < 2; ++j) expect += b.at({p, j});
            CHECK(a.grad()[i * 4 + p] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
    // and against finite differences
    check_grad(a, [&]() { return sum(matmul(a, b)); }, 1e-6);
}

TEST_CASE("batched matmul with broadcast weight matches per-slice products") {
    Rng rng(3);
    Tensor a = random_tensor({2, 3, 4, 5}, rng);
    Tensor w = random_tensor({5, 6}, rng);
    Tensor out = matmul(a, w);
    REQUIRE(out.shape() == Shape{2, 3, 4, 6});
    for (std::size_t b0 = 0; b0 < 2; ++b0) {
        for (std::size_t b1 = 0; b1 < 3; ++b1) {
            for (std::size_t i = 0; i < 4; ++i) {
                for (std::size_t j = 0; j < 6; ++j) {
                    double expect = 0.0;
                    for (std::size_t k = 0; k < 5; ++k) {
                        expect += a.at({b0, b1, i, k}) * w.at({k, j});
                    }
                    CHECK(out.at({b0, b1, i, j}) == doctest::Approx(expect).epsilon(1e-12));
                }
            }
        }
    }
    check_grad(w, [&]() { return sum(matmul(a, w)); }, 1e-5);
    check_grad(a, [&]() { return mean(mul(matmul(a, w), matmul(a, w))); }, 1e-4);
}

TEST_CASE("softmax fixed points") {
    Tensor x = Tensor::from_data({3}, {0, 0, 0});
    Tensor y = softmax(x, 0);
    for (double v : y.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-14));

    Tensor big = Tensor::from_data({2}, {1000, 1000});
    Tensor yb = softmax(big, 0);
    CHECK(yb.data()[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(std::isfinite(yb.data()[0]));

    // closed form e^0/(e^0+3)
    Tensor z = Tensor::from_data({2}, {0.0, std::log(3.0)});
    Tensor yz = softmax(z, 0);
    CHECK(yz.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(yz.data()[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
    Rng rng(7);
    Tensor x = random_tensor({4, 5, 6}, rng, false);
    for (int axis : {0, 1, 2, -1}) {
        Tensor y = softmax(x, axis);
        const std::size_t ax = axis < 0 ? 2 : static_cast<std::size_t>(axis);
        std::size_t outer = 1, inner = 1;
        for (std::size_t d = 0; d < ax; ++d) outer *= x.shape()[d];
        for (std::size_t d = ax + 1; d < 3; ++d) inner *= x.shape()[d];
        const std::size_t n = x.shape()[ax];
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                double total = 0.0;
                for (std::size_t j = 0; j < n; ++j) total += y.data()[o * n * inner + j * inner + in];
                CHECK(std::abs(total - 1.0) <= 1e-12);
            }
        }
    }
    Tensor shifted = add_scalar(x, 123.456);
    Tensor y0 = softmax(x, 1);
    Tensor y1 = softmax(shifted, 1);
    for (std::size_t i = 0; i < y0.size(); ++i) {
        CHECK(std::abs(y0.data()[i] - y1.data()[i]) <= 1e-12);
    }
}

TEST_CASE("softmax gradient matches finite differences") {
    Rng rng(19);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({3, 4}, rng, false);
    check_grad(x, [&]() { return sum(mul(softmax(x, 1), w)); });
}

TEST_CASE("layer_norm zero variance returns beta exactly") {
    Tensor h = Tensor::from_data({3}, {5, 5, 5});
    Tensor gamma = Tensor::from_data({3}, {1, 1, 1});
    Tensor beta = Tensor::from_data({3}, {0.25, -1.0, 2.0});
    Tensor y = layer_norm(h, gamma, beta, 1e-5);
    CHECK(y.data()[0] == 0.25);
    CHECK(y.data()[1] == -1.0);
    CHECK(y.data()[2] == 2.0);
}

TEST_CASE("layer_norm closed form at unit variance") {
    Tensor h = Tensor::from_data({2}, {-1, 1});
    Tensor gamma = Tensor::from_data({2}, {1, 1});
    Tensor beta = Tensor::from_data({2}, {0, 0});
    Tensor y = layer_norm(h, gamma, beta, 1e-5);
    CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm gradients match finite differences") {
    Rng rng(23);
    Tensor h = random_tensor({4, 6}, rng);
    Tensor gamma = random_tensor({6}, rng);
    Tensor beta = random_tensor({6}, rng);
    Tensor w = random_tensor({4, 6}, rng, false);
    auto loss_fn = [&]() { return sum(mul(layer_norm(h, gamma, beta, 1e-5), w)); };
    check_grad(h, loss_fn);
    check_grad(gamma, loss_fn);
    check_grad(beta, loss_fn);
}

TEST_CASE("layer_norm rejects feature dim mismatch") {
    Tensor h({2, 4});
    Tensor gamma({3});
    Tensor beta({4});
    CHECK_THROWS_AS(layer_norm(h, gamma, beta), ShapeError);
}

TEST_CASE("relu and its subgradient at zero") {
    Tensor x = Tensor::from_data({3}, {-1, 0, 2}, true);
    Tensor y = relu(x);
    CHECK(y.data() == std::vector<double>{0, 0, 2});
    backward(sum(y));
    CHECK(x.grad() == std::vector<double>{0, 0, 1});
}

TEST_CASE("elementwise broadcasting forward and backward") {
    Rng rng(31);
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor c = add(a, b);
    CHECK(c.at({1, 2, 3}) == doctest::Approx(a.at({1, 2, 3}) + b.at({3})));
    auto loss_fn = [&]() { return mean(mul(add(a, b), add(a, b))); };
    check_grad(a, loss_fn);
    check_grad(b, loss_fn);

    // general broadcast path (middle axis)
    Tensor m = random_tensor({2, 1, 4}, rng);
    auto loss2 = [&]() { return sum(mul(a, m)); };
    check_grad(m, loss2, 1e-5);
    CHECK(mul(a, m).shape() == Shape{2, 3, 4});

    Tensor bad({3, 5});
    CHECK_THROWS_AS(add(a, bad), ShapeError);
}

TEST_CASE("mse basics and gradient") {
    Tensor a = Tensor::from_data({2}, {1, 2});
    CHECK(mse(a, a).value() == 0.0);
    Rng rng(5);
    Tensor p = random_tensor({3, 2}, rng);
    Tensor t = random_tensor({3, 2}, rng, false);
    check_grad(p, [&]() { return mse(p, t); });
}

TEST_CASE("permute is an involution and reshape roundtrips") {
    Rng rng(41);
    Tensor z = random_tensor({2, 3, 4}, rng, false);
    Tensor twice = permute(permute(z, {0, 2, 1}), {0, 2, 1});
    CHECK(twice.data() == z.data());
    Tensor r = reshape(reshape(z, {6, 4}), {2, 3, 4});
    CHECK(r.data() == z.data());
    CHECK_THROWS_AS(permute(z, {0, 1, 1}), ShapeError);
    CHECK_THROWS_AS(reshape(z, {5, 5}), ShapeError);
}

TEST_CASE("permute/concat/slice/take gradients") {
    Rng rng(43);
    Tensor x = random_tensor({2, 3, 4}, rng);
    Tensor w = random_tensor({4, 3, 2}, rng, false);
    check_grad(x, [&]() { return sum(mul(permute(x, {2, 1, 0}), w)); }, 1e-5);

    Tensor y = random_tensor({2, 3, 4}, rng);
    Tensor wc = random_tensor({2, 6, 4}, rng, false);
    check_grad(y, [&]() { return sum(mul(concat({x, y}, 1), wc)); }, 1e-5);

    Tensor ws = random_tensor({2, 2, 4}, rng, false);
    check_grad(x, [&]() { return sum(mul(slice(x, 1, 1, 2), ws)); }, 1e-5);

    Tensor wt = random_tensor({2, 3, 3}, rng, false);
    check_grad(x, [&]() { return sum(mul(take(x, 2, {3, 0, 3}), wt)); }, 1e-5);
}

TEST_CASE("backward of sum of squares") {
    Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
    backward(sum(mul(x, x)));
    CHECK(x.grad() == std::vector<double>{2, 4, 6});
}

TEST_CASE("diamond reuse accumulates correctly") {
    Tensor x = Tensor::from_data({2}, {1.5, -0.5}, true);
    Tensor y = mul(x, x);
    backward(sum(add(y, y)));
    CHECK(x.grad()[0] == doctest::Approx(4 * 1.5).epsilon(1e-12));
    CHECK(x.grad()[1] == doctest::Approx(4 * -0.5).epsilon(1e-12));
}

TEST_CASE("zero-dependence parameter has exactly zero grad") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tensor unused = Tensor::from_data({2}, {3, 4}, true);
    backward(sum(mul(x, x)));
    CHECK(unused.grad() == std::vector<double>{0, 0});
}

TEST_CASE("backward errors") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(backward(y), Error); // non-scalar
    Tensor detached = Tensor::scalar(1.0);
    CHECK_THROWS_AS(backward(detached), Error);
}

TEST_CASE("tape is cleared after backward and NoGradGuard suspends recording") {
    GradTape& tape = GradTape::active();
    tape.clear();
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tensor loss = sum(mul(x, x));
    CHECK(tape.size() == 2);
    backward(loss);
    CHECK(tape.size() == 0);
    {
        NoGradGuard guard;
        Tensor y = mul(x, x);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(tape.size() == 0);
}

TEST_CASE("taped replay is deterministic") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor a = random_tensor({4, 4}, rng);
        Tensor b = random_tensor({4, 4}, rng);
        Tensor loss = mean(mul(softmax(matmul(a, b), 1), a));
        backward(loss);
        return std::make_pair(loss.value(), a.grad());
    };
    auto r1 = run(99);
    auto r2 = run(99);
    CHECK(r1.first == r2.first);
    CHECK(r1.second == r2.second);
}

TEST_CASE("dropout scales kept entries and is identity in eval mode") {
    Rng rng(17);
    Tensor x = Tensor::from_data({1000}, std::vector<double>(1000, 1.0), true);
    Tensor y = dropout(x, 0.25, rng, true);
    std::size_t kept = 0;
    for (double v : y.data()) {
        CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
        if (v != 0.0) ++kept;
    }
    CHECK(kept > 650);
    CHECK(kept < 850);
    backward(sum(y));
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(x.grad()[i] == y.data()[i]); // same mask, same scale
    }
    Rng rng2(17);
    Tensor z = dropout(x, 0.25, rng2, false);
    CHECK(z.data() == x.data());
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::from_data({3}, {1, 2, 3}, true);
    std::vector<Tensor> params{p};
    AdamState state;
    adam_step(params, state, {});
    CHECK(p.data() == std::vector<double>{1, 2, 3});
}

TEST_CASE("adam: first step with unit gradient moves by ~lr") {
    // m_hat = g, v_hat = g^2 => delta = lr * g / (|g| + eps)
    Tensor p = Tensor::from_data({1}, {0.5}, true);
    p.grad()[0] = 1.0;
    std::vector<Tensor> params{p};
    AdamState state;
    AdamParams hp;
    hp.lr = 0.01;
    adam_step(params, state, hp);
    CHECK(p.data()[0] == doctest::Approx(0.5 - 0.01).epsilon(1e-6));
}

TEST_CASE("adam: deterministic across identical runs") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor w = random_tensor({4, 4}, rng);
        Tensor x = random_tensor({4, 4}, rng, false);
        AdamOptimizer opt({w}, {});
        for (int it = 0; it < 5; ++it) {
            opt.zero_grad();
            backward(mse(matmul(x, w), x));
            opt.step();
        }
        return w.data();
    };
    CHECK(run(123) == run(123));
}

TEST_CASE("adam: NaN gradient raises a training error") {
    Tensor p = Tensor::from_data({1}, {1.0}, true);
    p.grad()[0] = std::nan("");
    std::vector<Tensor> params{p};
    AdamState state;
    CHECK_THROWS_AS(adam_step(params, state, {}), TrainingError);
}

TEST_CASE("mac counter charges m*k*n per matmul") {
    mac_counter::reset();
    Tensor a({7, 5});
    Tensor b({5, 3});
    matmul(a, b);
    CHECK(mac_counter::value() == 7 * 5 * 3);
    Tensor c({2, 4, 7, 5});
    matmul(c, b);
    CHECK(mac_counter::value() == 7 * 5 * 3 + 2 * 4 * 7 * 5 * 3);
}

TEST_CASE("fft matches brute-force DFT and roundtrips") {
    auto dft_oracle = [](const std::vector<std::complex<double>>& x) {
        const std::size_t n = x.size();
        std::vector<std::complex<double>> out(n);
        for (std::size_t k = 0; k < n; ++k) {
            std::complex<double> acc{0, 0};
            for (std::size_t j = 0; j < n; ++j) {
                const double ang = -2.0 * 3.14159265358979323846 *
                                   static_cast<double>(k * j) / static_cast<double>(n);
                acc += x[j] * std::complex<double>(std::cos(ang), std::sin(ang));
            }
            out[k] = acc;
        }
        return out;
    };
    Rng rng(2024);
    for (std::size_t n : {8u, 12u, 45u}) {
        std::vector<std::complex<double>> x(n);
        for (auto& v : x) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        auto expect = dft_oracle(x);
        auto got = x;
        fft(got, false);
        for (std::size_t k = 0; k < n; ++k) {
            CHECK(std::abs(got[k] - expect[k]) < 1e-9);
        }
        fft(got, true);
        for (std::size_t k = 0; k < n; ++k) {
            CHECK(std::abs(got[k] - x[k]) < 1e-9);
        }
    }
}
