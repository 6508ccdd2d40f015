// Core tensor math: shapes, matmul, softmax, downsampling, activations, RNG
// and the binary tensor file format. Numeric oracles are hand-computed and
// frozen here; gradients are covered by the finite-difference suite.

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "omni/rng.hpp"
#include "omni/tensor.hpp"
#include "omni/tensor_io.hpp"

using namespace omni;

TEST_CASE("tensor construction and indexing") {
    Tensor t({2, 3});
    CHECK(t.rank() == 2);
    CHECK(t.numel() == 6);
    for (float v : t.data) CHECK(v == 0.0f);

    t.at(1, 2) = 5.0f;
    CHECK(t.data[5] == 5.0f);

    Tensor r({2, 2, 2});
    r.at(1, 0, 1) = 3.0f;
    CHECK(r.data[5] == 3.0f);

    CHECK(Tensor::full({2}, 7.0f).at(1) == 7.0f);
    CHECK(Tensor::shape_str({4, 5}) == "[4x5]");
    CHECK_THROWS_AS(Tensor({0, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor({2}, {1.0f, 2.0f, 3.0f}), DimensionError);
}

TEST_CASE("elementwise arithmetic enforces shapes") {
    const Tensor a({2, 2}, {1, 2, 3, 4});
    const Tensor b({2, 2}, {10, 20, 30, 40});
    const Tensor sum = a + b;
    CHECK(sum.at(1, 1) == 44.0f);
    const Tensor diff = b - a;
    CHECK(diff.at(0, 0) == 9.0f);
    const Tensor scaled = a * 2.0f;
    CHECK(scaled.at(1, 0) == 6.0f);
    CHECK_THROWS_AS(a + Tensor({2, 3}), DimensionError);
    CHECK_THROWS_AS(a - Tensor({1, 4}), DimensionError);
}

TEST_CASE("matmul matches a hand-computed product") {
    const Tensor a({2, 2}, {1, 2, 3, 4});
    const Tensor b({2, 2}, {5, 6, 7, 8});
    const Tensor c = matmul(a, b);
    CHECK(c.at(0, 0) == doctest::Approx(19.0));
    CHECK(c.at(0, 1) == doctest::Approx(22.0));
    CHECK(c.at(1, 0) == doctest::Approx(43.0));
    CHECK(c.at(1, 1) == doctest::Approx(50.0));
    CHECK_THROWS_AS(matmul(a, Tensor({3, 2})), DimensionError);
}

TEST_CASE("transpose2d swaps axes") {
    const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor t = transpose2d(a);
    CHECK(t.shape == std::vector<int>{3, 2});
    CHECK(t.at(2, 1) == 6.0f);
    CHECK(t.at(0, 1) == 4.0f);
    CHECK_THROWS_AS(transpose2d(Tensor({2, 2, 2})), DimensionError);
}

TEST_CASE("softmax of a 1-2-3-4 row matches the frozen oracle") {
    const Tensor x({1, 4}, {1, 2, 3, 4});
    const Tensor y = softmax(x, 1);
    // exp(k)/sum(exp(1..4)), computed independently.
    CHECK(y.at(0, 0) == doctest::Approx(0.0320586).epsilon(1e-5));
    CHECK(y.at(0, 1) == doctest::Approx(0.0871443).epsilon(1e-5));
    CHECK(y.at(0, 2) == doctest::Approx(0.2368828).epsilon(1e-5));
    CHECK(y.at(0, 3) == doctest::Approx(0.6439143).epsilon(1e-5));

    double sum = 0.0;
    for (float v : y.data) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK_THROWS_AS(softmax(x, 2), DimensionError);
}

TEST_CASE("softmax rows sum to one on every axis") {
    Rng rng(3);
    const Tensor x = Tensor::random_uniform({4, 6}, rng, 5.0f);
    for (int axis = 0; axis < 2; ++axis) {
        const Tensor y = softmax(x, axis);
        const int outer = axis == 0 ? x.shape[1] : x.shape[0];
        const int inner = axis == 0 ? x.shape[0] : x.shape[1];
        for (int o = 0; o < outer; ++o) {
            double sum = 0.0;
            for (int i = 0; i < inner; ++i) sum += axis == 0 ? y.at(i, o) : y.at(o, i);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("softmax backward rows are zero-sum") {
    // dx_i = y_i (dy_i - sum_j y_j dy_j): each row of dx must sum to zero
    // because softmax is invariant to a constant logit shift.
    Rng rng(5);
    const Tensor x = Tensor::random_uniform({3, 5}, rng, 2.0f);
    const Tensor y = softmax(x, 1);
    const Tensor dout = Tensor::random_uniform({3, 5}, rng, 1.0f);
    const Tensor dx = softmax_backward(y, dout, 1);
    for (int i = 0; i < 3; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 5; ++j) sum += dx.at(i, j);
        CHECK(sum == doctest::Approx(0.0).epsilon(1e-6));
    }
    CHECK_THROWS_AS(softmax_backward(y, Tensor({3, 4}), 1), DimensionError);
}

TEST_CASE("2x downsample of a 4x4 ramp is the window means") {
    Tensor f({4, 4, 1});
    for (int i = 0; i < 16; ++i) f.data[i] = static_cast<float>(i);
    const Tensor d = bilinear_downsample2x(f);
    CHECK(d.shape == std::vector<int>{2, 2, 1});
    CHECK(d.at(0, 0, 0) == doctest::Approx(2.5));
    CHECK(d.at(0, 1, 0) == doctest::Approx(4.5));
    CHECK(d.at(1, 0, 0) == doctest::Approx(10.5));
    CHECK(d.at(1, 1, 0) == doctest::Approx(12.5));

    CHECK_THROWS_AS(bilinear_downsample2x(Tensor({3, 4, 1})), InputError);
    CHECK_THROWS_AS(bilinear_downsample2x(Tensor({4, 4})), DimensionError);
}

TEST_CASE("downsample backward spreads each gradient over its window") {
    const Tensor f = Tensor::zeros({2, 2, 1});
    Tensor dout({1, 1, 1});
    dout.at(0, 0, 0) = 1.0f;
    const Tensor dx = bilinear_downsample2x_backward(f, dout);
    for (float v : dx.data) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("scalar activations match their definitions") {
    CHECK(activate(Activation::identity, -1.5f) == doctest::Approx(-1.5));
    CHECK(activate(Activation::relu, -1.0f) == doctest::Approx(0.0));
    CHECK(activate(Activation::relu, 2.0f) == doctest::Approx(2.0));
    CHECK(activate(Activation::gelu, 0.0f) == doctest::Approx(0.0));
    // gelu(1) = 0.5 * (1 + erf(1/sqrt(2)))
    CHECK(activate(Activation::gelu, 1.0f) == doctest::Approx(0.8413447).epsilon(1e-5));
    CHECK(activate(Activation::tanh_act, 1.0f) == doctest::Approx(std::tanh(1.0)).epsilon(1e-6));

    for (Activation a : {Activation::identity, Activation::relu, Activation::gelu,
                         Activation::tanh_act}) {
        CHECK(activation_from_name(activation_name(a)) == a);
    }
    CHECK_THROWS_AS(activation_from_name("swish"), ConfigError);
}

TEST_CASE("rng streams are deterministic and seed-sensitive") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 64; ++i) {
        const std::uint64_t va = a.next_u64();
        all_equal = all_equal && va == b.next_u64();
        any_diff = any_diff || va != c.next_u64();
    }
    CHECK(all_equal);
    CHECK(any_diff);

    Rng r(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(r.below(10) < 10);
        const double v = r.uniform(-2.0, 3.0);
        CHECK(v >= -2.0);
        CHECK(v < 3.0);
    }
}

TEST_CASE("rng shuffle permutes without losing elements") {
    std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
    const std::multiset<int> before(v.begin(), v.end());
    Rng r(11);
    r.shuffle(v);
    CHECK(std::multiset<int>(v.begin(), v.end()) == before);

    std::vector<int> v2{1, 2, 3, 4, 5, 6, 7, 8};
    Rng r2(11);
    r2.shuffle(v2);
    CHECK(v == v2);  // same seed, same permutation
}

TEST_CASE("random_uniform stays inside its bound") {
    Rng rng(9);
    const Tensor t = Tensor::random_uniform({50, 4}, rng, 0.25f);
    for (float v : t.data) {
        CHECK(v >= -0.25f);
        CHECK(v <= 0.25f);
    }
    CHECK(t.all_finite());
}

TEST_CASE("tensor files round-trip bit-exactly") {
    Rng rng(21);
    const Tensor t = Tensor::random_uniform({3, 5, 2}, rng, 2.0f);
    const std::string path = "/tmp/omni_test_tensor_roundtrip.tnsr";
    write_tensor_file(path, t);
    const Tensor back = read_tensor_file(path);
    CHECK(back.shape == t.shape);
    CHECK(back.data == t.data);
    std::remove(path.c_str());

    CHECK_THROWS_AS(read_tensor_file("/tmp/omni_test_tensor_missing.tnsr"), IoError);

    const std::string bad = "/tmp/omni_test_tensor_bad.tnsr";
    {
        std::FILE* f = std::fopen(bad.c_str(), "wb");
        std::fputs("NOPE....", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(read_tensor_file(bad), IoError);
    std::remove(bad.c_str());
}
