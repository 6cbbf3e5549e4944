#include <doctest.h>

#include <cmath>

#include "mla/tensor.hpp"
#include "test_util.hpp"

using namespace mla;
using testutil::bits_equal;
using testutil::copy_of;
using testutil::max_grad_rel_err;
using testutil::random_tensor;

namespace {

struct DtypeGuard {
    Dtype saved = default_dtype();
    ~DtypeGuard() { set_default_dtype(saved); }
};

}  // namespace

TEST_CASE("construction and shape accessors") {
    Tensor z = Tensor::zeros({2, 3});
    CHECK(z.rank() == 2);
    CHECK(z.numel() == 6);
    CHECK(z.dim(0) == 2);
    CHECK(z.dim(-1) == 3);
    for (double v : z.data()) CHECK(v == 0.0);

    Tensor f = Tensor::full({2}, 1.5);
    CHECK(f.data()[0] == 1.5);
    CHECK(f.data()[1] == 1.5);

    Tensor s = Tensor::scalar(4.25);
    CHECK(s.value() == 4.25);

    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
    CHECK_THROWS_AS((void)z.value(), UsageError);
}

TEST_CASE("node ids are monotonically increasing") {
    Tensor a = Tensor::zeros({2});
    Tensor b = Tensor::zeros({2});
    Tensor c = add(a, b);
    CHECK(a.node_id() < b.node_id());
    CHECK(b.node_id() < c.node_id());
}

TEST_CASE("softmax frozen oracle") {
    Tensor x = Tensor::from_data({1, 3}, {1.0, 2.0, 3.0});
    Tensor y = softmax_lastdim(x);
    CHECK(y.data()[0] == doctest::Approx(0.09003057317038046).epsilon(1e-13));
    CHECK(y.data()[1] == doctest::Approx(0.24472847105479764).epsilon(1e-13));
    CHECK(y.data()[2] == doctest::Approx(0.6652409557748218).epsilon(1e-13));
}

TEST_CASE("softmax rows sum to one and shifting is invariant") {
    Rng rng(5);
    Tensor x = random_tensor({4, 7}, rng, -3.0, 3.0);
    Tensor y = softmax_lastdim(x);
    for (int r = 0; r < 4; ++r) {
        double s = 0.0;
        for (int c = 0; c < 7; ++c) s += y.data()[static_cast<size_t>(r) * 7 + c];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    std::vector<double> shifted = copy_of(x.data());
    for (auto& v : shifted) v += 100.0;
    Tensor y2 = softmax_lastdim(Tensor::from_data({4, 7}, std::move(shifted)));
    for (size_t i = 0; i < y.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(y2.data()[i]).epsilon(1e-12));
}

TEST_CASE("softmax rejects non-finite input") {
    Tensor x = Tensor::from_data({1, 2}, {1.0, std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS((void)softmax_lastdim(x), NumericError);
}

TEST_CASE("gelu frozen oracle") {
    Tensor x = Tensor::from_data({4}, {0.0, 1.0, -1.0, 0.5});
    Tensor y = gelu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == doctest::Approx(0.8413447460685429).epsilon(1e-13));
    CHECK(y.data()[2] == doctest::Approx(-0.15865525393145707).epsilon(1e-13));
    CHECK(y.data()[3] == doctest::Approx(0.34573123063700656).epsilon(1e-13));
}

TEST_CASE("cross entropy frozen oracles") {
    Tensor even = Tensor::from_data({1, 2}, {0.0, 0.0});
    CHECK(cross_entropy(even, {0}).value() == doctest::Approx(0.6931471805599453).epsilon(1e-13));

    Tensor x = Tensor::from_data({1, 3}, {1.0, 2.0, 3.0});
    CHECK(cross_entropy(x, {2}).value() == doctest::Approx(0.4076059644443806).epsilon(1e-13));

    // batch mean: two rows, the second is the mirror case
    Tensor b = Tensor::from_data({2, 2}, {0.0, 0.0, 0.0, 0.0});
    CHECK(cross_entropy(b, {0, 1}).value() ==
          doctest::Approx(0.6931471805599453).epsilon(1e-13));

    CHECK_THROWS_AS((void)cross_entropy(x, {3}), InputError);
    CHECK_THROWS_AS((void)cross_entropy(x, {0, 1}), InputError);  // label count != batch
}

TEST_CASE("matmul values and batching") {
    Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
    Tensor c = matmul(a, b);
    CHECK(c.shape() == std::vector<int>{2, 2});
    CHECK(copy_of(c.data()) == std::vector<double>{58, 64, 139, 154});

    // batched: (2,2,3) x (2,3,2), second batch entry scaled by 10
    std::vector<double> ab = copy_of(a.data());
    std::vector<double> bb = copy_of(b.data());
    std::vector<double> a2 = ab, b2 = bb;
    for (double v : ab) a2.push_back(v * 10.0);
    for (double v : bb) b2.push_back(v);
    Tensor c2 = matmul(Tensor::from_data({2, 2, 3}, std::move(a2)),
                       Tensor::from_data({2, 3, 2}, std::move(b2)));
    CHECK(c2.shape() == std::vector<int>{2, 2, 2});
    CHECK(copy_of(c2.data()) ==
          std::vector<double>{58, 64, 139, 154, 580, 640, 1390, 1540});

    CHECK_THROWS_AS((void)matmul(a, a), DimensionError);
}

TEST_CASE("elementwise and structural ops") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 2}, {10, 20, 30, 40});
    CHECK(copy_of(add(a, b).data()) == std::vector<double>{11, 22, 33, 44});
    CHECK(copy_of(scale(a, 2.5).data()) == std::vector<double>{2.5, 5, 7.5, 10});
    CHECK(copy_of(mul(a, b).data()) == std::vector<double>{10, 40, 90, 160});
    CHECK(sum_all(a).value() == 10.0);

    Tensor bias = Tensor::from_data({2}, {100, 200});
    CHECK(copy_of(add_bias_lastdim(a, bias).data()) ==
          std::vector<double>{101, 202, 103, 204});

    Tensor cat = concat_lastdim({a, b});
    CHECK(cat.shape() == std::vector<int>{2, 4});
    CHECK(copy_of(cat.data()) == std::vector<double>{1, 2, 10, 20, 3, 4, 30, 40});

    Tensor t = transpose_last2(a);
    CHECK(copy_of(t.data()) == std::vector<double>{1, 3, 2, 4});

    Tensor r = reshape(a, {4});
    CHECK(r.shape() == std::vector<int>{4});
    CHECK(bits_equal(r.data(), a.data()));
    CHECK_THROWS_AS((void)reshape(a, {3}), DimensionError);

    Tensor x4 = Tensor::from_data({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor fl = flatten(x4);
    CHECK(fl.shape() == std::vector<int>{1, 8});
    Tensor back = reshape(fl, {1, 2, 2, 2});
    CHECK(bits_equal(back.data(), x4.data()));

    // (1,2,2,2) mean over h,w
    Tensor ms = mean_spatial(x4);
    CHECK(ms.shape() == std::vector<int>{1, 2});
    CHECK(ms.data()[0] == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(ms.data()[1] == doctest::Approx(6.5).epsilon(1e-15));
}

TEST_CASE("finite differences: linear ops under 1e-6") {
    Rng rng(17);
    Tensor c23 = random_tensor({2, 3}, rng);
    Tensor c32 = random_tensor({3, 2}, rng);
    Tensor c22 = random_tensor({2, 2}, rng);
    Tensor c2 = random_tensor({2}, rng);

    SUBCASE("matmul wrt A") {
        Tensor x = random_tensor({2, 3}, rng);
        CHECK(max_grad_rel_err(x, [&] { return sum_all(mul(matmul(x, c32), c22)); }) < 1e-6);
    }
    SUBCASE("matmul wrt B") {
        Tensor x = random_tensor({3, 2}, rng);
        CHECK(max_grad_rel_err(x, [&] { return sum_all(mul(matmul(c23, x), c22)); }) < 1e-6);
    }
    SUBCASE("batched matmul wrt A") {
        Tensor b32 = random_tensor({2, 3, 2}, rng);
        Tensor b22 = random_tensor({2, 2, 2}, rng);
        Tensor x = random_tensor({2, 2, 3}, rng);
        CHECK(max_grad_rel_err(x, [&] { return sum_all(mul(matmul(x, b32), b22)); }) < 1e-6);
    }
    SUBCASE("add") {
        Tensor x = random_tensor({2, 2}, rng);
        CHECK(max_grad_rel_err(x, [&] { return sum_all(mul(add(x, c22), c22)); }) < 1e-6);
    }
    SUBCASE("scale") {
        Tensor x = random_tensor({2, 2}, rng);
        CHECK(max_grad_rel_err(x, [&] { return sum_all(mul(scale(x, -1.7), c22)); }) < 1e-6);
    }
    SUBCASE("mul") {
        Tensor x = random_tensor({2, 2}, rng);
        CHECK(max_grad_rel_err(x, [&] { return sum_all(mul(mul(x, c22), c22)); }) < 1e-6);
    }
    SUBCASE("add_bias_lastdim wrt x") {
        Tensor x = random_tensor({2, 2}, rng);
        CHECK(max_grad_rel_err(x, [&] { return sum_all(mul(add_bias_lastdim(x, c2), c22)); }) <
              1e-6);
    }
    SUBCASE("add_bias_lastdim wrt bias") {
        Tensor x = random_tensor({2}, rng);
        CHECK(max_grad_rel_err(x, [&] { return sum_all(mul(add_bias_lastdim(c22, x), c22)); }) <
              1e-6);
    }
    SUBCASE("concat_lastdim") {
        Tensor x = random_tensor({2, 2}, rng);
        Tensor c24 = random_tensor({2, 4}, rng);
        CHECK(max_grad_rel_err(x, [&] { return sum_all(mul(concat_lastdim({x, c22}), c24)); }) <
              1e-6);
        CHECK(max_grad_rel_err(x, [&] { return sum_all(mul(concat_lastdim({c22, x}), c24)); }) <
              1e-6);
    }
    SUBCASE("reshape, transpose, mean_spatial") {
        Tensor x = random_tensor({1, 2, 2, 2}, rng);
        Tensor c18 = random_tensor({1, 8}, rng);
        CHECK(max_grad_rel_err(x, [&] { return sum_all(mul(flatten(x), c18)); }) < 1e-6);
        Tensor c12 = random_tensor({1, 2}, rng);
        CHECK(max_grad_rel_err(x, [&] { return sum_all(mul(mean_spatial(x), c12)); }) < 1e-6);
        Tensor x2 = random_tensor({3, 2}, rng);
        CHECK(max_grad_rel_err(x2, [&] { return sum_all(mul(transpose_last2(x2), c23)); }) < 1e-6);
    }
}

TEST_CASE("finite differences: nonlinear ops under 1e-4") {
    Rng rng(23);
    SUBCASE("gelu") {
        Tensor x = random_tensor({3, 3}, rng, -2.0, 2.0);
        Tensor c = random_tensor({3, 3}, rng);
        CHECK(max_grad_rel_err(x, [&] { return sum_all(mul(gelu(x), c)); }) < 1e-4);
    }
    SUBCASE("softmax") {
        Tensor x = random_tensor({2, 5}, rng, -2.0, 2.0);
        Tensor c = random_tensor({2, 5}, rng);
        CHECK(max_grad_rel_err(x, [&] { return sum_all(mul(softmax_lastdim(x), c)); }) < 1e-4);
    }
    SUBCASE("cross entropy") {
        Tensor x = random_tensor({3, 4}, rng, -2.0, 2.0);
        std::vector<int> labels{1, 0, 3};
        CHECK(max_grad_rel_err(x, [&] { return cross_entropy(x, labels); }) < 1e-4);
    }
    SUBCASE("composite: softmax(gelu(x W)) cross entropy") {
        Tensor w = random_tensor({4, 3}, rng);
        Tensor x = random_tensor({2, 4}, rng, -1.5, 1.5);
        std::vector<int> labels{2, 0};
        CHECK(max_grad_rel_err(x, [&] { return cross_entropy(gelu(matmul(x, w)), labels); }) <
              1e-4);
    }
}

TEST_CASE("backward is deterministic and accumulates leaf gradients") {
    Rng rng(31);
    Tensor x = random_tensor({3, 3}, rng);
    x.set_requires_grad(true);
    Tensor c = random_tensor({3, 3}, rng);
    auto f = [&] { return sum_all(mul(gelu(matmul(x, c)), c)); };

    backward(f());
    std::vector<double> g1 = copy_of(x.grad());
    x.zero_grad();
    backward(f());
    CHECK(bits_equal(x.grad(), g1));  // identical graph, identical sweep

    // without zero_grad, the leaf accumulates: exactly 2x (doubling is exact)
    backward(f());
    std::vector<double> doubled = g1;
    for (auto& v : doubled) v *= 2.0;
    CHECK(bits_equal(x.grad(), doubled));
}

TEST_CASE("diamond reuse counts every path") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    Tensor y = scale(x, 2.0);   // dy/dx = 2
    Tensor z = add(y, y);       // dz/dy = 2
    backward(sum_all(z));
    CHECK(copy_of(x.grad()) == std::vector<double>{4.0, 4.0});
}

TEST_CASE("backward requires a scalar and grad-less leaves stay grad-less") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    Tensor y = scale(x, 3.0);
    CHECK_THROWS_AS(backward(y), UsageError);

    Tensor plain = Tensor::from_data({2}, {5.0, 6.0});
    Tensor loss = sum_all(add(x, plain));
    backward(loss);
    CHECK(x.has_grad());
    CHECK(!plain.has_grad());
}

TEST_CASE("untracked graphs stay constant") {
    Tensor a = Tensor::from_data({2}, {1.0, 2.0});
    Tensor b = scale(a, 2.0);
    CHECK(b.is_leaf());  // no tracked input => no lineage recorded
}

TEST_CASE("f32 storage mode rounds payloads, f64 mode does not") {
    DtypeGuard guard;
    set_default_dtype(Dtype::f32);
    Tensor t = Tensor::from_data({1}, {0.1});
    CHECK(t.dtype() == Dtype::f32);
    CHECK(t.data()[0] == static_cast<double>(static_cast<float>(0.1)));
    CHECK(t.data()[0] != 0.1);

    set_default_dtype(Dtype::f64);
    Tensor u = Tensor::from_data({1}, {0.1});
    CHECK(u.dtype() == Dtype::f64);
    CHECK(u.data()[0] == 0.1);

    // explicit-dtype construction ignores the global default
    Tensor v = Tensor::from_data({1}, {0.1}, Dtype::f32);
    CHECK(v.data()[0] == static_cast<double>(static_cast<float>(0.1)));
}

TEST_CASE("f32 arithmetic results are f32-representable") {
    DtypeGuard guard;
    set_default_dtype(Dtype::f32);
    Rng rng(7);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({3, 2}, rng);
    Tensor c = matmul(a, b);
    CHECK(c.dtype() == Dtype::f32);
    for (double v : c.data())
        CHECK(v == static_cast<double>(static_cast<float>(v)));
}
