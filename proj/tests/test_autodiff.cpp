#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "manidiff/autodiff.hpp"
#include "manidiff/rng.hpp"

using namespace manidiff;
using ad::Mat;
using ad::Var;

namespace {
Mat randn(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0, double shift = 0.0) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal() + shift;
    return m;
}

// Weighted sum against a fixed random matrix, so output gradients are
// non-uniform and transposition mistakes show up.
Var weigh(const Var& y, uint64_t seed = 99) {
    Rng rng(seed);
    Mat w = randn(y.rows(), y.cols(), rng);
    return ad::sum(ad::mul(y, Var::constant(w)));
}
}  // namespace

TEST_CASE("gradients: arithmetic ops") {
    Rng rng(1);
    Mat a = randn(3, 4, rng), b = randn(3, 4, rng);

    check_grads([](std::vector<Var>& v) { return weigh(ad::add(v[0], v[1])); }, {a, b});
    check_grads([](std::vector<Var>& v) { return weigh(ad::sub(v[0], v[1])); }, {a, b});
    check_grads([](std::vector<Var>& v) { return weigh(ad::mul(v[0], v[1])); }, {a, b});
    check_grads([](std::vector<Var>& v) { return weigh(ad::affine_const(v[0], -2.5, 0.75)); },
                {a});
    Mat m1 = randn(3, 4, rng), m2 = randn(4, 2, rng);
    check_grads([](std::vector<Var>& v) { return weigh(ad::matmul(v[0], v[1])); }, {m1, m2});
    check_grads([](std::vector<Var>& v) { return weigh(ad::transpose(v[0])); }, {a});
    Mat row = randn(1, 4, rng);
    check_grads([](std::vector<Var>& v) { return weigh(ad::add_rowvec(v[0], v[1])); }, {a, row});
}

TEST_CASE("gradients: elementwise nonlinearities") {
    Rng rng(2);
    Mat a = randn(3, 4, rng);
    Mat pos = randn(3, 4, rng, 0.3, 2.0);  // bounded away from zero

    check_grads([](std::vector<Var>& v) { return weigh(ad::sigmoid(v[0])); }, {a});
    check_grads([](std::vector<Var>& v) { return weigh(ad::tanh_(v[0])); }, {a});
    check_grads([](std::vector<Var>& v) { return weigh(ad::softplus(v[0])); }, {a});
    Mat big = Mat::Constant(1, 2, 31.0);  // the overflow-guarded branch
    check_grads([](std::vector<Var>& v) { return weigh(ad::softplus(v[0])); }, {big});
    check_grads([](std::vector<Var>& v) { return weigh(ad::exp_(v[0])); }, {a});
    check_grads([](std::vector<Var>& v) { return weigh(ad::log_(v[0])); }, {pos});
    check_grads([](std::vector<Var>& v) { return weigh(ad::silu(v[0])); }, {a});
    check_grads([](std::vector<Var>& v) { return weigh(ad::sqrt_(v[0])); }, {pos});
}

TEST_CASE("gradients: scalar helpers") {
    Rng rng(3);
    Mat s = Mat::Constant(1, 1, 1.7);
    Mat m = randn(2, 3, rng);

    check_grads([](std::vector<Var>& v) { return ad::sinv(v[0]); }, {s});
    check_grads([](std::vector<Var>& v) { return weigh(ad::smul(v[0], v[1])); }, {m, s});
    check_grads([](std::vector<Var>& v) { return ad::sum(v[0]); }, {m});
    check_grads([](std::vector<Var>& v) { return ad::mean(v[0]); }, {m});
    check_grads([](std::vector<Var>& v) { return ad::sum_sq(v[0]); }, {m});
    Mat m2 = randn(2, 3, rng);
    check_grads([](std::vector<Var>& v) { return ad::dot(v[0], v[1]); }, {m, m2});
    check_grads([](std::vector<Var>& v) { return ad::norm2(v[0]); }, {m});
    check_grads([](std::vector<Var>& v) { return ad::mse(v[0], v[1]); }, {m, m2});
}

TEST_CASE("gradients: shape ops") {
    Rng rng(4);
    Mat a = randn(4, 5, rng);
    Mat b = randn(2, 5, rng);
    Mat c = randn(4, 3, rng);

    check_grads([](std::vector<Var>& v) { return weigh(ad::block(v[0], 1, 1, 2, 3)); }, {a});
    check_grads([](std::vector<Var>& v) { return weigh(ad::slice_rows(v[0], 1, 2)); }, {a});
    check_grads([](std::vector<Var>& v) { return weigh(ad::slice_cols(v[0], 2, 2)); }, {a});
    check_grads([](std::vector<Var>& v) { return weigh(ad::concat_rows({v[0], v[1]})); }, {a, b});
    check_grads([](std::vector<Var>& v) { return weigh(ad::concat_cols({v[0], v[1]})); }, {a, c});
    check_grads([](std::vector<Var>& v) { return weigh(ad::flip_rows(v[0])); }, {a});
    check_grads([](std::vector<Var>& v) { return weigh(ad::reshape(v[0], 2, 10)); }, {a});
    check_grads([](std::vector<Var>& v) { return weigh(ad::repeat_interleave_rows(v[0], 3)); },
                {b});
    check_grads([](std::vector<Var>& v) { return weigh(ad::tile_rows(v[0], 3)); }, {b});
}

TEST_CASE("reshape is row-major") {
    Mat a(2, 3);
    a << 1, 2, 3, 4, 5, 6;
    Var r = ad::reshape(Var::constant(a), 3, 2);
    Mat expect(3, 2);
    expect << 1, 2, 3, 4, 5, 6;
    CHECK((r.value() - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradients: structured ops") {
    Rng rng(5);
    Mat x = randn(3, 5, rng);
    Mat gain = randn(1, 5, rng, 0.3, 1.0);
    Mat bias = randn(1, 5, rng, 0.2);

    check_grads([](std::vector<Var>& v) { return weigh(ad::row_softmax(v[0])); }, {x});
    check_grads(
        [](std::vector<Var>& v) { return weigh(ad::layer_norm(v[0], v[1], v[2])); },
        {x, gain, bias}, 1e-4, 1e-4);

    Mat u = randn(1, 3, rng), w = randn(1, 3, rng);
    check_grads([](std::vector<Var>& v) { return weigh(ad::cross3(v[0], v[1])); }, {u, w});
}

TEST_CASE("cross3 matches Eigen") {
    Eigen::Vector3d a(1, 2, 3), b(-2, 0.5, 4);
    Var r = ad::cross3(Var::constant(a.transpose()), Var::constant(b.transpose()));
    Eigen::Vector3d expect = a.cross(b);
    CHECK((r.value().row(0).transpose() - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("gradients: distance to point cloud") {
    Rng rng(6);
    Mat cloud = randn(8, 3, rng);
    Mat pts = randn(4, 3, rng, 1.0, 3.0);  // offset keeps distances generic

    check_grads([cloud](std::vector<Var>& v) { return weigh(ad::dist_to_cloud(v[0], cloud)); },
                {pts});

    // value check: single point, known cloud
    Mat one(1, 3);
    one << 0, 0, 5;
    Mat cl(2, 3);
    cl << 0, 0, 0, 0, 0, 4;
    Var d = ad::dist_to_cloud(Var::constant(one), cl);
    CHECK(d.value()(0, 0) == 1.0);
    CHECK_THROWS_AS(ad::dist_to_cloud(Var::constant(one), Mat(0, 3)), EmptyGeometry);
}

TEST_CASE("gradients: selective scan") {
    Rng rng(7);
    const Eigen::Index L = 5, d = 3, S = 2;
    Mat A(L, d);
    for (Eigen::Index i = 0; i < L; ++i)
        for (Eigen::Index j = 0; j < d; ++j) A(i, j) = rng.uniform(0.2, 0.8);
    Mat B = randn(L, S, rng), C = randn(L, S, rng), X = randn(L, d, rng);

    check_grads(
        [](std::vector<Var>& v) { return weigh(ad::ssm_scan(v[0], v[1], v[2], v[3])); },
        {A, B, C, X});
}

TEST_CASE("ssm_scan forward matches a direct recurrence") {
    Rng rng(8);
    const Eigen::Index L = 6, d = 2, S = 3;
    Mat A(L, d);
    for (Eigen::Index i = 0; i < L; ++i)
        for (Eigen::Index j = 0; j < d; ++j) A(i, j) = rng.uniform(0.1, 0.9);
    Mat B = randn(L, S, rng), C = randn(L, S, rng), X = randn(L, d, rng);

    Var y = ad::ssm_scan(Var::constant(A), Var::constant(B), Var::constant(C), Var::constant(X));

    Mat H = Mat::Zero(d, S);
    for (Eigen::Index t = 0; t < L; ++t) {
        Mat Hn(d, S);
        for (Eigen::Index ch = 0; ch < d; ++ch)
            for (Eigen::Index s = 0; s < S; ++s)
                Hn(ch, s) = A(t, ch) * H(ch, s) + X(t, ch) * B(t, s);
        H = Hn;
        for (Eigen::Index ch = 0; ch < d; ++ch) {
            double yv = 0;
            for (Eigen::Index s = 0; s < S; ++s) yv += C(t, s) * H(ch, s);
            CHECK(std::abs(y.value()(t, ch) - yv) < 1e-12);
        }
    }
}

TEST_CASE("leaf reuse accumulates gradients") {
    Mat x = Mat::Constant(1, 1, 3.0);
    Mat sink = Mat::Zero(1, 1);
    Var v = ad::leaf(x, &sink);
    Var loss = ad::mul(v, v);  // x^2
    ad::backward(loss);
    CHECK(std::abs(sink(0, 0) - 6.0) < 1e-12);  // d(x^2)/dx = 2x
}

TEST_CASE("no-grad mode skips the tape") {
    Mat x = Mat::Constant(1, 1, 2.0);
    Mat sink = Mat::Zero(1, 1);
    {
        ad::NoGradGuard ng;
        Var v = ad::leaf(x, &sink);
        Var y = ad::mul(v, v);
        CHECK_FALSE(y.node()->requires_grad);
        ad::backward(y);  // no-op
    }
    CHECK(sink(0, 0) == 0.0);
    CHECK(ad::grad_enabled());
}

TEST_CASE("backward requires a scalar") {
    Mat x = Mat::Ones(2, 2);
    Mat sink = Mat::Zero(2, 2);
    Var v = ad::leaf(x, &sink);
    CHECK_THROWS_AS(ad::backward(ad::scale(v, 2.0)), ShapeMismatch);
}

TEST_CASE("shape mismatches are rejected") {
    Var a = Var::constant(Mat::Ones(2, 3));
    Var b = Var::constant(Mat::Ones(3, 2));
    CHECK_THROWS_AS(ad::add(a, b), ShapeMismatch);
    CHECK_THROWS_AS(ad::mul(a, b), ShapeMismatch);
    CHECK_THROWS_AS(ad::matmul(a, a), ShapeMismatch);
    CHECK_THROWS_AS(ad::block(a, 1, 0, 2, 3), ShapeMismatch);
    CHECK_THROWS_AS(ad::concat_rows({a, b}), ShapeMismatch);
    CHECK_THROWS_AS(ad::reshape(a, 4, 2), ShapeMismatch);
    CHECK_THROWS_AS(ad::sinv(a), ShapeMismatch);
}

TEST_CASE("deep graph backward stays exact") {
    // chain of 200 sigmoids on a scalar: gradient = product of local slopes
    Mat x = Mat::Constant(1, 1, 0.3);
    Mat sink = Mat::Zero(1, 1);
    Var v = ad::leaf(x, &sink);
    Var y = v;
    double val = 0.3, expect = 1.0;
    for (int i = 0; i < 200; ++i) {
        y = ad::tanh_(y);
        double t = std::tanh(val);
        expect *= 1.0 - t * t;
        val = t;
    }
    ad::backward(ad::sum(y));
    CHECK(std::abs(sink(0, 0) - expect) / std::max(1e-30, std::abs(expect)) < 1e-10);
}
