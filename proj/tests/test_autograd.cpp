#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bdcd/nn.hpp"
#include "helpers.hpp"

using namespace bdcd;
using ag::Var;
using bdcd::test::grad_check;
using bdcd::test::random_tensor;

namespace {
std::mt19937_64 rng(2024);

Var rparam(std::vector<long> shape, double a = 0.5) {
    return Var::param(random_tensor(std::move(shape), a, rng));
}
}  // namespace

TEST_CASE("elementwise op gradients") {
    Var a = rparam({3, 4});
    Var b = rparam({3, 4});
    CHECK(grad_check([&] { return ag::mean_all(ag::mul(ag::add(a, b), ag::sub(a, b))); }, {a, b}) <
          1e-4);
    CHECK(grad_check([&] { return ag::sum_all(ag::relu(ag::add_scalar(ag::scale(a, 2.0), 0.3))); },
                     {a}) < 1e-4);
    // |x| away from 0 (shift keeps FD off the kink)
    Var c = Var::param(random_tensor({3, 4}, 0.4, rng));
    for (auto& x : c.val().v) x += (x >= 0 ? 1.0 : -1.0);
    CHECK(grad_check([&] { return ag::mean_all(ag::abs(c)); }, {c}) < 1e-4);
}

TEST_CASE("matmul linear and broadcast gradients") {
    Var a = rparam({3, 5});
    Var w = rparam({5, 4});
    Var b = rparam({4});
    CHECK(grad_check([&] { return ag::mean_all(ag::matmul(a, w)); }, {a, w}) < 1e-4);
    CHECK(grad_check([&] { return ag::mean_all(ag::linear(a, w, b)); }, {a, w, b}) < 1e-4);
    CHECK(grad_check([&] { return ag::sum_all(ag::add_row_broadcast(ag::matmul(a, w), b)); },
                     {a, w, b}) < 1e-4);
}

TEST_CASE("matmul value") {
    Var a = Var::constant(Tensor({2, 2}, {1, 2, 3, 4}));
    Var b = Var::constant(Tensor({2, 2}, {5, 6, 7, 8}));
    Tensor c = ag::matmul(a, b).val();
    CHECK(c.v == std::vector<double>{19, 22, 43, 50});
    CHECK_THROWS(ag::matmul(a, Var::constant(Tensor({3, 2}))));
}

TEST_CASE("shape op gradients") {
    Var a = rparam({2, 3, 4});
    Var b = rparam({5, 3, 4});
    CHECK(grad_check([&] { return ag::mean_all(ag::reshape(a, {4, 6})); }, {a}) < 1e-4);
    CHECK(grad_check(
              [&] {
                  Var cat = ag::concat_channels(a, b);
                  return ag::mean_all(ag::mul(cat, cat));
              },
              {a, b}) < 1e-4);
    Var t = rparam({6, 4});
    CHECK(grad_check(
              [&] {
                  auto s = ag::slice_cols(t, 1, 3);
                  return ag::mean_all(ag::mul(s, s));
              },
              {t}) < 1e-4);
    CHECK(grad_check(
              [&] {
                  auto tt = ag::transpose2d(t);
                  return ag::mean_all(ag::mul(tt, tt));
              },
              {t}) < 1e-4);
    CHECK(grad_check(
              [&] {
                  auto tok = ag::chw_to_tokens(a);
                  auto back = ag::tokens_to_chw(tok, 2, 3, 4);
                  return ag::mean_all(ag::mul(back, back));
              },
              {a}) < 1e-4);
}

TEST_CASE("token round trip is the identity") {
    Tensor x = random_tensor({3, 4, 5}, 1.0, rng);
    Var v = Var::constant(x);
    Tensor y = ag::tokens_to_chw(ag::chw_to_tokens(v), 3, 4, 5).val();
    CHECK(y.v == x.v);
    // token t = y*w+x holds the channel vector of that position
    Tensor tok = ag::chw_to_tokens(v).val();
    CHECK(tok.shape == std::vector<long>{20, 3});
    CHECK(tok.at2(7, 2) == x.at3(2, 1, 2));  // position (y=1,x=2)
}

TEST_CASE("softmax and layernorm") {
    Var x = rparam({4, 6});
    Tensor s = ag::softmax_lastdim(x).val();
    for (long r = 0; r < 4; ++r) {
        double sum = 0;
        for (long c = 0; c < 6; ++c) sum += s.at2(r, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(grad_check(
              [&] {
                  auto sm = ag::softmax_lastdim(x);
                  return ag::mean_all(ag::mul(sm, sm));
              },
              {x}) < 1e-4);

    Var g = rparam({6}), b = rparam({6});
    CHECK(grad_check(
              [&] {
                  auto ln = ag::layernorm_lastdim(x, g, b);
                  return ag::mean_all(ag::mul(ln, ln));
              },
              {x, g, b}) < 1e-4);

    Var cx = rparam({5, 3, 3});
    Tensor cs = ag::channel_softmax(cx).val();
    for (long p = 0; p < 9; ++p) {
        double sum = 0;
        for (long c = 0; c < 5; ++c) sum += cs.v[c * 9 + p];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    Var cg = rparam({5}), cb = rparam({5});
    CHECK(grad_check(
              [&] {
                  auto ln = ag::channel_layernorm(cx, cg, cb);
                  return ag::mean_all(ag::mul(ln, ln));
              },
              {cx, cg, cb}) < 1e-4);
    CHECK(grad_check(
              [&] {
                  auto sm = ag::channel_softmax(cx);
                  return ag::mean_all(ag::mul(sm, sm));
              },
              {cx}) < 1e-4);
}

TEST_CASE("conv2d replicate padding") {
    // averaging kernel on a constant map stays exactly constant (no border
    // falloff), which is what keeps equal pre/post logits spatially flat
    Var x = Var::constant(Tensor::full({1, 5, 5}, 3.0));
    Var w = Var::constant(Tensor::full({1, 1, 3, 3}, 1.0 / 9));
    Var b = Var::constant(Tensor({1}));
    Tensor y = ag::conv2d(x, w, b).val();
    CHECK(y.shape == std::vector<long>{1, 5, 5});
    for (double v : y.v) CHECK(v == doctest::Approx(3.0).epsilon(1e-12));

    Var xg = rparam({2, 5, 6});
    Var wg = rparam({3, 2, 3, 3});
    Var bg = rparam({3});
    CHECK(grad_check(
              [&] {
                  auto c = ag::conv2d(xg, wg, bg);
                  return ag::mean_all(ag::mul(c, c));
              },
              {xg, wg, bg}) < 1e-4);
    // 1x1 convolution
    Var w1 = rparam({4, 2, 1, 1});
    Var b1 = rparam({4});
    CHECK(grad_check([&] { return ag::mean_all(ag::conv2d(xg, w1, b1)); }, {xg, w1, b1}) < 1e-4);
}

TEST_CASE("maxpool2") {
    Var x = Var::constant(Tensor({1, 2, 4}, {1, 5, 2, 0, 3, 4, 7, 1}));
    Tensor y = ag::maxpool2(x).val();
    CHECK(y.shape == std::vector<long>{1, 1, 2});
    CHECK(y.v == std::vector<double>{5, 7});

    Var xg = rparam({3, 4, 6}, 2.0);  // wide spread: unique maxima almost surely
    CHECK(grad_check(
              [&] {
                  auto p = ag::maxpool2(xg);
                  return ag::mean_all(ag::mul(p, p));
              },
              {xg}) < 1e-4);
}

TEST_CASE("bilinear upsample") {
    Var x = Var::constant(Tensor::full({2, 3, 3}, 1.5));
    Tensor y = ag::upsample_bilinear2(x).val();
    CHECK(y.shape == std::vector<long>{2, 6, 6});
    for (double v : y.v) CHECK(v == doctest::Approx(1.5).epsilon(1e-12));

    Var xg = rparam({2, 3, 4});
    CHECK(grad_check(
              [&] {
                  auto u = ag::upsample_bilinear2(xg);
                  return ag::mean_all(ag::mul(u, u));
              },
              {xg}) < 1e-4);
}

TEST_CASE("positional embedding") {
    Var rows = rparam({8, 3});
    Var cols = rparam({8, 3});
    Tensor e = ag::pos_embed_2d(rows, cols, 2, 4).val();
    CHECK(e.shape == std::vector<long>{8, 3});
    CHECK(e.at2(1 * 4 + 2, 0) ==
          doctest::Approx(rows.val().at2(1, 0) + cols.val().at2(2, 0)).epsilon(1e-12));
    CHECK(grad_check(
              [&] {
                  auto p = ag::pos_embed_2d(rows, cols, 3, 5);
                  return ag::mean_all(ag::mul(p, p));
              },
              {rows, cols}) < 1e-4);
}

TEST_CASE("attention and transformer layer gradients") {
    // smaller step: per-unit ReLU kinks carry a visible gradient share in a
    // single small layer, so the 1e-3 step is too coarse here
    nn::ParamStore ps;
    std::mt19937_64 r2(5);
    nn::MultiheadAttention mha(ps, "mha", 8, 2, r2);
    std::mt19937_64 rl(1);
    auto lparam = [&](std::vector<long> shape) {
        return Var::param(random_tensor(std::move(shape), 0.5, rl));
    };
    Var q = lparam({5, 8});
    Var kv = lparam({7, 8});
    std::vector<Var> params = {q, kv};
    for (const auto& [name, p] : ps.items()) params.push_back(p);
    CHECK(grad_check(
              [&] {
                  auto o = mha.forward(q, kv);
                  return ag::mean_all(ag::mul(o, o));
              },
              params, 1e-4) < 1e-4);

    nn::ParamStore ps2;
    nn::TransformerLayer self_layer(ps2, "t", 8, 2, false, r2);
    std::vector<Var> p2 = {q};
    for (const auto& [name, p] : ps2.items()) p2.push_back(p);
    CHECK(grad_check(
              [&] {
                  auto o = self_layer.forward(q);
                  return ag::mean_all(ag::mul(o, o));
              },
              p2, 1e-4) < 1e-4);

    nn::ParamStore ps3;
    nn::TransformerLayer cross_layer(ps3, "c", 8, 2, true, r2);
    std::vector<Var> p3 = {q, kv};
    for (const auto& [name, p] : ps3.items()) p3.push_back(p);
    CHECK(grad_check(
              [&] {
                  auto o = cross_layer.forward(q, kv);
                  return ag::mean_all(ag::mul(o, o));
              },
              p3, 1e-4) < 1e-4);
}

TEST_CASE("graph reuse accumulates correctly") {
    // y = x used twice: dy/dx = 2x for y = sum(x*x)... via shared subexpression
    Var x = Var::param(Tensor({2}, {3.0, -2.0}));
    Var s = ag::add(x, x);
    Var y = ag::sum_all(ag::mul(s, x));  // sum(2x * x) = 2*sum(x^2)
    ag::backward(y);
    CHECK(x.grad().v[0] == doctest::Approx(12.0).epsilon(1e-12));
    CHECK(x.grad().v[1] == doctest::Approx(-8.0).epsilon(1e-12));
}

TEST_CASE("param store") {
    nn::ParamStore ps;
    Var a = ps.add("a", Tensor({2, 2}));
    CHECK_THROWS(ps.add("a", Tensor({1})));
    CHECK(ps.find("a") != nullptr);
    CHECK(ps.find("b") == nullptr);
    CHECK(ps.total_params() == 4);
    a.grad().v.assign(4, 5.0);
    ps.zero_grad();
    CHECK(ps.find("a")->grad().v == std::vector<double>(4, 0.0));
}
