#include <doctest.h>

#include <cmath>
#include <vector>

#include "seqvae/kernels.hpp"
#include "seqvae/rng.hpp"
#include "seqvae/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace seqvae;
using seqvae::testing::check_gradients;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0, bool requires_grad = true) {
    size_t n = static_cast<size_t>(shape_numel(shape));
    Tensor t(std::move(shape), rng.uniform_vec(n, lo, hi));
    t.set_requires_grad(requires_grad);
    return t;
}

// Densifies an op output into a scalar with distinct per-element weights.
Tensor weighted_sum(const Tensor& t, const Tensor& weights) { return sum(mul(t, weights)); }

}  // namespace

TEST_CASE("matmul: identity and hand examples") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor v({2, 1}, {3, 4});
    Tensor out = matmul(eye, v);
    CHECK(out.value()[0] == 3.0);
    CHECK(out.value()[1] == 4.0);

    Tensor a({1, 2}, {1, 2});
    Tensor b({2, 1}, {3, 4});
    CHECK(matmul(a, b).item() == 11.0);
}

TEST_CASE("matmul: shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), ShapeError);
}

TEST_CASE("matmul: backward matches finite differences on random 3x4 . 4x2") {
    Rng rng(13);
    Tensor a = rand_tensor({3, 4}, rng);
    Tensor b = rand_tensor({4, 2}, rng);
    Tensor w = rand_tensor({3, 2}, rng, -1, 1, false);
    std::vector<Tensor> leaves = {a, b};
    auto res = check_gradients([&]() { return weighted_sum(matmul(a, b), w); }, leaves);
    CHECK_MESSAGE(res.ok, res.worst_at);
    CHECK(res.worst_rel_err < 1e-4);
}

TEST_CASE("elementwise: trivial identities") {
    CHECK(tanh(Tensor::scalar(0.0)).item() == 0.0);
    CHECK(exp(log(Tensor::scalar(2.5))).item() == doctest::Approx(2.5).epsilon(1e-14));
}

TEST_CASE("elementwise: log of non-positive input is a domain error") {
    CHECK_THROWS_AS(log(Tensor::scalar(0.0)), DomainError);
    CHECK_THROWS_AS(log(Tensor({2}, {1.0, -3.0})), DomainError);
    CHECK_THROWS_AS(sqrt(Tensor::scalar(-1.0)), DomainError);
}

TEST_CASE("elementwise: broadcasting rules") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor row({3}, {10, 20, 30});
    Tensor out = add(a, row);
    CHECK(out.value()[0] == 11.0);
    CHECK(out.value()[5] == 36.0);

    Tensor s = Tensor::scalar(100.0);
    CHECK(add(a, s).value()[3] == 104.0);
    CHECK(sub(s, a).value()[0] == 99.0);

    Tensor bad({2}, {1, 2});
    CHECK_THROWS_AS(add(a, bad), ShapeError);
}

TEST_CASE("reductions: logsumexp values and overflow safety") {
    Tensor x({2}, {0.0, 0.0});
    CHECK(logsumexp(x).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor big({2}, {1000.0, 1000.0});
    CHECK(logsumexp(big).item() == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("reductions: logsumexp shift invariance to 1e-12") {
    Rng rng(17);
    for (int rep = 0; rep < 50; ++rep) {
        Tensor x = rand_tensor({7}, rng, -5, 5, false);
        double c = rng.uniform(-100.0, 100.0);
        std::vector<double> shifted(x.value().begin(), x.value().end());
        for (auto& v : shifted) v += c;
        double lhs = logsumexp(Tensor({7}, shifted)).item();
        double rhs = logsumexp(x).item() + c;
        CHECK(std::fabs(lhs - rhs) < 1e-12 * std::max(1.0, std::fabs(rhs)));
    }
}

TEST_CASE("reductions: max backward routes full gradient to earliest tie") {
    Tensor x({3}, {3.0, 1.0, 3.0});
    x.set_requires_grad();
    Graph g;
    {
        GraphScope scope(g);
        Tensor loss = sum(max_over_axis(x, 0));
        g.backward(loss);
    }
    auto gr = x.grad();
    CHECK(gr[0] == 1.0);
    CHECK(gr[1] == 0.0);
    CHECK(gr[2] == 0.0);
}

TEST_CASE("reductions: empty axis is a domain error") {
    Tensor empty = Tensor::zeros({0});
    CHECK_THROWS_AS(sum(max_over_axis(empty, 0)), DomainError);
    CHECK_THROWS_AS(logsumexp(empty, 0), DomainError);
}

TEST_CASE("backward: sum of squares and constant losses") {
    Tensor w({2}, {1.0, 2.0});
    w.set_requires_grad();
    Graph g;
    {
        GraphScope scope(g);
        Tensor loss = sum(mul(w, w));
        g.backward(loss);
    }
    CHECK(w.grad()[0] == 2.0);
    CHECK(w.grad()[1] == 4.0);

    Tensor w2({2}, {1.0, 2.0});
    w2.set_requires_grad();
    Graph g2;
    {
        GraphScope scope(g2);
        Tensor loss = sum(sub(w2, w2));  // identically zero in w2
        g2.backward(loss);
    }
    CHECK(w2.grad()[0] == 0.0);
    CHECK(w2.grad()[1] == 0.0);
}

TEST_CASE("backward: two consumers sum both contributions (hand example)") {
    // y = w + w, loss = sum(y*y) = 4*sum(w^2), grad = 8w
    Tensor w({3}, {1.0, -2.0, 0.5});
    w.set_requires_grad();
    Graph g;
    {
        GraphScope scope(g);
        Tensor y = add(w, w);
        g.backward(sum(mul(y, y)));
    }
    CHECK(w.grad()[0] == doctest::Approx(8.0));
    CHECK(w.grad()[1] == doctest::Approx(-16.0));
    CHECK(w.grad()[2] == doctest::Approx(4.0));
}

TEST_CASE("backward: contract errors") {
    Tensor w({2}, {1.0, 2.0});
    w.set_requires_grad();
    Graph g;
    GraphScope scope(g);
    Tensor vec = mul(w, w);
    CHECK_THROWS_AS(g.backward(vec), ContractError);           // non-scalar
    CHECK_THROWS_AS(g.backward(Tensor::scalar(1.0)), ContractError);  // not produced by the graph
}

TEST_CASE("backward: repeated calls accumulate") {
    Tensor w({2}, {1.0, 2.0});
    w.set_requires_grad();
    Graph g;
    {
        GraphScope scope(g);
        Tensor loss = sum(mul(w, w));
        g.backward(loss);
        g.backward(loss);
    }
    CHECK(w.grad()[0] == 4.0);
    CHECK(w.grad()[1] == 8.0);
}

TEST_CASE("forward pass is bitwise identical with and without gradient recording") {
    Rng rng(23);
    Tensor a = rand_tensor({4, 5}, rng);
    Tensor b = rand_tensor({5, 3}, rng);
    auto compute = [&]() {
        Tensor m = matmul(a, b);
        Tensor act = tanh(m);
        Tensor sm = logsumexp(act, 1);
        return sum(sm);
    };
    double without = compute().item();
    Graph g;
    double with = 0.0;
    {
        GraphScope scope(g);
        with = compute().item();
    }
    CHECK(g.node_count() > 0);
    CHECK(with == without);
}

TEST_CASE("gradcheck battery: every differentiable op, 100+ random coordinates each") {
    Rng rng(31);

    SUBCASE("transpose") {
        Tensor a = rand_tensor({5, 7}, rng);
        Tensor w = rand_tensor({7, 5}, rng, -1, 1, false);
        std::vector<Tensor> leaves = {a};
        auto res = check_gradients([&]() { return weighted_sum(transpose(a), w); }, leaves);
        CHECK_MESSAGE(res.ok, res.worst_at);
    }
    SUBCASE("add/sub/mul with trailing broadcast") {
        Tensor a = rand_tensor({6, 9}, rng);
        Tensor b = rand_tensor({9}, rng);
        Tensor w = rand_tensor({6, 9}, rng, -1, 1, false);
        for (auto op : {0, 1, 2}) {
            std::vector<Tensor> leaves = {a, b};
            auto res = check_gradients(
                [&]() {
                    Tensor o = op == 0 ? add(a, b) : op == 1 ? sub(a, b) : mul(a, b);
                    return weighted_sum(o, w);
                },
                leaves);
            CHECK_MESSAGE(res.ok, res.worst_at);
        }
    }
    SUBCASE("div away from zero denominators") {
        Tensor a = rand_tensor({5, 6}, rng);
        Rng r2 = rng.fork("den");
        std::vector<double> den = r2.uniform_vec(6, 0.5, 2.0);
        for (size_t i = 0; i < den.size(); i += 2) den[i] = -den[i];
        Tensor b({6}, den);
        b.set_requires_grad();
        Tensor w = rand_tensor({5, 6}, rng, -1, 1, false);
        std::vector<Tensor> leaves = {a, b};
        auto res = check_gradients([&]() { return weighted_sum(div(a, b), w); }, leaves);
        CHECK_MESSAGE(res.ok, res.worst_at);
    }
    SUBCASE("unary ops") {
        Tensor w = rand_tensor({10, 11}, rng, -1, 1, false);
        auto check_unary = [&](auto opfn, double lo, double hi) {
            Tensor x = rand_tensor({10, 11}, rng, lo, hi);
            std::vector<Tensor> leaves = {x};
            auto res = check_gradients([&]() { return weighted_sum(opfn(x), w); }, leaves);
            CHECK_MESSAGE(res.ok, res.worst_at);
        };
        check_unary([](const Tensor& t) { return tanh(t); }, -2.0, 2.0);
        check_unary([](const Tensor& t) { return sigmoid(t); }, -4.0, 4.0);
        check_unary([](const Tensor& t) { return exp(t); }, -2.0, 2.0);
        check_unary([](const Tensor& t) { return log(t); }, 0.2, 3.0);
        check_unary([](const Tensor& t) { return sqrt(t); }, 0.2, 3.0);
        check_unary([](const Tensor& t) { return negate(t); }, -2.0, 2.0);
        check_unary([](const Tensor& t) { return scale(t, -1.7); }, -2.0, 2.0);
        check_unary([](const Tensor& t) { return clamp_max(t, 0.5); }, 0.6, 3.0);  // clamped side
        check_unary([](const Tensor& t) { return clamp_max(t, 10.0); }, -2.0, 2.0);  // pass side
    }
    SUBCASE("reductions") {
        Tensor x = rand_tensor({4, 6, 5}, rng);
        Tensor w1 = rand_tensor({4, 5}, rng, -1, 1, false);
        for (int axis : {0, 1, 2}) {
            Shape out_shape;
            for (int i = 0; i < 3; ++i) {
                if (i != axis) out_shape.push_back(x.dim(i));
            }
            Tensor w = rand_tensor(out_shape, rng, -1, 1, false);
            for (int op = 0; op < 4; ++op) {
                std::vector<Tensor> leaves = {x};
                auto res = check_gradients(
                    [&]() {
                        Tensor o = op == 0   ? sum(x, axis)
                                   : op == 1 ? mean(x, axis)
                                   : op == 2 ? max_over_axis(x, axis)
                                             : logsumexp(x, axis);
                        return weighted_sum(o, w);
                    },
                    leaves);
                CHECK_MESSAGE(res.ok, res.worst_at);
            }
        }
        std::vector<Tensor> leaves = {x};
        auto res_sum = check_gradients([&]() { return sum(x); }, leaves);
        CHECK_MESSAGE(res_sum.ok, res_sum.worst_at);
        auto res_mean = check_gradients([&]() { return mean(x); }, leaves);
        CHECK_MESSAGE(res_mean.ok, res_mean.worst_at);
        auto res_lse = check_gradients([&]() { return logsumexp(x); }, leaves);
        CHECK_MESSAGE(res_lse.ok, res_lse.worst_at);
        (void)w1;
    }
    SUBCASE("indexing and assembly ops") {
        Tensor table = rand_tensor({9, 4}, rng);
        std::vector<int> ids = {3, 0, 3, 7, 1};  // repeated row on purpose
        Tensor w = rand_tensor({5, 4}, rng, -1, 1, false);
        {
            std::vector<Tensor> leaves = {table};
            auto res = check_gradients([&]() { return weighted_sum(gather_rows(table, ids), w); }, leaves);
            CHECK_MESSAGE(res.ok, res.worst_at);
        }
        Tensor logits = rand_tensor({6, 8}, rng);
        std::vector<int> cols = {0, 7, 3, 3, 5, 1};
        Tensor wv = rand_tensor({6}, rng, -1, 1, false);
        {
            std::vector<Tensor> leaves = {logits};
            auto res = check_gradients([&]() { return weighted_sum(take_per_row(logits, cols), wv); }, leaves);
            CHECK_MESSAGE(res.ok, res.worst_at);
        }
        Tensor a = rand_tensor({5, 3}, rng);
        Tensor b = rand_tensor({5, 4}, rng);
        Tensor wc = rand_tensor({5, 7}, rng, -1, 1, false);
        {
            std::vector<Tensor> leaves = {a, b};
            auto res = check_gradients([&]() { return weighted_sum(concat_cols(a, b), wc); }, leaves);
            CHECK_MESSAGE(res.ok, res.worst_at);
        }
        Tensor big = rand_tensor({5, 9}, rng);
        Tensor ws = rand_tensor({5, 4}, rng, -1, 1, false);
        {
            std::vector<Tensor> leaves = {big};
            auto res = check_gradients([&]() { return weighted_sum(slice_cols(big, 2, 6), ws); }, leaves);
            CHECK_MESSAGE(res.ok, res.worst_at);
        }
        Tensor cube = rand_tensor({4, 5, 3}, rng);
        Tensor wt = rand_tensor({4, 3}, rng, -1, 1, false);
        {
            std::vector<Tensor> leaves = {cube};
            auto res = check_gradients([&]() { return weighted_sum(slice_timestep(cube, 2), wt); }, leaves);
            CHECK_MESSAGE(res.ok, res.worst_at);
        }
        Tensor s1 = rand_tensor({3, 4}, rng);
        Tensor s2 = rand_tensor({3, 4}, rng);
        Tensor s3 = rand_tensor({3, 4}, rng);
        Tensor wst = rand_tensor({3, 3, 4}, rng, -1, 1, false);
        {
            std::vector<Tensor> leaves = {s1, s2, s3};
            auto res = check_gradients(
                [&]() { return weighted_sum(stack_timesteps({s1, s2, s3}), wst); }, leaves);
            CHECK_MESSAGE(res.ok, res.worst_at);
        }
        Tensor rows = rand_tensor({6, 5}, rng);
        Tensor scales({6}, rng.uniform_vec(6, 0.5, 2.0));
        scales.set_requires_grad();
        Tensor wd = rand_tensor({6, 5}, rng, -1, 1, false);
        {
            std::vector<Tensor> leaves = {rows, scales};
            auto res = check_gradients([&]() { return weighted_sum(div_rows(rows, scales), wd); }, leaves);
            CHECK_MESSAGE(res.ok, res.worst_at);
        }
        Tensor flat = rand_tensor({4, 6}, rng);
        Tensor wr = rand_tensor({2, 12}, rng, -1, 1, false);
        {
            std::vector<Tensor> leaves = {flat};
            auto res = check_gradients([&]() { return weighted_sum(reshape(flat, {2, 12}), wr); }, leaves);
            CHECK_MESSAGE(res.ok, res.worst_at);
        }
    }
}
