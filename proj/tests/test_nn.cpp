#include <doctest.h>

#include <cmath>
#include <vector>

#include "seqvae/nn.hpp"
#include "seqvae/rng.hpp"
#include "support/gradcheck.hpp"

using namespace seqvae;
using seqvae::testing::check_gradients;

namespace {

Tensor rand_input(Shape shape, Rng& rng, bool requires_grad = false) {
    size_t n = static_cast<size_t>(shape_numel(shape));
    Tensor t(std::move(shape), rng.uniform_vec(n, -1.0, 1.0));
    t.set_requires_grad(requires_grad);
    return t;
}

}  // namespace

TEST_CASE("Affine applies W x + b") {
    Rng rng(3);
    Affine a = Affine::init(2, 3, rng);
    a.weight = Tensor({3, 2}, {1, 2, 3, 4, 5, 6});
    a.bias = Tensor({3}, {0.5, -0.5, 1.0});
    Tensor x({1, 2}, {1.0, 1.0});
    Tensor y = a.apply(x);
    CHECK(y.value()[0] == doctest::Approx(3.5));
    CHECK(y.value()[1] == doctest::Approx(6.5));
    CHECK(y.value()[2] == doctest::Approx(12.0));
    CHECK_THROWS_AS(a.apply(Tensor::zeros({1, 5})), ShapeError);
}

TEST_CASE("LSTM with all-zero parameters outputs zero for any input") {
    Rng rng(5);
    LstmCell cell = LstmCell::init(3, 4, rng);
    for (Tensor t : {cell.w_input, cell.w_hidden, cell.bias}) {
        std::fill(t.value().begin(), t.value().end(), 0.0);
    }
    Tensor x = rand_input({2, 3}, rng);
    Tensor h0 = Tensor::zeros({2, 4});
    Tensor c0 = Tensor::zeros({2, 4});
    auto [h, c] = cell.step(x, h0, c0);
    for (double v : h.value()) CHECK(v == 0.0);
    for (double v : c.value()) CHECK(v == 0.0);
}

TEST_CASE("lstm_step gradients match finite differences for every cell parameter") {
    Rng rng(7);
    LstmCell cell = LstmCell::init(3, 4, rng);
    Tensor x = rand_input({2, 3}, rng, true);
    Tensor h0 = rand_input({2, 4}, rng, true);
    Tensor c0 = rand_input({2, 4}, rng, true);
    Tensor w = rand_input({2, 4}, rng);
    std::vector<Tensor> leaves = {cell.w_input, cell.w_hidden, cell.bias, x, h0, c0};
    auto res = check_gradients(
        [&]() {
            auto [h, c] = cell.step(x, h0, c0);
            return sum(add(mul(h, w), mul(c, w)));
        },
        leaves);
    CHECK_MESSAGE(res.ok, res.worst_at);
    CHECK(res.worst_rel_err < 1e-4);
}

TEST_CASE("two teacher-forced steps equal the unrolled two-step computation bitwise") {
    Rng rng(11);
    LstmCell cell = LstmCell::init(3, 5, rng);
    Tensor x0 = rand_input({2, 3}, rng);
    Tensor x1 = rand_input({2, 3}, rng);
    Tensor h0 = Tensor::zeros({2, 5});
    Tensor c0 = Tensor::zeros({2, 5});

    auto [ha, ca] = cell.step(x0, h0, c0);
    auto [hb, cb] = cell.step(x1, ha, ca);

    // Unrolled: same computation written as one expression chain.
    auto unrolled = cell.step(x1, cell.step(x0, h0, c0).first, cell.step(x0, h0, c0).second);
    CHECK(std::equal(hb.value().begin(), hb.value().end(), unrolled.first.value().begin()));
    CHECK(std::equal(cb.value().begin(), cb.value().end(), unrolled.second.value().begin()));
}

TEST_CASE("run_sequence with B=1, T=1 equals one lstm_step") {
    Rng rng(13);
    LstmCell cell = LstmCell::init(3, 4, rng);
    Tensor x = rand_input({1, 1, 3}, rng);
    std::vector<int> lengths = {1};
    SequenceResult seq = run_sequence(cell, x, lengths);
    Tensor step_x(Shape{1, 3}, std::vector<double>(x.value().begin(), x.value().end()));
    auto [h, c] = cell.step(step_x, Tensor::zeros({1, 4}), Tensor::zeros({1, 4}));
    for (int d = 0; d < 4; ++d) CHECK(seq.hidden.value()[static_cast<size_t>(d)] == h.value()[static_cast<size_t>(d)]);
    CHECK(seq.mask == std::vector<uint8_t>{1});
}

TEST_CASE("run_sequence rejects zero lengths") {
    Rng rng(17);
    LstmCell cell = LstmCell::init(2, 3, rng);
    Tensor x = rand_input({2, 4, 2}, rng);
    std::vector<int> lengths = {4, 0};
    CHECK_THROWS_AS(run_sequence(cell, x, lengths), ContractError);
}

TEST_CASE("batch invariance: batched run equals per-example runs within 1e-12") {
    Rng rng(19);
    LstmCell cell = LstmCell::init(3, 6, rng);
    int b = 4, t_max = 5, e = 3;
    Tensor batch = rand_input({b, t_max, e}, rng);
    std::vector<int> lengths = {5, 3, 4, 1};
    SequenceResult full = run_sequence(cell, batch, lengths);
    for (int i = 0; i < b; ++i) {
        std::vector<double> row;
        for (int t = 0; t < t_max; ++t) {
            for (int d = 0; d < e; ++d) {
                row.push_back(batch.value()[static_cast<size_t>((i * t_max + t) * e + d)]);
            }
        }
        Tensor single(Shape{1, t_max, e}, row);
        std::vector<int> len1 = {lengths[static_cast<size_t>(i)]};
        SequenceResult one = run_sequence(cell, single, len1);
        for (int t = 0; t < lengths[static_cast<size_t>(i)]; ++t) {
            for (int d = 0; d < 6; ++d) {
                double batched = full.hidden.value()[static_cast<size_t>((i * t_max + t) * 6 + d)];
                double alone = one.hidden.value()[static_cast<size_t>(t * 6 + d)];
                CHECK(std::fabs(batched - alone) <= 1e-12);
            }
        }
    }
}

TEST_CASE("Mlp chains widths and applies tanh between layers") {
    Rng rng(23);
    Mlp m = Mlp::init({3, 4, 1}, rng);
    Tensor x = rand_input({2, 3}, rng, true);
    Tensor y = m.apply(x);
    CHECK(y.shape() == Shape{2, 1});

    Tensor w = rand_input({2, 1}, rng);
    std::vector<Tensor> leaves = {m.layers[0].weight, m.layers[0].bias, m.layers[1].weight,
                                  m.layers[1].bias, x};
    auto res = check_gradients([&]() { return sum(mul(m.apply(x), w)); }, leaves);
    CHECK_MESSAGE(res.ok, res.worst_at);

    CHECK_THROWS_AS(Mlp::init({3}, rng), ContractError);
}
