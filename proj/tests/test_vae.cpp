#include <doctest.h>

#include <cmath>
#include <vector>

#include "seqvae/vae.hpp"
#include "support/gradcheck.hpp"

using namespace seqvae;
using seqvae::testing::check_gradients;

namespace {

VaeConfig toy_config(AggregationMethod m = AggregationMethod::LastHidden) {
    VaeConfig cfg;
    cfg.vocab_size = 8;
    cfg.embed_dim = 3;
    cfg.hidden_dim = 4;
    cfg.latent_dim = 2;
    cfg.aggregation = m;
    return cfg;
}

Batch toy_batch() { return make_batch({{5, 6, 7}, {4, 5}}); }

void zero_heads(VaeModel& m) {
    for (Tensor t : {m.mu_head.weight, m.mu_head.bias, m.logvar_head.weight, m.logvar_head.bias}) {
        std::fill(t.value().begin(), t.value().end(), 0.0);
    }
}

}  // namespace

TEST_CASE("encode with zero heads gives the standard normal posterior for every input") {
    Rng rng(3);
    VaeModel m = VaeModel::init(toy_config(), rng);
    zero_heads(m);
    EncodeResult enc = m.encode(toy_batch());
    for (double v : enc.posterior.mu.value()) CHECK(v == 0.0);
    for (double v : enc.posterior.log_var.value()) CHECK(v == 0.0);
}

TEST_CASE("LastHidden encode feature equals the final valid hidden state (B=1)") {
    Rng rng(5);
    VaeModel m = VaeModel::init(toy_config(AggregationMethod::LastHidden), rng);
    Batch batch = make_batch({{5, 6, 7}});
    EncodeResult enc = m.encode(batch);
    Tensor flat = m.enc_embed.lookup(batch.tokens);
    Tensor embedded = reshape(flat, {1, 3, m.cfg.embed_dim});
    SequenceResult seq = run_sequence(m.encoder, embedded, batch.lengths);
    for (int d = 0; d < m.cfg.hidden_dim; ++d) {
        CHECK(enc.feature.value()[static_cast<size_t>(d)] ==
              seq.hidden.value()[static_cast<size_t>((0 * 3 + 2) * m.cfg.hidden_dim + d)]);
    }
}

TEST_CASE("reparameterize: zero noise returns mu; unit variance adds noise directly") {
    GaussianPosterior p;
    p.mu = Tensor({2, 2}, {1.0, -2.0, 0.5, 3.0});
    p.log_var = Tensor::zeros({2, 2});
    Tensor zero_noise = Tensor::zeros({2, 2});
    Tensor z = reparameterize(p, zero_noise);
    CHECK(std::equal(z.value().begin(), z.value().end(), p.mu.value().begin()));

    Tensor n({2, 2}, {0.1, 0.2, -0.3, 0.4});
    Tensor z2 = reparameterize(p, n);
    for (size_t i = 0; i < 4; ++i) CHECK(z2.value()[i] == doctest::Approx(p.mu.value()[i] + n.value()[i]));
}

TEST_CASE("reparameterize: sample mean over 1e5 draws within 3 standard errors of mu") {
    Rng rng(7);
    GaussianPosterior p;
    p.mu = Tensor({1, 2}, {0.7, -1.2});
    p.log_var = Tensor({1, 2}, {std::log(0.5), std::log(2.0)});
    int n = 100000;
    double sum0 = 0, sum1 = 0;
    for (int i = 0; i < n; ++i) {
        Tensor noise(Shape{1, 2}, rng.normal_vec(2));
        Tensor z = reparameterize(p, noise);
        sum0 += z.value()[0];
        sum1 += z.value()[1];
    }
    double se0 = std::sqrt(0.5 / n), se1 = std::sqrt(2.0 / n);
    CHECK(std::fabs(sum0 / n - 0.7) < 3 * se0);
    CHECK(std::fabs(sum1 / n + 1.2) < 3 * se1);
}

TEST_CASE("analytic KL trivial values") {
    GaussianPosterior p;
    p.mu = Tensor::zeros({1, 2});
    p.log_var = Tensor::zeros({1, 2});
    CHECK(analytic_kl(p).value()[0] == 0.0);

    GaussianPosterior q;
    q.mu = Tensor({1, 2}, {1.0, 0.0});
    q.log_var = Tensor::zeros({1, 2});
    CHECK(analytic_kl(q).value()[0] == doctest::Approx(0.5));
}

TEST_CASE("analytic KL matches the Monte Carlo estimate within 3 standard errors") {
    // E_q[log q - log p] for q = N(0.5, 0.25), p = N(0, 1), 1e6 samples.
    Rng rng(11);
    double mu = 0.5, var = 0.25, logvar = std::log(var), sd = std::sqrt(var);
    int n = 1000000;
    double sum = 0, sumsq = 0;
    for (int i = 0; i < n; ++i) {
        double z = mu + sd * rng.normal();
        double logq = -0.5 * ((z - mu) * (z - mu) / var + logvar + std::log(2 * M_PI));
        double logp = -0.5 * (z * z + std::log(2 * M_PI));
        double d = logq - logp;
        sum += d;
        sumsq += d * d;
    }
    double mc = sum / n;
    double se = std::sqrt((sumsq / n - mc * mc) / n);
    GaussianPosterior p;
    p.mu = Tensor({1, 1}, {mu});
    p.log_var = Tensor({1, 1}, {logvar});
    double analytic = analytic_kl(p).value()[0];
    CHECK(std::fabs(analytic - mc) < 3 * se);
}

TEST_CASE("analytic KL is nonnegative, zero only at the prior (100 random points)") {
    Rng rng(13);
    for (int i = 0; i < 100; ++i) {
        GaussianPosterior p;
        p.mu = Tensor(Shape{1, 3}, rng.uniform_vec(3, -2, 2));
        p.log_var = Tensor(Shape{1, 3}, rng.uniform_vec(3, -2, 2));
        double kl = analytic_kl(p).value()[0];
        CHECK(kl >= 0.0);
        CHECK(kl > 0.0);  // random (mu, log_var) never hit the prior exactly
    }
}

TEST_CASE("word dropout: rate 0 never consumes rng, rate 1 replaces every non-BOS input") {
    Batch batch = toy_batch();
    std::vector<int> clean = decoder_inputs_with_dropout(batch, 0.0, nullptr);
    CHECK(clean == batch.dec_inputs);

    Rng rng(17);
    std::vector<int> dropped = decoder_inputs_with_dropout(batch, 1.0, &rng);
    int w = batch.max_len + 1;
    for (int i = 0; i < batch.batch_size; ++i) {
        CHECK(dropped[static_cast<size_t>(i * w)] == Vocab::kBos);
        for (int t = 1; t <= batch.lengths[static_cast<size_t>(i)]; ++t) {
            CHECK(dropped[static_cast<size_t>(i * w + t)] == Vocab::kUnk);
        }
    }
    CHECK_THROWS_AS(decoder_inputs_with_dropout(batch, 1.5, &rng), ContractError);
}

TEST_CASE("uniform output head makes the reconstruction NLL (T_i + 1) ln V per row") {
    Rng rng(19);
    VaeModel m = VaeModel::init(toy_config(), rng);
    std::fill(m.output_head.weight.value().begin(), m.output_head.weight.value().end(), 0.0);
    std::fill(m.output_head.bias.value().begin(), m.output_head.bias.value().end(), 0.0);
    Batch batch = toy_batch();
    Tensor z = Tensor::zeros({2, 2});
    Tensor nll = m.decode_nll(z, batch, 0.0, nullptr);
    CHECK(nll.value()[0] == doctest::Approx(4.0 * std::log(8.0)).epsilon(1e-12));
    CHECK(nll.value()[1] == doctest::Approx(3.0 * std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("decode NLL is deterministic at dropout 0 and invariant to the aggregation method") {
    Rng rng(23);
    VaeModel m = VaeModel::init(toy_config(AggregationMethod::LastHidden), rng);
    Batch batch = toy_batch();
    Tensor z({2, 2}, {0.3, -0.2, 0.8, 0.1});
    Tensor a = m.decode_nll(z, batch, 0.0, nullptr);
    Tensor b = m.decode_nll(z, batch, 0.0, nullptr);
    CHECK(std::equal(a.value().begin(), a.value().end(), b.value().begin()));

    VaeModel m2 = m.clone();
    m2.cfg.aggregation = AggregationMethod::MaxPool;
    Tensor c = m2.decode_nll(z, batch, 0.0, nullptr);
    CHECK(std::equal(a.value().begin(), a.value().end(), c.value().begin()));
}

TEST_CASE("cosine penalty hand examples") {
    Tensor same({2, 2}, {1.0, 2.0, 1.0, 2.0});
    CHECK(cosine_penalty(same).item() == doctest::Approx(1.0).epsilon(1e-6));

    Tensor ortho({2, 2}, {1.0, 0.0, 0.0, 1.0});
    CHECK(cosine_penalty(ortho).item() == doctest::Approx(0.0).epsilon(1e-6));

    Tensor three({3, 2}, {1.0, 0.0, 0.0, 1.0, -1.0, 0.0});
    CHECK(cosine_penalty(three).item() == doctest::Approx(-1.0 / 3.0).epsilon(1e-6));

    Tensor single({1, 2}, {1.0, 0.0});
    CHECK(cosine_penalty(single).item() == 0.0);  // B < 2 -> warned zero
}

TEST_CASE("cosine penalty is invariant to positive rescaling of a feature row") {
    Rng rng(29);
    Tensor f(Shape{3, 4}, rng.uniform_vec(12, -2, 2));
    double base = cosine_penalty(f).item();
    std::vector<double> scaled(f.value().begin(), f.value().end());
    for (int d = 0; d < 4; ++d) scaled[static_cast<size_t>(d)] *= 37.5;
    double after = cosine_penalty(Tensor(Shape{3, 4}, scaled)).item();
    CHECK(after == doctest::Approx(base).epsilon(1e-7));
}

TEST_CASE("loss: beta=0, lambda=0 equals pure reconstruction; breakdown identity holds") {
    Rng init_rng(31);
    VaeModel m = VaeModel::init(toy_config(), init_rng);
    Batch batch = toy_batch();

    Rng r1(41);
    LossBreakdown pure = m.loss(batch, 0.0, 0.0, 0.0, r1);
    CHECK(pure.total == doctest::Approx(pure.reconstruction_nll).epsilon(1e-12));

    Rng r2(41);
    LossBreakdown elbo = m.loss(batch, 1.0, 0.0, 0.0, r2);
    CHECK(elbo.total == doctest::Approx(elbo.reconstruction_nll + elbo.kl).epsilon(1e-12));
    CHECK(elbo.reconstruction_nll == doctest::Approx(pure.reconstruction_nll).epsilon(1e-12));

    Rng r3(41);
    LossBreakdown full = m.loss(batch, 0.7, 0.5, 0.0, r3);
    CHECK(full.total ==
          doctest::Approx(full.reconstruction_nll + 0.7 * full.kl + 0.5 * full.cosine_penalty).epsilon(1e-12));
    CHECK_THROWS_AS(m.loss(batch, 1.5, 0.0, 0.0, r3), ContractError);
}

TEST_CASE("loss is deterministic for a fixed rng seed") {
    Rng init_rng(37);
    VaeModel m = VaeModel::init(toy_config(AggregationMethod::AbsPool), init_rng);
    Batch batch = toy_batch();
    Rng ra(5), rb(5);
    LossBreakdown a = m.loss(batch, 0.5, 1.0, 0.4, ra);
    LossBreakdown b = m.loss(batch, 0.5, 1.0, 0.4, rb);
    CHECK(a.total == b.total);
    CHECK(a.reconstruction_nll == b.reconstruction_nll);
    CHECK(a.kl == b.kl);
    CHECK(a.cosine_penalty == b.cosine_penalty);
}

TEST_CASE("full VAE loss gradient matches finite differences on a 2-sequence toy batch") {
    // Seed 45 keeps pooling selections stable inside the finite-difference
    // step and curvature low enough for the h^2 truncation term.
    for (auto method : {AggregationMethod::LastHidden, AggregationMethod::AvgPool,
                        AggregationMethod::MaxPool, AggregationMethod::AbsPool}) {
        Rng init_rng(45);
        VaeModel m = VaeModel::init(toy_config(method), init_rng);
        Batch batch = toy_batch();
        auto build = [&]() {
            Rng rng(97);  // fixed stream: same noise and dropout pattern every call
            return m.loss(batch, 0.7, 0.5, 0.4, rng).total_node;
        };
        std::vector<Tensor> leaves = m.parameters();
        auto res = check_gradients(build, leaves);
        CHECK_MESSAGE(res.ok, to_string(method), ": ", res.worst_at);
        CHECK(res.worst_rel_err < 1e-4);
    }
}

TEST_CASE("parameter count matches the closed form") {
    Rng rng(47);
    VaeConfig cfg = toy_config();
    VaeModel m = VaeModel::init(cfg, rng);
    // 2VE + 4H(E+H+1) + 4H(E+D+H+1) + 2(HD+D) + (2HD+2H) + (HV+V)
    int64_t expected = 2 * 8 * 3 + 4 * 4 * (3 + 4 + 1) + 4 * 4 * (3 + 2 + 4 + 1) + 2 * (4 * 2 + 2) +
                       (2 * 4 * 2 + 2 * 4) + (4 * 8 + 8);
    CHECK(VaeModel::expected_parameter_count(cfg) == expected);
    CHECK(m.parameter_count() == expected);
}

TEST_CASE("greedy decoding terminates and is deterministic (smoke)") {
    Rng rng(51);
    VaeModel m = VaeModel::init(toy_config(), rng);
    Tensor z({1, 2}, {0.4, -0.3});
    std::vector<int> a = m.greedy_decode(z, 12);
    std::vector<int> b = m.greedy_decode(z, 12);
    CHECK(a == b);
    CHECK(a.size() <= 12);
    for (int tok : a) {
        CHECK(tok >= 0);
        CHECK(tok < m.cfg.vocab_size);
        CHECK(tok != Vocab::kEos);
    }
    CHECK_THROWS_AS(m.greedy_decode(Tensor::zeros({2, 2}), 5), ShapeError);
    CHECK_THROWS_AS(m.greedy_decode(Tensor::zeros({1, 2}), 0), ContractError);
}
