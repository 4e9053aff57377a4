#include "seqvae/vae.hpp"

#include <cmath>
#include <iostream>

namespace seqvae {

Tensor reparameterize(const GaussianPosterior& posterior, const Tensor& noise) {
    if (noise.shape() != posterior.mu.shape()) {
        throw ShapeError("reparameterize: noise " + shape_str(noise.shape()) + " vs mu " +
                         shape_str(posterior.mu.shape()));
    }
    return add(posterior.mu, mul(exp(scale(posterior.log_var, 0.5)), noise));
}

Tensor analytic_kl(const GaussianPosterior& posterior) {
    const Tensor& mu = posterior.mu;
    const Tensor& lv = posterior.log_var;
    Tensor inner = sub(add(mul(mu, mu), exp(lv)), add(lv, Tensor::scalar(1.0)));
    return scale(sum(inner, 1), 0.5);
}

Tensor cosine_penalty(const Tensor& features) {
    if (features.rank() != 2) {
        throw ShapeError("cosine_penalty: features must be B x H, got " + shape_str(features.shape()));
    }
    int b = features.dim(0);
    if (b < 2) {
        std::cerr << "[seqvae] warning: cosine_penalty needs at least 2 rows, got " << b
                  << "; returning 0\n";
        return Tensor::scalar(0.0);
    }
    Tensor norms = add(sqrt(sum(mul(features, features), 1)), Tensor::scalar(1e-8));
    Tensor normalized = div_rows(features, norms);
    Tensor gram = matmul(normalized, transpose(normalized));
    Tensor upper = Tensor::zeros({b, b});
    for (int i = 0; i < b; ++i) {
        for (int j = i + 1; j < b; ++j) upper.value()[static_cast<size_t>(i * b + j)] = 1.0;
    }
    double pairs = 0.5 * b * (b - 1);
    return scale(sum(mul(gram, upper)), 1.0 / pairs);
}

std::vector<int> decoder_inputs_with_dropout(const Batch& batch, double rate, Rng* rng) {
    if (rate < 0.0 || rate > 1.0) {
        throw ContractError("word dropout rate " + std::to_string(rate) + " outside [0,1]");
    }
    std::vector<int> inputs = batch.dec_inputs;
    if (rate == 0.0) return inputs;
    if (rng == nullptr) throw ContractError("word dropout requires an rng when rate > 0");
    int w = batch.max_len + 1;
    for (int i = 0; i < batch.batch_size; ++i) {
        for (int t = 1; t <= batch.lengths[static_cast<size_t>(i)]; ++t) {
            if (rng->uniform() < rate) inputs[static_cast<size_t>(i * w + t)] = Vocab::kUnk;
        }
    }
    return inputs;
}

VaeModel VaeModel::init(const VaeConfig& cfg, Rng& rng) {
    if (cfg.vocab_size < 5 || cfg.embed_dim < 1 || cfg.hidden_dim < 1 || cfg.latent_dim < 1) {
        throw ContractError("VaeModel::init: invalid configuration sizes");
    }
    VaeModel m;
    m.cfg = cfg;
    m.enc_embed = Embedding::init(cfg.vocab_size, cfg.embed_dim, rng);
    m.dec_embed = Embedding::init(cfg.vocab_size, cfg.embed_dim, rng);
    m.encoder = LstmCell::init(cfg.embed_dim, cfg.hidden_dim, rng);
    m.decoder = LstmCell::init(cfg.embed_dim + cfg.latent_dim, cfg.hidden_dim, rng);
    m.mu_head = Affine::init(cfg.hidden_dim, cfg.latent_dim, rng);
    m.logvar_head = Affine::init(cfg.hidden_dim, cfg.latent_dim, rng);
    m.latent_to_state = Affine::init(cfg.latent_dim, 2 * cfg.hidden_dim, rng);
    m.output_head = Affine::init(cfg.hidden_dim, cfg.vocab_size, rng);
    return m;
}

std::vector<std::pair<std::string, Tensor>> VaeModel::named_parameters() const {
    return {
        {"enc_embed.table", enc_embed.table},
        {"dec_embed.table", dec_embed.table},
        {"encoder.w_input", encoder.w_input},
        {"encoder.w_hidden", encoder.w_hidden},
        {"encoder.bias", encoder.bias},
        {"decoder.w_input", decoder.w_input},
        {"decoder.w_hidden", decoder.w_hidden},
        {"decoder.bias", decoder.bias},
        {"mu_head.weight", mu_head.weight},
        {"mu_head.bias", mu_head.bias},
        {"logvar_head.weight", logvar_head.weight},
        {"logvar_head.bias", logvar_head.bias},
        {"latent_to_state.weight", latent_to_state.weight},
        {"latent_to_state.bias", latent_to_state.bias},
        {"output_head.weight", output_head.weight},
        {"output_head.bias", output_head.bias},
    };
}

std::vector<Tensor> VaeModel::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

int64_t VaeModel::parameter_count() const {
    int64_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.numel();
    return n;
}

int64_t VaeModel::expected_parameter_count(const VaeConfig& cfg) {
    int64_t v = cfg.vocab_size, e = cfg.embed_dim, h = cfg.hidden_dim, d = cfg.latent_dim;
    return 2 * v * e                     // embeddings
           + 4 * h * (e + h + 1)         // encoder cell
           + 4 * h * (e + d + h + 1)     // decoder cell
           + 2 * (h * d + d)             // mu / logvar heads
           + (d * 2 * h + 2 * h)         // latent-to-state
           + (h * v + v);                // output head
}

VaeModel VaeModel::clone() const {
    VaeModel m;
    m.cfg = cfg;
    m.enc_embed.table = enc_embed.table.clone();
    m.dec_embed.table = dec_embed.table.clone();
    m.encoder = encoder;
    m.encoder.w_input = encoder.w_input.clone();
    m.encoder.w_hidden = encoder.w_hidden.clone();
    m.encoder.bias = encoder.bias.clone();
    m.decoder = decoder;
    m.decoder.w_input = decoder.w_input.clone();
    m.decoder.w_hidden = decoder.w_hidden.clone();
    m.decoder.bias = decoder.bias.clone();
    m.mu_head = {mu_head.weight.clone(), mu_head.bias.clone()};
    m.logvar_head = {logvar_head.weight.clone(), logvar_head.bias.clone()};
    m.latent_to_state = {latent_to_state.weight.clone(), latent_to_state.bias.clone()};
    m.output_head = {output_head.weight.clone(), output_head.bias.clone()};
    return m;
}

EncodeResult VaeModel::encode(const Batch& batch) const {
    Tensor flat = enc_embed.lookup(batch.tokens);  // (B*T) x E
    Tensor embedded = reshape(flat, {batch.batch_size, batch.max_len, cfg.embed_dim});
    SequenceResult seq = run_sequence(encoder, embedded, batch.lengths);
    EncodeResult out;
    out.feature = aggregate(seq.hidden, batch.lengths, cfg.aggregation);
    out.posterior.mu = mu_head.apply(out.feature);
    out.posterior.log_var = logvar_head.apply(out.feature);
    return out;
}

Tensor VaeModel::decode_nll(const Tensor& z, const Batch& batch, double dropout_rate, Rng* rng) const {
    if (z.rank() != 2 || z.dim(0) != batch.batch_size || z.dim(1) != cfg.latent_dim) {
        throw ShapeError("decode_nll: z " + shape_str(z.shape()) + " for batch of " +
                         std::to_string(batch.batch_size));
    }
    std::vector<int> inputs = decoder_inputs_with_dropout(batch, dropout_rate, rng);
    int b = batch.batch_size;
    int steps = batch.max_len + 1;

    Tensor init = latent_to_state.apply(z);  // B x 2H
    Tensor h = slice_cols(init, 0, cfg.hidden_dim);
    Tensor c = slice_cols(init, cfg.hidden_dim, 2 * cfg.hidden_dim);

    Tensor nll = Tensor::zeros({b});
    std::vector<int> ids_t(static_cast<size_t>(b));
    std::vector<int> targets_t(static_cast<size_t>(b));
    for (int t = 0; t < steps; ++t) {
        for (int i = 0; i < b; ++i) {
            ids_t[static_cast<size_t>(i)] = inputs[static_cast<size_t>(i * steps + t)];
            targets_t[static_cast<size_t>(i)] = batch.dec_targets[static_cast<size_t>(i * steps + t)];
        }
        Tensor x = concat_cols(dec_embed.lookup(ids_t), z);
        auto [h_t, c_t] = decoder.step(x, h, c);
        h = h_t;
        c = c_t;
        Tensor logits = output_head.apply(h_t);  // B x V
        Tensor step_nll = sub(logsumexp(logits, 1), take_per_row(logits, targets_t));
        Tensor mask_t = Tensor::zeros({b});
        for (int i = 0; i < b; ++i) {
            if (t < batch.dec_len(i)) mask_t.value()[static_cast<size_t>(i)] = 1.0;
        }
        nll = add(nll, mul(step_nll, mask_t));
    }
    return nll;
}

LossBreakdown VaeModel::loss(const Batch& batch, double beta, double lambda_cos, double dropout_rate,
                             Rng& rng) const {
    if (beta < 0.0 || beta > 1.0) throw ContractError("loss: beta " + std::to_string(beta) + " outside [0,1]");
    if (lambda_cos < 0.0) throw ContractError("loss: lambda_cos must be nonnegative");
    EncodeResult enc = encode(batch);
    Tensor kl_rows = analytic_kl(enc.posterior);
    Tensor noise(Shape{batch.batch_size, cfg.latent_dim},
                 rng.normal_vec(static_cast<size_t>(batch.batch_size) * static_cast<size_t>(cfg.latent_dim)));
    Tensor z = reparameterize(enc.posterior, noise);
    Tensor recon_rows = decode_nll(z, batch, dropout_rate, &rng);
    Tensor cos = cosine_penalty(enc.feature);

    Tensor recon_mean = mean(recon_rows);
    Tensor kl_mean = mean(kl_rows);
    Tensor total = add(recon_mean, add(scale(kl_mean, beta), scale(cos, lambda_cos)));

    LossBreakdown out;
    out.reconstruction_nll = recon_mean.item();
    out.kl = kl_mean.item();
    out.cosine_penalty = cos.item();
    out.beta = beta;
    out.lambda_cos = lambda_cos;
    out.total = total.item();
    out.total_node = total;
    return out;
}

LossBreakdown VaeModel::loss(const Batch& batch, double beta, Rng& rng) const {
    return loss(batch, beta, cfg.lambda_cos, cfg.word_dropout, rng);
}

std::vector<int> VaeModel::greedy_decode(const Tensor& z, int max_len) const {
    if (z.rank() != 2 || z.dim(0) != 1 || z.dim(1) != cfg.latent_dim) {
        throw ShapeError("greedy_decode: z must be 1 x latent_dim, got " + shape_str(z.shape()));
    }
    if (max_len < 1) throw ContractError("greedy_decode: max_len must be >= 1");
    Tensor init = latent_to_state.apply(z);
    Tensor h = slice_cols(init, 0, cfg.hidden_dim);
    Tensor c = slice_cols(init, cfg.hidden_dim, 2 * cfg.hidden_dim);
    std::vector<int> out;
    int token = Vocab::kBos;
    for (int t = 0; t < max_len; ++t) {
        std::vector<int> ids = {token};
        Tensor x = concat_cols(dec_embed.lookup(ids), z);
        auto [h_t, c_t] = decoder.step(x, h, c);
        h = h_t;
        c = c_t;
        Tensor logits = output_head.apply(h_t);
        auto lv = logits.value();
        int best = 0;
        for (int v = 1; v < cfg.vocab_size; ++v) {
            if (lv[static_cast<size_t>(v)] > lv[static_cast<size_t>(best)]) best = v;
        }
        if (best == Vocab::kEos) break;
        out.push_back(best);
        token = best;
    }
    return out;
}

}  // namespace seqvae
