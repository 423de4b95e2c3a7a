#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "manidiff/autodiff.hpp"
#include "manidiff/core.hpp"
#include "manidiff/nn.hpp"
#include "manidiff/rng.hpp"

// Conditional VAE over the object joint-angle trajectory gamma_{1:N}: the
// long-horizon articulation prior. Trajectories are zero-padded to the
// maximum length for the MLP; losses only read the first N entries.

namespace manidiff {

struct JointVAEConfig {
    int d_latent = 32;
    int hidden = 128;
    int blocks = 2;
    int d_obj = 64;
    int d_text = 64;
    int max_frames = kMaxFrames;
    double gamma_min = 0.0;
    double gamma_max = 1.4;

    void validate() const {
        if (d_latent < 1 || hidden < 1 || blocks < 0 || d_obj < 1 || d_text < 1 ||
            max_frames < 1 || max_frames > kMaxFrames)
            throw InvalidConfig("bad JointVAE dimensions");
        if (!(gamma_min <= gamma_max)) throw InvalidConfig("inverted joint limits");
    }
};

struct JointLatent {
    Eigen::VectorXd mu, logvar;
};

struct JointVAELossWeights {
    double elbo = 1.0;
    double rec = 1.0;

    void validate() const {
        if (elbo < 0 || rec < 0) throw InvalidConfig("loss weights must be non-negative");
    }
};

struct JointVAELossBreakdown {
    double total = 0, recon_nll = 0, kl = 0, rec = 0;
};

// Closed-form KL(N(mu, diag exp(logvar)) || N(0, I)).
inline double kl_divergence(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar) {
    if (mu.size() != logvar.size()) throw ShapeMismatch("kl_divergence: size mismatch");
    double s = 0;
    for (Eigen::Index i = 0; i < mu.size(); ++i)
        s += 0.5 * (mu(i) * mu(i) + std::exp(logvar(i)) - 1.0 - logvar(i));
    return s;
}

inline ad::Var kl_divergence_var(const ad::Var& mu, const ad::Var& logvar) {
    ad::Var sq = ad::mul(mu, mu);
    ad::Var ones = ad::Var::constant(ad::Mat::Ones(mu.rows(), mu.cols()));
    ad::Var inner = ad::sub(ad::sub(ad::add(sq, ad::exp_(logvar)), ones), logvar);
    return ad::scale(ad::sum(inner), 0.5);
}

// loss = elbo * (recon_NLL + KL) + rec * ||gamma - gamma_hat||^2, with the
// reconstruction NLL instantiated as the same sum of squares (unit-variance
// Gaussian likelihood up to constants).
inline JointVAELossBreakdown jointvae_loss(const Eigen::VectorXd& gamma,
                                           const Eigen::VectorXd& gamma_hat,
                                           const JointLatent& latent,
                                           const JointVAELossWeights& w) {
    w.validate();
    if (gamma.size() != gamma_hat.size()) throw ShapeMismatch("jointvae_loss: length mismatch");
    JointVAELossBreakdown out;
    out.rec = (gamma - gamma_hat).squaredNorm();
    out.recon_nll = out.rec;
    out.kl = kl_divergence(latent.mu, latent.logvar);
    out.total = w.elbo * (out.recon_nll + out.kl) + w.rec * out.rec;
    return out;
}

class JointVAE {
public:
    explicit JointVAE(JointVAEConfig cfg = {}, uint64_t seed = 0) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(seed, 0x6a76));
        const int enc_in = cfg_.max_frames + cfg_.d_obj + cfg_.d_text;
        const int dec_in = cfg_.d_latent + cfg_.d_obj + cfg_.d_text;
        enc_in_ = nn::Linear(store_, "enc.in", enc_in, cfg_.hidden, rng);
        for (int b = 0; b < cfg_.blocks; ++b)
            enc_blocks_.emplace_back(store_, "enc.res" + std::to_string(b), cfg_.hidden, rng);
        enc_mu_ = nn::Linear(store_, "enc.mu", cfg_.hidden, cfg_.d_latent, rng);
        enc_logvar_ = nn::Linear(store_, "enc.logvar", cfg_.hidden, cfg_.d_latent, rng);
        dec_in_ = nn::Linear(store_, "dec.in", dec_in, cfg_.hidden, rng);
        for (int b = 0; b < cfg_.blocks; ++b)
            dec_blocks_.emplace_back(store_, "dec.res" + std::to_string(b), cfg_.hidden, rng);
        dec_out_ = nn::Linear(store_, "dec.out", cfg_.hidden, cfg_.max_frames, rng);
    }

    const JointVAEConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }

    // posterior parameters as graph nodes (training path)
    std::pair<ad::Var, ad::Var> encode_var(const Eigen::VectorXd& gamma,
                                           const Eigen::VectorXd& obj_feat,
                                           const Eigen::VectorXd& text_feat) {
        ad::Var x = ad::Var::constant(encoder_input(gamma, obj_feat, text_feat));
        ad::Var h = body(enc_in_(x), enc_blocks_);
        return {enc_mu_(h), enc_logvar_(h)};
    }

    JointLatent encode(const Eigen::VectorXd& gamma, const Eigen::VectorXd& obj_feat,
                       const Eigen::VectorXd& text_feat) {
        ad::NoGradGuard ng;
        auto [mu, logvar] = encode_var(gamma, obj_feat, text_feat);
        return {mu.value().row(0).transpose(), logvar.value().row(0).transpose()};
    }

    // full padded trajectory, pre-clamp (training path; the public decode
    // applies the joint-limit clamp)
    ad::Var decode_var(const ad::Var& z, const Eigen::VectorXd& obj_feat,
                       const Eigen::VectorXd& text_feat) {
        if (z.rows() != 1 || z.cols() != cfg_.d_latent)
            throw ShapeMismatch("decode_var: z must be 1 x d_latent");
        check_features(obj_feat, text_feat);
        Eigen::RowVectorXd conds(cfg_.d_obj + cfg_.d_text);
        conds << obj_feat.transpose(), text_feat.transpose();
        ad::Var x = ad::concat_cols({z, ad::Var::constant(conds)});
        ad::Var h = body(dec_in_(x), dec_blocks_);
        return dec_out_(h);
    }

    Eigen::VectorXd decode(const Eigen::VectorXd& z, const Eigen::VectorXd& obj_feat,
                           const Eigen::VectorXd& text_feat, int n_frames) {
        if (n_frames < 1 || n_frames > cfg_.max_frames)
            throw InvalidLength("decode: N must be in [1, " + std::to_string(cfg_.max_frames) +
                                "]");
        if (z.size() != cfg_.d_latent) throw ShapeMismatch("decode: z has wrong dimension");
        ad::NoGradGuard ng;
        ad::Var zr = ad::Var::constant(z.transpose());
        Eigen::VectorXd full = decode_var(zr, obj_feat, text_feat).value().row(0).transpose();
        Eigen::VectorXd out = full.head(n_frames);
        for (Eigen::Index i = 0; i < out.size(); ++i)
            out(i) = std::clamp(out(i), cfg_.gamma_min, cfg_.gamma_max);
        return out;
    }

    static Eigen::VectorXd sample_latent(const JointLatent& latent, Rng& rng) {
        Eigen::VectorXd z(latent.mu.size());
        for (Eigen::Index i = 0; i < z.size(); ++i)
            z(i) = latent.mu(i) + std::exp(0.5 * latent.logvar(i)) * rng.normal();
        return z;
    }

    // One training step on a single trajectory; returns the breakdown.
    struct TrainSample {
        Eigen::VectorXd gamma;
        Eigen::VectorXd obj_feat;
        Eigen::VectorXd text_feat;
    };

    JointVAELossBreakdown train_step(const TrainSample& s, const JointVAELossWeights& w,
                                     nn::Adam& opt, Rng& rng) {
        w.validate();
        store_.zero_grad();
        auto [mu, logvar] = encode_var(s.gamma, s.obj_feat, s.text_feat);
        Eigen::RowVectorXd eps(cfg_.d_latent);
        for (int i = 0; i < cfg_.d_latent; ++i) eps(i) = rng.normal();
        ad::Var z = reparameterize(mu, logvar, eps);
        ad::Var gamma_hat = decode_var(z, s.obj_feat, s.text_feat);
        const int n = static_cast<int>(s.gamma.size());
        ad::Var pred_n = ad::slice_cols(gamma_hat, 0, n);
        ad::Var err = ad::sub(pred_n, ad::Var::constant(s.gamma.transpose()));
        ad::Var rec = ad::sum_sq(err);
        ad::Var kl = kl_divergence_var(mu, logvar);
        ad::Var total = ad::add(ad::scale(ad::add(rec, kl), w.elbo), ad::scale(rec, w.rec));
        ad::backward(total);
        opt.step();
        JointVAELossBreakdown out;
        out.rec = rec.item();
        out.recon_nll = out.rec;
        out.kl = kl.item();
        out.total = total.item();
        return out;
    }

    // Loss of the current parameters on a sample, mean-free evaluation with
    // the posterior mean as the latent (no sampling noise).
    JointVAELossBreakdown eval_loss(const TrainSample& s, const JointVAELossWeights& w) {
        ad::NoGradGuard ng;
        JointLatent latent = encode(s.gamma, s.obj_feat, s.text_feat);
        ad::Var z = ad::Var::constant(latent.mu.transpose());
        Eigen::VectorXd gamma_hat = decode_var(z, s.obj_feat, s.text_feat)
                                        .value()
                                        .row(0)
                                        .head(s.gamma.size())
                                        .transpose();
        return jointvae_loss(s.gamma, gamma_hat, latent, w);
    }

    static ad::Var reparameterize(const ad::Var& mu, const ad::Var& logvar,
                                  const Eigen::RowVectorXd& eps) {
        ad::Var sigma = ad::exp_(ad::scale(logvar, 0.5));
        return ad::add(mu, ad::mul(sigma, ad::Var::constant(eps)));
    }

private:
    ad::Var body(ad::Var h, const std::vector<nn::ResidualBlock>& blocks) {
        h = ad::silu(h);
        for (const auto& b : blocks) h = b(h);
        return h;
    }

    void check_features(const Eigen::VectorXd& obj_feat, const Eigen::VectorXd& text_feat) {
        if (obj_feat.size() != cfg_.d_obj || text_feat.size() != cfg_.d_text)
            throw ShapeMismatch("condition feature dimension mismatch");
        if (!obj_feat.allFinite() || !text_feat.allFinite())
            throw InvalidInput("condition features must be finite");
    }

    Eigen::RowVectorXd encoder_input(const Eigen::VectorXd& gamma,
                                     const Eigen::VectorXd& obj_feat,
                                     const Eigen::VectorXd& text_feat) {
        if (gamma.size() < 1 || gamma.size() > cfg_.max_frames)
            throw InvalidLength("trajectory length out of range");
        if (!gamma.allFinite()) throw InvalidInput("trajectory must be finite");
        check_features(obj_feat, text_feat);
        Eigen::RowVectorXd x = Eigen::RowVectorXd::Zero(cfg_.max_frames + cfg_.d_obj +
                                                        cfg_.d_text);
        x.head(gamma.size()) = gamma.transpose();
        x.segment(cfg_.max_frames, cfg_.d_obj) = obj_feat.transpose();
        x.tail(cfg_.d_text) = text_feat.transpose();
        return x;
    }

    JointVAEConfig cfg_;
    nn::ParamStore store_;
    nn::Linear enc_in_, enc_mu_, enc_logvar_, dec_in_, dec_out_;
    std::vector<nn::ResidualBlock> enc_blocks_, dec_blocks_;
};

}  // namespace manidiff
