#pragma once

#include <string>
#include <variant>
#include <vector>

#include "manidiff/autodiff.hpp"
#include "manidiff/errors.hpp"
#include "manidiff/nn.hpp"
#include "manidiff/rng.hpp"

// Sequence backbone for the denoiser: stacked pre-norm blocks whose mixer is
// one of {selective state space, GRU, temporal conv, attention}. Every mixer
// and MLP ends in a zero-initialized projection, so a fresh backbone is the
// identity map.

namespace manidiff {

enum class Backbone { SSM, GRU, TConv, Attention };

inline const char* backbone_name(Backbone b) {
    switch (b) {
        case Backbone::SSM: return "ssm";
        case Backbone::GRU: return "gru";
        case Backbone::TConv: return "tconv";
        case Backbone::Attention: return "attention";
    }
    throw InvalidConfig("unknown backbone");
}

inline Backbone backbone_from_name(const std::string& s) {
    if (s == "ssm") return Backbone::SSM;
    if (s == "gru") return Backbone::GRU;
    if (s == "tconv") return Backbone::TConv;
    if (s == "attention") return Backbone::Attention;
    throw InvalidConfig("unknown backbone name: " + s);
}

struct SSMBlockConfig {
    int model_dim = 128;
    int state_dim = 16;
    int num_blocks = 8;
    Backbone backbone = Backbone::SSM;
    bool causal = false;  // bidirectional unless set

    void validate() const {
        if (model_dim < 1 || state_dim < 1 || num_blocks < 1)
            throw InvalidConfig("bad backbone dimensions");
    }
};

// ---- plain recurrence (the oracle the graph op is tested against) ----

// h'(c,s) = a(c) h(c,s) + x(c) B(s);  y(c) = sum_s C(s) h'(c,s)
struct SSMStepResult {
    Eigen::MatrixXd h;  // d x S
    Eigen::VectorXd y;  // d
};

inline SSMStepResult ssm_step(const Eigen::MatrixXd& h, const Eigen::VectorXd& a,
                              const Eigen::VectorXd& x, const Eigen::VectorXd& B,
                              const Eigen::VectorXd& C) {
    if (h.rows() != a.size() || h.rows() != x.size() || h.cols() != B.size() ||
        h.cols() != C.size())
        throw ShapeMismatch("ssm_step: inconsistent shapes");
    SSMStepResult out;
    out.h = a.asDiagonal() * h + x * B.transpose();
    out.y = out.h * C;
    return out;
}

// Sequential scan over L frames; rows of A, X are per-channel values, rows of
// B, C are per-state values. Returns Y with one row per frame.
inline Eigen::MatrixXd ssm_scan_plain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                      const Eigen::MatrixXd& C, const Eigen::MatrixXd& X) {
    const Eigen::Index L = X.rows(), d = X.cols(), S = B.cols();
    if (A.rows() != L || A.cols() != d || B.rows() != L || C.rows() != L || C.cols() != S)
        throw ShapeMismatch("ssm_scan_plain: inconsistent shapes");
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, S);
    Eigen::MatrixXd Y(L, d);
    for (Eigen::Index t = 0; t < L; ++t) {
        SSMStepResult r = ssm_step(h, A.row(t).transpose(), X.row(t).transpose(),
                                   B.row(t).transpose(), C.row(t).transpose());
        h = r.h;
        Y.row(t) = r.y.transpose();
    }
    return Y;
}

// ---- mixers ----

// Input-dependent scan coefficients for one direction.
struct SelectiveScanDir {
    nn::Linear proj_a, proj_b, proj_c;

    SelectiveScanDir() = default;
    SelectiveScanDir(nn::ParamStore& store, const std::string& name, int d, int s, Rng& rng)
        : proj_a(store, name + ".a", d, d, rng),
          proj_b(store, name + ".b", d, s, rng),
          proj_c(store, name + ".c", d, s, rng) {}

    ad::Var operator()(const ad::Var& x) const {
        // decay in (0, 1): exp(-softplus(.))
        ad::Var a = ad::exp_(ad::neg(ad::softplus(proj_a(x))));
        return ad::ssm_scan(a, proj_b(x), proj_c(x), x);
    }
};

struct SSMMixer {
    nn::Linear in_u, in_gate, out;
    SelectiveScanDir fwd, bwd;
    bool causal = false;

    SSMMixer() = default;
    SSMMixer(nn::ParamStore& store, const std::string& name, const SSMBlockConfig& cfg,
             Rng& rng)
        : in_u(store, name + ".u", cfg.model_dim, cfg.model_dim, rng),
          in_gate(store, name + ".gate", cfg.model_dim, cfg.model_dim, rng),
          out(store, name + ".out", cfg.model_dim, cfg.model_dim, rng, /*zero_init=*/true),
          fwd(store, name + ".fwd", cfg.model_dim, cfg.state_dim, rng),
          causal(cfg.causal) {
        if (!causal) bwd = SelectiveScanDir(store, name + ".bwd", cfg.model_dim,
                                            cfg.state_dim, rng);
    }

    ad::Var operator()(const ad::Var& x) const {
        ad::Var u = in_u(x);
        ad::Var s = fwd(u);
        if (!causal) s = ad::add(s, ad::flip_rows(bwd(ad::flip_rows(u))));
        return out(ad::mul(s, ad::silu(in_gate(x))));
    }
};

struct GRUDir {
    nn::Linear xz, xr, xn, hz, hr, hn;

    GRUDir() = default;
    GRUDir(nn::ParamStore& store, const std::string& name, int d, Rng& rng)
        : xz(store, name + ".xz", d, d, rng),
          xr(store, name + ".xr", d, d, rng),
          xn(store, name + ".xn", d, d, rng),
          hz(store, name + ".hz", d, d, rng),
          hr(store, name + ".hr", d, d, rng),
          hn(store, name + ".hn", d, d, rng) {}

    ad::Var operator()(const ad::Var& x) const {
        const Eigen::Index L = x.rows(), d = x.cols();
        ad::Var h = ad::Var::constant(ad::Mat::Zero(1, d));
        std::vector<ad::Var> ys;
        ys.reserve(L);
        for (Eigen::Index t = 0; t < L; ++t) {
            ad::Var xt = ad::slice_rows(x, t, 1);
            ad::Var z = ad::sigmoid(ad::add(xz(xt), hz(h)));
            ad::Var r = ad::sigmoid(ad::add(xr(xt), hr(h)));
            ad::Var n = ad::tanh_(ad::add(xn(xt), ad::mul(r, hn(h))));
            // h = (1 - z) * n + z * h
            ad::Var one_minus_z = ad::affine_const(z, -1.0, 1.0);
            h = ad::add(ad::mul(one_minus_z, n), ad::mul(z, h));
            ys.push_back(h);
        }
        return ad::concat_rows(ys);
    }
};

struct GRUMixer {
    GRUDir fwd, bwd;
    nn::Linear out;
    bool causal = false;

    GRUMixer() = default;
    GRUMixer(nn::ParamStore& store, const std::string& name, const SSMBlockConfig& cfg,
             Rng& rng)
        : fwd(store, name + ".fwd", cfg.model_dim, rng),
          out(store, name + ".out", cfg.model_dim, cfg.model_dim, rng, /*zero_init=*/true),
          causal(cfg.causal) {
        if (!causal) bwd = GRUDir(store, name + ".bwd", cfg.model_dim, rng);
    }

    ad::Var operator()(const ad::Var& x) const {
        ad::Var s = fwd(x);
        if (!causal) s = ad::add(s, ad::flip_rows(bwd(ad::flip_rows(x))));
        return out(s);
    }
};

struct TConvMixer {
    std::vector<nn::Linear> taps;  // kernel size 5
    std::vector<int> offsets;      // y_t reads x_{t - offset} per tap
    nn::Linear out;

    TConvMixer() = default;
    TConvMixer(nn::ParamStore& store, const std::string& name, const SSMBlockConfig& cfg,
               Rng& rng) {
        offsets = cfg.causal ? std::vector<int>{0, 1, 2, 3, 4}
                             : std::vector<int>{-2, -1, 0, 1, 2};
        for (size_t i = 0; i < offsets.size(); ++i)
            taps.emplace_back(store, name + ".k" + std::to_string(i), cfg.model_dim,
                              cfg.model_dim, rng);
        out = nn::Linear(store, name + ".out", cfg.model_dim, cfg.model_dim, rng,
                         /*zero_init=*/true);
    }

    ad::Var operator()(const ad::Var& x) const {
        const Eigen::Index L = x.rows(), d = x.cols();
        ad::Var acc = ad::Var::constant(ad::Mat::Zero(L, d));
        for (size_t i = 0; i < offsets.size(); ++i) {
            const int off = offsets[i];
            if (std::abs(off) >= L) continue;  // tap entirely out of range
            ad::Var shifted;
            if (off == 0) {
                shifted = x;
            } else if (off > 0) {  // read from the past: pad the front
                ad::Var pad = ad::Var::constant(ad::Mat::Zero(off, d));
                shifted = ad::concat_rows({pad, ad::slice_rows(x, 0, L - off)});
            } else {  // read from the future: pad the back
                ad::Var pad = ad::Var::constant(ad::Mat::Zero(-off, d));
                shifted = ad::concat_rows({ad::slice_rows(x, -off, L + off), pad});
            }
            acc = ad::add(acc, taps[i](shifted));
        }
        return out(ad::silu(acc));
    }
};

struct AttentionMixer {
    nn::Linear q, k, v, out;
    bool causal = false;

    AttentionMixer() = default;
    AttentionMixer(nn::ParamStore& store, const std::string& name, const SSMBlockConfig& cfg,
                   Rng& rng)
        : q(store, name + ".q", cfg.model_dim, cfg.model_dim, rng),
          k(store, name + ".k", cfg.model_dim, cfg.model_dim, rng),
          v(store, name + ".v", cfg.model_dim, cfg.model_dim, rng),
          out(store, name + ".out", cfg.model_dim, cfg.model_dim, rng, /*zero_init=*/true),
          causal(cfg.causal) {}

    ad::Var operator()(const ad::Var& x) const {
        const Eigen::Index L = x.rows();
        const double inv = 1.0 / std::sqrt(static_cast<double>(x.cols()));
        ad::Var scores = ad::scale(ad::matmul(q(x), ad::transpose(k(x))), inv);
        if (causal) {
            ad::Mat mask = ad::Mat::Zero(L, L);
            for (Eigen::Index r = 0; r < L; ++r)
                for (Eigen::Index c = r + 1; c < L; ++c) mask(r, c) = -1e30;
            scores = ad::add(scores, ad::Var::constant(mask));
        }
        return out(ad::matmul(ad::row_softmax(scores), v(x)));
    }
};

using Mixer = std::variant<SSMMixer, GRUMixer, TConvMixer, AttentionMixer>;

// out = W2(silu(W1 x) * W3 x), W2 zero-initialized
struct GatedMLP {
    nn::Linear w1, w3, w2;

    GatedMLP() = default;
    GatedMLP(nn::ParamStore& store, const std::string& name, int d, Rng& rng)
        : w1(store, name + ".w1", d, 2 * d, rng),
          w3(store, name + ".w3", d, 2 * d, rng),
          w2(store, name + ".w2", 2 * d, d, rng, /*zero_init=*/true) {}

    ad::Var operator()(const ad::Var& x) const {
        return w2(ad::mul(ad::silu(w1(x)), w3(x)));
    }
};

struct MixerBlock {
    nn::LayerNorm ln1, ln2;
    Mixer mixer;
    GatedMLP mlp;

    MixerBlock() = default;
    MixerBlock(nn::ParamStore& store, const std::string& name, const SSMBlockConfig& cfg,
               Rng& rng)
        : ln1(store, name + ".ln1", cfg.model_dim),
          ln2(store, name + ".ln2", cfg.model_dim),
          mlp(store, name + ".mlp", cfg.model_dim, rng) {
        switch (cfg.backbone) {
            case Backbone::SSM: mixer = SSMMixer(store, name + ".mix", cfg, rng); break;
            case Backbone::GRU: mixer = GRUMixer(store, name + ".mix", cfg, rng); break;
            case Backbone::TConv: mixer = TConvMixer(store, name + ".mix", cfg, rng); break;
            case Backbone::Attention:
                mixer = AttentionMixer(store, name + ".mix", cfg, rng);
                break;
        }
    }

    ad::Var operator()(ad::Var x) const {
        ad::Var m = std::visit([&](const auto& mix) { return mix(ln1(x)); }, mixer);
        x = ad::add(x, m);
        return ad::add(x, mlp(ln2(x)));
    }
};

class SSMBackbone {
public:
    SSMBackbone() = default;
    SSMBackbone(nn::ParamStore& store, const std::string& name, const SSMBlockConfig& cfg,
                Rng& rng)
        : cfg_(cfg) {
        cfg_.validate();
        for (int b = 0; b < cfg_.num_blocks; ++b)
            blocks_.emplace_back(store, name + ".b" + std::to_string(b), cfg_, rng);
    }

    const SSMBlockConfig& config() const { return cfg_; }

    ad::Var operator()(ad::Var x) const {
        if (x.cols() != cfg_.model_dim)
            throw ShapeMismatch("backbone: input feature dim != model_dim");
        for (const auto& b : blocks_) x = b(x);
        return x;
    }

    Eigen::MatrixXd forward_plain(const Eigen::MatrixXd& x) const {
        ad::NoGradGuard ng;
        return (*this)(ad::Var::constant(x)).value();
    }

private:
    SSMBlockConfig cfg_;
    std::vector<MixerBlock> blocks_;
};

}  // namespace manidiff
