#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "manidiff/autodiff.hpp"
#include "manidiff/core.hpp"
#include "manidiff/manivae.hpp"
#include "manidiff/nn.hpp"
#include "manidiff/serialize.hpp"
#include "manidiff/ssm.hpp"

// Latent diffusion over the composite interaction state
//   x = [ z^M | wrist translations | object translation | object rotation ]
// with one row per frame. The object joint-angle curve is a condition, not a
// diffused quantity; it passes through to the assembled output untouched.

namespace manidiff {

// ---- noise schedule ----

struct DiffusionSchedule {
    int T = 0;
    Eigen::VectorXd betas;       // index t-1 holds beta_t, t in [1, T]
    Eigen::VectorXd alphas;      // 1 - beta_t
    Eigen::VectorXd alpha_bars;  // prod_{s<=t} alpha_s

    // cosine schedule: abar(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2)
    static DiffusionSchedule cosine(int T = 1000, double s = 0.008) {
        if (T < 1) throw InvalidConfig("schedule needs at least one step");
        auto f = [&](double t) {
            double u = (t / T + s) / (1.0 + s) * (M_PI / 2.0);
            double c = std::cos(u);
            return c * c;
        };
        DiffusionSchedule out;
        out.T = T;
        out.betas.resize(T);
        out.alphas.resize(T);
        out.alpha_bars.resize(T);
        const double f0 = f(0.0);
        double prev_abar = 1.0;
        double running = 1.0;
        for (int t = 1; t <= T; ++t) {
            double abar = f(static_cast<double>(t)) / f0;
            double beta = std::min(1.0 - abar / prev_abar, 0.999);
            prev_abar = abar;
            out.betas(t - 1) = beta;
            out.alphas(t - 1) = 1.0 - beta;
            running *= 1.0 - beta;  // rebuild so alpha_bar is an exact cumprod
            out.alpha_bars(t - 1) = running;
        }
        return out;
    }

    void check(int t) const {
        if (t < 1 || t > T)
            throw InvalidTimestep("timestep " + std::to_string(t) + " outside [1, " +
                                  std::to_string(T) + "]");
    }

    double beta(int t) const {
        check(t);
        return betas(t - 1);
    }
    double alpha(int t) const {
        check(t);
        return alphas(t - 1);
    }
    double alpha_bar(int t) const {
        check(t);
        return alpha_bars(t - 1);
    }
    double alpha_bar_prev(int t) const {
        check(t);
        return t == 1 ? 1.0 : alpha_bars(t - 2);
    }
    // posterior variance beta_tilde_t; zero at t = 1
    double posterior_var(int t) const {
        check(t);
        return beta(t) * (1.0 - alpha_bar_prev(t)) / (1.0 - alpha_bar(t));
    }
};

// ---- composite state layout ----

struct CompositeDims {
    int n_frames = 0;
    int d_latent = 64;

    int cols() const { return d_latent + 15; }
    // agent column spans: refined-pose latent, wrist translations, object
    // translation, object rotation
    int agent_offset(int a) const {
        switch (a) {
            case 0: return 0;
            case 1: return d_latent;
            case 2: return d_latent + 6;
            case 3: return d_latent + 9;
        }
        throw InvalidInput("agent index out of range");
    }
    int agent_width(int a) const {
        switch (a) {
            case 0: return d_latent;
            case 1: return 6;
            case 2: return 3;
            case 3: return 6;
        }
        throw InvalidInput("agent index out of range");
    }

    void validate() const {
        if (n_frames < 1 || n_frames > kMaxFrames)
            throw InvalidLength("composite frame count out of range");
        if (d_latent < 1) throw InvalidConfig("composite latent width must be positive");
    }
};

inline void check_composite(const Eigen::MatrixXd& x, const CompositeDims& dims) {
    dims.validate();
    if (x.rows() != dims.n_frames || x.cols() != dims.cols())
        throw ShapeMismatch("composite state has wrong shape");
}

struct DiffusionConditions {
    Eigen::VectorXd obj_feat, text_feat;
    HandTypeFlag type;
    Eigen::VectorXd gamma;  // one joint angle per frame
};

// ---- forward and reverse kernels ----

inline Eigen::MatrixXd forward_noise(const DiffusionSchedule& sched, const Eigen::MatrixXd& x0,
                                     int t, const Eigen::MatrixXd& eta) {
    if (eta.rows() != x0.rows() || eta.cols() != x0.cols())
        throw ShapeMismatch("forward_noise: eta shape differs from x0");
    double ab = sched.alpha_bar(t);
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eta;
}

// posterior mean step; the caller adds sigma_t * zeta
inline Eigen::MatrixXd reverse_mean(const DiffusionSchedule& sched, const Eigen::MatrixXd& x_t,
                                    const Eigen::MatrixXd& eps_hat, int t) {
    if (eps_hat.rows() != x_t.rows() || eps_hat.cols() != x_t.cols())
        throw ShapeMismatch("reverse_mean: eps shape differs from x_t");
    double b = sched.beta(t), ab = sched.alpha_bar(t), a = sched.alpha(t);
    return (x_t - (b / std::sqrt(1.0 - ab)) * eps_hat) / std::sqrt(a);
}

// ---- positional encodings ----

inline Eigen::RowVectorXd sinusoidal_row(int p, int dim, double base = 10000.0) {
    Eigen::RowVectorXd pe(dim);
    for (int i = 0; i < dim; ++i) {
        double freq = std::pow(base, -2.0 * (i / 2) / static_cast<double>(dim));
        pe(i) = (i % 2 == 0) ? std::sin(p * freq) : std::cos(p * freq);
    }
    return pe;
}

inline Eigen::MatrixXd sinusoidal_rows(int n, int dim, double base = 10000.0) {
    Eigen::MatrixXd pe(n, dim);
    for (int p = 0; p < n; ++p) pe.row(p) = sinusoidal_row(p, dim, base);
    return pe;
}

// ---- denoiser ----

struct DenoiserConfig {
    int d_latent = 64;  // z^M width inside the composite
    int d_model = 128;
    int d_obj = 64;
    int d_text = 64;
    SSMBlockConfig backbone;

    void validate() const {
        if (d_latent < 1 || d_model < 2 || d_obj < 1 || d_text < 1)
            throw InvalidConfig("bad denoiser dimensions");
        SSMBlockConfig bb = backbone;
        bb.model_dim = d_model;
        bb.validate();
    }
};

class Denoiser {
public:
    explicit Denoiser(DenoiserConfig cfg = {}, uint64_t seed = 0) : cfg_(cfg) {
        cfg_.validate();
        cfg_.backbone.model_dim = cfg_.d_model;
        Rng rng(derive_seed(seed, 0x646e));
        const int dm = cfg_.d_model;
        for (int a = 0; a < 4; ++a) {
            CompositeDims probe{1, cfg_.d_latent};
            in_[a] = nn::Linear(store_, "in" + std::to_string(a), probe.agent_width(a), dm,
                                rng);
            out_[a] = nn::Linear(store_, "out" + std::to_string(a), dm, probe.agent_width(a),
                                 rng, /*zero_init=*/true);
        }
        agent_pe_ = store_.create("agent_pe", xavier_init_rows(4, dm, rng));
        c_obj_ = nn::Linear(store_, "c.obj", cfg_.d_obj, dm, rng);
        c_text_ = nn::Linear(store_, "c.text", cfg_.d_text, dm, rng);
        c_type_ = nn::Linear(store_, "c.type", 3, dm, rng);
        c_time_ = nn::Linear(store_, "c.time", dm, dm, rng);
        c_gamma_ = nn::Linear(store_, "c.gamma", 1, dm, rng);
        backbone_ = SSMBackbone(store_, "bb", cfg_.backbone, rng);
    }

    const DenoiserConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }

    // combined per-token conditioning: frame/agent encodings, the broadcast
    // fused condition vector, and the per-frame joint-angle pathway
    ad::Var fuse_conditions(const DiffusionSchedule& sched, int t,
                            const DiffusionConditions& conds, int n_frames) {
        sched.check(t);
        check_conditions(conds, n_frames);
        const int dm = cfg_.d_model;
        ad::Var frame_pe = ad::Var::constant(sinusoidal_rows(n_frames, dm));
        ad::Var grid = ad::repeat_interleave_rows(frame_pe, 4);
        grid = ad::add(grid, ad::tile_rows(agent_pe_->var(), n_frames));

        ad::Var c = c_time_(ad::Var::constant(Eigen::MatrixXd(sinusoidal_row(t, dm))));
        c = ad::add(c, c_obj_(ad::Var::constant(Eigen::MatrixXd(conds.obj_feat.transpose()))));
        c = ad::add(c,
                    c_text_(ad::Var::constant(Eigen::MatrixXd(conds.text_feat.transpose()))));
        Eigen::RowVectorXd ty(3);
        ty << conds.type.one_hot[0], conds.type.one_hot[1], conds.type.one_hot[2];
        c = ad::add(c, c_type_(ad::Var::constant(Eigen::MatrixXd(ty))));
        grid = ad::add_rowvec(grid, c);

        ad::Var gcol = ad::Var::constant(Eigen::MatrixXd(conds.gamma));
        grid = ad::add(grid, ad::repeat_interleave_rows(c_gamma_(gcol), 4));
        return grid;
    }

    // epsilon prediction on the graph (training path)
    ad::Var forward_var(const Eigen::MatrixXd& x, const DiffusionSchedule& sched, int t,
                        const DiffusionConditions& conds) {
        CompositeDims dims{static_cast<int>(x.rows()), cfg_.d_latent};
        check_composite(x, dims);
        if (!x.allFinite()) throw InvalidInput("composite state must be finite");
        const int n = dims.n_frames, dm = cfg_.d_model;

        ad::Var xv = ad::Var::constant(x);
        std::vector<ad::Var> proj;
        proj.reserve(4);
        for (int a = 0; a < 4; ++a)
            proj.push_back(
                in_[a](ad::slice_cols(xv, dims.agent_offset(a), dims.agent_width(a))));
        // frame-major interleave: rows 4i .. 4i+3 belong to frame i
        ad::Var tokens = ad::reshape(ad::concat_cols(proj), 4 * n, dm);
        tokens = ad::add(tokens, fuse_conditions(sched, t, conds, n));
        ad::Var y = backbone_(tokens);
        ad::Var grouped = ad::reshape(y, n, 4 * dm);
        std::vector<ad::Var> eps;
        eps.reserve(4);
        for (int a = 0; a < 4; ++a)
            eps.push_back(out_[a](ad::slice_cols(grouped, a * dm, dm)));
        return ad::concat_cols(eps);
    }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, const DiffusionSchedule& sched, int t,
                            const DiffusionConditions& conds) {
        ad::NoGradGuard ng;
        return forward_var(x, sched, t, conds).value();
    }

private:
    static nn::Mat xavier_init_rows(Eigen::Index r, Eigen::Index c, Rng& rng) {
        return nn::xavier_init(r, c, rng);
    }

    void check_conditions(const DiffusionConditions& conds, int n_frames) const {
        conds.type.validate();
        if (conds.obj_feat.size() != cfg_.d_obj || conds.text_feat.size() != cfg_.d_text)
            throw ShapeMismatch("condition feature dimension mismatch");
        if (conds.gamma.size() != n_frames)
            throw ShapeMismatch("joint-angle condition must have one value per frame");
        if (!conds.obj_feat.allFinite() || !conds.text_feat.allFinite() ||
            !conds.gamma.allFinite())
            throw InvalidInput("conditions must be finite");
    }

    DenoiserConfig cfg_;
    nn::ParamStore store_;
    nn::Linear in_[4], out_[4];
    nn::Param* agent_pe_ = nullptr;
    nn::Linear c_obj_, c_text_, c_type_, c_time_, c_gamma_;
    SSMBackbone backbone_;
};

// ---- model: training and ancestral sampling ----

using DenoiserFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, int)>;

class DiffusionModel {
public:
    explicit DiffusionModel(DenoiserConfig cfg = {}, int timesteps = 1000, uint64_t seed = 0)
        : sched_(DiffusionSchedule::cosine(timesteps)), den_(cfg, seed) {}

    const DiffusionSchedule& schedule() const { return sched_; }
    Denoiser& denoiser() { return den_; }
    const Denoiser& denoiser() const { return den_; }
    nn::ParamStore& params() { return den_.params(); }

    // one epsilon-prediction step on a clean composite state
    double train_step(const Eigen::MatrixXd& x0, const DiffusionConditions& conds,
                      nn::Adam& opt, Rng& rng) {
        CompositeDims dims{static_cast<int>(x0.rows()), den_.config().d_latent};
        check_composite(x0, dims);
        const int t = 1 + static_cast<int>(rng.integer(static_cast<uint64_t>(sched_.T)));
        Eigen::MatrixXd eta(x0.rows(), x0.cols());
        for (Eigen::Index r = 0; r < eta.rows(); ++r)
            for (Eigen::Index c = 0; c < eta.cols(); ++c) eta(r, c) = rng.normal();
        Eigen::MatrixXd x_t = forward_noise(sched_, x0, t, eta);

        den_.params().zero_grad();
        ad::Var eps_hat = den_.forward_var(x_t, sched_, t, conds);
        ad::Var loss = ad::mse(eps_hat, ad::Var::constant(eta));
        ad::backward(loss);
        opt.step();
        return loss.item();
    }

    // deterministic loss of the current net on a fixed (t, eta) pair
    double eval_loss(const Eigen::MatrixXd& x0, const DiffusionConditions& conds, int t,
                     const Eigen::MatrixXd& eta) {
        ad::NoGradGuard ng;
        Eigen::MatrixXd x_t = forward_noise(sched_, x0, t, eta);
        ad::Var eps_hat = den_.forward_var(x_t, sched_, t, conds);
        return ad::mse(eps_hat, ad::Var::constant(eta)).item();
    }

    // ancestral sampling with an injectable epsilon predictor
    static Eigen::MatrixXd sample_with(const DiffusionSchedule& sched, const DenoiserFn& fn,
                                       const CompositeDims& dims, Rng& rng) {
        dims.validate();
        Eigen::MatrixXd x(dims.n_frames, dims.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r)
            for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = rng.normal();
        for (int t = sched.T; t >= 1; --t) {
            Eigen::MatrixXd eps = fn(x, t);
            if (eps.rows() != x.rows() || eps.cols() != x.cols())
                throw ShapeMismatch("sampled epsilon has wrong shape");
            x = reverse_mean(sched, x, eps, t);
            if (t > 1) {
                double sigma = std::sqrt(sched.posterior_var(t));
                for (Eigen::Index r = 0; r < x.rows(); ++r)
                    for (Eigen::Index c = 0; c < x.cols(); ++c)
                        x(r, c) += sigma * rng.normal();
            }
            if (!x.allFinite())
                throw NumericalError("denoising diverged at step " + std::to_string(t));
        }
        return x;
    }

    Eigen::MatrixXd sample(const DiffusionConditions& conds, int n_frames, Rng& rng) {
        CompositeDims dims{n_frames, den_.config().d_latent};
        dims.validate();
        if (conds.gamma.size() != n_frames)
            throw ShapeMismatch("joint-angle condition must have one value per frame");
        DenoiserFn fn = [&](const Eigen::MatrixXd& x, int t) {
            return den_.forward(x, sched_, t, conds);
        };
        return sample_with(sched_, fn, dims, rng);
    }

private:
    DiffusionSchedule sched_;
    Denoiser den_;
};

// ---- bridging the VAEs ----

// Builds the clean composite state for diffusion training from ground truth.
// The refinement VAE must be frozen: its posterior means define z^M.
inline Eigen::MatrixXd make_training_composite(const MotionSequence& seq, ManiVAE& manivae,
                                               const Eigen::VectorXd& obj_feat,
                                               const Eigen::VectorXd& text_feat,
                                               const HandTypeFlag& type) {
    if (!manivae.params().frozen())
        throw ConfigError("refinement VAE must be frozen before diffusion training");
    seq.validate();
    const int n = static_cast<int>(seq.frames());
    CompositeDims dims{n, manivae.config().d_latent};
    Eigen::MatrixXd x(n, dims.cols());
    for (int i = 0; i < n; ++i) {
        ManiLatent lat =
            manivae.encode(seq.hands[i], seq.objects[i], obj_feat, text_feat, type);
        x.block(i, 0, 1, dims.d_latent) = lat.mu.transpose();
        x.block(i, dims.agent_offset(1), 1, 3) = seq.hands[i].trans_left.transpose();
        x.block(i, dims.agent_offset(1) + 3, 1, 3) = seq.hands[i].trans_right.transpose();
        x.block(i, dims.agent_offset(2), 1, 3) = seq.objects[i].trans.transpose();
        for (int k = 0; k < 6; ++k) x(i, dims.agent_offset(3) + k) = seq.objects[i].rot.v[k];
    }
    return x;
}

// Decodes a sampled composite state into a motion sequence. The joint-angle
// curve is adopted verbatim.
inline MotionSequence assemble_output(const Eigen::MatrixXd& composite,
                                      const Eigen::VectorXd& gamma_hat, ManiVAE& manivae,
                                      const Eigen::VectorXd& obj_feat,
                                      const Eigen::VectorXd& text_feat,
                                      const HandTypeFlag& type) {
    const int n = static_cast<int>(composite.rows());
    if (n < 1 || n > kMaxFrames) throw AssemblyError("frame count out of range");
    if (gamma_hat.size() != n)
        throw AssemblyError("joint-angle curve length differs from sampled frames");
    CompositeDims dims{n, manivae.config().d_latent};
    if (composite.cols() != dims.cols())
        throw AssemblyError("composite width does not match the refinement VAE");
    if (!composite.allFinite() || !gamma_hat.allFinite())
        throw AssemblyError("sampled state must be finite");

    MotionSequence seq;
    seq.hands.resize(n);
    seq.objects.resize(n);
    for (int i = 0; i < n; ++i) {
        ObjectState& obj = seq.objects[i];
        obj.trans = composite.block(i, dims.agent_offset(2), 1, 3).transpose();
        for (int k = 0; k < 6; ++k) obj.rot.v[k] = composite(i, dims.agent_offset(3) + k);
        obj.joint_angle = gamma_hat(i);

        Eigen::VectorXd z = composite.block(i, 0, 1, dims.d_latent).transpose();
        DecodedPose pose = manivae.decode(z, obj, obj_feat, text_feat, type);
        HandState& hand = seq.hands[i];
        hand.pose_left = pose.left;
        hand.pose_right = pose.right;
        hand.trans_left = composite.block(i, dims.agent_offset(1), 1, 3).transpose();
        hand.trans_right = composite.block(i, dims.agent_offset(1) + 3, 1, 3).transpose();
    }
    seq.validate();
    return seq;
}

// ---- sampled-sequence files ----

struct SampleMeta {
    uint64_t seed = 0;
    uint64_t condition_hash = 0;
    HandType type = HandType::Bimanual;
};

inline uint64_t condition_hash(const Eigen::VectorXd& obj_feat, const Eigen::VectorXd& text_feat,
                               const Eigen::VectorXd& gamma) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const Eigen::VectorXd& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            uint64_t bits;
            static_assert(sizeof(bits) == sizeof(double));
            std::memcpy(&bits, &v(i), sizeof(bits));
            for (int b = 0; b < 8; ++b) {
                h ^= (bits >> (8 * b)) & 0xff;
                h *= 1099511628211ull;
            }
        }
    };
    mix(obj_feat);
    mix(text_feat);
    mix(gamma);
    return h;
}

inline void save_sequence(const std::string& path, const MotionSequence& seq,
                          const SampleMeta& meta) {
    seq.validate();
    io::Writer w(path);
    w.magic("MDSQ");
    w.u32(1);
    w.u64(meta.seed);
    w.u64(meta.condition_hash);
    w.u8(static_cast<uint8_t>(meta.type));
    w.mat(flatten_sequence(seq));
}

inline MotionSequence load_sequence(const std::string& path, SampleMeta* meta_out = nullptr) {
    io::Reader r(path);
    r.expect_magic("MDSQ");
    if (r.u32() != 1) throw ParseError("unsupported sequence file version");
    SampleMeta meta;
    meta.seed = r.u64();
    meta.condition_hash = r.u64();
    uint8_t ty = r.u8();
    if (ty > 2) throw ParseError("bad hand type in sequence file");
    meta.type = static_cast<HandType>(ty);
    if (meta_out) *meta_out = meta;
    return unflatten_sequence(r.mat());
}

}  // namespace manidiff
