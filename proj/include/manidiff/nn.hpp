#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "manidiff/autodiff.hpp"
#include "manidiff/errors.hpp"
#include "manidiff/rng.hpp"
#include "manidiff/serialize.hpp"

namespace manidiff::nn {

using ad::Mat;
using ad::Var;

struct Param {
    std::string name;
    Mat value;
    Mat grad;
    bool trainable = true;

    Var var() { return ad::leaf(value, trainable ? &grad : nullptr); }
};

// Owns all parameters of a model in creation order. Modules keep Param*
// into the deque (stable addresses).
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    Param* create(const std::string& name, Mat init) {
        if (by_name_.count(name)) throw InvalidConfig("duplicate parameter name: " + name);
        params_.push_back(Param{name, std::move(init), Mat(), true});
        Param& p = params_.back();
        p.grad = Mat::Zero(p.value.rows(), p.value.cols());
        by_name_[name] = &p;
        order_.push_back(&p);
        return &p;
    }

    Param* at(const std::string& name) {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw InvalidConfig("unknown parameter: " + name);
        return it->second;
    }

    const std::vector<Param*>& ordered() const { return order_; }
    size_t count() const { return order_.size(); }

    size_t value_count() const {
        size_t n = 0;
        for (auto* p : order_) n += static_cast<size_t>(p->value.size());
        return n;
    }

    void zero_grad() {
        for (auto* p : order_) p->grad.setZero();
    }

    void freeze() {
        frozen_ = true;
        for (auto* p : order_) p->trainable = false;
    }
    bool frozen() const { return frozen_; }

    double grad_norm() const {
        double s = 0;
        for (auto* p : order_) s += p->grad.squaredNorm();
        return std::sqrt(s);
    }

    // Deterministic fingerprint of every value, in creation order.
    uint64_t value_hash() const {
        uint64_t h = 1469598103934665603ull;
        auto mix = [&h](const void* data, size_t len) {
            const auto* b = static_cast<const unsigned char*>(data);
            for (size_t i = 0; i < len; ++i) {
                h ^= b[i];
                h *= 1099511628211ull;
            }
        };
        for (auto* p : order_) {
            mix(p->name.data(), p->name.size());
            for (Eigen::Index r = 0; r < p->value.rows(); ++r)
                for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
                    double v = p->value(r, c);
                    uint64_t bits;
                    std::memcpy(&bits, &v, sizeof bits);
                    for (int k = 0; k < 8; ++k) {
                        unsigned char byte = static_cast<unsigned char>(bits >> (8 * k));
                        mix(&byte, 1);
                    }
                }
        }
        return h;
    }

private:
    std::deque<Param> params_;
    std::vector<Param*> order_;
    std::unordered_map<std::string, Param*> by_name_;
    bool frozen_ = false;
};

inline Mat xavier_init(Eigen::Index in, Eigen::Index out, Rng& rng) {
    double s = std::sqrt(2.0 / static_cast<double>(in + out));
    Mat m(in, out);
    for (Eigen::Index r = 0; r < in; ++r)
        for (Eigen::Index c = 0; c < out; ++c) m(r, c) = s * rng.normal();
    return m;
}

struct Linear {
    Param* W = nullptr;  // in x out
    Param* b = nullptr;  // 1 x out

    Linear() = default;
    Linear(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
           Rng& rng, bool zero_init = false) {
        W = store.create(name + ".W", zero_init ? Mat(Mat::Zero(in, out)) : xavier_init(in, out, rng));
        b = store.create(name + ".b", Mat::Zero(1, out));
    }

    Var operator()(const Var& x) const { return ad::add_rowvec(ad::matmul(x, W->var()), b->var()); }
};

struct LayerNorm {
    Param* gain = nullptr;
    Param* bias = nullptr;

    LayerNorm() = default;
    LayerNorm(ParamStore& store, const std::string& name, Eigen::Index dim) {
        gain = store.create(name + ".gain", Mat::Ones(1, dim));
        bias = store.create(name + ".bias", Mat::Zero(1, dim));
    }

    Var operator()(const Var& x) const { return ad::layer_norm(x, gain->var(), bias->var()); }
};

// Plain MLP with SiLU between layers (none after the last).
struct MLP {
    std::vector<Linear> layers;

    MLP() = default;
    MLP(ParamStore& store, const std::string& name, const std::vector<Eigen::Index>& dims,
        Rng& rng, bool zero_init_last = false) {
        if (dims.size() < 2) throw InvalidConfig("MLP needs at least input and output dims");
        for (size_t i = 0; i + 1 < dims.size(); ++i) {
            bool zi = zero_init_last && (i + 2 == dims.size());
            layers.emplace_back(store, name + ".l" + std::to_string(i), dims[i], dims[i + 1],
                                rng, zi);
        }
    }

    Var operator()(Var x) const {
        for (size_t i = 0; i < layers.size(); ++i) {
            x = layers[i](x);
            if (i + 1 < layers.size()) x = ad::silu(x);
        }
        return x;
    }
};

// x + W2(silu(W1 x)): the building block of the VAE encoder/decoder nets
struct ResidualBlock {
    Linear l1, l2;

    ResidualBlock() = default;
    ResidualBlock(ParamStore& store, const std::string& name, Eigen::Index dim, Rng& rng)
        : l1(store, name + ".f1", dim, dim, rng), l2(store, name + ".f2", dim, dim, rng) {}

    Var operator()(const Var& x) const { return ad::add(x, l2(ad::silu(l1(x)))); }
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // global grad-norm clip; <=0 disables
};

struct CheckpointInfo;

class Adam {
public:
    Adam(ParamStore& store, AdamConfig cfg = {}) : store_(&store), cfg_(cfg) {
        for (auto* p : store.ordered()) {
            m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
            v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        }
    }

    void step() {
        auto& order = store_->ordered();
        double scale = 1.0;
        if (cfg_.clip_norm > 0) {
            double gn = store_->grad_norm();
            if (gn > cfg_.clip_norm) scale = cfg_.clip_norm / gn;
        }
        ++t_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < order.size(); ++i) {
            Param* p = order[i];
            if (!p->trainable) continue;
            Mat g = p->grad * scale;
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
            Mat mhat = m_[i] / bc1;
            Mat vhat = v_[i] / bc2;
            p->value -=
                cfg_.lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + cfg_.eps).matrix());
        }
    }

    uint64_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }
    AdamConfig& config() { return cfg_; }

    friend void save_checkpoint(const std::string&, const ParamStore&, const Adam*, const Rng*,
                                uint64_t, const std::string&);
    friend CheckpointInfo load_checkpoint(const std::string&, ParamStore&, Adam*, Rng*);

private:
    ParamStore* store_;
    AdamConfig cfg_;
    std::vector<Mat> m_, v_;
    uint64_t t_ = 0;
};

// ---- checkpoint file ----
// "MDCK" | version u32 | meta str | step u64 | rng str | nparams u64 |
//   (name str, mat)* | has_adam u8 [adam_t u64, (m mat, v mat)*]

inline void save_checkpoint(const std::string& path, const ParamStore& store, const Adam* opt,
                            const Rng* rng, uint64_t step, const std::string& meta) {
    io::Writer w(path);
    w.magic("MDCK");
    w.u32(1);
    w.str(meta);
    w.u64(step);
    w.str(rng != nullptr ? rng->state() : std::string());
    w.u64(store.count());
    for (auto* p : store.ordered()) {
        w.str(p->name);
        w.mat(p->value);
    }
    if (opt != nullptr) {
        w.u8(1);
        w.u64(opt->t_);
        for (size_t i = 0; i < opt->m_.size(); ++i) {
            w.mat(opt->m_[i]);
            w.mat(opt->v_[i]);
        }
    } else {
        w.u8(0);
    }
}

struct CheckpointInfo {
    uint64_t step = 0;
    std::string meta;
    bool had_optimizer = false;
};

inline CheckpointInfo load_checkpoint(const std::string& path, ParamStore& store, Adam* opt,
                                      Rng* rng) {
    io::Reader r(path);
    r.expect_magic("MDCK");
    uint32_t version = r.u32();
    if (version != 1) throw ParseError("unsupported checkpoint version");
    CheckpointInfo info;
    info.meta = r.str();
    info.step = r.u64();
    std::string rng_state = r.str();
    if (rng != nullptr && !rng_state.empty()) rng->set_state(rng_state);
    uint64_t n = r.u64();
    if (n != store.count()) throw ParseError("checkpoint parameter count mismatch");
    for (auto* p : store.ordered()) {
        std::string name = r.str();
        if (name != p->name) throw ParseError("checkpoint parameter order mismatch: " + name);
        Mat m = r.mat();
        if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
            throw ShapeMismatch("checkpoint shape mismatch for " + name);
        p->value = std::move(m);
    }
    uint8_t has_adam = r.u8();
    if (has_adam != 0) {
        info.had_optimizer = true;
        uint64_t t = r.u64();
        if (opt != nullptr) {
            opt->t_ = t;
            for (size_t i = 0; i < store.count(); ++i) {
                opt->m_[i] = r.mat();
                opt->v_[i] = r.mat();
            }
        }
    }
    return info;
}

}  // namespace manidiff::nn
