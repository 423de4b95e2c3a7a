#pragma once

#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "manidiff/data.hpp"
#include "manidiff/diffusion.hpp"
#include "manidiff/ssm.hpp"

// One flat run configuration shared by every command. Every field has a
// default, so an empty JSON object (or no file at all) is a valid config;
// unknown keys are rejected instead of silently ignored.

namespace manidiff {

struct RunConfig {
    // corpus
    std::string family = "bi_articulated";
    int num_samples = 8;
    int hand_points = 64;
    int part_points = 256;
    int d_obj = 64;
    int d_text = 64;

    // joint-angle curve VAE
    int joint_latent = 32;
    int joint_hidden = 128;
    int joint_blocks = 2;
    double w_rec = 1.0;

    // per-frame refinement VAE
    int mani_latent = 64;
    int mani_hidden = 128;
    int mani_blocks = 2;
    double w_elbo = 1.0;
    double w_mesh = 1.0;
    double w_dist = 1.0;
    double w_ro = 1.0;
    double w_kl = 0.0;

    // denoiser
    std::string backbone = "ssm";
    int d_model = 128;
    int state_dim = 16;
    int num_blocks = 8;
    int timesteps = 1000;

    // training
    int vae_steps = 200;
    int diffusion_steps = 200;
    double lr = 1e-3;

    // runtime
    uint64_t seed = 0;
    int frames = kMaxFrames;
    double dt = 1.0 / 30.0;

    void validate() const {
        family_from_name(family);
        backbone_from_name(backbone);
        if (num_samples < 1 || hand_points < 1 || part_points < 4 || d_obj < 1 || d_text < 1)
            throw InvalidConfig("bad corpus dimensions");
        if (joint_latent < 1 || joint_hidden < 1 || joint_blocks < 0)
            throw InvalidConfig("bad curve-VAE dimensions");
        if (mani_latent < 1 || mani_hidden < 1 || mani_blocks < 0)
            throw InvalidConfig("bad refinement-VAE dimensions");
        if (w_rec < 0 || w_elbo < 0 || w_mesh < 0 || w_dist < 0 || w_ro < 0 || w_kl < 0)
            throw InvalidConfig("loss weights must be non-negative");
        if (d_model < 2 || state_dim < 1 || num_blocks < 1 || timesteps < 1)
            throw InvalidConfig("bad denoiser dimensions");
        if (vae_steps < 1 || diffusion_steps < 1 || !(lr > 0))
            throw InvalidConfig("bad training settings");
        if (frames < 1 || frames > kMaxFrames)
            throw InvalidConfig("frames must be in [1, " + std::to_string(kMaxFrames) + "]");
        if (!(dt > 0)) throw InvalidConfig("dt must be positive");
    }
};

namespace detail {

template <typename T>
T config_get(const nlohmann::json& j, const std::string& key) {
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw InvalidConfig("config key has the wrong type: " + key);
    }
}

}  // namespace detail

inline nlohmann::json config_to_json(const RunConfig& c) {
    return nlohmann::json{{"family", c.family},
                          {"num_samples", c.num_samples},
                          {"hand_points", c.hand_points},
                          {"part_points", c.part_points},
                          {"d_obj", c.d_obj},
                          {"d_text", c.d_text},
                          {"joint_latent", c.joint_latent},
                          {"joint_hidden", c.joint_hidden},
                          {"joint_blocks", c.joint_blocks},
                          {"w_rec", c.w_rec},
                          {"mani_latent", c.mani_latent},
                          {"mani_hidden", c.mani_hidden},
                          {"mani_blocks", c.mani_blocks},
                          {"w_elbo", c.w_elbo},
                          {"w_mesh", c.w_mesh},
                          {"w_dist", c.w_dist},
                          {"w_ro", c.w_ro},
                          {"w_kl", c.w_kl},
                          {"backbone", c.backbone},
                          {"d_model", c.d_model},
                          {"state_dim", c.state_dim},
                          {"num_blocks", c.num_blocks},
                          {"timesteps", c.timesteps},
                          {"vae_steps", c.vae_steps},
                          {"diffusion_steps", c.diffusion_steps},
                          {"lr", c.lr},
                          {"seed", c.seed},
                          {"frames", c.frames},
                          {"dt", c.dt}};
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidConfig("config root must be a JSON object");
    RunConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        const nlohmann::json& v = it.value();
        using detail::config_get;
        if (k == "family") c.family = config_get<std::string>(v, k);
        else if (k == "num_samples") c.num_samples = config_get<int>(v, k);
        else if (k == "hand_points") c.hand_points = config_get<int>(v, k);
        else if (k == "part_points") c.part_points = config_get<int>(v, k);
        else if (k == "d_obj") c.d_obj = config_get<int>(v, k);
        else if (k == "d_text") c.d_text = config_get<int>(v, k);
        else if (k == "joint_latent") c.joint_latent = config_get<int>(v, k);
        else if (k == "joint_hidden") c.joint_hidden = config_get<int>(v, k);
        else if (k == "joint_blocks") c.joint_blocks = config_get<int>(v, k);
        else if (k == "w_rec") c.w_rec = config_get<double>(v, k);
        else if (k == "mani_latent") c.mani_latent = config_get<int>(v, k);
        else if (k == "mani_hidden") c.mani_hidden = config_get<int>(v, k);
        else if (k == "mani_blocks") c.mani_blocks = config_get<int>(v, k);
        else if (k == "w_elbo") c.w_elbo = config_get<double>(v, k);
        else if (k == "w_mesh") c.w_mesh = config_get<double>(v, k);
        else if (k == "w_dist") c.w_dist = config_get<double>(v, k);
        else if (k == "w_ro") c.w_ro = config_get<double>(v, k);
        else if (k == "w_kl") c.w_kl = config_get<double>(v, k);
        else if (k == "backbone") c.backbone = config_get<std::string>(v, k);
        else if (k == "d_model") c.d_model = config_get<int>(v, k);
        else if (k == "state_dim") c.state_dim = config_get<int>(v, k);
        else if (k == "num_blocks") c.num_blocks = config_get<int>(v, k);
        else if (k == "timesteps") c.timesteps = config_get<int>(v, k);
        else if (k == "vae_steps") c.vae_steps = config_get<int>(v, k);
        else if (k == "diffusion_steps") c.diffusion_steps = config_get<int>(v, k);
        else if (k == "lr") c.lr = config_get<double>(v, k);
        else if (k == "seed") c.seed = config_get<uint64_t>(v, k);
        else if (k == "frames") c.frames = config_get<int>(v, k);
        else if (k == "dt") c.dt = config_get<double>(v, k);
        else throw InvalidConfig("unknown config key: " + k);
    }
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileNotFound("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("config is not valid JSON: " + std::string(e.what()));
    }
    return config_from_json(j);
}

// MANIDIFF_* variables override file values; command-line flags override both.
using EnvGetter = std::function<const char*(const char*)>;

namespace detail {

inline uint64_t parse_u64(const std::string& name, const std::string& v) {
    try {
        size_t pos = 0;
        uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw InvalidConfig("bad value for " + name + ": " + v);
    }
}

inline int parse_int(const std::string& name, const std::string& v) {
    try {
        size_t pos = 0;
        int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw InvalidConfig("bad value for " + name + ": " + v);
    }
}

inline double parse_double(const std::string& name, const std::string& v) {
    try {
        size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw InvalidConfig("bad value for " + name + ": " + v);
    }
}

}  // namespace detail

inline void apply_env_overrides(RunConfig& c, const EnvGetter& get = [](const char* k) {
    return std::getenv(k);
}) {
    if (const char* v = get("MANIDIFF_SEED")) c.seed = detail::parse_u64("MANIDIFF_SEED", v);
    if (const char* v = get("MANIDIFF_FAMILY")) c.family = v;
    if (const char* v = get("MANIDIFF_BACKBONE")) c.backbone = v;
    if (const char* v = get("MANIDIFF_FRAMES"))
        c.frames = detail::parse_int("MANIDIFF_FRAMES", v);
    if (const char* v = get("MANIDIFF_VAE_STEPS"))
        c.vae_steps = detail::parse_int("MANIDIFF_VAE_STEPS", v);
    if (const char* v = get("MANIDIFF_DIFFUSION_STEPS"))
        c.diffusion_steps = detail::parse_int("MANIDIFF_DIFFUSION_STEPS", v);
    if (const char* v = get("MANIDIFF_LR")) c.lr = detail::parse_double("MANIDIFF_LR", v);
}

// ---- derived module configurations ----

inline GeneratorConfig generator_config(const RunConfig& c) {
    GeneratorConfig g;
    g.family = family_from_name(c.family);
    g.num_samples = c.num_samples;
    g.hand_points = c.hand_points;
    g.part_points = c.part_points;
    g.d_obj = c.d_obj;
    g.d_text = c.d_text;
    return g;
}

inline JointVAEConfig jointvae_config(const RunConfig& c) {
    JointVAEConfig j;
    j.d_latent = c.joint_latent;
    j.hidden = c.joint_hidden;
    j.blocks = c.joint_blocks;
    j.d_obj = c.d_obj;
    j.d_text = c.d_text;
    return j;  // decode clamp keeps the global joint limits
}

inline ManiVAEConfig manivae_config(const RunConfig& c) {
    ManiVAEConfig m;
    m.d_latent = c.mani_latent;
    m.hidden = c.mani_hidden;
    m.blocks = c.mani_blocks;
    m.d_obj = c.d_obj;
    m.d_text = c.d_text;
    return m;
}

inline JointVAELossWeights joint_weights(const RunConfig& c) {
    JointVAELossWeights w;
    w.elbo = c.w_elbo;
    w.rec = c.w_rec;
    return w;
}

inline LossWeights mani_weights(const RunConfig& c) {
    LossWeights w;
    w.elbo = c.w_elbo;
    w.mesh = c.w_mesh;
    w.dist = c.w_dist;
    w.ro = c.w_ro;
    w.kl = c.w_kl;
    return w;
}

inline DenoiserConfig denoiser_config(const RunConfig& c) {
    DenoiserConfig d;
    d.d_latent = c.mani_latent;
    d.d_model = c.d_model;
    d.d_obj = c.d_obj;
    d.d_text = c.d_text;
    d.backbone.model_dim = c.d_model;
    d.backbone.state_dim = c.state_dim;
    d.backbone.num_blocks = c.num_blocks;
    d.backbone.backbone = backbone_from_name(c.backbone);
    return d;
}

// Checkpoint metadata: the effective config plus the checkpoint's role.
inline std::string checkpoint_meta(const RunConfig& c, const std::string& role) {
    nlohmann::json j = config_to_json(c);
    j["_role"] = role;
    return j.dump();
}

inline std::pair<RunConfig, std::string> parse_checkpoint_meta(const std::string& meta) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception&) {
        throw ParseError("checkpoint metadata is not valid JSON");
    }
    if (!j.is_object() || !j.contains("_role") || !j["_role"].is_string())
        throw ParseError("checkpoint metadata is missing its role");
    std::string role = j["_role"].get<std::string>();
    j.erase("_role");
    return {config_from_json(j), role};
}

}  // namespace manidiff
