#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "manidiff/config.hpp"
#include "manidiff/metrics.hpp"
#include "manidiff/nn.hpp"

// Command-line front end. Each command is a plain function over a resolved
// RunConfig; run_cli wires them to CLI11. Library errors surface on stderr
// as "Kind: message" with a nonzero exit code.

namespace manidiff::cli {

inline std::string fmt_g(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.6g", v);
    return b;
}

inline std::string hash_hex(uint64_t h) {
    char b[24];
    std::snprintf(b, sizeof b, "%016llx", static_cast<unsigned long long>(h));
    return b;
}

inline std::string numbered_path(const std::string& stem, int idx) {
    char suf[16];
    std::snprintf(suf, sizeof suf, "_%03d", idx);
    auto dot = stem.find_last_of('.');
    auto slash = stem.find_last_of('/');
    if (dot != std::string::npos && (slash == std::string::npos || dot > slash))
        return stem.substr(0, dot) + suf + stem.substr(dot);
    return stem + suf;
}

inline RunConfig resolve_config(const std::string& config_path) {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    apply_env_overrides(cfg);
    return cfg;
}

// the dataset is authoritative for the shapes baked into it
inline void adopt_dataset_dims(RunConfig& cfg, const Dataset& ds) {
    if (ds.samples.empty()) throw InvalidInput("dataset has no samples");
    cfg.hand_points = ds.hand_points;
    cfg.d_obj = static_cast<int>(ds.samples[0].obj_feat.size());
    cfg.d_text = static_cast<int>(ds.samples[0].text_feat.size());
    cfg.family = family_name(ds.family);
}

inline std::string peek_checkpoint_meta(const std::string& path) {
    io::Reader r(path);
    r.expect_magic("MDCK");
    if (r.u32() != 1) throw ParseError("unsupported checkpoint version");
    return r.str();
}

struct LoadedVAEs {
    RunConfig cfg;  // the configuration the pair was trained with
    std::unique_ptr<JointVAE> joint;
    std::unique_ptr<ManiVAE> mani;
};

inline LoadedVAEs load_vae_pair(const std::string& stem, bool freeze) {
    const std::string pj = stem + ".joint", pm = stem + ".mani";
    if (!std::filesystem::exists(pj) || !std::filesystem::exists(pm))
        throw DependencyError("VAE checkpoint not found: " + stem +
                              " (expected " + pj + " and " + pm + "; run train-vae first)");
    auto [cfg_j, role_j] = parse_checkpoint_meta(peek_checkpoint_meta(pj));
    if (role_j != "joint_vae") throw ParseError("unexpected checkpoint role in " + pj);
    auto [cfg_m, role_m] = parse_checkpoint_meta(peek_checkpoint_meta(pm));
    if (role_m != "mani_vae") throw ParseError("unexpected checkpoint role in " + pm);

    LoadedVAEs out;
    out.cfg = cfg_m;
    out.joint = std::make_unique<JointVAE>(jointvae_config(cfg_j), cfg_j.seed);
    out.mani = std::make_unique<ManiVAE>(manivae_config(cfg_m), cfg_m.seed);
    nn::load_checkpoint(pj, out.joint->params(), nullptr, nullptr);
    nn::load_checkpoint(pm, out.mani->params(), nullptr, nullptr);
    if (freeze) {
        out.joint->params().freeze();
        out.mani->params().freeze();
    }
    return out;
}

struct LoadedDiffusion {
    RunConfig cfg;
    std::unique_ptr<DiffusionModel> model;
};

inline LoadedDiffusion load_diffusion(const std::string& path) {
    auto [cfg, role] = parse_checkpoint_meta(peek_checkpoint_meta(path));
    if (role != "diffusion") throw ParseError("unexpected checkpoint role in " + path);
    LoadedDiffusion out;
    out.cfg = cfg;
    out.model =
        std::make_unique<DiffusionModel>(denoiser_config(cfg), cfg.timesteps, cfg.seed);
    nn::load_checkpoint(path, out.model->params(), nullptr, nullptr);
    return out;
}

// ---- generate ----

inline void run_generate(const RunConfig& cfg, const std::string& out_path, std::ostream& out) {
    Dataset ds = generate_dataset(generator_config(cfg), cfg.seed);
    save_dataset(out_path, ds);
    out << "wrote " << out_path << ": " << ds.samples.size() << " samples, family "
        << family_name(ds.family) << ", seed " << cfg.seed << "\n";
}

// ---- train-vae ----

inline void run_train_vae(RunConfig cfg, const std::string& data_path,
                          const std::string& out_stem, const std::string& resume_stem,
                          std::ostream& out, std::ostream& err) {
    Dataset ds = load_dataset(data_path);
    adopt_dataset_dims(cfg, ds);
    if (!resume_stem.empty()) {
        // the checkpoint dictates the model shapes we must rebuild
        auto [prev, role] = parse_checkpoint_meta(peek_checkpoint_meta(resume_stem + ".joint"));
        if (role != "joint_vae")
            throw ParseError("unexpected checkpoint role in " + resume_stem + ".joint");
        int steps = cfg.vae_steps;
        double lr = cfg.lr;
        cfg = prev;
        cfg.vae_steps = steps;
        cfg.lr = lr;
    }
    cfg.validate();

    SkeletalHandModel hand = SkeletalHandModel::standard(cfg.hand_points);
    JointVAE jv(jointvae_config(cfg), cfg.seed);
    ManiVAE mv(manivae_config(cfg), cfg.seed);
    nn::AdamConfig ac;
    ac.lr = cfg.lr;
    nn::Adam jopt(jv.params(), ac), mopt(mv.params(), ac);
    Rng jrng(derive_seed(cfg.seed, 101)), mrng(derive_seed(cfg.seed, 102));

    uint64_t start = 0;
    if (!resume_stem.empty()) {
        auto ij = nn::load_checkpoint(resume_stem + ".joint", jv.params(), &jopt, &jrng);
        auto im = nn::load_checkpoint(resume_stem + ".mani", mv.params(), &mopt, &mrng);
        if (ij.step != im.step) throw ParseError("checkpoint pair is out of sync");
        start = ij.step;
        err << "resuming from step " << start << "\n";
    }

    const uint64_t total = static_cast<uint64_t>(cfg.vae_steps);
    const JointVAELossWeights jw = joint_weights(cfg);
    const LossWeights mw = mani_weights(cfg);
    double j_first = 0, j_last = 0, m_first = 0, m_last = 0;
    const uint64_t report_every = std::max<uint64_t>(1, total / 8);
    for (uint64_t s = start; s < total; ++s) {
        const DataSample& smp = ds.samples[s % ds.samples.size()];
        JointVAELossBreakdown jl = jv.train_step(jointvae_sample(smp), jw, jopt, jrng);
        int frame = static_cast<int>((s * 37) % static_cast<uint64_t>(smp.seq.frames()));
        ManiVAELossBreakdown ml = mv.train_step(mani_frame_sample(smp, frame), hand, mw, mopt, mrng);
        if (!std::isfinite(jl.total) || !std::isfinite(ml.total))
            throw NumericalError("non-finite loss at step " + std::to_string(s));
        if (s == start) j_first = jl.total, m_first = ml.total;
        j_last = jl.total, m_last = ml.total;
        if ((s + 1) % report_every == 0 || s + 1 == total)
            err << "  step " << (s + 1) << "/" << total << "  joint " << fmt_g(jl.total)
                << "  mani " << fmt_g(ml.total) << "\n";
    }

    nn::save_checkpoint(out_stem + ".joint", jv.params(), &jopt, &jrng, total,
                        checkpoint_meta(cfg, "joint_vae"));
    nn::save_checkpoint(out_stem + ".mani", mv.params(), &mopt, &mrng, total,
                        checkpoint_meta(cfg, "mani_vae"));
    out << "trained " << (total - start) << " steps on " << ds.samples.size() << " samples\n";
    out << "joint loss " << fmt_g(j_first) << " -> " << fmt_g(j_last) << ", params "
        << hash_hex(jv.params().value_hash()) << "\n";
    out << "mani loss " << fmt_g(m_first) << " -> " << fmt_g(m_last) << ", params "
        << hash_hex(mv.params().value_hash()) << "\n";
    out << "wrote " << out_stem << ".joint and " << out_stem << ".mani\n";
}

// ---- train-diffusion ----

inline void run_train_diffusion(RunConfig cfg, const std::string& data_path,
                                const std::string& vae_stem, const std::string& out_path,
                                std::ostream& out, std::ostream& err) {
    Dataset ds = load_dataset(data_path);
    adopt_dataset_dims(cfg, ds);
    LoadedVAEs vaes = load_vae_pair(vae_stem, /*freeze=*/true);
    cfg.mani_latent = vaes.cfg.mani_latent;  // the composite width is theirs
    cfg.validate();

    std::vector<Eigen::MatrixXd> composites;
    std::vector<DiffusionConditions> conds;
    composites.reserve(ds.samples.size());
    for (const DataSample& s : ds.samples) {
        composites.push_back(
            make_training_composite(s.seq, *vaes.mani, s.obj_feat, s.text_feat, s.type));
        DiffusionConditions c;
        c.obj_feat = s.obj_feat;
        c.text_feat = s.text_feat;
        c.type = s.type;
        c.gamma.resize(s.seq.frames());
        for (int i = 0; i < s.seq.frames(); ++i) c.gamma(i) = s.seq.objects[i].joint_angle;
        conds.push_back(std::move(c));
    }

    DiffusionModel dm(denoiser_config(cfg), cfg.timesteps, cfg.seed);
    nn::AdamConfig ac;
    ac.lr = cfg.lr;
    nn::Adam dopt(dm.params(), ac);
    Rng drng(derive_seed(cfg.seed, 103));

    const uint64_t total = static_cast<uint64_t>(cfg.diffusion_steps);
    const uint64_t report_every = std::max<uint64_t>(1, total / 8);
    double first = 0, last = 0;
    for (uint64_t s = 0; s < total; ++s) {
        size_t idx = s % composites.size();
        double loss = dm.train_step(composites[idx], conds[idx], dopt, drng);
        if (!std::isfinite(loss))
            throw NumericalError("non-finite loss at step " + std::to_string(s));
        if (s == 0) first = loss;
        last = loss;
        if ((s + 1) % report_every == 0 || s + 1 == total)
            err << "  step " << (s + 1) << "/" << total << "  loss " << fmt_g(loss) << "\n";
    }

    nn::save_checkpoint(out_path, dm.params(), &dopt, &drng, total,
                        checkpoint_meta(cfg, "diffusion"));
    out << "trained " << total << " steps (" << cfg.backbone << " backbone, T="
        << cfg.timesteps << ")\n";
    out << "loss " << fmt_g(first) << " -> " << fmt_g(last) << ", params "
        << hash_hex(dm.params().value_hash()) << "\n";
    out << "wrote " << out_path << "\n";
}

// ---- sample ----

inline void run_sample(const std::string& model_path, const std::string& vae_stem,
                       const std::string& data_path, int index, int frames, int count,
                       uint64_t seed, const std::string& out_stem, std::ostream& out) {
    if (frames < 1 || frames > kMaxFrames)
        throw InvalidLength("sample length must be in [1, " + std::to_string(kMaxFrames) +
                            "], got " + std::to_string(frames));
    if (count < 1) throw InvalidInput("sample count must be positive");
    LoadedVAEs vaes = load_vae_pair(vae_stem, /*freeze=*/true);
    LoadedDiffusion dm = load_diffusion(model_path);
    Dataset ds = load_dataset(data_path);
    if (index < 0 || index >= static_cast<int>(ds.samples.size()))
        throw InvalidInput("dataset sample index out of range");
    const DataSample& ref = ds.samples[index];

    for (int c = 0; c < count; ++c) {
        const uint64_t sample_seed = derive_seed(seed, 0x5350 + static_cast<uint64_t>(c));
        Rng rng(sample_seed);
        Eigen::VectorXd z(vaes.joint->config().d_latent);
        for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
        Eigen::VectorXd gamma_hat =
            vaes.joint->decode(z, ref.obj_feat, ref.text_feat, frames);

        DiffusionConditions conds;
        conds.obj_feat = ref.obj_feat;
        conds.text_feat = ref.text_feat;
        conds.type = ref.type;
        conds.gamma = gamma_hat;
        Eigen::MatrixXd composite = dm.model->sample(conds, frames, rng);
        MotionSequence seq = assemble_output(composite, gamma_hat, *vaes.mani, ref.obj_feat,
                                             ref.text_feat, ref.type);

        SampleMeta meta;
        meta.seed = sample_seed;
        meta.condition_hash = condition_hash(ref.obj_feat, ref.text_feat, gamma_hat);
        meta.type = ref.type.type();
        const std::string path = count == 1 ? out_stem : numbered_path(out_stem, c);
        save_sequence(path, seq, meta);
        out << "wrote " << path << " (frames=" << frames << ", seed=" << sample_seed << ")\n";
    }
}

// ---- evaluate ----

inline void run_evaluate(const std::string& data_path, int index,
                         const std::vector<std::string>& seq_paths, double dt,
                         const std::string& csv_path, std::ostream& out) {
    Dataset ds = load_dataset(data_path);
    if (index < 0 || index >= static_cast<int>(ds.samples.size()))
        throw InvalidInput("dataset sample index out of range");
    SkeletalHandModel hand = SkeletalHandModel::standard(ds.hand_points);

    std::vector<MotionSequence> seqs;
    seqs.reserve(seq_paths.size());
    for (const std::string& p : seq_paths) seqs.push_back(load_sequence(p));

    MetricConfig mc;
    mc.dt = dt;
    MetricReport report = compute_metrics(seqs, hand, ds.samples[index].object, mc);
    out << metric_table(report);
    if (!csv_path.empty()) {
        std::ofstream f(csv_path, std::ios::binary);
        if (!f) throw FileNotFound("cannot open for writing: " + csv_path);
        f << metric_csv(report);
        out << "wrote " << csv_path << "\n";
    }
}

// ---- ablate ----

inline void run_ablate(RunConfig cfg, const std::string& data_path, const std::string& out_dir,
                       std::ostream& out, std::ostream& err) {
    Dataset ds = load_dataset(data_path);
    adopt_dataset_dims(cfg, ds);
    cfg.validate();
    std::filesystem::create_directories(out_dir);

    // one shared VAE fit; only the denoiser backbone varies between rows
    SkeletalHandModel hand = SkeletalHandModel::standard(cfg.hand_points);
    JointVAE jv(jointvae_config(cfg), cfg.seed);
    ManiVAE mv(manivae_config(cfg), cfg.seed);
    nn::AdamConfig ac;
    ac.lr = cfg.lr;
    {
        nn::Adam jopt(jv.params(), ac), mopt(mv.params(), ac);
        Rng jrng(derive_seed(cfg.seed, 101)), mrng(derive_seed(cfg.seed, 102));
        const JointVAELossWeights jw = joint_weights(cfg);
        const LossWeights mw = mani_weights(cfg);
        for (uint64_t s = 0; s < static_cast<uint64_t>(cfg.vae_steps); ++s) {
            const DataSample& smp = ds.samples[s % ds.samples.size()];
            jv.train_step(jointvae_sample(smp), jw, jopt, jrng);
            int frame = static_cast<int>((s * 37) % static_cast<uint64_t>(smp.seq.frames()));
            ManiVAELossBreakdown ml = mv.train_step(mani_frame_sample(smp, frame), hand, mw,
                                                    mopt, mrng);
            if (!std::isfinite(ml.total))
                throw NumericalError("non-finite loss at step " + std::to_string(s));
        }
    }
    jv.params().freeze();
    mv.params().freeze();
    err << "VAE fit done (" << cfg.vae_steps << " steps)\n";

    std::vector<Eigen::MatrixXd> composites;
    std::vector<DiffusionConditions> conds;
    for (const DataSample& s : ds.samples) {
        composites.push_back(
            make_training_composite(s.seq, mv, s.obj_feat, s.text_feat, s.type));
        DiffusionConditions c;
        c.obj_feat = s.obj_feat;
        c.text_feat = s.text_feat;
        c.type = s.type;
        c.gamma.resize(s.seq.frames());
        for (int i = 0; i < s.seq.frames(); ++i) c.gamma(i) = s.seq.objects[i].joint_angle;
        conds.push_back(std::move(c));
    }
    const DataSample& ref = ds.samples[0];

    std::ostringstream table, csv;
    auto cell = [](const std::string& s, size_t w) {
        std::string t = s;
        while (t.size() < w) t += ' ';
        return t;
    };
    table << cell("backbone", 11) << cell("loss", 13) << cell("iv_r", 13) << cell("iv_l", 13)
          << cell("id_r", 13) << cell("id_l", 13) << cell("jerk", 13) << cell("sd", 13)
          << "od\n";
    csv << "backbone,loss,iv_right,iv_left,id_right,id_left,jerk,sd,od\n";

    const char* rows[4] = {"gru", "tconv", "attention", "ssm"};
    for (int row = 0; row < 4; ++row) {
        auto t0 = std::chrono::steady_clock::now();
        RunConfig bc = cfg;
        bc.backbone = rows[row];
        DiffusionModel dm(denoiser_config(bc), bc.timesteps, bc.seed);
        nn::Adam dopt(dm.params(), ac);
        Rng drng(derive_seed(bc.seed, 103));
        double last = 0;
        for (uint64_t s = 0; s < static_cast<uint64_t>(bc.diffusion_steps); ++s) {
            size_t idx = s % composites.size();
            last = dm.train_step(composites[idx], conds[idx], dopt, drng);
            if (!std::isfinite(last))
                throw NumericalError("non-finite loss at step " + std::to_string(s));
        }

        std::vector<MotionSequence> gen;
        for (int c = 0; c < 2; ++c) {
            Rng rng(derive_seed(bc.seed, 0x5350 + static_cast<uint64_t>(c)));
            Eigen::VectorXd z(jv.config().d_latent);
            for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
            Eigen::VectorXd gamma_hat = jv.decode(z, ref.obj_feat, ref.text_feat, cfg.frames);
            DiffusionConditions c2;
            c2.obj_feat = ref.obj_feat;
            c2.text_feat = ref.text_feat;
            c2.type = ref.type;
            c2.gamma = gamma_hat;
            Eigen::MatrixXd composite = dm.sample(c2, cfg.frames, rng);
            gen.push_back(assemble_output(composite, gamma_hat, mv, ref.obj_feat,
                                          ref.text_feat, ref.type));
        }
        MetricConfig mc;
        mc.dt = cfg.dt;
        MetricReport r = compute_metrics(gen, hand, ref.object, mc);

        table << cell(rows[row], 11) << cell(fmt_g(last), 13) << cell(fmt_g(r.iv_right), 13)
              << cell(fmt_g(r.iv_left), 13) << cell(fmt_g(r.id_right), 13)
              << cell(fmt_g(r.id_left), 13) << cell(fmt_g(r.jerk), 13)
              << cell(fmt_g(r.sd), 13) << fmt_g(r.od) << "\n";
        csv << rows[row] << "," << fmt_g(last) << "," << fmt_g(r.iv_right) << ","
            << fmt_g(r.iv_left) << "," << fmt_g(r.id_right) << "," << fmt_g(r.id_left) << ","
            << fmt_g(r.jerk) << "," << fmt_g(r.sd) << "," << fmt_g(r.od) << "\n";

        std::chrono::duration<double> dt_row = std::chrono::steady_clock::now() - t0;
        err << rows[row] << ": " << fmt_g(dt_row.count()) << " s\n";  // timing stays off stdout
    }

    out << table.str();
    const std::string csv_path = out_dir + "/ablation.csv";
    std::ofstream f(csv_path, std::ios::binary);
    if (!f) throw FileNotFound("cannot open for writing: " + csv_path);
    f << csv.str();
    out << "wrote " << csv_path << "\n";
}

// ---- plot ----

struct PlotSeries {
    std::string label;
    std::string color;
    std::vector<std::pair<double, double>> pts;
};

inline std::string svg_line_chart(const std::string& title,
                                  const std::vector<PlotSeries>& series) {
    const double W = 640, H = 400, ML = 60, MR = 20, MT = 40, MB = 40;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const PlotSeries& s : series)
        for (auto [x, y] : s.pts) {
            x0 = std::min(x0, x), x1 = std::max(x1, x);
            y0 = std::min(y0, y), y1 = std::max(y1, y);
        }
    if (x0 > x1) x0 = 0, x1 = 1;
    if (y0 > y1) y0 = 0, y1 = 1;
    if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
    if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
    double ypad = 0.05 * (y1 - y0);
    y0 -= ypad, y1 += ypad;

    auto px = [&](double x) { return ML + (x - x0) / (x1 - x0) * (W - ML - MR); };
    auto py = [&](double y) { return H - MB - (y - y0) / (y1 - y0) * (H - MT - MB); };
    auto num = [](double v) {
        char b[40];
        std::snprintf(b, sizeof b, "%.2f", v);
        return std::string(b);
    };
    auto tick = [](double v) {
        char b[40];
        std::snprintf(b, sizeof b, "%.3g", v);
        return std::string(b);
    };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
          "viewBox=\"0 0 640 400\">\n";
    os << "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
    os << "<rect x=\"" << num(ML) << "\" y=\"" << num(MT) << "\" width=\"" << num(W - ML - MR)
       << "\" height=\"" << num(H - MT - MB)
       << "\" fill=\"none\" stroke=\"#888\" stroke-width=\"1\"/>\n";
    os << "<text x=\"" << num(W / 2) << "\" y=\"24\" text-anchor=\"middle\" "
          "font-family=\"monospace\" font-size=\"14\">"
       << title << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
        os << "<text x=\"" << num(px(fx)) << "\" y=\"" << num(H - MB + 16)
           << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"10\">"
           << tick(fx) << "</text>\n";
        os << "<text x=\"" << num(ML - 6) << "\" y=\"" << num(py(fy) + 3)
           << "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"10\">" << tick(fy)
           << "</text>\n";
    }
    double ly = MT + 14;
    for (const PlotSeries& s : series) {
        os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" "
              "points=\"";
        for (size_t i = 0; i < s.pts.size(); ++i) {
            if (i) os << ' ';
            os << num(px(s.pts[i].first)) << ',' << num(py(s.pts[i].second));
        }
        os << "\"/>\n";
        os << "<text x=\"" << num(W - MR - 6) << "\" y=\"" << num(ly)
           << "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\" fill=\""
           << s.color << "\">" << s.label << "</text>\n";
        ly += 14;
    }
    os << "</svg>\n";
    return os.str();
}

inline void write_text(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FileNotFound("cannot open for writing: " + path);
    f << content;
}

inline void run_plot(const std::string& data_path, int index, const std::string& seq_path,
                     const std::string& out_dir, std::ostream& out) {
    Dataset ds = load_dataset(data_path);
    if (index < 0 || index >= static_cast<int>(ds.samples.size()))
        throw InvalidInput("dataset sample index out of range");
    const DataSample& ref = ds.samples[index];
    MotionSequence seq = seq_path.empty() ? ref.seq : load_sequence(seq_path);
    SkeletalHandModel hand = SkeletalHandModel::standard(ds.hand_points);
    std::filesystem::create_directories(out_dir);

    const int n = seq.frames();
    PlotSeries g{"joint angle", "#1f77b4", {}};
    for (int i = 0; i < n; ++i) g.pts.emplace_back(i, seq.objects[i].joint_angle);
    write_text(out_dir + "/gamma.svg", svg_line_chart("joint angle over frames", {g}));

    auto traj = [&](int ax, int ay, const std::string& name, const std::string& title) {
        PlotSeries l{"left wrist", "#d62728", {}}, r{"right wrist", "#2ca02c", {}},
            o{"object", "#1f77b4", {}};
        for (int i = 0; i < n; ++i) {
            l.pts.emplace_back(seq.hands[i].trans_left(ax), seq.hands[i].trans_left(ay));
            r.pts.emplace_back(seq.hands[i].trans_right(ax), seq.hands[i].trans_right(ay));
            o.pts.emplace_back(seq.objects[i].trans(ax), seq.objects[i].trans(ay));
        }
        write_text(out_dir + "/" + name, svg_line_chart(title, {l, r, o}));
    };
    traj(0, 1, "traj_xy.svg", "wrist and object paths (x, y)");
    traj(0, 2, "traj_xz.svg", "wrist and object paths (x, z)");

    PlotSeries dl{"left hand", "#d62728", {}}, dr{"right hand", "#2ca02c", {}};
    for (int i = 0; i < n; ++i) {
        Eigen::MatrixXd cloud = articulate_object(ref.object, seq.objects[i]);
        dl.pts.emplace_back(
            i, distance_field(
                   hand_fk(seq.hands[i].pose_left, seq.hands[i].trans_left, hand).points,
                   cloud)
                   .minCoeff());
        dr.pts.emplace_back(
            i, distance_field(
                   hand_fk(seq.hands[i].pose_right, seq.hands[i].trans_right, hand).points,
                   cloud)
                   .minCoeff());
    }
    write_text(out_dir + "/distance.svg",
               svg_line_chart("closest hand-object distance", {dl, dr}));

    out << "wrote " << out_dir << "/gamma.svg, traj_xy.svg, traj_xz.svg, distance.svg\n";
}

// ---- wiring ----

inline int run_cli(int argc, char** argv) {
    CLI::App app{"bimanual hand-object interaction generation pipeline"};
    app.require_subcommand(1);

    struct {
        std::string out, config, family;
        uint64_t seed = 0;
        int samples = 0;
    } gen;
    CLI::App* g = app.add_subcommand("generate", "produce a synthetic dataset");
    g->add_option("--out", gen.out, "output dataset path")->required();
    g->add_option("--config", gen.config, "JSON config file");
    auto* g_seed = g->add_option("--seed", gen.seed, "dataset seed");
    auto* g_family = g->add_option("--family", gen.family, "single_rigid | bi_articulated");
    auto* g_samples = g->add_option("--samples", gen.samples, "number of samples");
    g->callback([&] {
        RunConfig cfg = resolve_config(gen.config);
        if (g_seed->count()) cfg.seed = gen.seed;
        if (g_family->count()) cfg.family = gen.family;
        if (g_samples->count()) cfg.num_samples = gen.samples;
        cfg.validate();
        run_generate(cfg, gen.out, std::cout);
    });

    struct {
        std::string data, out, config, resume;
        uint64_t seed = 0;
        int steps = 0;
    } tv;
    CLI::App* t = app.add_subcommand("train-vae", "fit both conditional VAEs");
    t->add_option("--data", tv.data, "dataset path")->required();
    t->add_option("--out", tv.out, "checkpoint stem (writes <stem>.joint and <stem>.mani)")
        ->required();
    t->add_option("--config", tv.config, "JSON config file");
    t->add_option("--resume", tv.resume, "checkpoint stem to continue from");
    auto* t_seed = t->add_option("--seed", tv.seed, "training seed");
    auto* t_steps = t->add_option("--steps", tv.steps, "total optimization steps");
    t->callback([&] {
        RunConfig cfg = resolve_config(tv.config);
        if (t_seed->count()) cfg.seed = tv.seed;
        if (t_steps->count()) cfg.vae_steps = tv.steps;
        run_train_vae(cfg, tv.data, tv.out, tv.resume, std::cout, std::cerr);
    });

    struct {
        std::string data, vae, out, config, backbone;
        uint64_t seed = 0;
        int steps = 0;
    } td;
    CLI::App* d = app.add_subcommand("train-diffusion", "fit the latent denoiser");
    d->add_option("--data", td.data, "dataset path")->required();
    d->add_option("--vae", td.vae, "trained VAE checkpoint stem")->required();
    d->add_option("--out", td.out, "checkpoint output path")->required();
    d->add_option("--config", td.config, "JSON config file");
    auto* d_seed = d->add_option("--seed", td.seed, "training seed");
    auto* d_steps = d->add_option("--steps", td.steps, "optimization steps");
    auto* d_backbone =
        d->add_option("--backbone", td.backbone, "ssm | gru | tconv | attention");
    d->callback([&] {
        RunConfig cfg = resolve_config(td.config);
        if (d_seed->count()) cfg.seed = td.seed;
        if (d_steps->count()) cfg.diffusion_steps = td.steps;
        if (d_backbone->count()) cfg.backbone = td.backbone;
        run_train_diffusion(cfg, td.data, td.vae, td.out, std::cout, std::cerr);
    });

    struct {
        std::string model, vae, data, out, config;
        int index = 0, frames = 0, count = 1;
        uint64_t seed = 0;
    } sm;
    CLI::App* s = app.add_subcommand("sample", "draw motion sequences from a trained model");
    s->add_option("--model", sm.model, "diffusion checkpoint")->required();
    s->add_option("--vae", sm.vae, "VAE checkpoint stem")->required();
    s->add_option("--data", sm.data, "dataset supplying the conditions")->required();
    s->add_option("--out", sm.out, "output sequence path (stem when --count > 1)")->required();
    s->add_option("--config", sm.config, "JSON config file");
    s->add_option("--index", sm.index, "condition sample index");
    auto* s_frames = s->add_option("--frames", sm.frames, "sequence length");
    s->add_option("--count", sm.count, "number of sequences");
    auto* s_seed = s->add_option("--seed", sm.seed, "sampling seed");
    s->callback([&] {
        RunConfig cfg = resolve_config(sm.config);
        if (s_seed->count()) cfg.seed = sm.seed;
        int frames = s_frames->count() ? sm.frames : cfg.frames;
        run_sample(sm.model, sm.vae, sm.data, sm.index, frames, sm.count, cfg.seed, sm.out,
                   std::cout);
    });

    struct {
        std::string data, csv;
        std::vector<std::string> seqs;
        int index = 0;
        double dt = 1.0 / 30.0;
    } ev;
    CLI::App* e = app.add_subcommand("evaluate", "score sampled sequences");
    e->add_option("--data", ev.data, "dataset supplying object geometry")->required();
    e->add_option("--index", ev.index, "object sample index");
    e->add_option("--csv", ev.csv, "also write metrics as CSV");
    e->add_option("--dt", ev.dt, "frame interval in seconds");
    e->add_option("sequences", ev.seqs, "sampled sequence files")->required();
    e->callback(
        [&] { run_evaluate(ev.data, ev.index, ev.seqs, ev.dt, ev.csv, std::cout); });

    struct {
        std::string data, out, config;
        uint64_t seed = 0;
        int vae_steps = 0, steps = 0, frames = 0;
    } ab;
    CLI::App* a = app.add_subcommand("ablate", "compare denoiser backbones");
    a->add_option("--data", ab.data, "dataset path")->required();
    a->add_option("--out", ab.out, "output directory")->required();
    a->add_option("--config", ab.config, "JSON config file");
    auto* a_seed = a->add_option("--seed", ab.seed, "seed shared by all rows");
    auto* a_vsteps = a->add_option("--vae-steps", ab.vae_steps, "shared VAE fit steps");
    auto* a_steps = a->add_option("--steps", ab.steps, "diffusion steps per row");
    auto* a_frames = a->add_option("--frames", ab.frames, "sampled sequence length");
    a->callback([&] {
        RunConfig cfg = resolve_config(ab.config);
        if (a_seed->count()) cfg.seed = ab.seed;
        if (a_vsteps->count()) cfg.vae_steps = ab.vae_steps;
        if (a_steps->count()) cfg.diffusion_steps = ab.steps;
        if (a_frames->count()) cfg.frames = ab.frames;
        run_ablate(cfg, ab.data, ab.out, std::cout, std::cerr);
    });

    struct {
        std::string data, seq, out;
        int index = 0;
    } pl;
    CLI::App* p = app.add_subcommand("plot", "render SVG views of a sequence");
    p->add_option("--data", pl.data, "dataset path")->required();
    p->add_option("--index", pl.index, "dataset sample index");
    p->add_option("--seq", pl.seq, "sampled sequence to plot instead of the dataset's");
    p->add_option("--out", pl.out, "output directory")->required();
    p->callback([&] { run_plot(pl.data, pl.index, pl.seq, pl.out, std::cout); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    } catch (const Error& err) {
        std::cerr << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "InternalError: " << err.what() << "\n";
        return 3;
    }
    return 0;
}

}  // namespace manidiff::cli
