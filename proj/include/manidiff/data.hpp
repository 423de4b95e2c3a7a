#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <vector>

#include "manidiff/core.hpp"
#include "manidiff/geometry.hpp"
#include "manidiff/jointvae.hpp"
#include "manidiff/manivae.hpp"
#include "manidiff/rng.hpp"
#include "manidiff/serialize.hpp"

// Synthetic interaction corpus: procedurally generated box-and-lid objects,
// smooth hand approach trajectories, precomputed ground-truth distance
// fields, and stub feature embedders standing in for learned encoders.

namespace manidiff {

enum class TaskFamily { SingleRigid, BimanualArticulated };

inline const char* family_name(TaskFamily f) {
    switch (f) {
        case TaskFamily::SingleRigid: return "single_rigid";
        case TaskFamily::BimanualArticulated: return "bi_articulated";
    }
    throw InvalidConfig("unknown task family");
}

inline TaskFamily family_from_name(const std::string& s) {
    if (s == "single_rigid") return TaskFamily::SingleRigid;
    if (s == "bi_articulated") return TaskFamily::BimanualArticulated;
    throw InvalidConfig("unknown task family name: " + s);
}

// ---- stub embedders ----

// Hashed bag of whitespace-separated tokens, unit norm.
inline Eigen::VectorXd stub_text_embed(const std::string& text, int dim) {
    if (dim < 1) throw InvalidConfig("embedding dimension must be positive");
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
    size_t tokens = 0;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i == start) break;
        std::string tok = text.substr(start, i - start);
        std::transform(tok.begin(), tok.end(), tok.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        uint64_t h = fnv1a(tok.data(), tok.size());
        double sign = (h >> 32) & 1 ? 1.0 : -1.0;
        v(static_cast<Eigen::Index>(h % static_cast<uint64_t>(dim))) += sign;
        ++tokens;
    }
    if (tokens == 0) throw InvalidInput("instruction has no tokens");
    double norm = v.norm();
    if (norm < 1e-12) v(0) = 1.0, norm = 1.0;  // pathological cancellation
    return v / norm;
}

// Point-cloud moment statistics pushed through a fixed random projection;
// invariant to the ordering of the points.
inline Eigen::VectorXd stub_object_embed(const Eigen::MatrixXd& cloud, int dim) {
    if (dim < 1) throw InvalidConfig("embedding dimension must be positive");
    if (cloud.rows() == 0 || cloud.cols() != 3)
        throw InvalidInput("object cloud must be non-empty x3");
    if (!cloud.allFinite()) throw InvalidInput("object cloud must be finite");

    Eigen::RowVector3d mean = cloud.colwise().mean();
    Eigen::MatrixXd centered = cloud.rowwise() - mean;
    Eigen::Matrix3d cov =
        centered.transpose() * centered / static_cast<double>(cloud.rows());
    Eigen::RowVector3d skew = centered.array().pow(3).colwise().mean();
    Eigen::RowVector3d lo = cloud.colwise().minCoeff();
    Eigen::RowVector3d hi = cloud.colwise().maxCoeff();

    Eigen::VectorXd feat(18);
    feat << mean(0), mean(1), mean(2), cov(0, 0), cov(1, 1), cov(2, 2), cov(0, 1), cov(0, 2),
        cov(1, 2), skew(0), skew(1), skew(2), lo(0), lo(1), lo(2), hi(0), hi(1), hi(2);

    Rng proj_rng(0x6f626a);  // fixed basis shared by every call
    Eigen::MatrixXd basis(dim, 18);
    for (int r = 0; r < dim; ++r)
        for (int c = 0; c < 18; ++c) basis(r, c) = proj_rng.normal();
    Eigen::VectorXd out = basis * feat;
    double norm = out.norm();
    if (norm < 1e-12) {
        out.setZero();
        out(0) = 1.0;
        return out;
    }
    return out / norm;
}

// ---- generation ----

struct GeneratorConfig {
    TaskFamily family = TaskFamily::BimanualArticulated;
    int num_samples = 8;
    int hand_points = 64;
    int part_points = 256;
    int d_obj = 64;
    int d_text = 64;

    void validate() const {
        if (num_samples < 1 || hand_points < 1 || part_points < 4 || d_obj < 1 || d_text < 1)
            throw InvalidConfig("bad generator configuration");
    }
};

struct DataSample {
    MotionSequence seq;
    ArticulatedObjectModel object;
    std::string instruction;
    HandTypeFlag type;
    Eigen::VectorXd obj_feat, text_feat;
    Eigen::MatrixXd dist_left, dist_right;  // N x V_h ground-truth fields
};

struct Dataset {
    TaskFamily family = TaskFamily::BimanualArticulated;
    uint64_t seed = 0;
    int hand_points = 64;
    std::vector<DataSample> samples;
};

namespace detail {

inline double smoothstep(double u) { return u * u * (3.0 - 2.0 * u); }

inline Eigen::MatrixXd box_cloud(Rng& rng, const Vec3& center, const Vec3& half, int count) {
    Eigen::MatrixXd pts(count, 3);
    for (int i = 0; i < count; ++i)
        for (int c = 0; c < 3; ++c)
            pts(i, c) = center(c) + half(c) * rng.uniform(-1.0, 1.0);
    return pts;
}

inline ArticulatedObjectModel make_box_lid(Rng& rng, const GeneratorConfig& cfg,
                                           int sample_idx) {
    ArticulatedObjectModel m;
    m.name = "box" + std::to_string(sample_idx);
    Vec3 half(rng.uniform(0.10, 0.18), rng.uniform(0.08, 0.15), rng.uniform(0.04, 0.08));
    m.base.points = box_cloud(rng, Vec3(0, 0, 0), half, cfg.part_points);
    double lid_h = 0.01;
    m.moving.points = box_cloud(rng, Vec3(0, 0, half(2) + lid_h),
                                Vec3(half(0), half(1), lid_h), cfg.part_points);
    m.axis = Vec3(1, 0, 0);                 // hinge along x
    m.pivot = Vec3(0, -half(1), half(2));   // back top edge
    if (cfg.family == TaskFamily::SingleRigid) {
        m.gamma_min = m.gamma_max = 0.0;
    } else {
        m.gamma_min = 0.0;
        m.gamma_max = 1.4;
    }
    return m;
}

// A smooth near-identity pose: finger curl plus a small per-joint wobble,
// both functions of the phase u.
inline PoseBlock smooth_pose(Rng& phase_rng, double u, double curl) {
    PoseBlock pose = HandState::identity_pose();
    for (int j = 0; j < kHandJoints; ++j) {
        double p1 = phase_rng.uniform(0, 2 * M_PI);
        double p2 = phase_rng.uniform(0, 2 * M_PI);
        double amp = 0.12 * std::sin(M_PI * u + p1) + curl * smoothstep(u);
        pose(j, 2) += amp;                                  // bend first column
        pose(j, 3) += 0.1 * std::sin(2 * M_PI * u + p2);    // twist second column
    }
    return pose;
}

}  // namespace detail

inline DataSample generate_sample(const GeneratorConfig& cfg, uint64_t seed, int index,
                                  const SkeletalHandModel& hand_model) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(index)));
    DataSample s;
    s.object = detail::make_box_lid(rng, cfg, index);

    const bool articulated = cfg.family == TaskFamily::BimanualArticulated;
    const int n = articulated ? kMaxFrames : 30 + static_cast<int>(rng.integer(121));
    const bool opening = articulated ? rng.integer(2) == 0 : false;
    const bool right_hand = rng.integer(2) == 0;

    if (articulated) {
        s.type = HandTypeFlag::make(HandType::Bimanual);
        s.instruction = std::string(opening ? "open" : "close") + " the " + s.object.name +
                        " lid slowly";
    } else {
        s.type = HandTypeFlag::make(right_hand ? HandType::RightOnly : HandType::LeftOnly);
        s.instruction = "move the " + s.object.name + " with the " +
                        (right_hand ? "right" : "left") + " hand";
    }

    // strictly inside the joint limits
    const double span = s.object.gamma_max - s.object.gamma_min;
    const double g_lo = s.object.gamma_min + 0.05 * span;
    const double g_hi = s.object.gamma_max - 0.05 * span;

    Vec3 obj_pos(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0.0);
    double obj_yaw = rng.uniform(-0.3, 0.3);
    Rotation6D obj_rot;
    obj_rot.v = {std::cos(obj_yaw), std::sin(obj_yaw), 0.0,
                 -std::sin(obj_yaw), std::cos(obj_yaw), 0.0};

    Vec3 start_l = obj_pos + Vec3(-0.45, rng.uniform(-0.1, 0.1), 0.25);
    Vec3 start_r = obj_pos + Vec3(0.45, rng.uniform(-0.1, 0.1), 0.25);
    Vec3 grasp_l = obj_pos + Vec3(-0.18, 0.0, 0.12);
    Vec3 grasp_r = obj_pos + Vec3(0.18, 0.0, 0.12);
    Vec3 rest_l = obj_pos + Vec3(-0.55, 0.0, 0.3);
    Vec3 rest_r = obj_pos + Vec3(0.55, 0.0, 0.3);

    Rng pose_phases = rng.fork(7);
    double curl_l = rng.uniform(0.1, 0.25), curl_r = rng.uniform(0.1, 0.25);

    s.seq.hands.resize(n);
    s.seq.objects.resize(n);
    s.dist_left.resize(n, hand_model.points());
    s.dist_right.resize(n, hand_model.points());

    for (int i = 0; i < n; ++i) {
        double u = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
        double a = detail::smoothstep(u);

        ObjectState& obj = s.seq.objects[i];
        obj.trans = obj_pos;
        obj.rot = obj_rot;
        if (articulated) {
            double g = opening ? g_lo + (g_hi - g_lo) * a : g_hi - (g_hi - g_lo) * a;
            obj.joint_angle = g;
        } else {
            obj.joint_angle = 0.0;
        }

        HandState& hand = s.seq.hands[i];
        bool left_active = s.type.left_active();
        bool right_active = s.type.right_active();
        hand.trans_left = left_active ? Vec3(start_l + (grasp_l - start_l) * a) : rest_l;
        hand.trans_right = right_active ? Vec3(start_r + (grasp_r - start_r) * a) : rest_r;
        Rng lp = pose_phases;  // same phases every frame, varying u
        hand.pose_left = left_active ? detail::smooth_pose(lp, u, curl_l)
                                     : HandState::identity_pose();
        hand.pose_right = right_active ? detail::smooth_pose(lp, u, curl_r)
                                       : HandState::identity_pose();

        Eigen::MatrixXd cloud = articulate_object(s.object, obj);
        s.dist_left.row(i) =
            distance_field(hand_fk(hand.pose_left, hand.trans_left, hand_model).points, cloud)
                .transpose();
        s.dist_right.row(i) =
            distance_field(hand_fk(hand.pose_right, hand.trans_right, hand_model).points,
                           cloud)
                .transpose();
    }
    s.seq.validate();

    Eigen::MatrixXd canonical(s.object.base.points.rows() + s.object.moving.points.rows(), 3);
    canonical << s.object.base.points, s.object.moving.points;
    s.obj_feat = stub_object_embed(canonical, cfg.d_obj);
    s.text_feat = stub_text_embed(s.instruction, cfg.d_text);
    return s;
}

inline Dataset generate_dataset(const GeneratorConfig& cfg, uint64_t seed) {
    cfg.validate();
    SkeletalHandModel hand_model = SkeletalHandModel::standard(cfg.hand_points);
    Dataset ds;
    ds.family = cfg.family;
    ds.seed = seed;
    ds.hand_points = cfg.hand_points;
    ds.samples.reserve(cfg.num_samples);
    for (int i = 0; i < cfg.num_samples; ++i)
        ds.samples.push_back(generate_sample(cfg, seed, i, hand_model));
    return ds;
}

// ---- dataset files ----

inline void save_dataset(const std::string& path, const Dataset& ds) {
    io::Writer w(path);
    w.magic("MDDS");
    w.u32(1);
    w.u64(ds.seed);
    w.u8(static_cast<uint8_t>(ds.family));
    w.u32(static_cast<uint32_t>(ds.hand_points));
    w.u64(ds.samples.size());
    for (const DataSample& s : ds.samples) {
        w.str(s.object.name);
        Eigen::MatrixXd axis = s.object.axis.transpose(), pivot = s.object.pivot.transpose();
        w.mat(axis);
        w.mat(pivot);
        w.f64(s.object.gamma_min);
        w.f64(s.object.gamma_max);
        w.mat(s.object.base.points);
        w.mat(s.object.moving.points);
        w.str(s.instruction);
        w.u8(static_cast<uint8_t>(s.type.type()));
        w.mat(flatten_sequence(s.seq));
        w.mat(s.dist_left);
        w.mat(s.dist_right);
        Eigen::MatrixXd of = s.obj_feat.transpose(), tf = s.text_feat.transpose();
        w.mat(of);
        w.mat(tf);
    }
}

inline Dataset load_dataset(const std::string& path) {
    io::Reader r(path);
    r.expect_magic("MDDS");
    if (r.u32() != 1) throw ParseError("unsupported dataset version");
    Dataset ds;
    ds.seed = r.u64();
    uint8_t fam = r.u8();
    if (fam > 1) throw ParseError("bad task family in dataset");
    ds.family = static_cast<TaskFamily>(fam);
    ds.hand_points = static_cast<int>(r.u32());
    uint64_t count = r.u64();
    if (count > (1ull << 20)) throw ParseError("implausible sample count");
    ds.samples.resize(count);
    for (uint64_t i = 0; i < count; ++i) {
        DataSample& s = ds.samples[i];
        s.object.name = r.str();
        Eigen::MatrixXd axis = r.mat(), pivot = r.mat();
        if (axis.rows() != 1 || axis.cols() != 3 || pivot.rows() != 1 || pivot.cols() != 3)
            throw ParseError("bad object frame in dataset");
        s.object.axis = axis.row(0).transpose();
        s.object.pivot = pivot.row(0).transpose();
        s.object.gamma_min = r.f64();
        s.object.gamma_max = r.f64();
        s.object.base.points = r.mat();
        s.object.moving.points = r.mat();
        s.object.validate();
        s.instruction = r.str();
        uint8_t ty = r.u8();
        if (ty > 2) throw ParseError("bad hand type in dataset");
        s.type = HandTypeFlag::make(static_cast<HandType>(ty));
        s.seq = unflatten_sequence(r.mat());
        s.dist_left = r.mat();
        s.dist_right = r.mat();
        Eigen::MatrixXd of = r.mat(), tf = r.mat();
        if (of.rows() != 1 || tf.rows() != 1) throw ParseError("bad feature rows in dataset");
        s.obj_feat = of.row(0).transpose();
        s.text_feat = tf.row(0).transpose();
        if (s.dist_left.rows() != static_cast<Eigen::Index>(s.seq.frames()) ||
            s.dist_right.rows() != static_cast<Eigen::Index>(s.seq.frames()) ||
            s.dist_left.cols() != ds.hand_points || s.dist_right.cols() != ds.hand_points)
            throw ParseError("distance field shape mismatch in dataset");
    }
    return ds;
}

// ---- adapters feeding the models ----

inline JointVAE::TrainSample jointvae_sample(const DataSample& s) {
    JointVAE::TrainSample out;
    const Eigen::Index n = static_cast<Eigen::Index>(s.seq.frames());
    out.gamma.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) out.gamma(i) = s.seq.objects[i].joint_angle;
    out.obj_feat = s.obj_feat;
    out.text_feat = s.text_feat;
    return out;
}

inline ManiFrameSample mani_frame_sample(const DataSample& s, int frame) {
    if (frame < 0 || frame >= static_cast<int>(s.seq.frames()))
        throw InvalidInput("frame index out of range");
    ManiFrameSample out;
    out.hand = s.seq.hands[frame];
    out.object = s.seq.objects[frame];
    out.obj_feat = s.obj_feat;
    out.text_feat = s.text_feat;
    out.type = s.type;
    out.dist_gt_left = s.dist_left.row(frame).transpose();
    out.dist_gt_right = s.dist_right.row(frame).transpose();
    out.object_cloud = articulate_object(s.object, s.seq.objects[frame]);
    return out;
}

}  // namespace manidiff
