#pragma once

#include <algorithm>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "manidiff/core.hpp"
#include "manidiff/geometry.hpp"

// Evaluation metrics over generated sequences. Geometry is meters internally;
// the assembled report converts to centimeters.

namespace manidiff {

struct MetricConfig {
    double hand_radius = 0.008;  // sphere radius around each hand surface point
    double voxel = 0.005;
    double dt = 1.0 / 30.0;

    void validate() const {
        if (hand_radius <= 0 || voxel <= 0 || dt <= 0)
            throw InvalidConfig("metric parameters must be positive");
    }
};

// ---- intersection volume ----

// Volume of {p : a(p) && b(p)} inside [lo, hi], estimated on a voxel grid.
inline double voxel_overlap_volume(const std::function<bool(const Vec3&)>& a,
                                   const std::function<bool(const Vec3&)>& b, const Vec3& lo,
                                   const Vec3& hi, double voxel) {
    if (voxel <= 0) throw InvalidConfig("voxel size must be positive");
    long count = 0;
    Eigen::Vector3i steps;
    for (int i = 0; i < 3; ++i)
        steps(i) = std::max(0, static_cast<int>(std::ceil((hi(i) - lo(i)) / voxel)));
    Vec3 p;
    for (int ix = 0; ix < steps(0); ++ix) {
        p(0) = lo(0) + (ix + 0.5) * voxel;
        for (int iy = 0; iy < steps(1); ++iy) {
            p(1) = lo(1) + (iy + 0.5) * voxel;
            for (int iz = 0; iz < steps(2); ++iz) {
                p(2) = lo(2) + (iz + 0.5) * voxel;
                if (a(p) && b(p)) ++count;
            }
        }
    }
    return static_cast<double>(count) * voxel * voxel * voxel;
}

struct WorldBox {
    PartTransform tf;
    PartBox box;
};

// Box proxies of both parts in world coordinates. The joint angle is clamped
// into the model's limits: metrics must not reject slightly out-of-range
// generations.
inline std::vector<WorldBox> object_world_boxes(const ArticulatedObjectModel& model,
                                                const ObjectState& state) {
    ObjectState s = state;
    s.joint_angle = std::clamp(s.joint_angle, model.gamma_min, model.gamma_max);
    auto [tb, tm] = object_part_transforms(model, s);
    return {{tb, part_box(model.base)}, {tm, part_box(model.moving)}};
}

inline bool box_contains(const WorldBox& wb, const Vec3& world) {
    Vec3 local = wb.tf.to_local(world) - wb.box.center;
    return std::abs(local(0)) <= wb.box.half(0) && std::abs(local(1)) <= wb.box.half(1) &&
           std::abs(local(2)) <= wb.box.half(2);
}

// Overlap volume between a union of balls around hand points and a union of
// object part boxes, one frame.
inline double hand_object_overlap(const Eigen::MatrixXd& points, double radius,
                                  const std::vector<WorldBox>& boxes, double voxel) {
    if (points.rows() == 0 || points.cols() != 3)
        throw ShapeMismatch("hand points must be non-empty x3");
    if (boxes.empty()) throw EmptyGeometry("no object boxes");

    Vec3 lo_h = points.colwise().minCoeff().transpose().array() - radius;
    Vec3 hi_h = points.colwise().maxCoeff().transpose().array() + radius;
    Vec3 lo_o = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi_o = -lo_o;
    for (const WorldBox& wb : boxes)
        for (int cx = -1; cx <= 1; cx += 2)
            for (int cy = -1; cy <= 1; cy += 2)
                for (int cz = -1; cz <= 1; cz += 2) {
                    Vec3 corner = wb.box.center + Vec3(cx * wb.box.half(0), cy * wb.box.half(1),
                                                       cz * wb.box.half(2));
                    Vec3 world = wb.tf.apply(corner);
                    lo_o = lo_o.cwiseMin(world);
                    hi_o = hi_o.cwiseMax(world);
                }
    Vec3 lo = lo_h.cwiseMax(lo_o), hi = hi_h.cwiseMin(hi_o);
    if ((hi - lo).minCoeff() <= 0) return 0.0;

    const double r2 = radius * radius;
    auto in_hand = [&](const Vec3& p) {
        for (Eigen::Index i = 0; i < points.rows(); ++i)
            if ((points.row(i).transpose() - p).squaredNorm() <= r2) return true;
        return false;
    };
    auto in_object = [&](const Vec3& p) {
        for (const WorldBox& wb : boxes)
            if (box_contains(wb, p)) return true;
        return false;
    };
    return voxel_overlap_volume(in_object, in_hand, lo, hi, voxel);
}

// Deepest penetration of any hand point into any part box, one frame.
inline double frame_max_depth(const Eigen::MatrixXd& points,
                              const std::vector<WorldBox>& boxes) {
    if (points.rows() == 0 || points.cols() != 3)
        throw ShapeMismatch("hand points must be non-empty x3");
    double best = 0;
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        for (const WorldBox& wb : boxes)
            best = std::max(best, point_box_depth(points.row(i).transpose(), wb.tf, wb.box));
    return best;
}

// ---- per-sequence metrics (meters, m/s^3) ----

enum class HandSide { Left, Right };

inline double sequence_iv(const MotionSequence& seq, HandSide side,
                          const SkeletalHandModel& hand_model,
                          const ArticulatedObjectModel& object_model,
                          const MetricConfig& cfg) {
    cfg.validate();
    seq.validate();
    double total = 0;
    for (size_t i = 0; i < seq.frames(); ++i) {
        const HandState& h = seq.hands[i];
        Eigen::MatrixXd pts =
            side == HandSide::Left
                ? hand_fk(h.pose_left, h.trans_left, hand_model).points
                : hand_fk(h.pose_right, h.trans_right, hand_model).points;
        total += hand_object_overlap(pts, cfg.hand_radius,
                                     object_world_boxes(object_model, seq.objects[i]),
                                     cfg.voxel);
    }
    return total / static_cast<double>(seq.frames());
}

inline double sequence_id(const MotionSequence& seq, HandSide side,
                          const SkeletalHandModel& hand_model,
                          const ArticulatedObjectModel& object_model,
                          const MetricConfig& cfg) {
    cfg.validate();
    seq.validate();
    double total = 0;
    for (size_t i = 0; i < seq.frames(); ++i) {
        const HandState& h = seq.hands[i];
        Eigen::MatrixXd pts =
            side == HandSide::Left
                ? hand_fk(h.pose_left, h.trans_left, hand_model).points
                : hand_fk(h.pose_right, h.trans_right, hand_model).points;
        total += frame_max_depth(pts, object_world_boxes(object_model, seq.objects[i]));
    }
    return total / static_cast<double>(seq.frames());
}

// Mean magnitude of the third forward difference of a position trajectory.
inline double jerk_metric(const Eigen::MatrixXd& traj, double dt) {
    if (traj.cols() != 3) throw ShapeMismatch("trajectory must be N x 3");
    if (traj.rows() < 4)
        throw InsufficientFrames("jerk needs at least 4 frames, got " +
                                 std::to_string(traj.rows()));
    if (dt <= 0) throw InvalidConfig("dt must be positive");
    const double inv = 1.0 / (dt * dt * dt);
    double total = 0;
    const Eigen::Index m = traj.rows() - 3;
    for (Eigen::Index t = 0; t < m; ++t) {
        Eigen::RowVector3d d =
            traj.row(t + 3) - 3.0 * traj.row(t + 2) + 3.0 * traj.row(t + 1) - traj.row(t);
        total += d.norm() * inv;
    }
    return total / static_cast<double>(m);
}

// Both wrists averaged.
inline double sequence_jerk(const MotionSequence& seq, const MetricConfig& cfg) {
    cfg.validate();
    seq.validate();
    const Eigen::Index n = static_cast<Eigen::Index>(seq.frames());
    Eigen::MatrixXd left(n, 3), right(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        left.row(i) = seq.hands[i].trans_left.transpose();
        right.row(i) = seq.hands[i].trans_right.transpose();
    }
    return 0.5 * (jerk_metric(left, cfg.dt) + jerk_metric(right, cfg.dt));
}

// ---- diversity ----

// Mean over sample pairs of ||a - b|| / sqrt(dim).
inline double diversity(const std::vector<Eigen::VectorXd>& samples) {
    if (samples.size() < 2)
        throw InsufficientSamples("diversity needs at least two samples, got " +
                                  std::to_string(samples.size()));
    const Eigen::Index dim = samples[0].size();
    if (dim == 0) throw ShapeMismatch("diversity: empty samples");
    for (const auto& s : samples)
        if (s.size() != dim) throw ShapeMismatch("diversity: sample dimensions differ");
    const double inv = 1.0 / std::sqrt(static_cast<double>(dim));
    double total = 0;
    size_t pairs = 0;
    for (size_t i = 0; i < samples.size(); ++i)
        for (size_t j = i + 1; j < samples.size(); ++j) {
            total += (samples[i] - samples[j]).norm() * inv;
            ++pairs;
        }
    return total / static_cast<double>(pairs);
}

inline Eigen::VectorXd flatten_full(const MotionSequence& seq) {
    Eigen::MatrixXd m = flatten_sequence(seq);
    return Eigen::Map<Eigen::VectorXd>(m.data(), m.size());
}

// object translation + rotation + joint angle columns only
inline Eigen::VectorXd flatten_object_track(const MotionSequence& seq) {
    const Eigen::Index n = static_cast<Eigen::Index>(seq.frames());
    Eigen::VectorXd v(n * 10);
    for (Eigen::Index i = 0; i < n; ++i) {
        const ObjectState& o = seq.objects[i];
        v.segment(i * 10, 3) = o.trans;
        for (int k = 0; k < 6; ++k) v(i * 10 + 3 + k) = o.rot.v[k];
        v(i * 10 + 9) = o.joint_angle;
    }
    return v;
}

// ---- report ----

struct MetricReport {
    double iv_right = 0, iv_left = 0;  // cm^3
    double id_right = 0, id_left = 0;  // cm
    double jerk = 0;                   // cm/s^3
    double sd = 0, od = 0;             // dimensionless
    double dt = 1.0 / 30.0;
};

inline MetricReport compute_metrics(const std::vector<MotionSequence>& samples,
                                    const SkeletalHandModel& hand_model,
                                    const ArticulatedObjectModel& object_model,
                                    const MetricConfig& cfg = {}) {
    cfg.validate();
    if (samples.size() < 2)
        throw InsufficientSamples("metric report needs at least two samples, got " +
                                  std::to_string(samples.size()));
    MetricReport rep;
    rep.dt = cfg.dt;
    std::vector<Eigen::VectorXd> full, object_track;
    for (const MotionSequence& seq : samples) {
        rep.iv_right += sequence_iv(seq, HandSide::Right, hand_model, object_model, cfg);
        rep.iv_left += sequence_iv(seq, HandSide::Left, hand_model, object_model, cfg);
        rep.id_right += sequence_id(seq, HandSide::Right, hand_model, object_model, cfg);
        rep.id_left += sequence_id(seq, HandSide::Left, hand_model, object_model, cfg);
        rep.jerk += sequence_jerk(seq, cfg);
        full.push_back(flatten_full(seq));
        object_track.push_back(flatten_object_track(seq));
    }
    const double n = static_cast<double>(samples.size());
    rep.iv_right = rep.iv_right / n * 1e6;  // m^3 -> cm^3
    rep.iv_left = rep.iv_left / n * 1e6;
    rep.id_right = rep.id_right / n * 100.0;  // m -> cm
    rep.id_left = rep.id_left / n * 100.0;
    rep.jerk = rep.jerk / n * 100.0;  // m/s^3 -> cm/s^3
    rep.sd = diversity(full);
    rep.od = diversity(object_track);
    return rep;
}

inline std::string metric_table(const MetricReport& r) {
    std::ostringstream os;
    os << "metric      value        unit     (dt = " << r.dt << " s)\n";
    auto row = [&os](const char* name, double v, const char* unit) {
        os << name;
        for (size_t i = std::string(name).size(); i < 12; ++i) os << ' ';
        std::ostringstream val;
        val << v;
        os << val.str();
        for (size_t i = val.str().size(); i < 13; ++i) os << ' ';
        os << unit << "\n";
    };
    row("IV_right", r.iv_right, "cm^3");
    row("IV_left", r.iv_left, "cm^3");
    row("ID_right", r.id_right, "cm");
    row("ID_left", r.id_left, "cm");
    row("Jerk", r.jerk, "cm/s^3");
    row("SD", r.sd, "-");
    row("OD", r.od, "-");
    return os.str();
}

inline std::string metric_csv(const MetricReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << "# dt=" << r.dt << "\n";
    os << "iv_right,iv_left,id_right,id_left,jerk,sd,od\n";
    os << r.iv_right << "," << r.iv_left << "," << r.id_right << "," << r.id_left << ","
       << r.jerk << "," << r.sd << "," << r.od << "\n";
    return os.str();
}

}  // namespace manidiff
