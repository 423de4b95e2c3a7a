#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "manidiff/autodiff.hpp"
#include "manidiff/core.hpp"

namespace manidiff {

// Rigid skeletal hand with surface sample points attached to bones: wrist
// plus three joints for each of five fingers. A stand-in for a full mesh
// model that keeps the pose -> points map differentiable.
struct SkeletalHandModel {
    std::array<int, kHandJoints> parent{};               // parent[0] == -1
    Eigen::Matrix<double, kHandJoints, 3> offsets;       // bone offset in parent frame
    std::vector<int> point_joint;                        // owning joint per surface point
    Eigen::MatrixXd point_local;                         // V x 3, in joint frame

    int points() const { return static_cast<int>(point_joint.size()); }

    static SkeletalHandModel standard(int num_points = 64) {
        if (num_points < 1) throw InvalidConfig("hand model needs at least one surface point");
        SkeletalHandModel m;
        m.parent[0] = -1;
        m.offsets.row(0).setZero();
        for (int f = 0; f < 5; ++f) {
            int base = 1 + f * 3;
            m.parent[base] = 0;
            m.parent[base + 1] = base;
            m.parent[base + 2] = base + 1;
            m.offsets.row(base) = Eigen::RowVector3d(0.02 * (f - 2), 0.09, 0.0);
            m.offsets.row(base + 1) = Eigen::RowVector3d(0.0, 0.035, 0.0);
            m.offsets.row(base + 2) = Eigen::RowVector3d(0.0, 0.025, 0.0);
        }
        m.point_joint.resize(num_points);
        m.point_local.resize(num_points, 3);
        const double r = 0.008;
        for (int i = 0; i < num_points; ++i) {
            m.point_joint[i] = i % kHandJoints;
            double a = 2.399963229728653 * i;  // golden-angle spread
            double b = 1.618033988749895 * i;
            m.point_local.row(i) =
                r * Eigen::RowVector3d(std::cos(a), std::sin(a), std::cos(b));
        }
        return m;
    }

    // Joint positions with identity rotations and zero translation.
    Eigen::MatrixXd rest_joints() const {
        Eigen::MatrixXd j(kHandJoints, 3);
        for (int i = 0; i < kHandJoints; ++i) {
            Eigen::RowVector3d p = offsets.row(i);
            if (parent[i] >= 0) p += j.row(parent[i]);
            j.row(i) = p;
        }
        return j;
    }

    Eigen::MatrixXd rest_points() const {
        Eigen::MatrixXd j = rest_joints();
        Eigen::MatrixXd p(points(), 3);
        for (int i = 0; i < points(); ++i) p.row(i) = j.row(point_joint[i]) + point_local.row(i);
        return p;
    }
};

struct FKResult {
    Eigen::MatrixXd joints;  // 16 x 3
    Eigen::MatrixXd points;  // V x 3
};

inline Rotation6D pose_row(const PoseBlock& pose, int j) {
    Rotation6D r;
    for (int k = 0; k < 6; ++k) r.v[static_cast<size_t>(k)] = pose(j, k);
    return r;
}

inline FKResult hand_fk(const PoseBlock& pose, const Vec3& trans,
                        const SkeletalHandModel& model) {
    std::array<Mat3, kHandJoints> world;
    FKResult out;
    out.joints.resize(kHandJoints, 3);
    for (int j = 0; j < kHandJoints; ++j) {
        Mat3 local = rot6d_to_matrix(pose_row(pose, j));
        if (model.parent[j] < 0) {
            world[j] = local;
            out.joints.row(j) = trans.transpose();
        } else {
            int p = model.parent[j];
            world[j] = world[p] * local;
            out.joints.row(j) =
                out.joints.row(p) + (world[p] * model.offsets.row(j).transpose()).transpose();
        }
    }
    out.points.resize(model.points(), 3);
    for (int i = 0; i < model.points(); ++i) {
        int j = model.point_joint[i];
        out.points.row(i) =
            out.joints.row(j) + (world[j] * model.point_local.row(i).transpose()).transpose();
    }
    return out;
}

// Gram-Schmidt over a 1x6 row, returning the TRANSPOSED rotation (rows are
// the orthonormal basis vectors), which is the convenient form for
// row-vector kinematics: p_world = p_local * R^T.
inline ad::Var gs_rows_var(const ad::Var& row6) {
    if (row6.rows() != 1 || row6.cols() != 6) throw ShapeMismatch("gs_rows_var: expects 1x6");
    // forward-value guards mirror rot6d_to_matrix
    Eigen::Vector3d a1v = row6.value().block(0, 0, 1, 3).transpose();
    Eigen::Vector3d a2v = row6.value().block(0, 3, 1, 3).transpose();
    double n1 = a1v.norm(), n2 = a2v.norm();
    if (!(std::isfinite(n1) && std::isfinite(n2)))
        throw DegenerateRotation("non-finite 6D rotation input");
    if (n1 < 1e-8 || n2 < 1e-8) throw DegenerateRotation("6D rotation column with near-zero norm");
    if (std::abs(a1v.dot(a2v) / (n1 * n2)) > 1.0 - 1e-8)
        throw DegenerateRotation("6D rotation columns nearly parallel");

    ad::Var a1 = ad::slice_cols(row6, 0, 3);
    ad::Var a2 = ad::slice_cols(row6, 3, 3);
    ad::Var b1 = ad::smul(a1, ad::sinv(ad::norm2(a1)));
    ad::Var u = ad::sub(a2, ad::smul(b1, ad::dot(b1, a2)));
    ad::Var b2 = ad::smul(u, ad::sinv(ad::norm2(u)));
    ad::Var b3 = ad::cross3(b1, b2);
    return ad::concat_rows({b1, b2, b3});
}

struct FKVarResult {
    ad::Var joints;  // 16 x 3
    ad::Var points;  // V x 3
};

inline FKVarResult hand_fk_var(const ad::Var& pose, const ad::Var& trans,
                               const SkeletalHandModel& model) {
    if (pose.rows() != kHandJoints || pose.cols() != 6)
        throw ShapeMismatch("hand_fk_var: pose must be 16x6");
    if (trans.rows() != 1 || trans.cols() != 3)
        throw ShapeMismatch("hand_fk_var: trans must be 1x3");
    std::vector<ad::Var> rt(kHandJoints);  // transposed world rotations
    std::vector<ad::Var> pos(kHandJoints);
    for (int j = 0; j < kHandJoints; ++j) {
        ad::Var local = gs_rows_var(ad::slice_rows(pose, j, 1));
        if (model.parent[j] < 0) {
            rt[j] = local;
            pos[j] = trans;
        } else {
            int p = model.parent[j];
            rt[j] = ad::matmul(local, rt[p]);
            ad::Var off = ad::Var::constant(model.offsets.row(j));
            pos[j] = ad::add(pos[p], ad::matmul(off, rt[p]));
        }
    }
    std::vector<ad::Var> jrows(kHandJoints), prows;
    for (int j = 0; j < kHandJoints; ++j) jrows[j] = pos[j];
    prows.reserve(static_cast<size_t>(model.points()));
    for (int i = 0; i < model.points(); ++i) {
        int j = model.point_joint[i];
        ad::Var local = ad::Var::constant(model.point_local.row(i));
        prows.push_back(ad::add(pos[j], ad::matmul(local, rt[j])));
    }
    return {ad::concat_rows(jrows), ad::concat_rows(prows)};
}

// ---- articulated objects ----

struct ObjectPart {
    Eigen::MatrixXd points;  // V x 3, object canonical frame
};

struct ArticulatedObjectModel {
    std::string name;
    ObjectPart base;    // part 1: transformed by the global pose only
    ObjectPart moving;  // part 2: additionally rotated about the joint
    Vec3 axis = Vec3(0, 0, 1);
    Vec3 pivot = Vec3::Zero();
    double gamma_min = 0.0;
    double gamma_max = 0.0;

    void validate() const {
        if (base.points.rows() == 0 || moving.points.rows() == 0)
            throw EmptyGeometry("object parts must be non-empty");
        if (base.points.cols() != 3 || moving.points.cols() != 3)
            throw InvalidGeometry("part points must be x3");
        if (std::abs(axis.norm() - 1.0) > 1e-6)
            throw InvalidGeometry("joint axis must have unit norm");
        if (!(gamma_min <= gamma_max)) throw InvalidGeometry("joint limits inverted");
        if (!base.points.allFinite() || !moving.points.allFinite() || !axis.allFinite() ||
            !pivot.allFinite())
            throw InvalidGeometry("object model must be finite");
    }

    bool rigid() const { return gamma_min == 0.0 && gamma_max == 0.0; }
};

struct PartTransform {
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return R * p + t; }
    Vec3 to_local(const Vec3& p) const { return R.transpose() * (p - t); }
};

inline std::pair<PartTransform, PartTransform> object_part_transforms(
    const ArticulatedObjectModel& model, const ObjectState& state) {
    model.validate();
    state.validate();
    const double g = state.joint_angle;
    if (g < model.gamma_min - 1e-9 || g > model.gamma_max + 1e-9)
        throw JointLimitViolation("joint angle " + std::to_string(g) + " outside [" +
                                  std::to_string(model.gamma_min) + ", " +
                                  std::to_string(model.gamma_max) + "]");
    Mat3 R_o = rot6d_to_matrix(state.rot);
    Mat3 R_g = Eigen::AngleAxisd(g, model.axis).toRotationMatrix();
    PartTransform base{R_o, state.trans};
    // moving part: rotate about the pivot in the object frame, then the
    // global transform: p -> R_o (R_g (p - pivot) + pivot) + t
    PartTransform moving;
    moving.R = R_o * R_g;
    moving.t = state.trans + R_o * (model.pivot - R_g * model.pivot);
    return {base, moving};
}

// World-space point cloud: base part rows first, then the moving part.
inline Eigen::MatrixXd articulate_object(const ArticulatedObjectModel& model,
                                         const ObjectState& state) {
    auto [tb, tm] = object_part_transforms(model, state);
    Eigen::MatrixXd out(model.base.points.rows() + model.moving.points.rows(), 3);
    for (Eigen::Index i = 0; i < model.base.points.rows(); ++i)
        out.row(i) = tb.apply(model.base.points.row(i).transpose()).transpose();
    for (Eigen::Index i = 0; i < model.moving.points.rows(); ++i)
        out.row(model.base.points.rows() + i) =
            tm.apply(model.moving.points.row(i).transpose()).transpose();
    return out;
}

// ---- distance fields and masks ----

inline Eigen::VectorXd distance_field(const Eigen::MatrixXd& hand_points,
                                      const Eigen::MatrixXd& object_points) {
    if (hand_points.rows() == 0 || object_points.rows() == 0)
        throw EmptyGeometry("distance_field: empty point cloud");
    if (hand_points.cols() != 3 || object_points.cols() != 3)
        throw ShapeMismatch("distance_field: points must be x3");
    Eigen::VectorXd d(hand_points.rows());
    for (Eigen::Index i = 0; i < hand_points.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < object_points.rows(); ++j)
            best = std::min(best, (hand_points.row(i) - object_points.row(j)).norm());
        d(i) = best;
    }
    return d;
}

// mask(v) = 1 iff D*(v) > eps (strict), default eps 0
inline Eigen::VectorXd validity_mask(const Eigen::VectorXd& d_star, double eps = 0.0) {
    Eigen::VectorXd m(d_star.size());
    for (Eigen::Index i = 0; i < d_star.size(); ++i) m(i) = d_star(i) > eps ? 1.0 : 0.0;
    return m;
}

inline Mat3 relative_rotation(const Mat3& R_hand, const Mat3& R_obj) {
    if (!is_rotation_matrix(R_hand)) throw InvalidRotationMatrix("R_hand is not a rotation");
    if (!is_rotation_matrix(R_obj)) throw InvalidRotationMatrix("R_obj is not a rotation");
    return R_obj.transpose() * R_hand;
}

// ---- analytic part proxies (for the metrics module) ----

struct PartBox {
    Vec3 center = Vec3::Zero();  // part-local
    Vec3 half = Vec3::Zero();
};

inline PartBox part_box(const ObjectPart& part) {
    if (part.points.rows() == 0) throw EmptyGeometry("part_box: empty part");
    Vec3 lo = part.points.colwise().minCoeff().transpose();
    Vec3 hi = part.points.colwise().maxCoeff().transpose();
    return {(lo + hi) / 2.0, (hi - lo) / 2.0};
}

// Depth of a world point inside a part's box proxy; 0 when outside.
inline double point_box_depth(const Vec3& world, const PartTransform& tf, const PartBox& box) {
    Vec3 local = tf.to_local(world) - box.center;
    double depth = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) {
        double margin = box.half(i) - std::abs(local(i));
        if (margin <= 0.0) return 0.0;
        depth = std::min(depth, margin);
    }
    return depth;
}

// ---- object asset text format ----
//
//   manidiff-object v1
//   name <token>
//   axis <x> <y> <z>
//   pivot <x> <y> <z>
//   limits <min> <max>
//   part base <count>
//   <x> <y> <z>          (count rows)
//   part moving <count>
//   <x> <y> <z>          (count rows)

inline void save_object_asset(const std::string& path, const ArticulatedObjectModel& model) {
    model.validate();
    std::ofstream out(path);
    if (!out) throw FileNotFound("cannot open for writing: " + path);
    out.precision(17);
    out << "manidiff-object v1\n";
    out << "name " << (model.name.empty() ? "unnamed" : model.name) << "\n";
    out << "axis " << model.axis(0) << ' ' << model.axis(1) << ' ' << model.axis(2) << "\n";
    out << "pivot " << model.pivot(0) << ' ' << model.pivot(1) << ' ' << model.pivot(2) << "\n";
    out << "limits " << model.gamma_min << ' ' << model.gamma_max << "\n";
    for (int which = 0; which < 2; ++which) {
        const ObjectPart& p = which == 0 ? model.base : model.moving;
        out << "part " << (which == 0 ? "base" : "moving") << ' ' << p.points.rows() << "\n";
        for (Eigen::Index i = 0; i < p.points.rows(); ++i)
            out << p.points(i, 0) << ' ' << p.points(i, 1) << ' ' << p.points(i, 2) << "\n";
    }
}

inline ArticulatedObjectModel load_object_asset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound("cannot open: " + path);
    std::string header;
    std::getline(in, header);
    if (header != "manidiff-object v1") throw ParseError("bad object asset header in " + path);
    ArticulatedObjectModel model;
    auto expect_key = [&](const std::string& key) {
        std::string k;
        if (!(in >> k) || k != key) throw ParseError("expected '" + key + "' in " + path);
    };
    expect_key("name");
    if (!(in >> model.name)) throw ParseError("missing name in " + path);
    expect_key("axis");
    if (!(in >> model.axis(0) >> model.axis(1) >> model.axis(2)))
        throw ParseError("bad axis in " + path);
    expect_key("pivot");
    if (!(in >> model.pivot(0) >> model.pivot(1) >> model.pivot(2)))
        throw ParseError("bad pivot in " + path);
    expect_key("limits");
    if (!(in >> model.gamma_min >> model.gamma_max)) throw ParseError("bad limits in " + path);
    for (int which = 0; which < 2; ++which) {
        expect_key("part");
        std::string label;
        long count = 0;
        if (!(in >> label >> count) || count < 0 || count > (1 << 20))
            throw ParseError("bad part header in " + path);
        ObjectPart& p = label == "base" ? model.base
                        : label == "moving"
                            ? model.moving
                            : throw ParseError("unknown part label '" + label + "' in " + path);
        p.points.resize(count, 3);
        for (long i = 0; i < count; ++i)
            if (!(in >> p.points(i, 0) >> p.points(i, 1) >> p.points(i, 2)))
                throw ParseError("truncated part points in " + path);
    }
    model.validate();
    return model;
}

}  // namespace manidiff
