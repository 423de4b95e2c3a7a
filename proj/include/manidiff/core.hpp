#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "manidiff/errors.hpp"

namespace manidiff {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using PoseBlock = Eigen::Matrix<double, 16, 6>;  // one global + 15 joint rotations

constexpr int kMaxFrames = 150;
constexpr int kHandJoints = 16;
constexpr int kFrameDim = 208;  // flattened per-frame layout, see flatten_frame

// First two columns of a rotation matrix, column-major: a continuous
// representation that decodes through Gram-Schmidt.
struct Rotation6D {
    std::array<double, 6> v{1, 0, 0, 0, 1, 0};

    static Rotation6D identity() { return Rotation6D{}; }

    Vec3 col0() const { return Vec3(v[0], v[1], v[2]); }
    Vec3 col1() const { return Vec3(v[3], v[4], v[5]); }
};

inline Mat3 rot6d_to_matrix(const Rotation6D& r) {
    const Vec3 a1 = r.col0(), a2 = r.col1();
    const double n1 = a1.norm(), n2 = a2.norm();
    if (!(std::isfinite(n1) && std::isfinite(n2)))
        throw DegenerateRotation("non-finite 6D rotation input");
    if (n1 < 1e-8 || n2 < 1e-8)
        throw DegenerateRotation("6D rotation column with near-zero norm");
    const double cosang = a1.dot(a2) / (n1 * n2);
    if (std::abs(cosang) > 1.0 - 1e-8)
        throw DegenerateRotation("6D rotation columns nearly parallel");
    const Vec3 b1 = a1 / n1;
    const Vec3 u = a2 - b1.dot(a2) * b1;
    const Vec3 b2 = u / u.norm();
    const Vec3 b3 = b1.cross(b2);
    Mat3 R;
    R.col(0) = b1;
    R.col(1) = b2;
    R.col(2) = b3;
    return R;
}

inline bool is_rotation_matrix(const Mat3& R, double tol = 1e-5) {
    if (!R.allFinite()) return false;
    const Mat3 err = R.transpose() * R - Mat3::Identity();
    return err.cwiseAbs().maxCoeff() <= tol && R.determinant() > 0.0;
}

inline Rotation6D matrix_to_rot6d(const Mat3& R) {
    if (!is_rotation_matrix(R))
        throw InvalidRotationMatrix("input is not orthonormal with det +1");
    Rotation6D r;
    for (int i = 0; i < 3; ++i) {
        r.v[i] = R(i, 0);
        r.v[3 + i] = R(i, 1);
    }
    return r;
}

enum class HandType { LeftOnly, RightOnly, Bimanual };

struct HandTypeFlag {
    std::array<double, 3> one_hot{0, 0, 1};  // {left-only, right-only, bimanual}

    static HandTypeFlag make(HandType t) {
        HandTypeFlag f;
        f.one_hot = {0, 0, 0};
        f.one_hot[static_cast<int>(t)] = 1;
        return f;
    }

    HandType type() const {
        validate();
        for (int i = 0; i < 3; ++i)
            if (one_hot[i] == 1.0) return static_cast<HandType>(i);
        throw InvalidHandType("unreachable");
    }

    bool left_active() const { return one_hot[0] == 1.0 || one_hot[2] == 1.0; }
    bool right_active() const { return one_hot[1] == 1.0 || one_hot[2] == 1.0; }

    void validate() const {
        int ones = 0;
        for (double x : one_hot) {
            if (x != 0.0 && x != 1.0) throw InvalidHandType("one-hot entries must be 0 or 1");
            if (x == 1.0) ++ones;
        }
        if (ones != 1) throw InvalidHandType("exactly one component must be set");
    }
};

inline const char* hand_type_name(HandType t) {
    switch (t) {
        case HandType::LeftOnly: return "left";
        case HandType::RightOnly: return "right";
        case HandType::Bimanual: return "bimanual";
    }
    return "?";
}

inline HandType hand_type_from_name(const std::string& s) {
    if (s == "left") return HandType::LeftOnly;
    if (s == "right") return HandType::RightOnly;
    if (s == "bimanual") return HandType::Bimanual;
    throw InvalidHandType("unknown hand type: " + s);
}

struct HandState {
    Vec3 trans_left = Vec3::Zero();
    Vec3 trans_right = Vec3::Zero();
    PoseBlock pose_left = identity_pose();
    PoseBlock pose_right = identity_pose();

    static PoseBlock identity_pose() {
        PoseBlock p;
        for (int j = 0; j < kHandJoints; ++j) {
            p(j, 0) = 1;
            p(j, 1) = 0;
            p(j, 2) = 0;
            p(j, 3) = 0;
            p(j, 4) = 1;
            p(j, 5) = 0;
        }
        return p;
    }

    void validate() const {
        if (!trans_left.allFinite() || !trans_right.allFinite())
            throw InvalidInput("hand translations must be finite");
        if (!pose_left.allFinite() || !pose_right.allFinite())
            throw InvalidInput("hand poses must be finite");
    }
};

struct ObjectState {
    Vec3 trans = Vec3::Zero();
    Rotation6D rot = Rotation6D::identity();
    double joint_angle = 0.0;

    void validate() const {
        if (!trans.allFinite() || !std::isfinite(joint_angle))
            throw InvalidInput("object state must be finite");
        for (double x : rot.v)
            if (!std::isfinite(x)) throw InvalidInput("object rotation must be finite");
    }
};

struct MotionSequence {
    std::vector<HandState> hands;
    std::vector<ObjectState> objects;

    int frames() const { return static_cast<int>(hands.size()); }

    void validate() const {
        if (hands.size() != objects.size())
            throw ShapeMismatch("hands and objects must have equal length");
        const int n = frames();
        if (n < 1 || n > kMaxFrames)
            throw InvalidLength("frame count must be in [1, 150], got " + std::to_string(n));
        for (const auto& h : hands) h.validate();
        for (const auto& o : objects) o.validate();
    }
};

// Canonical per-frame layout:
//   [trans_l(3), trans_r(3), pose_l(96 row-major), pose_r(96), O_alpha(3), O_beta(6), O_gamma(1)]
inline Eigen::VectorXd flatten_frame(const HandState& h, const ObjectState& o) {
    Eigen::VectorXd f(kFrameDim);
    int k = 0;
    for (int i = 0; i < 3; ++i) f(k++) = h.trans_left(i);
    for (int i = 0; i < 3; ++i) f(k++) = h.trans_right(i);
    for (int r = 0; r < kHandJoints; ++r)
        for (int c = 0; c < 6; ++c) f(k++) = h.pose_left(r, c);
    for (int r = 0; r < kHandJoints; ++r)
        for (int c = 0; c < 6; ++c) f(k++) = h.pose_right(r, c);
    for (int i = 0; i < 3; ++i) f(k++) = o.trans(i);
    for (int i = 0; i < 6; ++i) f(k++) = o.rot.v[i];
    f(k++) = o.joint_angle;
    return f;
}

inline void unflatten_frame(const Eigen::VectorXd& f, HandState& h, ObjectState& o) {
    if (f.size() != kFrameDim)
        throw ShapeMismatch("frame vector must have 208 entries");
    int k = 0;
    for (int i = 0; i < 3; ++i) h.trans_left(i) = f(k++);
    for (int i = 0; i < 3; ++i) h.trans_right(i) = f(k++);
    for (int r = 0; r < kHandJoints; ++r)
        for (int c = 0; c < 6; ++c) h.pose_left(r, c) = f(k++);
    for (int r = 0; r < kHandJoints; ++r)
        for (int c = 0; c < 6; ++c) h.pose_right(r, c) = f(k++);
    for (int i = 0; i < 3; ++i) o.trans(i) = f(k++);
    for (int i = 0; i < 6; ++i) o.rot.v[i] = f(k++);
    o.joint_angle = f(k++);
}

inline Eigen::MatrixXd flatten_sequence(const MotionSequence& seq) {
    seq.validate();
    Eigen::MatrixXd out(seq.frames(), kFrameDim);
    for (int i = 0; i < seq.frames(); ++i)
        out.row(i) = flatten_frame(seq.hands[i], seq.objects[i]).transpose();
    return out;
}

inline MotionSequence unflatten_sequence(const Eigen::MatrixXd& m) {
    if (m.cols() != kFrameDim)
        throw ShapeMismatch("sequence matrix must have 208 columns");
    MotionSequence seq;
    seq.hands.resize(m.rows());
    seq.objects.resize(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        unflatten_frame(m.row(i).transpose(), seq.hands[i], seq.objects[i]);
    return seq;
}

}  // namespace manidiff
