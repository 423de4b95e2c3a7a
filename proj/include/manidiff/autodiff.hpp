#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "manidiff/errors.hpp"

// Tape-based reverse-mode autodiff over Eigen matrices. Values are
// MatrixXd; scalars are 1x1 matrices. Nodes carry a creation index and
// parents are always created before children, so backward just visits the
// reachable subgraph in decreasing index order — no explicit topo sort.

namespace manidiff::ad {

using Mat = Eigen::MatrixXd;

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Mat value;
    Mat grad;  // allocated on first accumulation
    bool requires_grad = false;
    uint64_t index = 0;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward;  // reads this->grad, pushes into parents
    Mat* external_grad = nullptr;         // leaves: where the gradient lands

    void accumulate(const Mat& g) {
        if (grad.size() == 0)
            grad = g;
        else
            grad += g;
    }
};

namespace detail {
inline uint64_t& node_counter() {
    thread_local uint64_t c = 0;
    return c;
}
inline bool& grad_flag() {
    thread_local bool e = true;
    return e;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_flag(); }

// Disables graph construction in scope; forward values are still computed.
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_flag()) { detail::grad_flag() = false; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
    ~NoGradGuard() { detail::grad_flag() = prev; }
};

class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : node_(std::move(n)) {}

    static Var constant(Mat m) {
        auto n = std::make_shared<Node>();
        n->value = std::move(m);
        n->index = ++detail::node_counter();
        return Var(n);
    }

    static Var scalar(double v) { return constant(Mat::Constant(1, 1, v)); }

    bool valid() const { return node_ != nullptr; }
    const Mat& value() const { return node_->value; }
    const Mat& grad() const { return node_->grad; }
    double item() const {
        if (node_->value.size() != 1) throw ShapeMismatch("item() requires a 1x1 value");
        return node_->value(0, 0);
    }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

// Leaf wrapping an external parameter; backward() adds into *grad_sink.
inline Var leaf(const Mat& value, Mat* grad_sink) {
    auto n = std::make_shared<Node>();
    n->value = value;
    n->index = ++detail::node_counter();
    if (detail::grad_flag() && grad_sink != nullptr) {
        n->requires_grad = true;
        n->external_grad = grad_sink;
    }
    return Var(n);
}

inline Var make_op(Mat value, std::vector<Var> parents, std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->index = ++detail::node_counter();
    if (detail::grad_flag()) {
        bool any = false;
        for (const auto& p : parents)
            if (p.node()->requires_grad) any = true;
        if (any) {
            n->requires_grad = true;
            n->parents.reserve(parents.size());
            for (auto& p : parents) n->parents.push_back(p.node());
            n->backward = std::move(backward);
        }
    }
    return Var(n);
}

// Reverse accumulation from a scalar loss. Gradients land in the external
// sinks registered via leaf().
inline void backward(const Var& loss) {
    Node* root = loss.node().get();
    if (root->value.size() != 1) throw ShapeMismatch("backward() requires a scalar loss");
    if (!root->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root};
    seen.insert(root);
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents) {
            Node* pp = p.get();
            if (pp->requires_grad && seen.insert(pp).second) stack.push_back(pp);
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->index > b->index; });

    root->grad = Mat::Constant(1, 1, 1.0);
    for (Node* n : order) {
        if (n->grad.size() == 0) continue;  // no gradient reached this branch
        if (n->backward) n->backward(*n);
        if (n->external_grad != nullptr) *n->external_grad += n->grad;
    }
}

namespace detail {
inline void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeMismatch(std::string(op) + ": operand shapes differ");
}
inline void push(Node& n, size_t i, const Mat& g) {
    if (n.parents[i]->requires_grad) n.parents[i]->accumulate(g);
}
}  // namespace detail

// ---- arithmetic ----

inline Var add(const Var& a, const Var& b) {
    detail::check_same_shape(a, b, "add");
    return make_op(a.value() + b.value(), {a, b}, [](Node& n) {
        detail::push(n, 0, n.grad);
        detail::push(n, 1, n.grad);
    });
}

inline Var sub(const Var& a, const Var& b) {
    detail::check_same_shape(a, b, "sub");
    return make_op(a.value() - b.value(), {a, b}, [](Node& n) {
        detail::push(n, 0, n.grad);
        detail::push(n, 1, -n.grad);
    });
}

inline Var mul(const Var& a, const Var& b) {  // elementwise
    detail::check_same_shape(a, b, "mul");
    return make_op(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
        detail::push(n, 0, n.grad.cwiseProduct(n.parents[1]->value));
        detail::push(n, 1, n.grad.cwiseProduct(n.parents[0]->value));
    });
}

inline Var affine_const(const Var& a, double alpha, double beta) {
    return make_op(alpha * a.value().array() + beta, {a}, [alpha](Node& n) {
        detail::push(n, 0, alpha * n.grad);
    });
}

inline Var scale(const Var& a, double s) { return affine_const(a, s, 0.0); }
inline Var neg(const Var& a) { return affine_const(a, -1.0, 0.0); }

inline Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
    return make_op(a.value() * b.value(), {a, b}, [](Node& n) {
        detail::push(n, 0, n.grad * n.parents[1]->value.transpose());
        detail::push(n, 1, n.parents[0]->value.transpose() * n.grad);
    });
}

inline Var transpose(const Var& a) {
    return make_op(a.value().transpose(), {a}, [](Node& n) {
        detail::push(n, 0, n.grad.transpose());
    });
}

// m + row broadcast over every row of m
inline Var add_rowvec(const Var& m, const Var& r) {
    if (r.rows() != 1 || r.cols() != m.cols()) throw ShapeMismatch("add_rowvec: need 1xC row");
    Mat v = m.value();
    v.rowwise() += Eigen::RowVectorXd(r.value().row(0));
    return make_op(std::move(v), {m, r}, [](Node& n) {
        detail::push(n, 0, n.grad);
        detail::push(n, 1, n.grad.colwise().sum());
    });
}

// ---- elementwise nonlinearities ----

inline Var sigmoid(const Var& a) {
    Mat s = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    return make_op(s, {a}, [s](Node& n) {
        detail::push(n, 0, (n.grad.array() * s.array() * (1.0 - s.array())).matrix());
    });
}

inline Var tanh_(const Var& a) {
    Mat t = a.value().array().tanh().matrix();
    return make_op(t, {a}, [t](Node& n) {
        detail::push(n, 0, (n.grad.array() * (1.0 - t.array().square())).matrix());
    });
}

inline Var softplus(const Var& a) {
    Eigen::ArrayXXd x = a.value().array();
    Eigen::ArrayXXd xc = x.min(30.0);
    Mat v = (x > 30.0).select(x, (1.0 + xc.exp()).log()).matrix();
    return make_op(v, {a}, [](Node& n) {
        Eigen::ArrayXXd x = n.parents[0]->value.array();
        detail::push(n, 0, (n.grad.array() / (1.0 + (-x).exp())).matrix());
    });
}

inline Var exp_(const Var& a) {
    Mat e = a.value().array().exp().matrix();
    return make_op(e, {a}, [e](Node& n) {
        detail::push(n, 0, n.grad.cwiseProduct(e));
    });
}

inline Var log_(const Var& a) {
    return make_op(a.value().array().log().matrix(), {a}, [](Node& n) {
        detail::push(n, 0, n.grad.cwiseQuotient(n.parents[0]->value));
    });
}

inline Var silu(const Var& a) {
    Eigen::ArrayXXd x = a.value().array();
    Eigen::ArrayXXd s = 1.0 / (1.0 + (-x).exp());
    Mat v = (x * s).matrix();
    Mat d = (s * (1.0 + x * (1.0 - s))).matrix();
    return make_op(v, {a}, [d](Node& n) {
        detail::push(n, 0, n.grad.cwiseProduct(d));
    });
}

inline Var sqrt_(const Var& a) {
    Mat s = a.value().array().sqrt().matrix();
    return make_op(s, {a}, [s](Node& n) {
        detail::push(n, 0, (n.grad.array() * 0.5 / s.array()).matrix());
    });
}

// 1x1 reciprocal
inline Var sinv(const Var& a) {
    if (a.value().size() != 1) throw ShapeMismatch("sinv: expects 1x1");
    double x = a.value()(0, 0);
    return make_op(Mat::Constant(1, 1, 1.0 / x), {a}, [x](Node& n) {
        detail::push(n, 0, Mat::Constant(1, 1, -n.grad(0, 0) / (x * x)));
    });
}

// matrix scaled by a 1x1 variable
inline Var smul(const Var& m, const Var& s) {
    if (s.value().size() != 1) throw ShapeMismatch("smul: scale must be 1x1");
    double sv = s.value()(0, 0);
    return make_op(m.value() * sv, {m, s}, [sv](Node& n) {
        detail::push(n, 0, n.grad * sv);
        detail::push(n, 1, Mat::Constant(1, 1, n.grad.cwiseProduct(n.parents[0]->value).sum()));
    });
}

// ---- reductions ----

inline Var sum(const Var& a) {
    return make_op(Mat::Constant(1, 1, a.value().sum()), {a}, [](Node& n) {
        detail::push(n, 0, Mat::Constant(n.parents[0]->value.rows(), n.parents[0]->value.cols(),
                                         n.grad(0, 0)));
    });
}

inline Var mean(const Var& a) {
    double inv = 1.0 / static_cast<double>(a.value().size());
    return make_op(Mat::Constant(1, 1, a.value().mean()), {a}, [inv](Node& n) {
        detail::push(n, 0, Mat::Constant(n.parents[0]->value.rows(), n.parents[0]->value.cols(),
                                         n.grad(0, 0) * inv));
    });
}

inline Var sum_sq(const Var& a) {
    return make_op(Mat::Constant(1, 1, a.value().squaredNorm()), {a}, [](Node& n) {
        detail::push(n, 0, 2.0 * n.grad(0, 0) * n.parents[0]->value);
    });
}

inline Var dot(const Var& a, const Var& b) {
    detail::check_same_shape(a, b, "dot");
    return make_op(Mat::Constant(1, 1, a.value().cwiseProduct(b.value()).sum()), {a, b},
                   [](Node& n) {
                       detail::push(n, 0, n.grad(0, 0) * n.parents[1]->value);
                       detail::push(n, 1, n.grad(0, 0) * n.parents[0]->value);
                   });
}

// ---- shape ops ----

inline Var block(const Var& a, Eigen::Index r0, Eigen::Index c0, Eigen::Index nr,
                 Eigen::Index nc) {
    if (r0 < 0 || c0 < 0 || r0 + nr > a.rows() || c0 + nc > a.cols())
        throw ShapeMismatch("block: out of range");
    return make_op(a.value().block(r0, c0, nr, nc), {a}, [r0, c0, nr, nc](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Mat g = Mat::Zero(n.parents[0]->value.rows(), n.parents[0]->value.cols());
        g.block(r0, c0, nr, nc) = n.grad;
        n.parents[0]->accumulate(g);
    });
}

inline Var slice_rows(const Var& a, Eigen::Index r0, Eigen::Index nr) {
    return block(a, r0, 0, nr, a.cols());
}

inline Var slice_cols(const Var& a, Eigen::Index c0, Eigen::Index nc) {
    return block(a, 0, c0, a.rows(), nc);
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows: no parts");
    Eigen::Index cols = parts[0].cols(), rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw ShapeMismatch("concat_rows: column mismatch");
        rows += p.rows();
    }
    Mat v(rows, cols);
    Eigen::Index r = 0;
    std::vector<Eigen::Index> sizes;
    for (const auto& p : parts) {
        v.block(r, 0, p.rows(), cols) = p.value();
        sizes.push_back(p.rows());
        r += p.rows();
    }
    return make_op(std::move(v), parts, [sizes](Node& n) {
        Eigen::Index r = 0;
        for (size_t i = 0; i < sizes.size(); ++i) {
            detail::push(n, i, n.grad.block(r, 0, sizes[i], n.grad.cols()));
            r += sizes[i];
        }
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols: no parts");
    Eigen::Index rows = parts[0].rows(), cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw ShapeMismatch("concat_cols: row mismatch");
        cols += p.cols();
    }
    Mat v(rows, cols);
    Eigen::Index c = 0;
    std::vector<Eigen::Index> sizes;
    for (const auto& p : parts) {
        v.block(0, c, rows, p.cols()) = p.value();
        sizes.push_back(p.cols());
        c += p.cols();
    }
    return make_op(std::move(v), parts, [sizes](Node& n) {
        Eigen::Index c = 0;
        for (size_t i = 0; i < sizes.size(); ++i) {
            detail::push(n, i, n.grad.block(0, c, n.grad.rows(), sizes[i]));
            c += sizes[i];
        }
    });
}

inline Var flip_rows(const Var& a) {
    return make_op(a.value().colwise().reverse(), {a}, [](Node& n) {
        detail::push(n, 0, n.grad.colwise().reverse());
    });
}

// row-major reinterpretation to a new shape
inline Var reshape(const Var& a, Eigen::Index nr, Eigen::Index nc) {
    if (nr * nc != a.rows() * a.cols()) throw ShapeMismatch("reshape: element count differs");
    Eigen::Index ac = a.cols();
    Mat v(nr, nc);
    for (Eigen::Index i = 0; i < nr * nc; ++i) v(i / nc, i % nc) = a.value()(i / ac, i % ac);
    return make_op(std::move(v), {a}, [nr, nc, ac](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Mat g(n.parents[0]->value.rows(), ac);
        for (Eigen::Index i = 0; i < nr * nc; ++i) g(i / ac, i % ac) = n.grad(i / nc, i % nc);
        n.parents[0]->accumulate(g);
    });
}

// rows repeated in place: [r0,r0,...,r1,r1,...] with k copies each
inline Var repeat_interleave_rows(const Var& a, Eigen::Index k) {
    Eigen::Index R = a.rows(), C = a.cols();
    Mat v(R * k, C);
    for (Eigen::Index i = 0; i < R; ++i)
        for (Eigen::Index j = 0; j < k; ++j) v.row(i * k + j) = a.value().row(i);
    return make_op(std::move(v), {a}, [R, k](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Mat g = Mat::Zero(R, n.grad.cols());
        for (Eigen::Index i = 0; i < R; ++i)
            for (Eigen::Index j = 0; j < k; ++j) g.row(i) += n.grad.row(i * k + j);
        n.parents[0]->accumulate(g);
    });
}

// whole block stacked n times: [a; a; ...]
inline Var tile_rows(const Var& a, Eigen::Index n_copies) {
    Eigen::Index R = a.rows(), C = a.cols();
    Mat v(R * n_copies, C);
    for (Eigen::Index i = 0; i < n_copies; ++i) v.block(i * R, 0, R, C) = a.value();
    return make_op(std::move(v), {a}, [R, n_copies](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Mat g = Mat::Zero(R, n.grad.cols());
        for (Eigen::Index i = 0; i < n_copies; ++i) g += n.grad.block(i * R, 0, R, n.grad.cols());
        n.parents[0]->accumulate(g);
    });
}

// ---- structured ops ----

inline Var row_softmax(const Var& a) {
    Mat v = a.value();
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
        Eigen::ArrayXd row = v.row(r).array();
        row -= row.maxCoeff();
        Eigen::ArrayXd e = row.exp();
        v.row(r) = (e / e.sum()).matrix();
    }
    return make_op(v, {a}, [v](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Mat g(v.rows(), v.cols());
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
            double gy = n.grad.row(r).cwiseProduct(v.row(r)).sum();
            g.row(r) = v.row(r).cwiseProduct(n.grad.row(r) - Eigen::RowVectorXd::Constant(v.cols(), gy).eval());
        }
        n.parents[0]->accumulate(g);
    });
}

// Row-wise layer normalization with learned gain/bias (1xC each).
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
    if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 ||
        bias.cols() != x.cols())
        throw ShapeMismatch("layer_norm: gain/bias must be 1xC");
    Eigen::Index R = x.rows(), C = x.cols();
    Mat xhat(R, C);
    Eigen::VectorXd inv_std(R);
    for (Eigen::Index r = 0; r < R; ++r) {
        double mu = x.value().row(r).mean();
        double var = (x.value().row(r).array() - mu).square().mean();
        double is = 1.0 / std::sqrt(var + eps);
        inv_std(r) = is;
        xhat.row(r) = ((x.value().row(r).array() - mu) * is).matrix();
    }
    Mat y = xhat;
    for (Eigen::Index r = 0; r < R; ++r)
        y.row(r) = y.row(r).cwiseProduct(gain.value().row(0)) + bias.value().row(0);
    return make_op(std::move(y), {x, gain, bias}, [xhat, inv_std](Node& n) {
        const Mat& gain_v = n.parents[1]->value;
        Eigen::Index R = xhat.rows(), C = xhat.cols();
        if (n.parents[1]->requires_grad) {
            Mat dg = Mat::Zero(1, C);
            for (Eigen::Index r = 0; r < R; ++r) dg += n.grad.row(r).cwiseProduct(xhat.row(r));
            n.parents[1]->accumulate(dg);
        }
        if (n.parents[2]->requires_grad) n.parents[2]->accumulate(n.grad.colwise().sum());
        if (n.parents[0]->requires_grad) {
            Mat dx(R, C);
            for (Eigen::Index r = 0; r < R; ++r) {
                Eigen::RowVectorXd dxh = n.grad.row(r).cwiseProduct(gain_v.row(0));
                double m1 = dxh.mean();
                double m2 = dxh.cwiseProduct(xhat.row(r)).mean();
                dx.row(r) =
                    inv_std(r) * (dxh.array() - m1 - xhat.row(r).array() * m2).matrix();
            }
            n.parents[0]->accumulate(dx);
        }
    });
}

// Cross product of 1x3 rows.
inline Var cross3(const Var& a, const Var& b) {
    if (a.rows() != 1 || a.cols() != 3 || b.rows() != 1 || b.cols() != 3)
        throw ShapeMismatch("cross3: expects 1x3 rows");
    Eigen::Vector3d av = a.value().row(0), bv = b.value().row(0);
    Mat v = av.cross(bv).transpose();
    return make_op(std::move(v), {a, b}, [](Node& n) {
        Eigen::Vector3d av = n.parents[0]->value.row(0);
        Eigen::Vector3d bv = n.parents[1]->value.row(0);
        Eigen::Vector3d g = n.grad.row(0);
        detail::push(n, 0, Mat(bv.cross(g).transpose()));
        detail::push(n, 1, Mat(g.cross(av).transpose()));
    });
}

// Per-row distance from points (Vx3) to the nearest point of a fixed cloud
// (Px3); returns Vx1. The nearest neighbour chosen on the forward pass is
// frozen for the backward pass.
inline Var dist_to_cloud(const Var& pts, const Mat& cloud) {
    if (pts.cols() != 3 || cloud.cols() != 3) throw ShapeMismatch("dist_to_cloud: expects x3");
    if (cloud.rows() == 0) throw EmptyGeometry("dist_to_cloud: empty cloud");
    Eigen::Index V = pts.rows();
    Mat d(V, 1);
    std::vector<Eigen::Index> nearest(static_cast<size_t>(V));
    for (Eigen::Index v = 0; v < V; ++v) {
        double best = std::numeric_limits<double>::infinity();
        Eigen::Index bi = 0;
        for (Eigen::Index p = 0; p < cloud.rows(); ++p) {
            double dd = (pts.value().row(v) - cloud.row(p)).squaredNorm();
            if (dd < best) {
                best = dd;
                bi = p;
            }
        }
        d(v, 0) = std::sqrt(best);
        nearest[static_cast<size_t>(v)] = bi;
    }
    Mat cl = cloud;
    return make_op(std::move(d), {pts}, [cl, nearest](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const Mat& p = n.parents[0]->value;
        Mat g = Mat::Zero(p.rows(), 3);
        for (Eigen::Index v = 0; v < p.rows(); ++v) {
            double dist = n.value(v, 0);
            if (dist < 1e-12) continue;
            g.row(v) = n.grad(v, 0) * (p.row(v) - cl.row(nearest[static_cast<size_t>(v)])) / dist;
        }
        n.parents[0]->accumulate(g);
    });
}

// Selective scan: per-channel scalar decay, shared input/output mixing.
//   h_t(c,s) = a_t(c) h_{t-1}(c,s) + x_t(c) B_t(s)
//   y_t(c)   = sum_s C_t(s) h_t(c,s)
// A: Lxd (decay in (0,1)), B: LxS, C: LxS, X: Lxd. Returns Lxd.
inline Var ssm_scan(const Var& A, const Var& B, const Var& C, const Var& X) {
    Eigen::Index L = X.rows(), d = X.cols(), S = B.cols();
    if (A.rows() != L || A.cols() != d || B.rows() != L || C.rows() != L || C.cols() != S)
        throw ShapeMismatch("ssm_scan: inconsistent operand shapes");
    auto Hs = std::make_shared<std::vector<Mat>>();
    Hs->reserve(static_cast<size_t>(L));
    Mat H = Mat::Zero(d, S);
    Mat Y(L, d);
    for (Eigen::Index t = 0; t < L; ++t) {
        H = (H.array().colwise() * A.value().row(t).transpose().array()).matrix() +
            X.value().row(t).transpose() * B.value().row(t);
        Hs->push_back(H);
        Y.row(t) = (H * C.value().row(t).transpose()).transpose();
    }
    return make_op(std::move(Y), {A, B, C, X}, [Hs, L, d, S](Node& n) {
        const Mat& Av = n.parents[0]->value;
        const Mat& Bv = n.parents[1]->value;
        const Mat& Cv = n.parents[2]->value;
        const Mat& Xv = n.parents[3]->value;
        Mat dA = Mat::Zero(L, d), dB = Mat::Zero(L, S), dC = Mat::Zero(L, S),
            dX = Mat::Zero(L, d);
        Mat G = Mat::Zero(d, S);  // dL/dh_t while stepping backwards
        for (Eigen::Index t = L - 1; t >= 0; --t) {
            const Mat& Ht = (*Hs)[static_cast<size_t>(t)];
            G += n.grad.row(t).transpose() * Cv.row(t);
            dC.row(t) = n.grad.row(t) * Ht;
            const Mat Hprev = (t == 0) ? Mat(Mat::Zero(d, S)) : (*Hs)[static_cast<size_t>(t - 1)];
            dA.row(t) = G.cwiseProduct(Hprev).rowwise().sum().transpose();
            dX.row(t) = (G * Bv.row(t).transpose()).transpose();
            dB.row(t) = Xv.row(t) * G;
            G = (G.array().colwise() * Av.row(t).transpose().array()).matrix();
        }
        detail::push(n, 0, dA);
        detail::push(n, 1, dB);
        detail::push(n, 2, dC);
        detail::push(n, 3, dX);
    });
}

// ---- small conveniences ----

inline Var mse(const Var& a, const Var& b) {  // mean over all elements
    Var d = sub(a, b);
    return scale(sum_sq(d), 1.0 / static_cast<double>(a.rows() * a.cols()));
}

inline Var norm2(const Var& a) { return sqrt_(sum_sq(a)); }

}  // namespace manidiff::ad
