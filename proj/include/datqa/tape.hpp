#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "datqa/array.hpp"
#include "datqa/errors.hpp"

namespace datqa {

// Reverse-mode autodiff over dense double arrays.
//
// A Tape is an append-only sequence of nodes. Node ids are strictly
// increasing, every input id is smaller than its consumer's id, and the
// backward pass walks ids in decreasing order, so a node's gradient is fully
// accumulated before it is propagated to its inputs. Tapes are
// single-threaded; distinct tapes share no mutable state.
//
// Gnll and SoftmaxCe are fused loss primitives with hand-written adjoints
// instead of compositions through matrix-inverse ops.

enum class OpKind : uint8_t {
    Leaf,
    MatMul,    // [m x k]*[k x n] -> [m x n], or [m x k]*[k] -> [m]
    Add,       // elementwise, same shape (bias addition)
    Relu,
    Concat,    // rank-1 ++ rank-1
    Slice,     // rank-1 window [offset, offset+len)
    Scale,     // multiply by a compile-time constant scalar
    Mask,      // elementwise multiply by a fixed array (dropout masks)
    Sum,       // reduce all entries to a scalar
    ExpDiag,   // packed lower triangle: exp() the diagonal slots, clamped
    Grl,       // identity forward, -scale * grad backward
    Gnll,      // multivariate Gaussian NLL from (mean, packed Cholesky)
    SoftmaxCe  // cross-entropy of softmax(logits) against an integer label
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Leaf: return "leaf";
        case OpKind::MatMul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::Relu: return "relu";
        case OpKind::Concat: return "concat";
        case OpKind::Slice: return "slice";
        case OpKind::Scale: return "scale";
        case OpKind::Mask: return "mask";
        case OpKind::Sum: return "sum";
        case OpKind::ExpDiag: return "exp-diagonal";
        case OpKind::Grl: return "grl";
        case OpKind::Gnll: return "gnll";
        case OpKind::SoftmaxCe: return "softmax-ce";
    }
    return "?";
}

// Raw-log clamp for the Cholesky diagonal: exp(x) stays in [1e-4, 1e4].
inline constexpr double kCholLogLo = -9.210340371976182;  // ln 1e-4
inline constexpr double kCholLogHi = 9.210340371976182;   // ln 1e4
inline constexpr double kCholDiagFloor = 1e-8;
inline constexpr double kLn2Pi = 1.8378770664093454836;

namespace kernels {

// Shared by tape forwards and the tape-free inference path so both produce
// bit-identical values.

inline Array matmul(const Array& a, const Array& b) {
    if (a.rank() != 2) throw ShapeError("matmul: left operand must be rank 2, got " + shape_str(a.shape));
    if (b.rank() == 2) {
        if (a.shape[1] != b.shape[0])
            throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape) + " vs " + shape_str(b.shape));
        const size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
        Array c({m, n});
        for (size_t i = 0; i < m; ++i)
            for (size_t l = 0; l < k; ++l) {
                const double av = a.data[i * k + l];
                const double* brow = &b.data[l * n];
                double* crow = &c.data[i * n];
                for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        return c;
    }
    if (b.rank() == 1) {
        if (a.shape[1] != b.shape[0])
            throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape) + " vs " + shape_str(b.shape));
        const size_t m = a.shape[0], k = a.shape[1];
        Array c({m});
        for (size_t i = 0; i < m; ++i) {
            const double* arow = &a.data[i * k];
            double acc = 0.0;
            for (size_t l = 0; l < k; ++l) acc += arow[l] * b.data[l];
            c.data[i] = acc;
        }
        return c;
    }
    throw ShapeError("matmul: right operand must be rank 1 or 2, got " + shape_str(b.shape));
}

inline Array add(const Array& a, const Array& b) {
    if (!a.same_shape(b))
        throw ShapeError("add: shape mismatch, " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Array c = a;
    for (size_t i = 0; i < c.numel(); ++i) c.data[i] += b.data[i];
    return c;
}

inline Array relu(const Array& a) {
    Array c = a;
    for (double& v : c.data) v = v > 0.0 ? v : 0.0;
    return c;
}

inline Array exp_diag(const Array& packed, size_t n) {
    if (packed.rank() != 1 || packed.numel() != tri_numel(n))
        throw ShapeError("exp-diagonal: expected packed triangle of length " +
                         std::to_string(tri_numel(n)) + ", got " + shape_str(packed.shape));
    Array c = packed;
    for (size_t i = 0; i < n; ++i) {
        size_t idx = tri_index(i, i);
        double raw = c.data[idx];
        if (raw < kCholLogLo) raw = kCholLogLo;
        if (raw > kCholLogHi) raw = kCholLogHi;
        c.data[idx] = std::exp(raw);
    }
    return c;
}

}  // namespace kernels

struct Node {
    OpKind kind = OpKind::Leaf;
    std::array<int, 2> in{-1, -1};
    Array value;
    double scalar = 0.0;  // Scale factor, Grl scale
    size_t arg0 = 0;      // Slice offset, ExpDiag dim, SoftmaxCe label, Gnll aspect count
    size_t arg1 = 0;      // Slice length
    Array saved;          // Mask array, Gnll alpha, SoftmaxCe probabilities
};

class Tape {
  public:
    size_t size() const { return nodes_.size(); }
    const Array& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Array& grad(int id) const { return grads_[static_cast<size_t>(id)]; }

    int leaf(Array v) {
        Node n;
        n.kind = OpKind::Leaf;
        n.value = std::move(v);
        return push(std::move(n), /*check_finite=*/true);
    }

    int matmul(int a, int b) {
        Node n;
        n.kind = OpKind::MatMul;
        n.in = {a, b};
        n.value = kernels::matmul(value(a), value(b));
        return push(std::move(n));
    }

    int add(int a, int b) {
        Node n;
        n.kind = OpKind::Add;
        n.in = {a, b};
        n.value = kernels::add(value(a), value(b));
        return push(std::move(n));
    }

    int relu(int a) {
        Node n;
        n.kind = OpKind::Relu;
        n.in = {a, -1};
        n.value = kernels::relu(value(a));
        return push(std::move(n));
    }

    int concat(int a, int b) {
        const Array& va = value(a);
        const Array& vb = value(b);
        if (va.rank() != 1 || vb.rank() != 1)
            throw ShapeError("concat: rank-1 inputs required, got " + shape_str(va.shape) + " and " +
                             shape_str(vb.shape));
        Node n;
        n.kind = OpKind::Concat;
        n.in = {a, b};
        n.value = Array({va.numel() + vb.numel()});
        std::copy(va.data.begin(), va.data.end(), n.value.data.begin());
        std::copy(vb.data.begin(), vb.data.end(), n.value.data.begin() + static_cast<long>(va.numel()));
        return push(std::move(n));
    }

    int slice(int a, size_t offset, size_t len) {
        const Array& va = value(a);
        if (va.rank() != 1) throw ShapeError("slice: rank-1 input required, got " + shape_str(va.shape));
        if (offset + len > va.numel())
            throw ShapeError("slice: window [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
                             ") exceeds length " + std::to_string(va.numel()));
        Node n;
        n.kind = OpKind::Slice;
        n.in = {a, -1};
        n.arg0 = offset;
        n.arg1 = len;
        n.value = Array({len});
        std::copy(va.data.begin() + static_cast<long>(offset), va.data.begin() + static_cast<long>(offset + len),
                  n.value.data.begin());
        return push(std::move(n));
    }

    int scale(int a, double c) {
        Node n;
        n.kind = OpKind::Scale;
        n.in = {a, -1};
        n.scalar = c;
        n.value = value(a);
        for (double& v : n.value.data) v *= c;
        return push(std::move(n));
    }

    int mask(int a, Array m) {
        const Array& va = value(a);
        if (!va.same_shape(m))
            throw ShapeError("mask: shape mismatch, " + shape_str(va.shape) + " vs " + shape_str(m.shape));
        Node n;
        n.kind = OpKind::Mask;
        n.in = {a, -1};
        n.value = va;
        for (size_t i = 0; i < m.numel(); ++i) n.value.data[i] *= m.data[i];
        n.saved = std::move(m);
        return push(std::move(n));
    }

    int sum(int a) {
        Node n;
        n.kind = OpKind::Sum;
        n.in = {a, -1};
        double acc = 0.0;
        for (double v : value(a).data) acc += v;
        n.value = Array::scalar(acc);
        return push(std::move(n));
    }

    int exp_diag(int a, size_t dim) {
        Node n;
        n.kind = OpKind::ExpDiag;
        n.in = {a, -1};
        n.arg0 = dim;
        n.value = kernels::exp_diag(value(a), dim);
        return push(std::move(n));
    }

    // Identity forward; backward contributes (-scale) * incoming gradient.
    int grl(int a, double scale = 1.0) {
        if (!(scale > 0.0)) throw ShapeError("grl: scale must be > 0");
        Node n;
        n.kind = OpKind::Grl;
        n.in = {a, -1};
        n.scalar = scale;
        n.value = value(a);
        return push(std::move(n));
    }

    // Negative log-likelihood of y under N(m, L L^T):
    //   l = 1/2 [ r^T (L L^T)^-1 r + log det(L L^T) + A ln 2pi ],  r = y - m.
    // chol is the packed row-major lower triangle of L; its diagonal must be
    // strictly positive (exp-diagonal upstream guarantees >= 1e-4).
    int gnll(int m_id, int chol_id, const Array& y) {
        const Array& m = value(m_id);
        const Array& packed = value(chol_id);
        if (m.rank() != 1 || y.rank() != 1 || m.numel() != y.numel())
            throw ShapeError("gnll: mean and target must be equal-length vectors");
        const size_t A = m.numel();
        if (packed.rank() != 1 || packed.numel() != tri_numel(A))
            throw ShapeError("gnll: Cholesky input must be packed lower triangle of length " +
                             std::to_string(tri_numel(A)));
        for (size_t i = 0; i < A; ++i) {
            double d = packed[tri_index(i, i)];
            if (!(d >= kCholDiagFloor))
                throw NumericError("gnll: Cholesky diagonal entry " + std::to_string(i) + " = " +
                                   std::to_string(d) + " below stability floor 1e-8");
        }

        // Solve L z = r by forward substitution; quad = z^T z.
        std::vector<double> z(A);
        double logdet_half = 0.0;
        for (size_t i = 0; i < A; ++i) {
            double acc = y[i] - m[i];
            for (size_t j = 0; j < i; ++j) acc -= packed[tri_index(i, j)] * z[j];
            z[i] = acc / packed[tri_index(i, i)];
            logdet_half += std::log(packed[tri_index(i, i)]);
        }
        double quad = 0.0;
        for (double v : z) quad += v * v;

        // alpha = Lambda^-1 r via L^T alpha = z (back substitution); needed by
        // the adjoint: dl/dm = -alpha, dl/dL = diag(1/L_ii) - alpha alpha^T L.
        Array alpha({A});
        for (size_t ii = A; ii-- > 0;) {
            double acc = z[ii];
            for (size_t j = ii + 1; j < A; ++j) acc -= packed[tri_index(j, ii)] * alpha[j];
            alpha[ii] = acc / packed[tri_index(ii, ii)];
        }

        Node n;
        n.kind = OpKind::Gnll;
        n.in = {m_id, chol_id};
        n.arg0 = A;
        n.saved = std::move(alpha);
        n.value = Array::scalar(0.5 * quad + logdet_half + 0.5 * static_cast<double>(A) * kLn2Pi);
        return push(std::move(n));
    }

    // l = logsumexp(logits) - logits[label], max-shifted for stability.
    int softmax_ce(int logits_id, size_t label) {
        const Array& logits = value(logits_id);
        if (logits.rank() != 1) throw ShapeError("softmax-ce: logits must be rank 1");
        const size_t d = logits.numel();
        if (label >= d)
            throw ShapeError("softmax-ce: label " + std::to_string(label) + " out of range for " +
                             std::to_string(d) + " classes");
        double mx = logits[0];
        for (size_t i = 1; i < d; ++i) mx = std::max(mx, logits[i]);
        double sum = 0.0;
        for (size_t i = 0; i < d; ++i) sum += std::exp(logits[i] - mx);
        const double lse = mx + std::log(sum);

        Array probs({d});
        for (size_t i = 0; i < d; ++i) probs[i] = std::exp(logits[i] - lse);

        Node n;
        n.kind = OpKind::SoftmaxCe;
        n.in = {logits_id, -1};
        n.arg0 = label;
        n.saved = std::move(probs);
        n.value = Array::scalar(lse - logits[label]);
        return push(std::move(n));
    }

    // Accumulate d(scalar node)/d(node) for every node on the tape.
    void backward(int scalar_id) {
        const Node& out = nodes_[static_cast<size_t>(scalar_id)];
        if (out.value.rank() != 0)
            throw ShapeError("backward: node " + std::to_string(scalar_id) + " is not a scalar, shape " +
                             shape_str(out.value.shape));
        grads_.assign(nodes_.size(), Array{});
        for (size_t i = 0; i < nodes_.size(); ++i) grads_[i] = Array::zeros(nodes_[i].value.shape);
        grads_[static_cast<size_t>(scalar_id)].data[0] = 1.0;

        for (int id = scalar_id; id >= 0; --id) {
            const Node& n = nodes_[static_cast<size_t>(id)];
            const Array& g = grads_[static_cast<size_t>(id)];
            switch (n.kind) {
                case OpKind::Leaf:
                    break;
                case OpKind::MatMul: {
                    const Array& a = nodes_[n.in[0]].value;
                    const Array& b = nodes_[n.in[1]].value;
                    Array& ga = grads_[n.in[0]];
                    Array& gb = grads_[n.in[1]];
                    const size_t m = a.shape[0], k = a.shape[1];
                    if (b.rank() == 1) {
                        for (size_t i = 0; i < m; ++i) {
                            const double gi = g.data[i];
                            double* garow = &ga.data[i * k];
                            for (size_t l = 0; l < k; ++l) garow[l] += gi * b.data[l];
                        }
                        for (size_t i = 0; i < m; ++i) {
                            const double gi = g.data[i];
                            const double* arow = &a.data[i * k];
                            for (size_t l = 0; l < k; ++l) gb.data[l] += arow[l] * gi;
                        }
                    } else {
                        const size_t nn = b.shape[1];
                        for (size_t i = 0; i < m; ++i)
                            for (size_t l = 0; l < k; ++l) {
                                const double* grow = &g.data[i * nn];
                                const double* brow = &b.data[l * nn];
                                double acc = 0.0;
                                for (size_t j = 0; j < nn; ++j) acc += grow[j] * brow[j];
                                ga.data[i * k + l] += acc;
                            }
                        for (size_t l = 0; l < k; ++l)
                            for (size_t i = 0; i < m; ++i) {
                                const double av = a.data[i * k + l];
                                const double* grow = &g.data[i * nn];
                                double* gbrow = &gb.data[l * nn];
                                for (size_t j = 0; j < nn; ++j) gbrow[j] += av * grow[j];
                            }
                    }
                    break;
                }
                case OpKind::Add: {
                    Array& ga = grads_[n.in[0]];
                    Array& gb = grads_[n.in[1]];
                    for (size_t i = 0; i < g.numel(); ++i) {
                        ga.data[i] += g.data[i];
                        gb.data[i] += g.data[i];
                    }
                    break;
                }
                case OpKind::Relu: {
                    const Array& x = nodes_[n.in[0]].value;
                    Array& gx = grads_[n.in[0]];
                    for (size_t i = 0; i < g.numel(); ++i)
                        if (x.data[i] > 0.0) gx.data[i] += g.data[i];
                    break;
                }
                case OpKind::Concat: {
                    Array& ga = grads_[n.in[0]];
                    Array& gb = grads_[n.in[1]];
                    const size_t na = ga.numel();
                    for (size_t i = 0; i < na; ++i) ga.data[i] += g.data[i];
                    for (size_t i = 0; i < gb.numel(); ++i) gb.data[i] += g.data[na + i];
                    break;
                }
                case OpKind::Slice: {
                    Array& gx = grads_[n.in[0]];
                    for (size_t i = 0; i < n.arg1; ++i) gx.data[n.arg0 + i] += g.data[i];
                    break;
                }
                case OpKind::Scale: {
                    Array& gx = grads_[n.in[0]];
                    for (size_t i = 0; i < g.numel(); ++i) gx.data[i] += n.scalar * g.data[i];
                    break;
                }
                case OpKind::Mask: {
                    Array& gx = grads_[n.in[0]];
                    for (size_t i = 0; i < g.numel(); ++i) gx.data[i] += n.saved.data[i] * g.data[i];
                    break;
                }
                case OpKind::Sum: {
                    Array& gx = grads_[n.in[0]];
                    const double gv = g.data[0];
                    for (double& v : gx.data) v += gv;
                    break;
                }
                case OpKind::ExpDiag: {
                    const Array& x = nodes_[n.in[0]].value;
                    Array& gx = grads_[n.in[0]];
                    const size_t dim = n.arg0;
                    for (size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i];
                    for (size_t i = 0; i < dim; ++i) {
                        size_t idx = tri_index(i, i);
                        double raw = x.data[idx];
                        gx.data[idx] -= g.data[idx];  // undo the pass-through added above
                        if (raw >= kCholLogLo && raw <= kCholLogHi)
                            gx.data[idx] += g.data[idx] * n.value.data[idx];
                    }
                    break;
                }
                case OpKind::Grl: {
                    Array& gx = grads_[n.in[0]];
                    for (size_t i = 0; i < g.numel(); ++i) gx.data[i] -= n.scalar * g.data[i];
                    break;
                }
                case OpKind::Gnll: {
                    const double gv = g.data[0];
                    const Array& packed = nodes_[n.in[1]].value;
                    const Array& alpha = n.saved;
                    Array& gm = grads_[n.in[0]];
                    Array& gc = grads_[n.in[1]];
                    const size_t A = n.arg0;
                    for (size_t i = 0; i < A; ++i) gm.data[i] -= gv * alpha[i];
                    // (L^T alpha)_j = sum_{k >= j} L_kj alpha_k
                    std::vector<double> lta(A, 0.0);
                    for (size_t j = 0; j < A; ++j)
                        for (size_t k = j; k < A; ++k) lta[j] += packed[tri_index(k, j)] * alpha[k];
                    for (size_t i = 0; i < A; ++i)
                        for (size_t j = 0; j <= i; ++j) {
                            double d = -alpha[i] * lta[j];
                            if (i == j) d += 1.0 / packed[tri_index(i, i)];
                            gc.data[tri_index(i, j)] += gv * d;
                        }
                    break;
                }
                case OpKind::SoftmaxCe: {
                    const double gv = g.data[0];
                    Array& gx = grads_[n.in[0]];
                    for (size_t i = 0; i < gx.numel(); ++i) {
                        double p = n.saved.data[i];
                        gx.data[i] += gv * (p - (i == n.arg0 ? 1.0 : 0.0));
                    }
                    break;
                }
            }
        }
    }

  private:
    int push(Node n, bool check_finite = true) {
        if (check_finite && !n.value.all_finite())
            throw NumericError(std::string("non-finite result in forward op '") + op_name(n.kind) + "'");
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    std::vector<Array> grads_;
};

}  // namespace datqa
