#include "maf/tape.hpp"

#include <cmath>
#include <string>

namespace maf {

namespace {
const kernels::KernelTable& K() { return kernels::active(); }
} // namespace

NodeId Tape::leaf(Tensor value) { return emplace(std::move(value), {}, nullptr); }

NodeId Tape::emplace(Tensor value, std::vector<NodeId> parents,
                     std::function<void(Tape&, NodeId)> back) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    touched_.push_back(0);
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tensor& Tape::grad_slot(NodeId id) {
    auto i = static_cast<std::size_t>(id);
    if (grads_[i].size() == 0) {
        const Tensor& v = nodes_[i].value;
        grads_[i] = Tensor(v.rows(), v.cols());
    }
    return grads_[i];
}

const Tensor& Tape::grad(NodeId id) { return grad_slot(id); }

void Tape::accumulate_grad(NodeId id, const Tensor& g) {
    Tensor& slot = grad_slot(id);
    if (!slot.same_shape(g)) throw DimensionError("gradient shape mismatch");
    K().add(slot.data(), g.data(), slot.data(), slot.size());
    touched_[static_cast<std::size_t>(id)] = 1;
}

void Tape::backward(NodeId loss) {
    if (backward_done_) throw ContractError("backward called twice on the same tape");
    backward_done_ = true;
    const Tensor& lv = value(loss);
    if (lv.size() != 1) throw ContractError("backward root must be scalar");
    accumulate_grad(loss, Tensor::scalar(1.0));
    for (NodeId id = loss; id >= 0; --id) {
        auto i = static_cast<std::size_t>(id);
        if (!touched_[i] || !nodes_[i].back) continue;
        nodes_[i].back(*this, id);
    }
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

NodeId matmul(Tape& t, NodeId a, NodeId b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    Tensor out = matmul_plain(av, bv);
    return t.emplace(std::move(out), {a, b},
 [](Tape& tp, NodeId self) {
        const NodeId a = tp.parent(self, 0);
        const NodeId b = tp.parent(self, 1);
        const Tensor& g = tp.grad(self);
        // dA = g * B^T, dB = A^T * g; transposes keep the kernel set small.
        Tensor bt = tp.value(b).transposed();
        Tensor at = tp.value(a).transposed();
        tp.accumulate_grad(a, matmul_plain(g, bt));
        tp.accumulate_grad(b, matmul_plain(at, g));
    });
}

NodeId add(Tape& t, NodeId a, NodeId b) {
    Tensor out = add_plain(t.value(a), t.value(b));
    return t.emplace(std::move(out), {a, b},
 [](Tape& tp, NodeId self) {
        const Tensor& g = tp.grad(self);
        tp.accumulate_grad(tp.parent(self, 0), g);
        tp.accumulate_grad(tp.parent(self, 1), g);
    });
}

NodeId sub(Tape& t, NodeId a, NodeId b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!av.same_shape(bv)) throw DimensionError("sub shape mismatch");
    Tensor out(av.rows(), av.cols());
    K().sub(av.data(), bv.data(), out.data(), out.size());
    return t.emplace(std::move(out), {a, b},
 [](Tape& tp, NodeId self) {
        const Tensor& g = tp.grad(self);
        tp.accumulate_grad(tp.parent(self, 0), g);
        Tensor neg(g.rows(), g.cols());
        K().scale(g.data(), -1.0, neg.data(), g.size());
        tp.accumulate_grad(tp.parent(self, 1), neg);
    });
}

NodeId mul(Tape& t, NodeId a, NodeId b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!av.same_shape(bv)) throw DimensionError("mul shape mismatch");
    Tensor out(av.rows(), av.cols());
    K().mul(av.data(), bv.data(), out.data(), out.size());
    return t.emplace(std::move(out), {a, b},
 [](Tape& tp, NodeId self) {
        const NodeId a = tp.parent(self, 0);
        const NodeId b = tp.parent(self, 1);
        const Tensor& g = tp.grad(self);
        Tensor da(g.rows(), g.cols());
        K().mul(g.data(), tp.value(b).data(), da.data(), g.size());
        tp.accumulate_grad(a, da);
        Tensor db(g.rows(), g.cols());
        K().mul(g.data(), tp.value(a).data(), db.data(), g.size());
        tp.accumulate_grad(b, db);
    });
}

NodeId add_rowvec(Tape& t, NodeId a, NodeId row) {
    Tensor out = add_rowvec_plain(t.value(a), t.value(row));
    return t.emplace(std::move(out), {a, row},
 [](Tape& tp, NodeId self) {
        const Tensor& g = tp.grad(self);
        tp.accumulate_grad(tp.parent(self, 0), g);
        Tensor gr(1, g.cols());
        K().colsum(g.data(), gr.data(), g.rows(), g.cols());
        tp.accumulate_grad(tp.parent(self, 1), gr);
    });
}

NodeId sub_rowvec(Tape& t, NodeId a, NodeId row) {
    const Tensor& av = t.value(a);
    const Tensor& rv = t.value(row);
    if (rv.rows() != 1 || rv.cols() != av.cols())
        throw DimensionError("row vector shape mismatch in broadcast sub");
    Tensor out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i)
        K().sub(av.data() + i * av.cols(), rv.data(), out.data() + i * av.cols(), av.cols());
    return t.emplace(std::move(out), {a, row},
 [](Tape& tp, NodeId self) {
        const Tensor& g = tp.grad(self);
        tp.accumulate_grad(tp.parent(self, 0), g);
        Tensor gr(1, g.cols());
        K().colsum(g.data(), gr.data(), g.rows(), g.cols());
        K().scale(gr.data(), -1.0, gr.data(), gr.size());
        tp.accumulate_grad(tp.parent(self, 1), gr);
    });
}

NodeId scale(Tape& t, NodeId a, double alpha) {
    const Tensor& av = t.value(a);
    Tensor out(av.rows(), av.cols());
    K().scale(av.data(), alpha, out.data(), out.size());
    return t.emplace(std::move(out), {a},
 [alpha](Tape& tp, NodeId self) {
        const Tensor& g = tp.grad(self);
        Tensor da(g.rows(), g.cols());
        K().scale(g.data(), alpha, da.data(), g.size());
        tp.accumulate_grad(tp.parent(self, 0), da);
    });
}

NodeId mul_const(Tape& t, NodeId a, Tensor weights) {
    const Tensor& av = t.value(a);
    if (!av.same_shape(weights)) throw DimensionError("mul_const shape mismatch");
    Tensor out(av.rows(), av.cols());
    K().mul(av.data(), weights.data(), out.data(), out.size());
    return t.emplace(std::move(out), {a},
 [w = std::move(weights)](Tape& tp, NodeId self) {
        const Tensor& g = tp.grad(self);
        Tensor da(g.rows(), g.cols());
        K().mul(g.data(), w.data(), da.data(), g.size());
        tp.accumulate_grad(tp.parent(self, 0), da);
    });
}

NodeId relu(Tape& t, NodeId a) {
    Tensor out = relu_plain(t.value(a));
    return t.emplace(std::move(out), {a},
 [](Tape& tp, NodeId self) {
        const NodeId a = tp.parent(self, 0);
        const Tensor& g = tp.grad(self);
        const Tensor& x = tp.value(a);
        Tensor da(g.rows(), g.cols());
        K().relu_mask(g.data(), x.data(), da.data(), g.size());
        tp.accumulate_grad(a, da);
    });
}

NodeId transpose(Tape& t, NodeId a) {
    Tensor out = t.value(a).transposed();
    return t.emplace(std::move(out), {a},
 [](Tape& tp, NodeId self) {
        tp.accumulate_grad(tp.parent(self, 0), tp.grad(self).transposed());
    });
}

NodeId sum_all(Tape& t, NodeId a) {
    const Tensor& av = t.value(a);
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
    return t.emplace(Tensor::scalar(s), {a},
 [](Tape& tp, NodeId self) {
        const double g = tp.grad(self).item();
        const Tensor& av = tp.value(tp.parent(self, 0));
        Tensor da(av.rows(), av.cols());
        for (std::size_t i = 0; i < da.size(); ++i) da[i] = g;
        tp.accumulate_grad(tp.parent(self, 0), da);
    });
}

NodeId colmean(Tape& t, NodeId a) {
    const Tensor& av = t.value(a);
    if (av.rows() == 0) throw ContractError("colmean on empty tensor");
    Tensor out(1, av.cols());
    K().colsum(av.data(), out.data(), av.rows(), av.cols());
    const double inv = 1.0 / static_cast<double>(av.rows());
    K().scale(out.data(), inv, out.data(), out.size());
    return t.emplace(std::move(out), {a},
 [inv](Tape& tp, NodeId self) {
        const Tensor& g = tp.grad(self);
        const Tensor& av = tp.value(tp.parent(self, 0));
        Tensor da(av.rows(), av.cols());
        for (std::size_t i = 0; i < av.rows(); ++i)
            K().scale(g.data(), inv, da.data() + i * av.cols(), av.cols());
        tp.accumulate_grad(tp.parent(self, 0), da);
    });
}

NodeId softmax_rows(Tape& t, NodeId logits) {
    const Tensor& lv = t.value(logits);
    Tensor p(lv.rows(), lv.cols());
    for (std::size_t i = 0; i < lv.rows(); ++i) {
        double mx = lv.at(i, 0);
        for (std::size_t c = 1; c < lv.cols(); ++c) mx = std::max(mx, lv.at(i, c));
        double denom = 0.0;
        for (std::size_t c = 0; c < lv.cols(); ++c) {
            p.at(i, c) = std::exp(lv.at(i, c) - mx);
            denom += p.at(i, c);
        }
        for (std::size_t c = 0; c < lv.cols(); ++c) p.at(i, c) /= denom;
    }
    Tensor pcopy = p;
    return t.emplace(std::move(p), {logits},
 [pc = std::move(pcopy)](Tape& tp, NodeId self) {
        const Tensor& g = tp.grad(self);
        Tensor da(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) dot += g.at(i, c) * pc.at(i, c);
            for (std::size_t c = 0; c < g.cols(); ++c)
                da.at(i, c) = pc.at(i, c) * (g.at(i, c) - dot);
        }
        tp.accumulate_grad(tp.parent(self, 0), da);
    });
}

NodeId softmax_cross_entropy(Tape& t, NodeId logits, const std::vector<int>& labels) {
    const Tensor& lv = t.value(logits);
    const std::size_t n = lv.rows();
    const std::size_t c = lv.cols();
    if (labels.size() != n) throw InputError("label count != logit rows");
    if (c < 2) throw DimensionError("cross entropy needs >= 2 logit columns");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw InputError("label " + std::to_string(y) + " outside [0," + std::to_string(c) +
                             ")");
    // Row-max stabilization; cache softmax probabilities for backward.
    Tensor p(n, c);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double mx = lv.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lv.at(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            p.at(i, j) = std::exp(lv.at(i, j) - mx);
            denom += p.at(i, j);
        }
        loss += std::log(denom) - (lv.at(i, static_cast<std::size_t>(labels[i])) - mx);
        for (std::size_t j = 0; j < c; ++j) p.at(i, j) /= denom;
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) throw NumericError("non-finite cross entropy");
    return t.emplace(Tensor::scalar(loss), {logits},
                     [pc = std::move(p), labels](Tape& tp, NodeId self) {
                         const double g = tp.grad(self).item();
                         const double invn = 1.0 / static_cast<double>(pc.rows());
                         Tensor da(pc.rows(), pc.cols());
                         for (std::size_t i = 0; i < pc.rows(); ++i)
                             for (std::size_t j = 0; j < pc.cols(); ++j) {
                                 double v = pc.at(i, j);
                                 if (static_cast<std::size_t>(labels[i]) == j) v -= 1.0;
                                 da.at(i, j) = g * invn * v;
                             }
                         tp.accumulate_grad(tp.parent(self, 0), da);
                     });
}

NodeId mul_scalar(Tape& t, NodeId a, NodeId s) {
    const Tensor& av = t.value(a);
    const Tensor& sv = t.value(s);
    if (sv.size() != 1) throw ContractError("mul_scalar needs a 1x1 scale node");
    Tensor out(av.rows(), av.cols());
    K().scale(av.data(), sv.item(), out.data(), out.size());
    return t.emplace(std::move(out), {a, s},
 [](Tape& tp, NodeId self) {
        const NodeId a = tp.parent(self, 0);
        const NodeId s = tp.parent(self, 1);
        const Tensor& g = tp.grad(self);
        const double sval = tp.value(s).item();
        Tensor da(g.rows(), g.cols());
        K().scale(g.data(), sval, da.data(), g.size());
        tp.accumulate_grad(a, da);
        const Tensor& av = tp.value(a);
        double ds = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) ds += g[i] * av[i];
        tp.accumulate_grad(s, Tensor::scalar(ds));
    });
}

NodeId concat_cols(Tape& t, const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ContractError("concat_cols needs at least one part");
    const std::size_t rows = t.value(parts[0]).rows();
    std::size_t total_cols = 0;
    for (NodeId p : parts) {
        if (t.value(p).rows() != rows) throw DimensionError("concat_cols row mismatch");
        total_cols += t.value(p).cols();
    }
    Tensor out(rows, total_cols);
    std::size_t col0 = 0;
    for (NodeId p : parts) {
        const Tensor& v = t.value(p);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < v.cols(); ++j) out.at(i, col0 + j) = v.at(i, j);
        col0 += v.cols();
    }
    return t.emplace(std::move(out), parts, [](Tape& tp, NodeId self) {
        const Tensor& g = tp.grad(self);
        std::size_t col0 = 0;
        for (int slot = 0;; ++slot) {
            const NodeId p = tp.parent(self, slot);
            const Tensor& v = tp.value(p);
            Tensor gp(v.rows(), v.cols());
            for (std::size_t i = 0; i < v.rows(); ++i)
                for (std::size_t j = 0; j < v.cols(); ++j) gp.at(i, j) = g.at(i, col0 + j);
            tp.accumulate_grad(p, gp);
            col0 += v.cols();
            if (col0 == g.cols()) break;
        }
    });
}

} // namespace maf
