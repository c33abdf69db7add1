#pragma once

#include "maf/tensor.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

namespace maf {

using NodeId = std::int32_t;

// Reverse-mode tape. Nodes are appended in evaluation order, so ids are a
// topological order by construction: every node's parents have smaller ids.
// backward() walks ids from the loss down, propagating only through nodes
// whose gradient was touched; everything else keeps a zero gradient.
//
// A tape is single-use: one forward build, one backward. A second backward
// call is rejected.
class Tape {
  public:
    NodeId leaf(Tensor value);

    NodeId emplace(Tensor value, std::vector<NodeId> parents,
                   std::function<void(Tape&, NodeId)> back);

    const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    // Zero tensor of the node's shape until backward touches it.
    const Tensor& grad(NodeId id);

    // Accumulate g into the node's gradient (used by backward closures).
    void accumulate_grad(NodeId id, const Tensor& g);

    void backward(NodeId loss);

    std::size_t size() const { return nodes_.size(); }
    NodeId parent(NodeId id, int slot) const {
        return nodes_[static_cast<std::size_t>(id)].parents[static_cast<std::size_t>(slot)];
    }

  private:
    struct Node {
        Tensor value;
        std::vector<NodeId> parents;
        std::function<void(Tape&, NodeId)> back; // null for leaves
    };

    Tensor& grad_slot(NodeId id);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<char> touched_;
    bool backward_done_ = false;
};

// Op builders. All validate shapes and return the new node id.

NodeId matmul(Tape& t, NodeId a, NodeId b);
NodeId add(Tape& t, NodeId a, NodeId b);
NodeId sub(Tape& t, NodeId a, NodeId b);
NodeId mul(Tape& t, NodeId a, NodeId b);
NodeId add_rowvec(Tape& t, NodeId a, NodeId row);
NodeId sub_rowvec(Tape& t, NodeId a, NodeId row);
NodeId scale(Tape& t, NodeId a, double alpha);
NodeId mul_const(Tape& t, NodeId a, Tensor weights);
NodeId relu(Tape& t, NodeId a);
NodeId transpose(Tape& t, NodeId a);
NodeId sum_all(Tape& t, NodeId a);
NodeId colmean(Tape& t, NodeId a);
NodeId softmax_rows(Tape& t, NodeId logits);
NodeId softmax_cross_entropy(Tape& t, NodeId logits, const std::vector<int>& labels);
// out = a * s where s is a 1x1 node.
NodeId mul_scalar(Tape& t, NodeId a, NodeId s);
// Column-wise concatenation of same-height nodes.
NodeId concat_cols(Tape& t, const std::vector<NodeId>& parts);

} // namespace maf
