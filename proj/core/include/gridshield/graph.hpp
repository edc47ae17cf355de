#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gridshield/tensor.hpp"

namespace gridshield {

enum class OpKind {
    leaf,
    conv1d,
    maxpool1d,
    dense,
    relu,
    sigmoid,
    dropout,
    flatten,
    bce_loss,
    concat,
};

const char* op_name(OpKind k);

struct OpParams {
    int kernel = 0;
    int stride = 1;
    int pool = 2;
    float rate = 0.0f;
    bool train = false;
    std::uint64_t seed = 0;
};

// Reverse-mode autodiff tape. Nodes are appended in topological order (an
// input ref always precedes its consumer); forward evaluation is eager and
// backward walks the node list in exact reverse order.
class Graph {
  public:
    using NodeId = int;

    // Leaf sharing an externally owned tensor (model parameters). Gradients
    // accumulate into the tensor's grad slot.
    NodeId leaf(std::shared_ptr<Tensor> t, bool requires_grad);
    // Leaf owning a copy (inputs, labels).
    NodeId leaf(Tensor t, bool requires_grad = false);

    // x[B,C,L], w[C,K,F], b[F] -> [B,F,P], P = (L-K)/stride + 1, no padding
    NodeId conv1d(NodeId x, NodeId w, NodeId b, int kernel, int stride);
    // non-overlapping max, output length floor(L/pool)
    NodeId maxpool1d(NodeId x, int pool);
    // x[B,D], w[D,U], b[U] -> [B,U]
    NodeId dense(NodeId x, NodeId w, NodeId b);
    NodeId relu(NodeId x);
    NodeId sigmoid(NodeId x);
    // inverted scaling at train time; identity when train == false
    NodeId dropout(NodeId x, float rate, bool train, std::uint64_t seed);
    NodeId flatten(NodeId x);
    // mean binary cross-entropy, probs clamped to [1e-6, 1-1e-6]; scalar out
    NodeId bce_loss(NodeId probs, NodeId labels);
    // along axis 1, rank-2 inputs
    NodeId concat(NodeId a, NodeId b);

    NodeId apply(OpKind kind, const std::vector<NodeId>& inputs, const OpParams& params = {});

    const Tensor& value(NodeId id) const { return *nodes_[check(id)].out; }
    std::shared_ptr<Tensor> value_ptr(NodeId id) { return nodes_[check(id)].out; }

    // Scalar-loss backward: seeds d(loss)/d(loss) = 1 and fills gradients of
    // every tensor that requires them. Throws if the loss is not scalar.
    void backward(NodeId loss);
    // Backward from an arbitrary node with an explicit output gradient.
    // param_grads=false skips gradient computation for shared-parameter
    // leaves (attack paths only need d/d input).
    void backward_from(NodeId node, const std::vector<float>& seed_grad, bool param_grads = true);

    bool has_grad(NodeId id) const { return !nodes_[check(id)].grad.empty(); }
    const std::vector<float>& grad(NodeId id) const;

    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        OpKind op = OpKind::leaf;
        std::vector<NodeId> inputs;
        OpParams params;
        std::shared_ptr<Tensor> out;
        bool requires_grad = false;
        bool is_param = false;
        std::vector<float> grad;   // same length as out->data once backward ran
        std::vector<float> aux;    // op scratch kept for backward (im2col, masks)
        std::vector<int> aux_idx;  // argmax indices for maxpool
    };

    NodeId check(NodeId id) const;
    NodeId push(Node n);
    void forward_node(Node& n);
    void backward_node(int id, bool param_grads);
    std::vector<float>& grad_buf(int id);

    std::vector<Node> nodes_;
};

}  // namespace gridshield
