#include "gridshield/graph.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gridshield/kernels.hpp"

namespace gridshield {

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::leaf: return "leaf";
        case OpKind::conv1d: return "conv1d";
        case OpKind::maxpool1d: return "maxpool1d";
        case OpKind::dense: return "dense";
        case OpKind::relu: return "relu";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::dropout: return "dropout";
        case OpKind::flatten: return "flatten";
        case OpKind::bce_loss: return "bce_loss";
        case OpKind::concat: return "concat";
    }
    return "?";
}

namespace {
constexpr float kBceEps = 1e-6f;

[[noreturn]] void shape_fail(OpKind op, const std::string& detail) {
    throw shape_error(std::string(op_name(op)) + ": " + detail);
}
}  // namespace

Graph::NodeId Graph::check(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw std::out_of_range("Graph: bad node id " + std::to_string(id));
    return id;
}

Graph::NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Graph::NodeId Graph::leaf(std::shared_ptr<Tensor> t, bool requires_grad) {
    Node n;
    n.op = OpKind::leaf;
    n.out = std::move(t);
    n.requires_grad = requires_grad;
    n.is_param = true;
    return push(std::move(n));
}

Graph::NodeId Graph::leaf(Tensor t, bool requires_grad) {
    Node n;
    n.op = OpKind::leaf;
    n.out = std::make_shared<Tensor>(std::move(t));
    n.requires_grad = requires_grad;
    n.is_param = false;
    return push(std::move(n));
}

Graph::NodeId Graph::apply(OpKind kind, const std::vector<NodeId>& inputs, const OpParams& params) {
    if (kind == OpKind::leaf) throw std::invalid_argument("Graph::apply: leaf is not an op");
    Node n;
    n.op = kind;
    n.params = params;
    n.inputs = inputs;
    for (NodeId id : inputs) {
        check(id);
        n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
    }
    forward_node(n);
    return push(std::move(n));
}

Graph::NodeId Graph::conv1d(NodeId x, NodeId w, NodeId b, int kernel, int stride) {
    OpParams p;
    p.kernel = kernel;
    p.stride = stride;
    return apply(OpKind::conv1d, {x, w, b}, p);
}

Graph::NodeId Graph::maxpool1d(NodeId x, int pool) {
    OpParams p;
    p.pool = pool;
    return apply(OpKind::maxpool1d, {x}, p);
}

Graph::NodeId Graph::dense(NodeId x, NodeId w, NodeId b) { return apply(OpKind::dense, {x, w, b}); }
Graph::NodeId Graph::relu(NodeId x) { return apply(OpKind::relu, {x}); }
Graph::NodeId Graph::sigmoid(NodeId x) { return apply(OpKind::sigmoid, {x}); }

Graph::NodeId Graph::dropout(NodeId x, float rate, bool train, std::uint64_t seed) {
    OpParams p;
    p.rate = rate;
    p.train = train;
    p.seed = seed;
    return apply(OpKind::dropout, {x}, p);
}

Graph::NodeId Graph::flatten(NodeId x) { return apply(OpKind::flatten, {x}); }
Graph::NodeId Graph::bce_loss(NodeId probs, NodeId labels) {
    return apply(OpKind::bce_loss, {probs, labels});
}
Graph::NodeId Graph::concat(NodeId a, NodeId b) { return apply(OpKind::concat, {a, b}); }

void Graph::forward_node(Node& n) {
    switch (n.op) {
        case OpKind::conv1d: {
            if (n.inputs.size() != 3) shape_fail(n.op, "expected (x, w, b)");
            const Tensor& x = *nodes_[n.inputs[0]].out;
            const Tensor& w = *nodes_[n.inputs[1]].out;
            const Tensor& b = *nodes_[n.inputs[2]].out;
            if (x.rank() != 3) shape_fail(n.op, "input rank " + std::to_string(x.rank()) + " != 3");
            if (w.rank() != 3) shape_fail(n.op, "weight rank != 3, got " + shape_str(w.shape));
            const int batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
            const int kernel = n.params.kernel, stride = n.params.stride;
            if (w.dim(0) != ch || w.dim(1) != kernel)
                shape_fail(n.op, "weight " + shape_str(w.shape) + " does not match input channels " +
                                     std::to_string(ch) + ", kernel " + std::to_string(kernel));
            const int filters = w.dim(2);
            if (b.numel() != static_cast<std::size_t>(filters))
                shape_fail(n.op, "bias length " + std::to_string(b.numel()) + " != filters " +
                                     std::to_string(filters));
            if (stride < 1) shape_fail(n.op, "stride " + std::to_string(stride) + " < 1");
            if (len < kernel)
                shape_fail(n.op, "input length " + std::to_string(len) + " < kernel " +
                                     std::to_string(kernel));
            const int out_len = (len - kernel) / stride + 1;
            const int rows = batch * out_len, cols_w = ch * kernel;

            n.aux.resize(static_cast<std::size_t>(rows) * cols_w);
            im2col1d(x.data.data(), batch, ch, len, kernel, stride, n.aux.data());

            std::vector<float> y(static_cast<std::size_t>(rows) * filters);
            gemm_nn(rows, cols_w, filters, n.aux.data(), w.data.data(), y.data());

            n.out = std::make_shared<Tensor>(std::vector<int>{batch, filters, out_len});
            float* out = n.out->data.data();
            const float* bias = b.data.data();
            const int nth = compute_threads();
#pragma omp parallel for schedule(static) num_threads(nth)
            for (int bb = 0; bb < batch; ++bb) {
                const float* yb = y.data() + static_cast<std::size_t>(bb) * out_len * filters;
                float* ob = out + static_cast<std::size_t>(bb) * filters * out_len;
                for (int p = 0; p < out_len; ++p)
                    for (int f = 0; f < filters; ++f)
                        ob[static_cast<std::size_t>(f) * out_len + p] =
                            yb[static_cast<std::size_t>(p) * filters + f] + bias[f];
            }
            break;
        }
        case OpKind::maxpool1d: {
            const Tensor& x = *nodes_[n.inputs[0]].out;
            if (x.rank() != 3) shape_fail(n.op, "input rank != 3, got " + shape_str(x.shape));
            const int batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
            const int pool = n.params.pool;
            if (pool < 1) shape_fail(n.op, "pool size " + std::to_string(pool) + " < 1");
            if (len < pool)
                shape_fail(n.op, "input length " + std::to_string(len) + " < pool " +
                                     std::to_string(pool));
            const int out_len = len / pool;
            n.out = std::make_shared<Tensor>(std::vector<int>{batch, ch, out_len});
            n.aux_idx.resize(n.out->numel());
            const float* in = x.data.data();
            float* out = n.out->data.data();
            for (int bc = 0; bc < batch * ch; ++bc) {
                const float* row = in + static_cast<std::size_t>(bc) * len;
                float* orow = out + static_cast<std::size_t>(bc) * out_len;
                int* irow = n.aux_idx.data() + static_cast<std::size_t>(bc) * out_len;
                for (int p = 0; p < out_len; ++p) {
                    int best = p * pool;
                    float bv = row[best];
                    for (int t = 1; t < pool; ++t) {
                        const int i = p * pool + t;
                        if (row[i] > bv) {
                            bv = row[i];
                            best = i;
                        }
                    }
                    orow[p] = bv;
                    irow[p] = bc * len + best;
                }
            }
            break;
        }
        case OpKind::dense: {
            if (n.inputs.size() != 3) shape_fail(n.op, "expected (x, w, b)");
            const Tensor& x = *nodes_[n.inputs[0]].out;
            const Tensor& w = *nodes_[n.inputs[1]].out;
            const Tensor& b = *nodes_[n.inputs[2]].out;
            if (x.rank() != 2) shape_fail(n.op, "input rank != 2, got " + shape_str(x.shape));
            if (w.rank() != 2) shape_fail(n.op, "weight rank != 2, got " + shape_str(w.shape));
            const int batch = x.dim(0), d = x.dim(1), units = w.dim(1);
            if (w.dim(0) != d)
                shape_fail(n.op, "weight rows " + std::to_string(w.dim(0)) + " != input width " +
                                     std::to_string(d));
            if (b.numel() != static_cast<std::size_t>(units))
                shape_fail(n.op, "bias length " + std::to_string(b.numel()) + " != units " +
                                     std::to_string(units));
            n.out = std::make_shared<Tensor>(std::vector<int>{batch, units});
            gemm_nn(batch, d, units, x.data.data(), w.data.data(), n.out->data.data());
            float* out = n.out->data.data();
            const float* bias = b.data.data();
            for (int i = 0; i < batch; ++i)
                for (int j = 0; j < units; ++j) out[static_cast<std::size_t>(i) * units + j] += bias[j];
            break;
        }
        case OpKind::relu: {
            const Tensor& x = *nodes_[n.inputs[0]].out;
            n.out = std::make_shared<Tensor>(x.shape);
            const float* in = x.data.data();
            float* out = n.out->data.data();
            const std::size_t m = x.numel();
            for (std::size_t i = 0; i < m; ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
            break;
        }
        case OpKind::sigmoid: {
            const Tensor& x = *nodes_[n.inputs[0]].out;
            n.out = std::make_shared<Tensor>(x.shape);
            const float* in = x.data.data();
            float* out = n.out->data.data();
            const std::size_t m = x.numel();
            for (std::size_t i = 0; i < m; ++i) out[i] = 1.0f / (1.0f + std::exp(-in[i]));
            break;
        }
        case OpKind::dropout: {
            const Tensor& x = *nodes_[n.inputs[0]].out;
            const float rate = n.params.rate;
            if (rate < 0.0f || rate >= 1.0f)
                shape_fail(n.op, "rate " + std::to_string(rate) + " outside [0,1)");
            n.out = std::make_shared<Tensor>(x.shape);
            if (!n.params.train || rate == 0.0f) {
                n.out->data = x.data;  // inference mode is the identity
                break;
            }
            const float scale = 1.0f / (1.0f - rate);
            Rng rng = make_rng(n.params.seed);
            std::uniform_real_distribution<float> u(0.0f, 1.0f);
            n.aux.resize(x.numel());
            for (std::size_t i = 0; i < x.numel(); ++i)
                n.aux[i] = u(rng) < rate ? 0.0f : scale;
            for (std::size_t i = 0; i < x.numel(); ++i) n.out->data[i] = x.data[i] * n.aux[i];
            break;
        }
        case OpKind::flatten: {
            const Tensor& x = *nodes_[n.inputs[0]].out;
            if (x.rank() < 2) shape_fail(n.op, "input rank < 2, got " + shape_str(x.shape));
            const int batch = x.dim(0);
            const int rest = static_cast<int>(x.numel()) / batch;
            n.out = std::make_shared<Tensor>(std::vector<int>{batch, rest}, x.data);
            break;
        }
        case OpKind::bce_loss: {
            const Tensor& p = *nodes_[n.inputs[0]].out;
            const Tensor& y = *nodes_[n.inputs[1]].out;
            if (p.numel() != y.numel())
                shape_fail(n.op, "probs " + shape_str(p.shape) + " vs labels " + shape_str(y.shape));
            const std::size_t m = p.numel();
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                const float ph = std::clamp(p.data[i], kBceEps, 1.0f - kBceEps);
                acc -= y.data[i] * std::log(static_cast<double>(ph)) +
                       (1.0f - y.data[i]) * std::log(1.0 - static_cast<double>(ph));
            }
            n.out = std::make_shared<Tensor>(std::vector<int>{1});
            n.out->data[0] = static_cast<float>(acc / static_cast<double>(m));
            break;
        }
        case OpKind::concat: {
            const Tensor& a = *nodes_[n.inputs[0]].out;
            const Tensor& b = *nodes_[n.inputs[1]].out;
            if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
                shape_fail(n.op, shape_str(a.shape) + " vs " + shape_str(b.shape));
            const int batch = a.dim(0), da = a.dim(1), db = b.dim(1);
            n.out = std::make_shared<Tensor>(std::vector<int>{batch, da + db});
            for (int i = 0; i < batch; ++i) {
                std::memcpy(n.out->data.data() + static_cast<std::size_t>(i) * (da + db),
                            a.data.data() + static_cast<std::size_t>(i) * da, sizeof(float) * da);
                std::memcpy(n.out->data.data() + static_cast<std::size_t>(i) * (da + db) + da,
                            b.data.data() + static_cast<std::size_t>(i) * db, sizeof(float) * db);
            }
            break;
        }
        case OpKind::leaf: break;
    }
}

void Graph::backward(NodeId loss) {
    const Tensor& lt = value(loss);
    if (lt.numel() != 1)
        throw shape_error("backward: loss node is non-scalar, shape " + shape_str(lt.shape));
    backward_from(loss, {1.0f}, true);
}

std::vector<float>& Graph::grad_buf(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.out->numel(), 0.0f);
    return n.grad;
}

const std::vector<float>& Graph::grad(NodeId id) const {
    const Node& n = nodes_[check(id)];
    if (n.grad.empty())
        throw std::logic_error("Graph::grad: no gradient at node " + std::to_string(id));
    return n.grad;
}

void Graph::backward_from(NodeId node, const std::vector<float>& seed_grad, bool param_grads) {
    check(node);
    if (seed_grad.size() != nodes_[node].out->numel())
        throw shape_error("backward_from: seed length " + std::to_string(seed_grad.size()) +
                          " != node size " + std::to_string(nodes_[node].out->numel()));

    // which nodes sit above a gradient-consuming leaf
    std::vector<char> need(nodes_.size(), 0);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.op == OpKind::leaf) {
            need[i] = n.requires_grad && (param_grads || !n.is_param);
        } else {
            for (NodeId in : n.inputs) need[i] = need[i] || need[in];
        }
    }
    if (!need[node]) return;

    for (Node& n : nodes_) n.grad.clear();
    grad_buf(node) = seed_grad;

    for (int id = node; id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.op == OpKind::leaf || n.grad.empty() || !need[id]) continue;
        backward_node(id, param_grads);
    }

    // mirror leaf gradients into tensor grad slots (zero first: a tensor may
    // back several leaves)
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        if (n.op == OpKind::leaf && !n.grad.empty()) n.out->zero_grad();
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        if (n.op != OpKind::leaf || n.grad.empty()) continue;
        std::vector<float>& g = n.out->ensure_grad();
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.grad[j];
    }
}

void Graph::backward_node(int id, bool param_grads) {
    Node& n = nodes_[id];
    const std::vector<float>& dout = n.grad;
    auto needs = [&](int slot) {
        const Node& in = nodes_[n.inputs[slot]];
        if (in.op == OpKind::leaf) return in.requires_grad && (param_grads || !in.is_param);
        return in.requires_grad;
    };

    switch (n.op) {
        case OpKind::conv1d: {
            const Tensor& x = *nodes_[n.inputs[0]].out;
            const Tensor& w = *nodes_[n.inputs[1]].out;
            const int batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
            const int kernel = n.params.kernel, stride = n.params.stride;
            const int filters = w.dim(2);
            const int out_len = n.out->dim(2);
            const int rows = batch * out_len, cols_w = ch * kernel;

            // [B,F,P] -> [(B*P) x F]
            std::vector<float> dy(static_cast<std::size_t>(rows) * filters);
            const int nth = compute_threads();
#pragma omp parallel for schedule(static) num_threads(nth)
            for (int bb = 0; bb < batch; ++bb) {
                const float* db = dout.data() + static_cast<std::size_t>(bb) * filters * out_len;
                float* yb = dy.data() + static_cast<std::size_t>(bb) * out_len * filters;
                for (int f = 0; f < filters; ++f)
                    for (int p = 0; p < out_len; ++p)
                        yb[static_cast<std::size_t>(p) * filters + f] =
                            db[static_cast<std::size_t>(f) * out_len + p];
            }

            if (needs(1)) {
                std::vector<float>& gw = grad_buf(n.inputs[1]);
                gemm_tn(rows, cols_w, filters, n.aux.data(), dy.data(), gw.data(), true);
            }
            if (needs(2)) {
                std::vector<float>& gb = grad_buf(n.inputs[2]);
                for (int r = 0; r < rows; ++r) {
                    const float* row = dy.data() + static_cast<std::size_t>(r) * filters;
                    for (int f = 0; f < filters; ++f) gb[f] += row[f];
                }
            }
            if (needs(0)) {
                std::vector<float> dcols(static_cast<std::size_t>(rows) * cols_w);
                gemm_nt(rows, filters, cols_w, dy.data(), w.data.data(), dcols.data());
                std::vector<float>& gx = grad_buf(n.inputs[0]);
                col2im1d(dcols.data(), batch, ch, len, kernel, stride, gx.data());
            }
            break;
        }
        case OpKind::maxpool1d: {
            if (!needs(0)) break;
            std::vector<float>& gx = grad_buf(n.inputs[0]);
            for (std::size_t i = 0; i < dout.size(); ++i) gx[n.aux_idx[i]] += dout[i];
            break;
        }
        case OpKind::dense: {
            const Tensor& x = *nodes_[n.inputs[0]].out;
            const Tensor& w = *nodes_[n.inputs[1]].out;
            const int batch = x.dim(0), d = x.dim(1), units = w.dim(1);
            if (needs(1)) {
                std::vector<float>& gw = grad_buf(n.inputs[1]);
                gemm_tn(batch, d, units, x.data.data(), dout.data(), gw.data(), true);
            }
            if (needs(2)) {
                std::vector<float>& gb = grad_buf(n.inputs[2]);
                for (int i = 0; i < batch; ++i) {
                    const float* row = dout.data() + static_cast<std::size_t>(i) * units;
                    for (int j = 0; j < units; ++j) gb[j] += row[j];
                }
            }
            if (needs(0)) {
                std::vector<float>& gx = grad_buf(n.inputs[0]);
                gemm_nt(batch, units, d, dout.data(), w.data.data(), gx.data(), true);
            }
            break;
        }
        case OpKind::relu: {
            if (!needs(0)) break;
            const Tensor& x = *nodes_[n.inputs[0]].out;
            std::vector<float>& gx = grad_buf(n.inputs[0]);
            for (std::size_t i = 0; i < dout.size(); ++i)
                if (x.data[i] > 0.0f) gx[i] += dout[i];
            break;
        }
        case OpKind::sigmoid: {
            if (!needs(0)) break;
            std::vector<float>& gx = grad_buf(n.inputs[0]);
            const float* out = n.out->data.data();
            for (std::size_t i = 0; i < dout.size(); ++i)
                gx[i] += dout[i] * out[i] * (1.0f - out[i]);
            break;
        }
        case OpKind::dropout: {
            if (!needs(0)) break;
            std::vector<float>& gx = grad_buf(n.inputs[0]);
            if (!n.params.train || n.params.rate == 0.0f) {
                for (std::size_t i = 0; i < dout.size(); ++i) gx[i] += dout[i];
            } else {
                for (std::size_t i = 0; i < dout.size(); ++i) gx[i] += dout[i] * n.aux[i];
            }
            break;
        }
        case OpKind::flatten: {
            if (!needs(0)) break;
            std::vector<float>& gx = grad_buf(n.inputs[0]);
            for (std::size_t i = 0; i < dout.size(); ++i) gx[i] += dout[i];
            break;
        }
        case OpKind::bce_loss: {
            if (!needs(0)) break;
            const Tensor& p = *nodes_[n.inputs[0]].out;
            const Tensor& y = *nodes_[n.inputs[1]].out;
            std::vector<float>& gp = grad_buf(n.inputs[0]);
            const float inv_m = 1.0f / static_cast<float>(p.numel());
            const float d = dout[0];
            for (std::size_t i = 0; i < p.numel(); ++i) {
                if (p.data[i] <= kBceEps || p.data[i] >= 1.0f - kBceEps) continue;  // clamped flat
                gp[i] += d * inv_m * (p.data[i] - y.data[i]) / (p.data[i] * (1.0f - p.data[i]));
            }
            break;
        }
        case OpKind::concat: {
            const Tensor& a = *nodes_[n.inputs[0]].out;
            const Tensor& b = *nodes_[n.inputs[1]].out;
            const int batch = a.dim(0), da = a.dim(1), db = b.dim(1);
            if (needs(0)) {
                std::vector<float>& ga = grad_buf(n.inputs[0]);
                for (int i = 0; i < batch; ++i)
                    for (int j = 0; j < da; ++j)
                        ga[static_cast<std::size_t>(i) * da + j] +=
                            dout[static_cast<std::size_t>(i) * (da + db) + j];
            }
            if (needs(1)) {
                std::vector<float>& gb = grad_buf(n.inputs[1]);
                for (int i = 0; i < batch; ++i)
                    for (int j = 0; j < db; ++j)
                        gb[static_cast<std::size_t>(i) * db + j] +=
                            dout[static_cast<std::size_t>(i) * (da + db) + da + j];
            }
            break;
        }
        case OpKind::leaf: break;
    }
}

}  // namespace gridshield
