#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "geosteer/rng.hpp"
#include "geosteer/tensor.hpp"

namespace geosteer {

using NodeId = int;

enum class Op {
    leaf,
    affine,      // W(m,n) * x(n) + b(m)
    add,
    sub,
    mul,         // elementwise
    scale,       // c0 * a
    add_scalar,  // a + c0
    tanh_fn,
    sigmoid_fn,
    exp_fn,
    clamp,       // clip to [c0, c1], zero slope outside
    concat,
    slice,       // [i0, i0+i1)
    row,         // row i0 of a matrix
    sum,         // scalar
    dot_fn,      // scalar
    softmax_ce,  // scalar: logsumexp(logits) - logits[i0]
    attend,      // softmax(q K^T / sqrt(w)) V over flat row-major K, V
};

// Reverse-mode tape over vector/matrix values. Nodes are appended in
// evaluation order, so walking them backwards is a valid reverse topological
// sweep. Forward evaluation is pure: each op computes its value when pushed
// and rejects non-finite results immediately.
class Tape {
public:
    NodeId leaf(Tensor value, bool needs_grad = true);

    NodeId affine(NodeId w, NodeId x, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double c);
    NodeId add_scalar(NodeId a, double c);
    NodeId tanh_fn(NodeId a);
    NodeId sigmoid_fn(NodeId a);
    NodeId exp_fn(NodeId a);
    NodeId clamp(NodeId a, double lo, double hi);
    NodeId concat(NodeId a, NodeId b);
    NodeId slice(NodeId a, std::size_t offset, std::size_t len);
    NodeId row(NodeId m, std::size_t r);
    NodeId sum(NodeId a);
    NodeId dot_fn(NodeId a, NodeId b);
    NodeId softmax_ce(NodeId logits, std::size_t target);

    // Single-head scaled dot-product attention. kflat and vflat are row-major
    // stacks of per-position rows; `width` is the key row length and must
    // match q. Rows are inferred from kflat, the output takes vflat's row
    // length. Softmax is max-stabilized.
    NodeId attend(NodeId q, NodeId kflat, NodeId vflat, std::size_t width);

    const Tensor& value(NodeId id) const;
    std::size_t size() const { return nodes_.size(); }

    // Reverse sweep from root, seeded with a cotangent of the root's shape.
    // Adjoints from any previous sweep are discarded first.
    void backward(NodeId root, const Tensor& cotangent);

    // Adjoint accumulated by the last backward() call; zeros if untouched.
    const Tensor& grad(NodeId id);

    // Forward-mode sweep over the same graph: seeds give tangents for leaves,
    // every other tangent is propagated by the linearized op rules. Used as an
    // independent derivative route when cross-checking the reverse pass.
    Tensor forward_tangent(NodeId target,
                           const std::vector<std::pair<NodeId, Tensor>>& seeds) const;

private:
    struct Node {
        Op op = Op::leaf;
        NodeId a = -1, b = -1, c = -1;
        Tensor value;
        Tensor aux;  // softmax probabilities for softmax_ce
        double c0 = 0.0, c1 = 0.0;
        std::size_t i0 = 0, i1 = 0;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor> adj_;

    NodeId push(Node n, const char* what);
    const Node& node(NodeId id) const;
    void accumulate(NodeId id, const Tensor& delta);
    void accumulate_slice(NodeId id, std::size_t offset, const Tensor& delta);
    void accumulate_row(NodeId id, std::size_t r, const Tensor& delta);
    bool needs(NodeId id) const { return id >= 0 && nodes_[id].needs_grad; }
};

// ---- layered dense programs ----

enum class Act { none, tanh_act, sigmoid_act };

struct DenseLayer {
    Tensor w;  // (out, in)
    Tensor b;  // (out)
    Act act = Act::none;
};

DenseLayer make_dense(std::size_t out, std::size_t in, Act act, Rng& rng);
Tensor dense_apply(const DenseLayer& layer, const Tensor& x);
NodeId dense_build(Tape& tape, const DenseLayer& layer, NodeId x, bool train_params,
                   std::vector<NodeId>* param_nodes);

struct Mlp {
    std::vector<DenseLayer> layers;

    std::size_t in_dim() const { return layers.front().w.cols(); }
    std::size_t out_dim() const { return layers.back().w.rows(); }
    Tensor apply(const Tensor& x) const;
};

// dims = {in, hidden..., out}; `hidden` activation on all but the last layer.
Mlp make_mlp(const std::vector<std::size_t>& dims, Act hidden, Act out, Rng& rng);
NodeId mlp_build(Tape& tape, const Mlp& mlp, NodeId x, bool train_params,
                 std::vector<NodeId>* param_nodes);

// Plain (tape-free) twin of Tape::attend, sharing the same kernel so both
// routes agree bitwise.
Tensor attend_apply(const Tensor& q, const Tensor& kflat, const Tensor& vflat,
                    std::size_t width);

// Central-difference gradient of a scalar function. The oracle used to check
// every reverse-mode program in the repo.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double step);

}  // namespace geosteer
