#include "geosteer/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace geosteer {

namespace {

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

struct AttendShape {
    std::size_t width = 0;   // key / query row length
    std::size_t rows = 0;    // context positions
    std::size_t vwidth = 0;  // value / output row length
};

AttendShape attend_shape(const Tensor& q, const Tensor& kflat, const Tensor& vflat,
                         std::size_t width) {
    if (width == 0) throw std::invalid_argument("attend: width must be positive");
    if (q.numel() != width) throw std::invalid_argument("attend: query/width mismatch");
    if (kflat.numel() == 0 || kflat.numel() % width != 0)
        throw std::invalid_argument("attend: key stack not a multiple of width");
    AttendShape s;
    s.width = width;
    s.rows = kflat.numel() / width;
    if (vflat.numel() == 0 || vflat.numel() % s.rows != 0)
        throw std::invalid_argument("attend: value stack not a multiple of the row count");
    s.vwidth = vflat.numel() / s.rows;
    return s;
}

// probs gets the softmax weights (length rows); returns the attended value.
Tensor attend_forward(const Tensor& q, const Tensor& kflat, const Tensor& vflat,
                      const AttendShape& s, Tensor& probs) {
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(s.width));
    Tensor scores = Tensor::vec(s.rows);
    for (std::size_t j = 0; j < s.rows; ++j) {
        double acc = 0.0;
        const double* kr = kflat.data.data() + j * s.width;
        for (std::size_t i = 0; i < s.width; ++i) acc += q[i] * kr[i];
        scores[j] = acc * inv_sqrt;
    }
    double mx = scores[0];
    for (double v : scores.data) mx = std::max(mx, v);
    probs = Tensor::vec(s.rows);
    double z = 0.0;
    for (std::size_t j = 0; j < s.rows; ++j) {
        probs[j] = std::exp(scores[j] - mx);
        z += probs[j];
    }
    double inv_z = 1.0 / z;
    for (double& v : probs.data) v *= inv_z;

    Tensor out = Tensor::vec(s.vwidth);
    for (std::size_t j = 0; j < s.rows; ++j) {
        double pj = probs[j];
        const double* vr = vflat.data.data() + j * s.vwidth;
        for (std::size_t i = 0; i < s.vwidth; ++i) out[i] += pj * vr[i];
    }
    return out;
}

}  // namespace

NodeId Tape::push(Node n, const char* what) {
    if (!n.value.all_finite())
        throw std::runtime_error(std::string("tape: non-finite value produced by ") + what);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

const Tape::Node& Tape::node(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw std::out_of_range("tape: bad node id");
    return nodes_[static_cast<std::size_t>(id)];
}

NodeId Tape::leaf(Tensor value, bool needs_grad) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    return push(std::move(n), "leaf");
}

NodeId Tape::affine(NodeId w, NodeId x, NodeId b) {
    const Node& nw = node(w);
    const Node& nx = node(x);
    const Node& nb = node(b);
    if (nw.value.rank() != 2 || nx.value.rank() != 1 || nb.value.rank() != 1)
        throw std::invalid_argument("affine: expected matrix, vector, vector");
    std::size_t m = nw.value.rows(), k = nw.value.cols();
    if (nx.value.numel() != k || nb.value.numel() != m)
        throw std::invalid_argument("affine: shape mismatch");
    Node n;
    n.op = Op::affine;
    n.a = w;
    n.b = x;
    n.c = b;
    n.value = Tensor::vec(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = nb.value[i];
        const double* wr = nw.value.data.data() + i * k;
        for (std::size_t j = 0; j < k; ++j) s += wr[j] * nx.value[j];
        n.value[i] = s;
    }
    n.needs_grad = nw.needs_grad || nx.needs_grad || nb.needs_grad;
    return push(std::move(n), "affine");
}

NodeId Tape::add(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (!na.value.same_shape(nb.value)) throw std::invalid_argument("add: shape mismatch");
    Node n;
    n.op = Op::add;
    n.a = a;
    n.b = b;
    n.value = na.value;
    for (std::size_t i = 0; i < n.value.numel(); ++i) n.value[i] += nb.value[i];
    n.needs_grad = na.needs_grad || nb.needs_grad;
    return push(std::move(n), "add");
}

NodeId Tape::sub(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (!na.value.same_shape(nb.value)) throw std::invalid_argument("sub: shape mismatch");
    Node n;
    n.op = Op::sub;
    n.a = a;
    n.b = b;
    n.value = na.value;
    for (std::size_t i = 0; i < n.value.numel(); ++i) n.value[i] -= nb.value[i];
    n.needs_grad = na.needs_grad || nb.needs_grad;
    return push(std::move(n), "sub");
}

NodeId Tape::mul(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (!na.value.same_shape(nb.value)) throw std::invalid_argument("mul: shape mismatch");
    Node n;
    n.op = Op::mul;
    n.a = a;
    n.b = b;
    n.value = na.value;
    for (std::size_t i = 0; i < n.value.numel(); ++i) n.value[i] *= nb.value[i];
    n.needs_grad = na.needs_grad || nb.needs_grad;
    return push(std::move(n), "mul");
}

NodeId Tape::scale(NodeId a, double c) {
    const Node& na = node(a);
    Node n;
    n.op = Op::scale;
    n.a = a;
    n.c0 = c;
    n.value = na.value;
    for (double& v : n.value.data) v *= c;
    n.needs_grad = na.needs_grad;
    return push(std::move(n), "scale");
}

NodeId Tape::add_scalar(NodeId a, double c) {
    const Node& na = node(a);
    Node n;
    n.op = Op::add_scalar;
    n.a = a;
    n.c0 = c;
    n.value = na.value;
    for (double& v : n.value.data) v += c;
    n.needs_grad = na.needs_grad;
    return push(std::move(n), "add_scalar");
}

NodeId Tape::tanh_fn(NodeId a) {
    const Node& na = node(a);
    Node n;
    n.op = Op::tanh_fn;
    n.a = a;
    n.value = na.value;
    for (double& v : n.value.data) v = std::tanh(v);
    n.needs_grad = na.needs_grad;
    return push(std::move(n), "tanh");
}

NodeId Tape::sigmoid_fn(NodeId a) {
    const Node& na = node(a);
    Node n;
    n.op = Op::sigmoid_fn;
    n.a = a;
    n.value = na.value;
    for (double& v : n.value.data) v = sigmoid(v);
    n.needs_grad = na.needs_grad;
    return push(std::move(n), "sigmoid");
}

NodeId Tape::exp_fn(NodeId a) {
    const Node& na = node(a);
    Node n;
    n.op = Op::exp_fn;
    n.a = a;
    n.value = na.value;
    for (double& v : n.value.data) v = std::exp(v);
    n.needs_grad = na.needs_grad;
    return push(std::move(n), "exp");
}

NodeId Tape::clamp(NodeId a, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
    const Node& na = node(a);
    Node n;
    n.op = Op::clamp;
    n.a = a;
    n.c0 = lo;
    n.c1 = hi;
    n.value = na.value;
    for (double& v : n.value.data) v = std::min(std::max(v, lo), hi);
    n.needs_grad = na.needs_grad;
    return push(std::move(n), "clamp");
}

NodeId Tape::concat(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.value.rank() != 1 || nb.value.rank() != 1)
        throw std::invalid_argument("concat: expected vectors");
    Node n;
    n.op = Op::concat;
    n.a = a;
    n.b = b;
    n.value = Tensor::vec(na.value.numel() + nb.value.numel());
    std::size_t i = 0;
    for (double v : na.value.data) n.value[i++] = v;
    for (double v : nb.value.data) n.value[i++] = v;
    n.needs_grad = na.needs_grad || nb.needs_grad;
    return push(std::move(n), "concat");
}

NodeId Tape::slice(NodeId a, std::size_t offset, std::size_t len) {
    const Node& na = node(a);
    if (na.value.rank() != 1) throw std::invalid_argument("slice: expected vector");
    if (offset + len > na.value.numel()) throw std::invalid_argument("slice: out of range");
    Node n;
    n.op = Op::slice;
    n.a = a;
    n.i0 = offset;
    n.i1 = len;
    n.value = Tensor::vec(len);
    for (std::size_t i = 0; i < len; ++i) n.value[i] = na.value[offset + i];
    n.needs_grad = na.needs_grad;
    return push(std::move(n), "slice");
}

NodeId Tape::row(NodeId m, std::size_t r) {
    const Node& nm = node(m);
    if (nm.value.rank() != 2) throw std::invalid_argument("row: expected matrix");
    if (r >= nm.value.rows()) throw std::invalid_argument("row: index out of range");
    Node n;
    n.op = Op::row;
    n.a = m;
    n.i0 = r;
    std::size_t c = nm.value.cols();
    n.value = Tensor::vec(c);
    for (std::size_t j = 0; j < c; ++j) n.value[j] = nm.value.at(r, j);
    n.needs_grad = nm.needs_grad;
    return push(std::move(n), "row");
}

NodeId Tape::sum(NodeId a) {
    const Node& na = node(a);
    Node n;
    n.op = Op::sum;
    n.a = a;
    double s = 0.0;
    for (double v : na.value.data) s += v;
    n.value = Tensor::scalar(s);
    n.needs_grad = na.needs_grad;
    return push(std::move(n), "sum");
}

NodeId Tape::dot_fn(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (!na.value.same_shape(nb.value)) throw std::invalid_argument("dot: shape mismatch");
    Node n;
    n.op = Op::dot_fn;
    n.a = a;
    n.b = b;
    n.value = Tensor::scalar(dot(na.value, nb.value));
    n.needs_grad = na.needs_grad || nb.needs_grad;
    return push(std::move(n), "dot");
}

NodeId Tape::softmax_ce(NodeId logits, std::size_t target) {
    const Node& nl = node(logits);
    if (nl.value.rank() != 1) throw std::invalid_argument("softmax_ce: expected vector");
    std::size_t v = nl.value.numel();
    if (target >= v) throw std::invalid_argument("softmax_ce: target out of range");
    double mx = nl.value[0];
    for (double x : nl.value.data) mx = std::max(mx, x);
    double z = 0.0;
    for (double x : nl.value.data) z += std::exp(x - mx);
    double lse = mx + std::log(z);
    Node n;
    n.op = Op::softmax_ce;
    n.a = logits;
    n.i0 = target;
    n.value = Tensor::scalar(lse - nl.value[target]);
    n.aux = Tensor::vec(v);
    for (std::size_t i = 0; i < v; ++i) n.aux[i] = std::exp(nl.value[i] - lse);
    n.needs_grad = nl.needs_grad;
    return push(std::move(n), "softmax_ce");
}

NodeId Tape::attend(NodeId q, NodeId kflat, NodeId vflat, std::size_t width) {
    const Node& nq = node(q);
    const Node& nk = node(kflat);
    const Node& nv = node(vflat);
    AttendShape s = attend_shape(nq.value, nk.value, nv.value, width);
    Node n;
    n.op = Op::attend;
    n.a = q;
    n.b = kflat;
    n.c = vflat;
    n.i0 = s.width;
    n.i1 = s.rows;
    n.c0 = 1.0 / std::sqrt(static_cast<double>(s.width));
    n.value = attend_forward(nq.value, nk.value, nv.value, s, n.aux);
    n.needs_grad = nq.needs_grad || nk.needs_grad || nv.needs_grad;
    return push(std::move(n), "attend");
}

const Tensor& Tape::value(NodeId id) const { return node(id).value; }

void Tape::accumulate(NodeId id, const Tensor& delta) {
    Tensor& a = adj_[static_cast<std::size_t>(id)];
    if (a.data.empty()) {
        a = Tensor(nodes_[static_cast<std::size_t>(id)].value.shape);
    }
    for (std::size_t i = 0; i < delta.numel(); ++i) a.data[i] += delta.data[i];
}

void Tape::accumulate_slice(NodeId id, std::size_t offset, const Tensor& delta) {
    Tensor& a = adj_[static_cast<std::size_t>(id)];
    if (a.data.empty()) {
        a = Tensor(nodes_[static_cast<std::size_t>(id)].value.shape);
    }
    for (std::size_t i = 0; i < delta.numel(); ++i) a.data[offset + i] += delta.data[i];
}

void Tape::accumulate_row(NodeId id, std::size_t r, const Tensor& delta) {
    Tensor& a = adj_[static_cast<std::size_t>(id)];
    if (a.data.empty()) {
        a = Tensor(nodes_[static_cast<std::size_t>(id)].value.shape);
    }
    std::size_t c = nodes_[static_cast<std::size_t>(id)].value.cols();
    for (std::size_t j = 0; j < delta.numel(); ++j) a.data[r * c + j] += delta.data[j];
}

void Tape::backward(NodeId root, const Tensor& cotangent) {
    const Node& nr = node(root);
    if (!cotangent.same_shape(nr.value))
        throw std::invalid_argument("backward: cotangent shape mismatch");
    adj_.assign(nodes_.size(), Tensor{});
    adj_[static_cast<std::size_t>(root)] = cotangent;

    for (NodeId id = root; id >= 0; --id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) continue;
        const Tensor& g = adj_[static_cast<std::size_t>(id)];
        if (g.data.empty()) continue;

        switch (n.op) {
            case Op::leaf:
                break;
            case Op::affine: {
                const Tensor& w = nodes_[n.a].value;
                const Tensor& x = nodes_[n.b].value;
                std::size_t m = w.rows(), k = w.cols();
                if (needs(n.a)) {
                    Tensor& aw = adj_[static_cast<std::size_t>(n.a)];
                    if (aw.data.empty()) aw = Tensor(w.shape);
                    for (std::size_t i = 0; i < m; ++i) {
                        double gi = g[i];
                        double* r = aw.data.data() + i * k;
                        for (std::size_t j = 0; j < k; ++j) r[j] += gi * x[j];
                    }
                }
                if (needs(n.b)) {
                    Tensor& ax = adj_[static_cast<std::size_t>(n.b)];
                    if (ax.data.empty()) ax = Tensor(x.shape);
                    for (std::size_t i = 0; i < m; ++i) {
                        double gi = g[i];
                        const double* r = w.data.data() + i * k;
                        for (std::size_t j = 0; j < k; ++j) ax[j] += gi * r[j];
                    }
                }
                if (needs(n.c)) accumulate(n.c, g);
                break;
            }
            case Op::add:
                if (needs(n.a)) accumulate(n.a, g);
                if (needs(n.b)) accumulate(n.b, g);
                break;
            case Op::sub: {
                if (needs(n.a)) accumulate(n.a, g);
                if (needs(n.b)) {
                    Tensor neg = g;
                    for (double& v : neg.data) v = -v;
                    accumulate(n.b, neg);
                }
                break;
            }
            case Op::mul: {
                if (needs(n.a)) {
                    Tensor d = g;
                    const Tensor& b = nodes_[n.b].value;
                    for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= b[i];
                    accumulate(n.a, d);
                }
                if (needs(n.b)) {
                    Tensor d = g;
                    const Tensor& a = nodes_[n.a].value;
                    for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= a[i];
                    accumulate(n.b, d);
                }
                break;
            }
            case Op::scale: {
                if (needs(n.a)) {
                    Tensor d = g;
                    for (double& v : d.data) v *= n.c0;
                    accumulate(n.a, d);
                }
                break;
            }
            case Op::add_scalar:
                if (needs(n.a)) accumulate(n.a, g);
                break;
            case Op::tanh_fn: {
                if (needs(n.a)) {
                    Tensor d = g;
                    for (std::size_t i = 0; i < d.numel(); ++i)
                        d[i] *= 1.0 - n.value[i] * n.value[i];
                    accumulate(n.a, d);
                }
                break;
            }
            case Op::sigmoid_fn: {
                if (needs(n.a)) {
                    Tensor d = g;
                    for (std::size_t i = 0; i < d.numel(); ++i)
                        d[i] *= n.value[i] * (1.0 - n.value[i]);
                    accumulate(n.a, d);
                }
                break;
            }
            case Op::exp_fn: {
                if (needs(n.a)) {
                    Tensor d = g;
                    for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= n.value[i];
                    accumulate(n.a, d);
                }
                break;
            }
            case Op::clamp: {
                if (needs(n.a)) {
                    const Tensor& x = nodes_[n.a].value;
                    Tensor d = g;
                    for (std::size_t i = 0; i < d.numel(); ++i)
                        if (!(x[i] > n.c0 && x[i] < n.c1)) d[i] = 0.0;
                    accumulate(n.a, d);
                }
                break;
            }
            case Op::concat: {
                std::size_t na_len = nodes_[n.a].value.numel();
                if (needs(n.a)) {
                    Tensor d = Tensor::vec(na_len);
                    for (std::size_t i = 0; i < na_len; ++i) d[i] = g[i];
                    accumulate(n.a, d);
                }
                if (needs(n.b)) {
                    std::size_t nb_len = nodes_[n.b].value.numel();
                    Tensor d = Tensor::vec(nb_len);
                    for (std::size_t i = 0; i < nb_len; ++i) d[i] = g[na_len + i];
                    accumulate(n.b, d);
                }
                break;
            }
            case Op::slice:
                if (needs(n.a)) accumulate_slice(n.a, n.i0, g);
                break;
            case Op::row:
                if (needs(n.a)) accumulate_row(n.a, n.i0, g);
                break;
            case Op::sum: {
                if (needs(n.a)) {
                    Tensor d(nodes_[n.a].value.shape);
                    d.fill(g[0]);
                    accumulate(n.a, d);
                }
                break;
            }
            case Op::dot_fn: {
                if (needs(n.a)) {
                    Tensor d = nodes_[n.b].value;
                    for (double& v : d.data) v *= g[0];
                    accumulate(n.a, d);
                }
                if (needs(n.b)) {
                    Tensor d = nodes_[n.a].value;
                    for (double& v : d.data) v *= g[0];
                    accumulate(n.b, d);
                }
                break;
            }
            case Op::softmax_ce: {
                if (needs(n.a)) {
                    Tensor d = n.aux;
                    d[n.i0] -= 1.0;
                    for (double& v : d.data) v *= g[0];
                    accumulate(n.a, d);
                }
                break;
            }
            case Op::attend: {
                const Tensor& q = nodes_[n.a].value;
                const Tensor& kflat = nodes_[n.b].value;
                const Tensor& vflat = nodes_[n.c].value;
                std::size_t width = n.i0, rows = n.i1;
                std::size_t vwidth = vflat.numel() / rows;
                const Tensor& p = n.aux;

                // dprobs_j = g . V_j, then softmax backward gives the score
                // adjoints; those fan out linearly to q and K.
                Tensor dp = Tensor::vec(rows);
                double common = 0.0;
                for (std::size_t j = 0; j < rows; ++j) {
                    const double* vr = vflat.data.data() + j * vwidth;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < vwidth; ++i) acc += g[i] * vr[i];
                    dp[j] = acc;
                    common += p[j] * acc;
                }
                if (needs(n.c)) {
                    Tensor dv = Tensor::vec(rows * vwidth);
                    for (std::size_t j = 0; j < rows; ++j) {
                        double pj = p[j];
                        double* dvr = dv.data.data() + j * vwidth;
                        for (std::size_t i = 0; i < vwidth; ++i) dvr[i] = pj * g[i];
                    }
                    accumulate(n.c, dv);
                }
                if (needs(n.a) || needs(n.b)) {
                    Tensor ds = Tensor::vec(rows);
                    for (std::size_t j = 0; j < rows; ++j)
                        ds[j] = p[j] * (dp[j] - common) * n.c0;
                    if (needs(n.a)) {
                        Tensor dq = Tensor::vec(width);
                        for (std::size_t j = 0; j < rows; ++j) {
                            const double* kr = kflat.data.data() + j * width;
                            for (std::size_t i = 0; i < width; ++i) dq[i] += ds[j] * kr[i];
                        }
                        accumulate(n.a, dq);
                    }
                    if (needs(n.b)) {
                        Tensor dk = Tensor::vec(rows * width);
                        for (std::size_t j = 0; j < rows; ++j) {
                            double* dkr = dk.data.data() + j * width;
                            for (std::size_t i = 0; i < width; ++i) dkr[i] = ds[j] * q[i];
                        }
                        accumulate(n.b, dk);
                    }
                }
                break;
            }
        }
    }
}

const Tensor& Tape::grad(NodeId id) {
    node(id);
    if (adj_.size() != nodes_.size())
        throw std::logic_error("grad: backward() has not run");
    Tensor& a = adj_[static_cast<std::size_t>(id)];
    if (a.data.empty()) a = Tensor(nodes_[static_cast<std::size_t>(id)].value.shape);
    return a;
}

Tensor Tape::forward_tangent(NodeId target,
                             const std::vector<std::pair<NodeId, Tensor>>& seeds) const {
    node(target);
    std::vector<Tensor> tan(nodes_.size());
    for (const auto& [id, t] : seeds) {
        const Node& n = node(id);
        if (n.op != Op::leaf) throw std::invalid_argument("forward_tangent: seed on non-leaf");
        if (!t.same_shape(n.value))
            throw std::invalid_argument("forward_tangent: seed shape mismatch");
        tan[static_cast<std::size_t>(id)] = t;
    }

    auto tangent_of = [&](NodeId id) -> const Tensor& {
        Tensor& t = tan[static_cast<std::size_t>(id)];
        if (t.data.empty()) t = Tensor(nodes_[static_cast<std::size_t>(id)].value.shape);
        return t;
    };

    for (NodeId id = 0; id <= target; ++id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.op == Op::leaf) continue;
        Tensor t(n.value.shape);
        switch (n.op) {
            case Op::leaf:
                break;
            case Op::affine: {
                const Tensor& w = nodes_[n.a].value;
                const Tensor& x = nodes_[n.b].value;
                const Tensor& dw = tangent_of(n.a);
                const Tensor& dx = tangent_of(n.b);
                const Tensor& db = tangent_of(n.c);
                std::size_t m = w.rows(), k = w.cols();
                for (std::size_t i = 0; i < m; ++i) {
                    double s = db[i];
                    for (std::size_t j = 0; j < k; ++j)
                        s += dw.at(i, j) * x[j] + w.at(i, j) * dx[j];
                    t[i] = s;
                }
                break;
            }
            case Op::add: {
                const Tensor& da = tangent_of(n.a);
                const Tensor& db = tangent_of(n.b);
                for (std::size_t i = 0; i < t.numel(); ++i) t[i] = da[i] + db[i];
                break;
            }
            case Op::sub: {
                const Tensor& da = tangent_of(n.a);
                const Tensor& db = tangent_of(n.b);
                for (std::size_t i = 0; i < t.numel(); ++i) t[i] = da[i] - db[i];
                break;
            }
            case Op::mul: {
                const Tensor& a = nodes_[n.a].value;
                const Tensor& b = nodes_[n.b].value;
                const Tensor& da = tangent_of(n.a);
                const Tensor& db = tangent_of(n.b);
                for (std::size_t i = 0; i < t.numel(); ++i)
                    t[i] = da[i] * b[i] + a[i] * db[i];
                break;
            }
            case Op::scale: {
                const Tensor& da = tangent_of(n.a);
                for (std::size_t i = 0; i < t.numel(); ++i) t[i] = n.c0 * da[i];
                break;
            }
            case Op::add_scalar:
                t = tangent_of(n.a);
                break;
            case Op::tanh_fn: {
                const Tensor& da = tangent_of(n.a);
                for (std::size_t i = 0; i < t.numel(); ++i)
                    t[i] = da[i] * (1.0 - n.value[i] * n.value[i]);
                break;
            }
            case Op::sigmoid_fn: {
                const Tensor& da = tangent_of(n.a);
                for (std::size_t i = 0; i < t.numel(); ++i)
                    t[i] = da[i] * n.value[i] * (1.0 - n.value[i]);
                break;
            }
            case Op::exp_fn: {
                const Tensor& da = tangent_of(n.a);
                for (std::size_t i = 0; i < t.numel(); ++i) t[i] = da[i] * n.value[i];
                break;
            }
            case Op::clamp: {
                const Tensor& x = nodes_[n.a].value;
                const Tensor& da = tangent_of(n.a);
                for (std::size_t i = 0; i < t.numel(); ++i)
                    t[i] = (x[i] > n.c0 && x[i] < n.c1) ? da[i] : 0.0;
                break;
            }
            case Op::concat: {
                const Tensor& da = tangent_of(n.a);
                const Tensor& db = tangent_of(n.b);
                std::size_t i = 0;
                for (double v : da.data) t[i++] = v;
                for (double v : db.data) t[i++] = v;
                break;
            }
            case Op::slice: {
                const Tensor& da = tangent_of(n.a);
                for (std::size_t i = 0; i < n.i1; ++i) t[i] = da[n.i0 + i];
                break;
            }
            case Op::row: {
                const Tensor& da = tangent_of(n.a);
                std::size_t c = nodes_[n.a].value.cols();
                for (std::size_t j = 0; j < c; ++j) t[j] = da.data[n.i0 * c + j];
                break;
            }
            case Op::sum: {
                const Tensor& da = tangent_of(n.a);
                double s = 0.0;
                for (double v : da.data) s += v;
                t[0] = s;
                break;
            }
            case Op::dot_fn: {
                const Tensor& a = nodes_[n.a].value;
                const Tensor& b = nodes_[n.b].value;
                const Tensor& da = tangent_of(n.a);
                const Tensor& db = tangent_of(n.b);
                double s = 0.0;
                for (std::size_t i = 0; i < a.numel(); ++i)
                    s += da[i] * b[i] + a[i] * db[i];
                t[0] = s;
                break;
            }
            case Op::softmax_ce: {
                const Tensor& dl = tangent_of(n.a);
                double s = 0.0;
                for (std::size_t i = 0; i < dl.numel(); ++i) s += n.aux[i] * dl[i];
                t[0] = s - dl[n.i0];
                break;
            }
            case Op::attend: {
                const Tensor& q = nodes_[n.a].value;
                const Tensor& kflat = nodes_[n.b].value;
                const Tensor& vflat = nodes_[n.c].value;
                const Tensor& dq = tangent_of(n.a);
                const Tensor& dk = tangent_of(n.b);
                const Tensor& dv = tangent_of(n.c);
                std::size_t width = n.i0, rows = n.i1;
                std::size_t vwidth = vflat.numel() / rows;
                const Tensor& p = n.aux;

                Tensor ts = Tensor::vec(rows);
                double tcommon = 0.0;
                for (std::size_t j = 0; j < rows; ++j) {
                    const double* kr = kflat.data.data() + j * width;
                    const double* dkr = dk.data.data() + j * width;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < width; ++i)
                        acc += dq[i] * kr[i] + q[i] * dkr[i];
                    ts[j] = acc * n.c0;
                    tcommon += p[j] * ts[j];
                }
                for (std::size_t j = 0; j < rows; ++j) {
                    double tp = p[j] * (ts[j] - tcommon);
                    const double* vr = vflat.data.data() + j * vwidth;
                    const double* dvr = dv.data.data() + j * vwidth;
                    for (std::size_t i = 0; i < vwidth; ++i)
                        t[i] += tp * vr[i] + p[j] * dvr[i];
                }
                break;
            }
        }
        tan[static_cast<std::size_t>(id)] = std::move(t);
    }
    Tensor out = tan[static_cast<std::size_t>(target)];
    if (out.data.empty()) out = Tensor(nodes_[static_cast<std::size_t>(target)].value.shape);
    return out;
}

// ---- dense layers ----

DenseLayer make_dense(std::size_t out, std::size_t in, Act act, Rng& rng) {
    DenseLayer l;
    l.w = Tensor::mat(out, in);
    l.b = Tensor::vec(out);
    double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : l.w.data) v = sd * rng.normal();
    l.act = act;
    return l;
}

Tensor dense_apply(const DenseLayer& layer, const Tensor& x) {
    std::size_t m = layer.w.rows(), k = layer.w.cols();
    if (x.numel() != k) throw std::invalid_argument("dense_apply: input size mismatch");
    Tensor y = Tensor::vec(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = layer.b[i];
        const double* r = layer.w.data.data() + i * k;
        for (std::size_t j = 0; j < k; ++j) s += r[j] * x[j];
        y[i] = s;
    }
    switch (layer.act) {
        case Act::none:
            break;
        case Act::tanh_act:
            for (double& v : y.data) v = std::tanh(v);
            break;
        case Act::sigmoid_act:
            for (double& v : y.data) v = (v >= 0.0) ? 1.0 / (1.0 + std::exp(-v))
                                                    : std::exp(v) / (1.0 + std::exp(v));
            break;
    }
    if (!y.all_finite()) throw std::runtime_error("dense_apply: non-finite output");
    return y;
}

NodeId dense_build(Tape& tape, const DenseLayer& layer, NodeId x, bool train_params,
                   std::vector<NodeId>* param_nodes) {
    NodeId w = tape.leaf(layer.w, train_params);
    NodeId b = tape.leaf(layer.b, train_params);
    if (param_nodes) {
        param_nodes->push_back(w);
        param_nodes->push_back(b);
    }
    NodeId y = tape.affine(w, x, b);
    switch (layer.act) {
        case Act::none:
            return y;
        case Act::tanh_act:
            return tape.tanh_fn(y);
        case Act::sigmoid_act:
            return tape.sigmoid_fn(y);
    }
    return y;
}

Tensor Mlp::apply(const Tensor& x) const {
    Tensor y = x;
    for (const DenseLayer& l : layers) y = dense_apply(l, y);
    return y;
}

Mlp make_mlp(const std::vector<std::size_t>& dims, Act hidden, Act out, Rng& rng) {
    if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least two dims");
    Mlp m;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        Act a = (i + 2 == dims.size()) ? out : hidden;
        m.layers.push_back(make_dense(dims[i + 1], dims[i], a, rng));
    }
    return m;
}

NodeId mlp_build(Tape& tape, const Mlp& mlp, NodeId x, bool train_params,
                 std::vector<NodeId>* param_nodes) {
    NodeId y = x;
    for (const DenseLayer& l : mlp.layers)
        y = dense_build(tape, l, y, train_params, param_nodes);
    return y;
}

Tensor attend_apply(const Tensor& q, const Tensor& kflat, const Tensor& vflat,
                    std::size_t width) {
    AttendShape s = attend_shape(q, kflat, vflat, width);
    Tensor probs;
    Tensor out = attend_forward(q, kflat, vflat, s, probs);
    if (!out.all_finite()) throw std::runtime_error("attend_apply: non-finite output");
    return out;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double step) {
    if (step <= 0.0) throw std::invalid_argument("finite_diff_grad: step must be positive");
    Tensor g(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double orig = probe[i];
        probe[i] = orig + step;
        double fp = f(probe);
        probe[i] = orig - step;
        double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_diff_grad: non-finite function value");
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

}  // namespace geosteer
