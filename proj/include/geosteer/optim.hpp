#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "geosteer/tensor.hpp"

namespace geosteer {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction over a fixed list of parameter tensors. Moment
// buffers are allocated to match the shapes handed to the constructor; every
// later step must pass the same tensors in the same order.
class Adam {
public:
    Adam(AdamConfig cfg, const std::vector<Tensor*>& params) : cfg_(cfg) {
        for (const Tensor* p : params) {
            m_.emplace_back(p->shape);
            v_.emplace_back(p->shape);
        }
    }

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        if (params.size() != m_.size() || grads.size() != m_.size())
            throw std::invalid_argument("Adam::step: parameter list mismatch");
        ++t_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t k = 0; k < params.size(); ++k) {
            Tensor& p = *params[k];
            const Tensor& g = grads[k];
            if (!p.same_shape(g) || !p.same_shape(m_[k]))
                throw std::invalid_argument("Adam::step: shape mismatch");
            for (std::size_t i = 0; i < p.numel(); ++i) {
                double gi = g[i];
                m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * gi;
                v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * gi * gi;
                double mh = m_[k][i] / bc1;
                double vh = v_[k][i] / bc2;
                p[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
            }
        }
    }

private:
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

// Rescale grads in place so their global norm is at most `max_norm`.
inline void clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
    double sq = 0.0;
    for (const Tensor& g : grads) sq += dot(g, g);
    double n = std::sqrt(sq);
    if (n > max_norm && n > 0.0) {
        double s = max_norm / n;
        for (Tensor& g : grads)
            for (double& v : g.data) v *= s;
    }
}

}  // namespace geosteer
