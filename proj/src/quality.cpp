#include "geosteer/quality.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "geosteer/checkpoint.hpp"
#include "geosteer/optim.hpp"

namespace geosteer::quality {

std::vector<std::pair<std::string, Tensor*>> QualityParams::named() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        std::string base = "q" + std::to_string(i);
        out.push_back({base + ".w", &net.layers[i].w});
        out.push_back({base + ".b", &net.layers[i].b});
    }
    return out;
}

QualityParams init_quality(const QualityConfig& cfg, Rng& rng) {
    if (cfg.latent_dim < 1 || cfg.hidden_dim < 1)
        throw std::invalid_argument("quality: dimensions must be positive");
    QualityParams p;
    p.latent_dim = cfg.latent_dim;
    p.squash = cfg.squash;
    p.net = make_mlp({static_cast<std::size_t>(cfg.latent_dim),
                      static_cast<std::size_t>(cfg.hidden_dim),
                      static_cast<std::size_t>(cfg.hidden_dim), 1},
                     Act::tanh_act, cfg.squash ? Act::sigmoid_act : Act::none, rng);
    return p;
}

QualityParams random_quality(int latent_dim, int hidden_dim, std::uint64_t seed) {
    QualityConfig cfg;
    cfg.latent_dim = latent_dim;
    cfg.hidden_dim = hidden_dim;
    Rng rng(seed);
    return init_quality(cfg, rng);
}

double predict(const QualityParams& p, const Tensor& z) {
    if (z.numel() != static_cast<std::size_t>(p.latent_dim))
        throw std::invalid_argument("quality predict: latent size mismatch");
    return p.net.apply(z)[0];
}

Tensor grad_latent(const QualityParams& p, const Tensor& z) {
    Tape tape;
    NodeId zid = tape.leaf(z, true);
    NodeId out = build_quality(tape, p, zid);
    tape.backward(out, Tensor::scalar(1.0));
    return tape.grad(zid);
}

NodeId build_quality(Tape& tape, const QualityParams& p, NodeId z) {
    return mlp_build(tape, p.net, z, false, nullptr);
}

QualityTrainResult train_quality(const std::vector<QualityPair>& train,
                                 const std::vector<QualityPair>& val, const QualityConfig& cfg) {
    if (cfg.epochs < 1 || cfg.batch < 1 || cfg.lr <= 0.0)
        throw std::invalid_argument("train_quality: bad training config");
    if (train.empty()) throw std::invalid_argument("train_quality: no pairs to fit");
    for (const QualityPair& pr : train)
        if (pr.z.numel() != static_cast<std::size_t>(cfg.latent_dim))
            throw std::invalid_argument("train_quality: latent size mismatch");

    Rng rng(cfg.seed);
    QualityTrainResult res;
    res.params = init_quality(cfg, rng);
    QualityParams& p = res.params;

    auto named = p.named();
    std::vector<Tensor*> ptrs;
    for (auto& [name, t] : named) ptrs.push_back(t);
    Adam opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8}, ptrs);

    auto mse_of = [&](const std::vector<QualityPair>& pairs) {
        if (pairs.empty()) return 0.0;
        double s = 0.0;
        for (const QualityPair& pr : pairs) {
            double d = predict(p, pr.z) - pr.y;
            s += d * d;
        }
        return s / static_cast<double>(pairs.size());
    };

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch)) {
            std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            std::vector<Tensor> grads;
            for (Tensor* t : ptrs) grads.emplace_back(t->shape);

            for (std::size_t bi = start; bi < stop; ++bi) {
                const QualityPair& pr = train[order[bi]];
                Tape tape;
                std::vector<NodeId> pids;
                NodeId z = tape.leaf(pr.z, false);
                NodeId out = mlp_build(tape, p.net, z, true, &pids);
                NodeId diff = tape.add_scalar(out, -pr.y);
                NodeId loss = tape.mul(diff, diff);
                tape.backward(loss, Tensor::scalar(1.0));
                for (std::size_t k = 0; k < pids.size(); ++k)
                    axpy(1.0, tape.grad(pids[k]), grads[k]);
            }

            double inv = 1.0 / static_cast<double>(stop - start);
            for (Tensor& g : grads)
                for (double& x : g.data) x *= inv;
            clip_global_norm(grads, 5.0);
            opt.step(ptrs, grads);
        }

        res.train_mse.push_back(mse_of(train));
        res.val_mse.push_back(mse_of(val));
        if (!std::isfinite(res.train_mse.back()))
            throw std::runtime_error("train_quality: loss diverged at epoch " +
                                     std::to_string(epoch));
    }
    return res;
}

void save_quality(const std::filesystem::path& path, const QualityParams& p) {
    QualityParams& mp = const_cast<QualityParams&>(p);
    std::vector<NamedArray> arrays;
    for (auto& [name, t] : mp.named()) arrays.push_back({name, *t});
    std::size_t hidden = p.net.layers[0].w.rows();
    arrays.push_back({"meta", Tensor::from({static_cast<double>(p.latent_dim),
                                            static_cast<double>(hidden),
                                            p.squash ? 1.0 : 0.0})});
    save_checkpoint(path, arrays);
}

QualityParams load_quality(const std::filesystem::path& path) {
    std::vector<NamedArray> arrays = load_checkpoint(path);
    const Tensor& meta = find_array(arrays, "meta");
    if (meta.numel() != 3) throw std::runtime_error("load_quality: bad meta array");

    QualityConfig cfg;
    cfg.latent_dim = static_cast<int>(meta[0]);
    cfg.hidden_dim = static_cast<int>(meta[1]);
    cfg.squash = meta[2] != 0.0;
    Rng rng(0);
    QualityParams p = init_quality(cfg, rng);
    for (auto& [name, t] : p.named()) {
        const Tensor& stored = find_array(arrays, name);
        if (!t->same_shape(stored))
            throw std::runtime_error("load_quality: shape mismatch for " + name);
        *t = stored;
    }
    return p;
}

}  // namespace geosteer::quality
