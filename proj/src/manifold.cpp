#include "geosteer/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "geosteer/checkpoint.hpp"
#include "geosteer/optim.hpp"

namespace geosteer::manifold {

namespace {

constexpr double kLogvarClip = 10.0;

void check_dims(const VaeConfig& cfg) {
    if (cfg.input_dim < 1 || cfg.latent_dim < 1 || cfg.hidden_dim < 1)
        throw std::invalid_argument("vae: dimensions must be positive");
    if (cfg.latent_dim > cfg.input_dim)
        throw std::invalid_argument("vae: latent dimension exceeds input dimension");
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> VaeParams::named() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < enc_trunk.layers.size(); ++i) {
        std::string base = "enc" + std::to_string(i);
        out.push_back({base + ".w", &enc_trunk.layers[i].w});
        out.push_back({base + ".b", &enc_trunk.layers[i].b});
    }
    out.push_back({"mu.w", &mu_head.w});
    out.push_back({"mu.b", &mu_head.b});
    out.push_back({"lv.w", &logvar_head.w});
    out.push_back({"lv.b", &logvar_head.b});
    for (std::size_t i = 0; i < decoder.layers.size(); ++i) {
        std::string base = "dec" + std::to_string(i);
        out.push_back({base + ".w", &decoder.layers[i].w});
        out.push_back({base + ".b", &decoder.layers[i].b});
    }
    out.push_back({"norm.mean", &norm_mean});
    out.push_back({"norm.std", &norm_std});
    return out;
}

VaeParams init_vae(const VaeConfig& cfg, Rng& rng) {
    check_dims(cfg);
    std::size_t d = static_cast<std::size_t>(cfg.input_dim);
    std::size_t k = static_cast<std::size_t>(cfg.latent_dim);
    std::size_t hd = static_cast<std::size_t>(cfg.hidden_dim);

    VaeParams p;
    p.input_dim = cfg.input_dim;
    p.latent_dim = cfg.latent_dim;
    p.enc_trunk = make_mlp({d, hd, hd}, Act::tanh_act, Act::tanh_act, rng);
    p.mu_head = make_dense(k, hd, Act::none, rng);
    p.logvar_head = make_dense(k, hd, Act::none, rng);
    // start near unit variance so early KL terms stay tame
    for (double& x : p.logvar_head.w.data) x *= 0.1;
    p.decoder = make_mlp({k, hd, hd, d}, Act::tanh_act, Act::none, rng);
    p.norm_mean = Tensor::vec(d);
    p.norm_std = Tensor::vec(d);
    p.norm_std.fill(1.0);
    return p;
}

VaeParams random_vae(int input_dim, int latent_dim, int hidden_dim, std::uint64_t seed) {
    VaeConfig cfg;
    cfg.input_dim = input_dim;
    cfg.latent_dim = latent_dim;
    cfg.hidden_dim = hidden_dim;
    Rng rng(seed);
    VaeParams p = init_vae(cfg, rng);
    for (std::size_t i = 0; i < p.norm_mean.numel(); ++i) {
        p.norm_mean[i] = rng.normal();
        p.norm_std[i] = rng.uniform(0.5, 2.0);
    }
    return p;
}

Tensor standardize(const VaeParams& p, const Tensor& h) {
    if (h.numel() != static_cast<std::size_t>(p.input_dim))
        throw std::invalid_argument("standardize: size mismatch");
    // (h - mean) * (1/std), the exact expression the tape path builds, so the
    // plain and differentiable encoders agree bit for bit
    Tensor x = h;
    for (std::size_t i = 0; i < x.numel(); ++i)
        x[i] = (x[i] - p.norm_mean[i]) * (1.0 / p.norm_std[i]);
    return x;
}

Tensor unstandardize(const VaeParams& p, const Tensor& x) {
    if (x.numel() != static_cast<std::size_t>(p.input_dim))
        throw std::invalid_argument("unstandardize: size mismatch");
    Tensor h = x;
    for (std::size_t i = 0; i < h.numel(); ++i) h[i] = h[i] * p.norm_std[i] + p.norm_mean[i];
    return h;
}

EncodeOut encode(const VaeParams& p, const Tensor& h) {
    Tensor t = p.enc_trunk.apply(standardize(p, h));
    EncodeOut out;
    out.mu = dense_apply(p.mu_head, t);
    out.logvar = dense_apply(p.logvar_head, t);
    for (double& v : out.logvar.data) v = std::clamp(v, -kLogvarClip, kLogvarClip);
    return out;
}

Tensor decode(const VaeParams& p, const Tensor& z) {
    if (z.numel() != static_cast<std::size_t>(p.latent_dim))
        throw std::invalid_argument("decode: latent size mismatch");
    return unstandardize(p, p.decoder.apply(z));
}

Tensor reconstruct(const VaeParams& p, const Tensor& h) {
    return decode(p, encode(p, h).mu);
}

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& u) {
    if (mu.numel() != logvar.numel() || mu.numel() != u.numel())
        throw std::invalid_argument("reparameterize: size mismatch");
    Tensor z = mu;
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] += std::exp(0.5 * logvar[i]) * u[i];
    return z;
}

double kl_gaussian(const Tensor& mu, const Tensor& logvar) {
    if (mu.numel() != logvar.numel())
        throw std::invalid_argument("kl_gaussian: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < mu.numel(); ++i)
        s += mu[i] * mu[i] + std::exp(logvar[i]) - logvar[i] - 1.0;
    return 0.5 * s;
}

NodeId build_standardize(Tape& tape, const VaeParams& p, NodeId h_raw) {
    std::size_t d = static_cast<std::size_t>(p.input_dim);
    Tensor neg_mean = Tensor::vec(d);
    Tensor inv_std = Tensor::vec(d);
    for (std::size_t i = 0; i < d; ++i) {
        neg_mean[i] = -p.norm_mean[i];
        inv_std[i] = 1.0 / p.norm_std[i];
    }
    NodeId centered = tape.add(h_raw, tape.leaf(neg_mean, false));
    return tape.mul(centered, tape.leaf(inv_std, false));
}

NodeId build_encoder_mu(Tape& tape, const VaeParams& p, NodeId h_raw) {
    NodeId x = build_standardize(tape, p, h_raw);
    NodeId t = mlp_build(tape, p.enc_trunk, x, false, nullptr);
    return dense_build(tape, p.mu_head, t, false, nullptr);
}

VaeTrainResult train_vae(const std::vector<Tensor>& train_h, const std::vector<Tensor>& val_h,
                         const VaeConfig& cfg) {
    check_dims(cfg);
    if (cfg.epochs < 1 || cfg.batch < 1 || cfg.lr <= 0.0 || cfg.kl_weight < 0.0)
        throw std::invalid_argument("train_vae: bad training config");
    if (train_h.size() < 2) throw std::invalid_argument("train_vae: not enough samples");
    std::size_t d = static_cast<std::size_t>(cfg.input_dim);
    std::size_t k = static_cast<std::size_t>(cfg.latent_dim);
    for (const Tensor& h : train_h)
        if (h.numel() != d) throw std::invalid_argument("train_vae: sample size mismatch");

    Rng rng(cfg.seed);
    VaeTrainResult res;
    res.params = init_vae(cfg, rng);
    VaeParams& p = res.params;

    // bake train-set moments into the standardization affine
    for (std::size_t i = 0; i < d; ++i) {
        double m = 0.0;
        for (const Tensor& h : train_h) m += h[i];
        m /= static_cast<double>(train_h.size());
        double var = 0.0;
        for (const Tensor& h : train_h) var += (h[i] - m) * (h[i] - m);
        var /= static_cast<double>(train_h.size());
        p.norm_mean[i] = m;
        p.norm_std[i] = std::max(std::sqrt(var), 1e-6);
    }

    auto named = p.named();
    std::vector<Tensor*> ptrs;
    for (auto& [name, t] : named)
        if (name.rfind("norm.", 0) != 0) ptrs.push_back(t);  // moments stay frozen
    Adam opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8}, ptrs);

    // one loss tape for a single sample; returns (total, recon, kl) values and
    // accumulates parameter grads
    auto sample_loss = [&](const Tensor& h, const Tensor& u, std::vector<Tensor>* grads,
                           double* recon_out, double* kl_out) {
        Tape tape;
        std::vector<NodeId> pids;
        NodeId x = tape.leaf(standardize(p, h), false);
        NodeId t = mlp_build(tape, p.enc_trunk, x, true, &pids);
        NodeId mu = dense_build(tape, p.mu_head, t, true, &pids);
        NodeId lv = tape.clamp(dense_build(tape, p.logvar_head, t, true, &pids), -kLogvarClip,
                               kLogvarClip);
        NodeId z = tape.add(mu, tape.mul(tape.exp_fn(tape.scale(lv, 0.5)), tape.leaf(u, false)));
        NodeId xhat = mlp_build(tape, p.decoder, z, true, &pids);
        NodeId diff = tape.sub(xhat, x);
        NodeId recon = tape.dot_fn(diff, diff);
        NodeId kl = tape.scale(
            tape.add_scalar(tape.sum(tape.sub(tape.add(tape.mul(mu, mu), tape.exp_fn(lv)), lv)),
                            -static_cast<double>(k)),
            0.5);
        NodeId loss = tape.add(recon, tape.scale(kl, cfg.kl_weight));
        if (recon_out) *recon_out = tape.value(recon)[0];
        if (kl_out) *kl_out = tape.value(kl)[0];
        if (grads) {
            tape.backward(loss, Tensor::scalar(1.0));
            for (std::size_t i = 0; i < pids.size(); ++i) axpy(1.0, tape.grad(pids[i]), (*grads)[i]);
        }
        return tape.value(loss)[0];
    };

    std::vector<std::size_t> order(train_h.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    // fixed noise for validation so epoch-over-epoch changes reflect only the
    // parameters
    std::vector<Tensor> val_u;
    {
        Rng vrng(splitmix64(cfg.seed ^ 0x76616c5fULL));
        for (std::size_t i = 0; i < val_h.size(); ++i) {
            Tensor u = Tensor::vec(k);
            for (double& x : u.data) x = vrng.normal();
            val_u.push_back(std::move(u));
        }
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double ep_total = 0.0, ep_recon = 0.0, ep_kl = 0.0;

        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch)) {
            std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            std::vector<Tensor> grads;
            for (Tensor* t : ptrs) grads.emplace_back(t->shape);

            for (std::size_t bi = start; bi < stop; ++bi) {
                Tensor u = Tensor::vec(k);
                for (double& x : u.data) x = rng.normal();
                double recon = 0.0, kl = 0.0;
                ep_total += sample_loss(train_h[order[bi]], u, &grads, &recon, &kl);
                ep_recon += recon;
                ep_kl += kl;
            }

            double inv = 1.0 / static_cast<double>(stop - start);
            for (Tensor& g : grads)
                for (double& x : g.data) x *= inv;
            clip_global_norm(grads, 5.0);
            opt.step(ptrs, grads);
        }

        double n = static_cast<double>(train_h.size());
        res.train_total.push_back(ep_total / n);
        res.train_recon.push_back(ep_recon / n);
        res.train_kl.push_back(ep_kl / n);

        double val_total = 0.0;
        for (std::size_t i = 0; i < val_h.size(); ++i)
            val_total += sample_loss(val_h[i], val_u[i], nullptr, nullptr, nullptr);
        res.val_total.push_back(val_h.empty() ? 0.0 : val_total / static_cast<double>(val_h.size()));

        if (!std::isfinite(res.train_total.back()) || !std::isfinite(res.val_total.back()))
            throw std::runtime_error("train_vae: loss diverged at epoch " + std::to_string(epoch));
    }
    return res;
}

void save_vae(const std::filesystem::path& path, const VaeParams& p) {
    VaeParams& mp = const_cast<VaeParams&>(p);
    std::vector<NamedArray> arrays;
    for (auto& [name, t] : mp.named()) arrays.push_back({name, *t});
    std::size_t hidden = p.enc_trunk.layers[0].w.rows();
    arrays.push_back({"meta", Tensor::from({static_cast<double>(p.input_dim),
                                            static_cast<double>(p.latent_dim),
                                            static_cast<double>(hidden)})});
    save_checkpoint(path, arrays);
}

VaeParams load_vae(const std::filesystem::path& path) {
    std::vector<NamedArray> arrays = load_checkpoint(path);
    const Tensor& meta = find_array(arrays, "meta");
    if (meta.numel() != 3) throw std::runtime_error("load_vae: bad meta array");

    VaeConfig cfg;
    cfg.input_dim = static_cast<int>(meta[0]);
    cfg.latent_dim = static_cast<int>(meta[1]);
    cfg.hidden_dim = static_cast<int>(meta[2]);
    Rng rng(0);
    VaeParams p = init_vae(cfg, rng);
    for (auto& [name, t] : p.named()) {
        const Tensor& stored = find_array(arrays, name);
        if (!t->same_shape(stored)) throw std::runtime_error("load_vae: shape mismatch for " + name);
        *t = stored;
    }
    return p;
}

void write_latent_csv(const std::filesystem::path& path, const std::vector<LatentRow>& rows) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("write_latent_csv: cannot open " + tmp.string());
        std::size_t k = rows.empty() ? 0 : rows.front().mu.numel();
        out << "record_id,step_index";
        for (std::size_t i = 0; i < k; ++i) out << ",mu_" << (i + 1);
        out << "\n";
        char buf[64];
        for (const LatentRow& r : rows) {
            out << r.record_id << ',' << r.step_index;
            for (std::size_t i = 0; i < r.mu.numel(); ++i) {
                std::snprintf(buf, sizeof(buf), "%.17g", r.mu[i]);
                out << ',' << buf;
            }
            out << "\n";
        }
        if (!out) throw std::runtime_error("write_latent_csv: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace geosteer::manifold
