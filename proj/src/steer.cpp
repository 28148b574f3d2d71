#include "geosteer/steer.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "geosteer/autodiff.hpp"

namespace geosteer::steer {

PullbackOut pullback_gradient(const manifold::VaeParams& vae, const quality::QualityParams& q,
                              const Tensor& h) {
    if (h.numel() != static_cast<std::size_t>(vae.input_dim))
        throw std::invalid_argument("pullback_gradient: hidden size mismatch");
    if (vae.latent_dim != q.latent_dim)
        throw std::invalid_argument("pullback_gradient: latent size mismatch");

    Tape tape;
    NodeId hid = tape.leaf(h, true);
    NodeId mu = manifold::build_encoder_mu(tape, vae, hid);
    NodeId out = quality::build_quality(tape, q, mu);
    tape.backward(out, Tensor::scalar(1.0));

    PullbackOut res;
    res.grad = tape.grad(hid);
    res.mu = tape.value(mu);
    res.pred = tape.value(out)[0];
    return res;
}

Tensor steer_step(const Tensor& h, const Tensor& grad, double beta, double grad_floor) {
    if (h.numel() != grad.numel())
        throw std::invalid_argument("steer_step: gradient size mismatch");
    double n = norm(grad);
    if (n < grad_floor || beta == 0.0) return h;
    Tensor out = h;
    axpy(beta / n, grad, out);
    if (!out.all_finite()) throw std::runtime_error("steer_step: non-finite update");
    return out;
}

SteerResult steered_generate(const student::StudentParams& sp, const manifold::VaeParams& vae,
                             const quality::QualityParams& qp, const std::vector<int>& prompt,
                             const SteerConfig& cfg, int max_len) {
    if (vae.input_dim != sp.hidden_dim)
        throw std::invalid_argument("steered_generate: hidden/input size mismatch");
    if (qp.latent_dim != vae.latent_dim)
        throw std::invalid_argument("steered_generate: latent size mismatch");
    if (cfg.beta < 0.0) throw std::invalid_argument("steered_generate: beta must be non-negative");
    if (cfg.grad_floor <= 0.0)
        throw std::invalid_argument("steered_generate: grad_floor must be positive");

    std::vector<Tensor> latents;
    std::vector<double> preds;
    std::vector<SteerDiagRow> diag;
    int applied_count = 0;

    student::Hook hook = [&](const Tensor& h, const student::SlotInfo& si) -> Tensor {
        bool eligible = cfg.granularity == Granularity::every_token ||
                        (si.line_start && si.slot > 0);
        if (eligible && cfg.max_updates >= 0 && applied_count >= cfg.max_updates)
            eligible = false;

        if (!eligible) {
            manifold::EncodeOut enc = manifold::encode(vae, h);
            latents.push_back(enc.mu);
            preds.push_back(quality::predict(qp, enc.mu));
            return h;
        }

        PullbackOut pb = pullback_gradient(vae, qp, h);
        double gnorm = norm(pb.grad);
        Tensor steered = steer_step(h, pb.grad, cfg.beta, cfg.grad_floor);
        bool applied = gnorm >= cfg.grad_floor && cfg.beta != 0.0;
        if (applied) ++applied_count;

        SteerDiagRow row;
        row.slot = si.slot;
        row.grad_norm = gnorm;
        row.applied = applied;
        row.r_before = pb.pred;
        if (applied) {
            manifold::EncodeOut enc = manifold::encode(vae, steered);
            row.r_after = quality::predict(qp, enc.mu);
            latents.push_back(enc.mu);
            preds.push_back(row.r_after);
        } else {
            row.r_after = pb.pred;
            latents.push_back(pb.mu);
            preds.push_back(pb.pred);
        }
        diag.push_back(row);
        return steered;
    };

    SteerResult res;
    res.record = student::generate(sp, prompt, hook, max_len);
    res.record.latents = std::move(latents);
    res.record.pred_quality = std::move(preds);
    res.diag = std::move(diag);
    return res;
}

void write_diag_csv(const std::filesystem::path& path, const std::vector<SteerDiagRow>& rows) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("write_diag_csv: cannot open " + tmp.string());
        out << "slot,grad_norm,applied,r_before,r_after\n";
        char buf[64];
        for (const SteerDiagRow& r : rows) {
            out << r.slot << ',';
            std::snprintf(buf, sizeof(buf), "%.17g", r.grad_norm);
            out << buf << ',' << (r.applied ? 1 : 0) << ',';
            std::snprintf(buf, sizeof(buf), "%.17g", r.r_before);
            out << buf << ',';
            std::snprintf(buf, sizeof(buf), "%.17g", r.r_after);
            out << buf << "\n";
        }
        if (!out) throw std::runtime_error("write_diag_csv: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace geosteer::steer
