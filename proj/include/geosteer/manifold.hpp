#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geosteer/autodiff.hpp"
#include "geosteer/rng.hpp"
#include "geosteer/tensor.hpp"

namespace geosteer::manifold {

struct VaeConfig {
    int input_dim = 64;
    int latent_dim = 8;
    int hidden_dim = 128;
    double kl_weight = 1.0;
    int epochs = 50;
    double lr = 1e-3;
    int batch = 32;
    std::uint64_t seed = 2;
};

// Gaussian-latent autoencoder over hidden states. Inputs are standardized by
// per-coordinate train-set moments that are baked into the parameters as a
// fixed affine map, so encode/decode take and judge raw hidden states while
// the network itself always sees unit-scale features. Reconstruction error is
// measured in the standardized space.
struct VaeParams {
    Mlp enc_trunk;           // input_dim -> hidden -> hidden, tanh
    DenseLayer mu_head;      // hidden -> latent, linear
    DenseLayer logvar_head;  // hidden -> latent, linear, clamped to [-10, 10]
    Mlp decoder;             // latent -> hidden -> hidden -> input_dim
    Tensor norm_mean;        // input_dim
    Tensor norm_std;         // input_dim, strictly positive
    int input_dim = 0;
    int latent_dim = 0;

    std::vector<std::pair<std::string, Tensor*>> named();
};

VaeParams init_vae(const VaeConfig& cfg, Rng& rng);

// Random parameters with a non-trivial standardization affine; used by the
// derivative cross-checks, which need generic (not trained) networks.
VaeParams random_vae(int input_dim, int latent_dim, int hidden_dim, std::uint64_t seed);

Tensor standardize(const VaeParams& p, const Tensor& h);
Tensor unstandardize(const VaeParams& p, const Tensor& x);

struct EncodeOut {
    Tensor mu;      // latent mean
    Tensor logvar;  // clamped log variance
};

EncodeOut encode(const VaeParams& p, const Tensor& h);
Tensor decode(const VaeParams& p, const Tensor& z);       // raw hidden-state space
Tensor reconstruct(const VaeParams& p, const Tensor& h);  // decode at the posterior mean

// z = mu + exp(logvar / 2) * u for a standard-normal draw u.
Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& u);

// KL(N(mu, diag(exp(logvar))) || N(0, I)) = 0.5 * sum(mu^2 + e^lv - lv - 1).
double kl_gaussian(const Tensor& mu, const Tensor& logvar);

// Tape builders mirroring encode(); used by training and by the steering
// pullback, which differentiates mu with respect to the raw hidden input.
NodeId build_standardize(Tape& tape, const VaeParams& p, NodeId h_raw);
NodeId build_encoder_mu(Tape& tape, const VaeParams& p, NodeId h_raw);

struct VaeTrainResult {
    VaeParams params;
    std::vector<double> train_total;  // per epoch, recon + kl_weight * kl
    std::vector<double> train_recon;
    std::vector<double> train_kl;
    std::vector<double> val_total;  // fixed noise draws, comparable across epochs
};

VaeTrainResult train_vae(const std::vector<Tensor>& train_h, const std::vector<Tensor>& val_h,
                         const VaeConfig& cfg);

void save_vae(const std::filesystem::path& path, const VaeParams& p);
VaeParams load_vae(const std::filesystem::path& path);

struct LatentRow {
    std::string record_id;
    std::size_t step_index = 0;
    Tensor mu;
};

void write_latent_csv(const std::filesystem::path& path, const std::vector<LatentRow>& rows);

}  // namespace geosteer::manifold
