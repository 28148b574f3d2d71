#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "geosteer/autodiff.hpp"
#include "geosteer/rng.hpp"
#include "geosteer/tensor.hpp"

namespace geosteer::quality {

struct QualityConfig {
    int latent_dim = 8;
    int hidden_dim = 64;
    bool squash = true;  // sigmoid on the output; raw linear output when false
    int epochs = 80;
    double lr = 1e-3;
    int batch = 32;
    std::uint64_t seed = 3;
};

// Scalar quality regressor over latent codes: two tanh layers and, by
// default, a sigmoid output so predictions live in (0, 1) like the prefix
// scores they fit.
struct QualityParams {
    Mlp net;  // latent -> hidden -> hidden -> 1
    int latent_dim = 0;
    bool squash = true;

    std::vector<std::pair<std::string, Tensor*>> named();
};

QualityParams init_quality(const QualityConfig& cfg, Rng& rng);
QualityParams random_quality(int latent_dim, int hidden_dim, std::uint64_t seed);

double predict(const QualityParams& p, const Tensor& z);

// d predict / d z via the reverse tape; the latent leg of the steering chain.
Tensor grad_latent(const QualityParams& p, const Tensor& z);

// Tape builder mirroring predict(); returns the scalar output node.
NodeId build_quality(Tape& tape, const QualityParams& p, NodeId z);

struct QualityPair {
    Tensor z;
    double y = 0.0;
};

struct QualityTrainResult {
    QualityParams params;
    std::vector<double> train_mse;  // per epoch
    std::vector<double> val_mse;    // per epoch
};

QualityTrainResult train_quality(const std::vector<QualityPair>& train,
                                 const std::vector<QualityPair>& val, const QualityConfig& cfg);

void save_quality(const std::filesystem::path& path, const QualityParams& p);
QualityParams load_quality(const std::filesystem::path& path);

}  // namespace geosteer::quality
