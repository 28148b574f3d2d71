#pragma once

#include <filesystem>
#include <vector>

#include "geosteer/manifold.hpp"
#include "geosteer/quality.hpp"
#include "geosteer/student.hpp"
#include "geosteer/tensor.hpp"

namespace geosteer::steer {

enum class Granularity {
    every_token,  // hook every emitted position
    step_final,   // hook only positions that consume a generated line delimiter
};

struct SteerConfig {
    double beta = 0.0;         // non-negative update length
    double grad_floor = 1e-8;  // skip the update when ||grad|| falls below this
    Granularity granularity = Granularity::every_token;
    int max_updates = -1;  // applied-update cap per generation; negative = unlimited
};

struct PullbackOut {
    Tensor grad;        // d predicted quality / d raw hidden state
    Tensor mu;          // latent mean at the probed hidden state
    double pred = 0.0;  // predicted quality at the probed hidden state
};

// Gradient of predicted quality with respect to the raw hidden state, taken
// through the latent mean: one reverse sweep over quality(mu(h)). The encoder
// Jacobian is never materialized; the sweep applies its transpose to the
// latent-space quality gradient implicitly.
PullbackOut pullback_gradient(const manifold::VaeParams& vae, const quality::QualityParams& q,
                              const Tensor& h);

// h' = h + beta * grad / ||grad||. Returns h untouched (same bits) when
// ||grad|| < grad_floor or beta == 0.
Tensor steer_step(const Tensor& h, const Tensor& grad, double beta, double grad_floor);

struct SteerDiagRow {
    std::size_t slot = 0;
    double grad_norm = 0.0;
    bool applied = false;
    double r_before = 0.0;  // predicted quality at the incoming hidden state
    double r_after = 0.0;   // predicted quality after the update (== before when skipped)
};

struct SteerResult {
    student::GenerationRecord record;  // latents / pred_quality filled per slot
    std::vector<SteerDiagRow> diag;    // one row per eligible slot
};

// Greedy decoding with the steering hook installed. Every emitted slot gets
// its latent mean and predicted quality recorded (post-update at steered
// slots); eligible slots additionally get a diagnostics row.
SteerResult steered_generate(const student::StudentParams& sp, const manifold::VaeParams& vae,
                             const quality::QualityParams& qp, const std::vector<int>& prompt,
                             const SteerConfig& cfg, int max_len);

void write_diag_csv(const std::filesystem::path& path, const std::vector<SteerDiagRow>& rows);

}  // namespace geosteer::steer
