#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geosteer/corpus.hpp"
#include "geosteer/quality.hpp"
#include "geosteer/steer.hpp"
#include "geosteer/student.hpp"

namespace geosteer::harness {

bool exact_match(const corpus::Problem& p, const student::GenerationRecord& rec);

// Leading generated lines that parse as steps, cut at the first answer line
// or unparseable line.
std::vector<std::string> generated_steps(const std::string& text);

// Mean oracle score over all prefixes of the parseable generated steps;
// 0 when no line parses.
double generation_quality(const corpus::Problem& p, const student::GenerationRecord& rec);

struct EvalItem {
    std::string problem_id;
    bool exact_match = false;
    bool missing_answer = true;
    std::optional<long long> answer;
    long long gold = 0;
    double oracle_quality = 0.0;  // mean oracle prefix score of the generation
    std::size_t steps_generated = 0;
};

struct EvalResult {
    std::vector<EvalItem> items;
    std::vector<steer::SteerResult> runs;  // aligned with items
    double em = 0.0;                       // exact-match percentage in [0, 100]
    double mean_quality = 0.0;
    double median_hidden_norm = 0.0;  // over step-final hiddens (all hiddens if none)
};

EvalResult evaluate(const student::StudentParams& sp, const manifold::VaeParams& vae,
                    const quality::QualityParams& qp, const std::vector<corpus::Problem>& problems,
                    const steer::SteerConfig& cfg, int max_len);

struct PairedCounts {
    int win_a = 0;  // first argument strictly better under the rubric
    int win_b = 0;
    int tie = 0;
};

// Per-problem rubric: exact match dominates; on equal match status the higher
// oracle quality wins, with differences under 1e-6 counted as ties. Both
// results must cover the same problems in the same order.
PairedCounts paired_compare(const EvalResult& a, const EvalResult& b);

// Discordant exact-match pairs: b = correct only in `a`, c = correct only in `b`.
std::pair<int, int> discordant_counts(const EvalResult& a, const EvalResult& b);

inline constexpr double kChiSqCritical95 = 3.841;

struct McNemarResult {
    double chi2 = 0.0;
    bool significant = false;
    bool defined = true;  // false when b + c == 0 (statistic undefined)
};

// Continuity-corrected paired test: chi2 = (|b - c| - 1)^2 / (b + c),
// significant iff chi2 > 3.841. b = c = 0 is flagged undefined, never
// significant.
McNemarResult mcnemar(int b, int c);

// All rates are percentages in [0, 100]; win/tie shares sum to 100.
struct SweepRow {
    double beta = 0.0;
    double em_baseline = 0.0;
    double em_steered = 0.0;
    double win_steered = 0.0;
    double win_baseline = 0.0;
    double tie = 0.0;
    double mcnemar_chi2 = 0.0;
    bool significant = false;
    double quality_steered = 0.0;
    double quality_baseline = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    EvalResult baseline;
    double median_hidden_norm = 0.0;  // from the baseline evaluation
};

SweepResult beta_sweep(const student::StudentParams& sp, const manifold::VaeParams& vae,
                       const quality::QualityParams& qp,
                       const std::vector<corpus::Problem>& problems,
                       const std::vector<double>& betas, const steer::SteerConfig& base_cfg,
                       int max_len);

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

struct ProjectionResult {
    Tensor x_axis;  // unit latent direction: mean quality ascent
    Tensor y_axis;  // unit direction: top residual principal component
    std::vector<std::array<double, 2>> points;
    bool grad_axis_fallback = false;  // mean gradient degenerate, used top PC instead
};

// 2-D latent view: x is the normalized mean quality gradient over the given
// codes, y the leading principal direction of the centered codes with the x
// component projected out (power iteration).
ProjectionResult project_trajectory(const quality::QualityParams& qp,
                                    const std::vector<Tensor>& latents);

void write_projection_csv(const std::filesystem::path& path, const ProjectionResult& proj,
                          const std::vector<std::string>& labels);

struct CurvePoint {
    std::size_t step = 0;  // 1-based step index within a generation
    double mean = 0.0;
    double stdev = 0.0;
    std::size_t n = 0;
};

// Predicted quality at step-final slots, aggregated over generations by step
// index. Callers group the runs (e.g. by exact-match outcome) before calling.
std::vector<CurvePoint> quality_curves(const std::vector<steer::SteerResult>& runs);

struct CurveGroup {
    std::string label;
    std::vector<CurvePoint> points;
};

void write_curves_csv(const std::filesystem::path& path, const std::vector<CurveGroup>& groups);

}  // namespace geosteer::harness
