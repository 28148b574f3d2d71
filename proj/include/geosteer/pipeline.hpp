#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace geosteer::pipeline {

// Invalid or unparseable configuration; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Missing upstream artifact; the CLI maps this to exit code 3.
struct PrereqError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat, fully-explicit run configuration. Every field has a default; a JSON
// config file overrides defaults and --set overrides the file.
struct Config {
    std::string out_dir = "out";
    std::uint64_t master_seed = 42;

    // corpus
    int n_train = 500;
    int n_val = 100;
    int n_test = 100;
    int min_steps = 1;
    int max_steps = 4;

    // student
    int embed_dim = 32;
    int hidden_dim = 64;
    double hidden_scale = 8.0;
    int student_epochs = 40;
    double student_lr = 3e-3;
    int student_batch = 16;
    int max_len = 160;
    bool student_attention = false;
    bool student_train_neg = false;

    // latent manifold
    int latent_dim = 8;
    int vae_hidden = 128;
    double kl_weight = 1.0;
    int vae_epochs = 50;
    double vae_lr = 1e-3;
    int vae_batch = 32;

    // quality regressor
    int quality_hidden = 64;
    bool quality_squash = true;
    int quality_epochs = 80;
    double quality_lr = 1e-3;
    int quality_batch = 32;

    // steering
    double beta = 1.0;
    double grad_floor = 1e-8;
    std::string granularity = "every_token";  // or "step_final"
    int max_updates = -1;

    // evaluation
    std::vector<double> beta_grid{1, 10, 50, 100, 125, 150, 200, 300};
    int project_index = 0;  // test problem used by the project stage
};

// Reads the optional JSON file (all keys optional, unknown keys rejected),
// then applies key=value overrides, then validates. Throws ConfigError with
// every violated field listed.
Config load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

void validate(const Config& c);

std::string canonical_json(const Config& c);
std::string config_hash_hex(const Config& c);

enum class Stage {
    gen_data,
    train_student,
    extract_hiddens,
    train_vae,
    train_quality,
    evaluate,
    sweep,
    project,
    curves,
};

inline constexpr int kStageCount = 9;

Stage parse_stage(const std::string& name);  // throws ConfigError on unknown name
const char* stage_name(Stage s);

// Per-stage RNG seed derived from the master seed and the stage name.
std::uint64_t stage_seed(const Config& c, Stage s);

// Runs one stage: checks prerequisites, takes the output-directory lock,
// writes artifacts atomically, and records the stage manifest (config hash,
// input/output digests, wall time, seed). Throws PrereqError when an upstream
// artifact is missing.
void run_stage(Stage s, const Config& c);

std::string file_digest_hex(const std::filesystem::path& path);

int run_cli(int argc, const char* const* argv);

}  // namespace geosteer::pipeline
