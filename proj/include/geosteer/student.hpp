#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "geosteer/corpus.hpp"
#include "geosteer/rng.hpp"
#include "geosteer/tensor.hpp"

namespace geosteer::student {

// Fixed word-level vocabulary over the corpus grammar: digits, operator and
// template words, punctuation, a line delimiter and an end marker. Numbers are
// emitted digit by digit so the token set stays closed.
class Vocab {
public:
    static const Vocab& instance();

    int size() const { return static_cast<int>(tokens_.size()); }
    int id(const std::string& tok) const;
    const std::string& token(int id) const;
    int eos_id() const { return eos_; }
    int nl_id() const { return nl_; }

    // Text <-> ids. encode() splits lines on '\n', words on spaces, peels
    // trailing punctuation and splits integers into sign + digits; it throws
    // on any word outside the vocabulary. decode() inverts those rules, so
    // the pair round-trips exactly on corpus-grammar text.
    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

private:
    Vocab();
    std::vector<std::string> tokens_;
    int eos_ = 0, nl_ = 0;
};

struct StudentConfig {
    int embed_dim = 32;
    int hidden_dim = 64;
    double hidden_scale = 8.0;
    int epochs = 40;
    double lr = 3e-3;
    int batch = 16;
    int max_len = 160;
    bool attention = false;  // prompt-attention readout feeding the cell
    int attn_dim = 32;
    bool train_neg = false;  // include flawed trajectories in the LM loss
    std::uint64_t seed = 1;
};

// Single gated recurrent cell plus embedding and output projection. The
// steering site is the scaled cell state h = hidden_scale * s, which both
// feeds the output projection and, divided back by hidden_scale, becomes the
// next recurrent state; a hook that edits h therefore persists.
//
// With the attention flag on, each position also reads the prompt through
// single-head dot-product attention (query from the state, keys/values from
// position-tagged prompt embeddings) and the summary joins the cell input;
// the state/hidden interface and output projection are unchanged.
struct StudentParams {
    Tensor embed;             // V x e
    Tensor wz, wr, wc;        // d x (e [+ a] + d)
    Tensor bz, br, bc;        // d
    Tensor w_out, b_out;      // V x d, V
    Tensor wq;                // a x d
    Tensor wk, wv;            // a x e
    Tensor pos;               // max prompt positions x e
    int embed_dim = 0;
    int hidden_dim = 0;
    int attn_dim = 0;
    bool attention = false;
    double hidden_scale = 1.0;

    std::vector<std::pair<std::string, Tensor*>> named();
};

// Per-prompt attention keys/values, row-stacked; built once per generation or
// teacher-forced pass and shared by every position.
struct AttnContext {
    Tensor kflat;  // prompt_len x a, flat
    Tensor vflat;  // prompt_len x a, flat
};

AttnContext make_attn_context(const StudentParams& p, const std::vector<int>& prompt);

StudentParams init_student(const StudentConfig& cfg, Rng& rng);

struct StepOut {
    Tensor hidden;  // pre-projection steering site, length d
    Tensor logits;  // length V
    Tensor state;   // next recurrent state, length d
};

// Pure: same (params, state, token, context) always gives the same result.
// Attention-enabled params require the context; plain params ignore it.
StepOut step_forward(const StudentParams& p, const Tensor& state, int token,
                     const AttnContext* ctx = nullptr);

Tensor project_logits(const StudentParams& p, const Tensor& hidden);

struct SlotInfo {
    std::size_t slot = 0;     // emission index
    int consumed_token = 0;   // token whose consumption produced this hidden
    bool line_start = false;  // consumed token is the line delimiter
};

using Hook = std::function<Tensor(const Tensor& hidden, const SlotInfo&)>;

struct GenerationRecord {
    std::vector<int> prompt;
    std::vector<int> generated;
    std::string text;                           // decoded generated tokens
    std::vector<Tensor> hiddens;                // post-hook h, one per emitted token
    std::vector<std::size_t> step_final_slots;  // slots aligned with step delimiters
    std::optional<long long> answer;
    bool missing_answer = true;
    // filled by the steering layer when latent-space components are in play
    std::vector<Tensor> latents;
    std::vector<double> pred_quality;
};

// Greedy decoding with an optional hidden-state hook applied before the
// output projection at every emitted position. A null hook and an identity
// hook produce bit-identical results.
GenerationRecord generate(const StudentParams& p, const std::vector<int>& prompt,
                          const Hook& hook, int max_len);

std::vector<int> prompt_tokens(const corpus::Problem& problem);

// Teacher-forced pass over question + steps of one record; returns the hidden
// state at each step's delimiter token, aligned with the record's scores.
std::vector<Tensor> extract_prefix_hiddens(const StudentParams& p,
                                           const corpus::DatasetRecord& record);

struct TrainResult {
    StudentParams params;
    std::vector<double> train_loss;  // per epoch
    std::vector<double> val_loss;    // per epoch, held-out pos trajectories
};

// Next-token cross-entropy on the pos trajectories of `train`, teacher forced
// over steps + answer with the question as context. Aborts with an exception
// if the loss goes non-finite.
TrainResult train_student(const std::vector<corpus::DatasetRecord>& train,
                          const std::vector<corpus::DatasetRecord>& val,
                          const StudentConfig& cfg);

void save_student(const std::filesystem::path& path, const StudentParams& p);
StudentParams load_student(const std::filesystem::path& path);

}  // namespace geosteer::student
