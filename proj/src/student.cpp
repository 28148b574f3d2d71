#include "geosteer/student.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "geosteer/autodiff.hpp"
#include "geosteer/checkpoint.hpp"
#include "geosteer/optim.hpp"
#include "geosteer/rng.hpp"

namespace geosteer::student {

namespace {

constexpr const char* kEos = "<eos>";
constexpr const char* kNl = "<nl>";

bool is_digit_tok(const std::string& t) { return t.size() == 1 && t[0] >= '0' && t[0] <= '9'; }

bool is_attaching_punct(const std::string& t) {
    return t == "." || t == "?" || t == ":";
}

bool is_integer_word(const std::string& w) {
    if (w.empty()) return false;
    std::size_t i = (w[0] == '-') ? 1 : 0;
    if (i == w.size()) return false;
    for (; i < w.size(); ++i)
        if (w[i] < '0' || w[i] > '9') return false;
    return true;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

}  // namespace

Vocab::Vocab() {
    tokens_ = {kEos, kNl};
    for (char c = '0'; c <= '9'; ++c) tokens_.emplace_back(1, c);
    tokens_.insert(tokens_.end(), {"-", ".", "?", ":", "=",
                                   "Start", "with", "Add", "Subtract", "Multiply",
                                   "Divide", "by", "What", "is", "the", "final",
                                   "value", "Step", "plus", "minus", "times", "over",
                                   "The", "answer"});
    eos_ = 0;
    nl_ = 1;
}

const Vocab& Vocab::instance() {
    static Vocab v;
    return v;
}

int Vocab::id(const std::string& tok) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i)
        if (tokens_[i] == tok) return static_cast<int>(i);
    throw std::invalid_argument("vocab: unknown token '" + tok + "'");
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("vocab: bad token id");
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> out;
    std::vector<std::string> lines = split(text, '\n');
    for (std::size_t li = 0; li < lines.size(); ++li) {
        if (li > 0) out.push_back(nl_);
        for (const std::string& raw : split(lines[li], ' ')) {
            if (raw.empty()) continue;
            std::string word = raw;
            std::string peeled;
            while (!word.empty()) {
                char c = word.back();
                if (c == '.' || c == '?' || c == ':') {
                    peeled.insert(peeled.begin(), c);
                    word.pop_back();
                } else {
                    break;
                }
            }
            if (!word.empty()) {
                if (is_integer_word(word)) {
                    std::size_t i = 0;
                    if (word[0] == '-') {
                        out.push_back(id("-"));
                        i = 1;
                    }
                    for (; i < word.size(); ++i) out.push_back(id(std::string(1, word[i])));
                } else {
                    out.push_back(id(word));
                }
            }
            for (char c : peeled) out.push_back(id(std::string(1, c)));
        }
    }
    return out;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    std::string prev;
    for (int raw : ids) {
        const std::string& tok = token(raw);
        if (tok == kEos) continue;
        if (tok == kNl) {
            out += '\n';
            prev = tok;
            continue;
        }
        bool attach = is_attaching_punct(tok) ||
                      (is_digit_tok(tok) && (is_digit_tok(prev) || prev == "-"));
        if (!out.empty() && out.back() != '\n' && !attach) out += ' ';
        out += tok;
        prev = tok;
    }
    return out;
}

// Prompt positions beyond the table share its last row; prompts in this
// corpus are far shorter than the table.
constexpr std::size_t kMaxPromptPos = 32;

StudentParams init_student(const StudentConfig& cfg, Rng& rng) {
    if (cfg.embed_dim < 1 || cfg.hidden_dim < 1)
        throw std::invalid_argument("init_student: dimensions must be positive");
    if (cfg.hidden_scale <= 0.0)
        throw std::invalid_argument("init_student: hidden_scale must be positive");
    if (cfg.attention && cfg.attn_dim < 1)
        throw std::invalid_argument("init_student: attn_dim must be positive");
    int v = Vocab::instance().size();
    int e = cfg.embed_dim, d = cfg.hidden_dim;
    int a = cfg.attention ? cfg.attn_dim : 0;

    StudentParams p;
    p.embed_dim = e;
    p.hidden_dim = d;
    p.attn_dim = a;
    p.attention = cfg.attention;
    p.hidden_scale = cfg.hidden_scale;
    p.embed = Tensor::mat(v, e);
    for (double& x : p.embed.data) x = 0.1 * rng.normal();

    double gsd = 1.0 / std::sqrt(static_cast<double>(e + a + d));
    auto gate = [&](Tensor& w, Tensor& b) {
        w = Tensor::mat(d, e + a + d);
        for (double& x : w.data) x = gsd * rng.normal();
        b = Tensor::vec(d);
    };
    gate(p.wz, p.bz);
    gate(p.wr, p.br);
    gate(p.wc, p.bc);

    p.w_out = Tensor::mat(v, d);
    double osd = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& x : p.w_out.data) x = osd * rng.normal();
    p.b_out = Tensor::vec(v);

    if (cfg.attention) {
        auto proj = [&](Tensor& w, int out, int in) {
            w = Tensor::mat(out, in);
            double sd = 1.0 / std::sqrt(static_cast<double>(in));
            for (double& x : w.data) x = sd * rng.normal();
        };
        proj(p.wq, a, d);
        proj(p.wk, a, e);
        proj(p.wv, a, e);
        p.pos = Tensor::mat(kMaxPromptPos, e);
        for (double& x : p.pos.data) x = 0.1 * rng.normal();
    }
    return p;
}

std::vector<std::pair<std::string, Tensor*>> StudentParams::named() {
    std::vector<std::pair<std::string, Tensor*>> out = {
        {"embed", &embed},   {"gru.wz", &wz},   {"gru.bz", &bz},
        {"gru.wr", &wr},     {"gru.br", &br},   {"gru.wc", &wc},
        {"gru.bc", &bc},     {"out.w", &w_out}, {"out.b", &b_out}};
    if (attention) {
        out.insert(out.end(), {{"attn.wq", &wq}, {"attn.wk", &wk},
                               {"attn.wv", &wv}, {"attn.pos", &pos}});
    }
    return out;
}

AttnContext make_attn_context(const StudentParams& p, const std::vector<int>& prompt) {
    if (!p.attention) throw std::logic_error("make_attn_context: attention is off");
    if (prompt.empty()) throw std::invalid_argument("make_attn_context: empty prompt");
    int v = Vocab::instance().size();
    std::size_t e = static_cast<std::size_t>(p.embed_dim);
    std::size_t a = static_cast<std::size_t>(p.attn_dim);

    AttnContext ctx;
    ctx.kflat = Tensor::vec(prompt.size() * a);
    ctx.vflat = Tensor::vec(prompt.size() * a);
    for (std::size_t j = 0; j < prompt.size(); ++j) {
        int tok = prompt[j];
        if (tok < 0 || tok >= v)
            throw std::invalid_argument("make_attn_context: token out of range");
        std::size_t pr = std::min(j, p.pos.rows() - 1);
        Tensor x = Tensor::vec(e);
        const double* er = p.embed.data.data() + static_cast<std::size_t>(tok) * e;
        const double* pp = p.pos.data.data() + pr * e;
        for (std::size_t i = 0; i < e; ++i) x[i] = er[i] + pp[i];
        for (std::size_t i = 0; i < a; ++i) {
            double sk = 0.0, sv = 0.0;
            const double* kr = p.wk.data.data() + i * e;
            const double* vr = p.wv.data.data() + i * e;
            for (std::size_t l = 0; l < e; ++l) {
                sk += kr[l] * x[l];
                sv += vr[l] * x[l];
            }
            ctx.kflat[j * a + i] = sk;
            ctx.vflat[j * a + i] = sv;
        }
    }
    return ctx;
}

namespace {

struct CellOut {
    Tensor hidden;  // scaled state, the steering site
    Tensor state;   // unscaled next state
};

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

CellOut cell_step(const StudentParams& p, const Tensor& state, int token,
                  const AttnContext* ctx) {
    int v = Vocab::instance().size();
    if (token < 0 || token >= v) throw std::invalid_argument("cell_step: token out of range");
    std::size_t e = static_cast<std::size_t>(p.embed_dim);
    std::size_t d = static_cast<std::size_t>(p.hidden_dim);
    std::size_t a = p.attention ? static_cast<std::size_t>(p.attn_dim) : 0;
    if (state.numel() != d) throw std::invalid_argument("cell_step: state size mismatch");
    if (p.attention && !ctx)
        throw std::invalid_argument("cell_step: attention params need a prompt context");

    // input layout: [embedding | attention summary (flag on) | state]
    Tensor xs = Tensor::vec(e + a + d);
    const double* er = p.embed.data.data() + static_cast<std::size_t>(token) * e;
    for (std::size_t i = 0; i < e; ++i) xs[i] = er[i];
    if (p.attention) {
        Tensor q = Tensor::vec(a);
        for (std::size_t i = 0; i < a; ++i) {
            double s = 0.0;
            const double* r = p.wq.data.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) s += r[j] * state[j];
            q[i] = s;
        }
        Tensor at = attend_apply(q, ctx->kflat, ctx->vflat, a);
        for (std::size_t i = 0; i < a; ++i) xs[e + i] = at[i];
    }
    for (std::size_t i = 0; i < d; ++i) xs[e + a + i] = state[i];

    auto matvec = [&](const Tensor& w, const Tensor& b, const Tensor& in) {
        Tensor y = Tensor::vec(d);
        std::size_t k = in.numel();
        for (std::size_t i = 0; i < d; ++i) {
            double s = b[i];
            const double* r = w.data.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) s += r[j] * in[j];
            y[i] = s;
        }
        return y;
    };

    Tensor z = matvec(p.wz, p.bz, xs);
    Tensor r = matvec(p.wr, p.br, xs);
    for (std::size_t i = 0; i < d; ++i) {
        z[i] = stable_sigmoid(z[i]);
        r[i] = stable_sigmoid(r[i]);
    }

    Tensor xrs = xs;
    for (std::size_t i = 0; i < d; ++i) xrs[e + a + i] = r[i] * state[i];
    Tensor c = matvec(p.wc, p.bc, xrs);
    for (std::size_t i = 0; i < d; ++i) c[i] = std::tanh(c[i]);

    CellOut out;
    out.state = Tensor::vec(d);
    for (std::size_t i = 0; i < d; ++i)
        out.state[i] = state[i] + z[i] * (c[i] - state[i]);
    out.hidden = out.state;
    for (double& x : out.hidden.data) x *= p.hidden_scale;
    if (!out.hidden.all_finite()) throw std::runtime_error("cell_step: non-finite state");
    return out;
}

}  // namespace

Tensor project_logits(const StudentParams& p, const Tensor& hidden) {
    std::size_t d = static_cast<std::size_t>(p.hidden_dim);
    if (hidden.numel() != d) throw std::invalid_argument("project_logits: size mismatch");
    std::size_t v = p.w_out.rows();
    Tensor y = Tensor::vec(v);
    for (std::size_t i = 0; i < v; ++i) {
        double s = p.b_out[i];
        const double* r = p.w_out.data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) s += r[j] * hidden[j];
        y[i] = s;
    }
    return y;
}

StepOut step_forward(const StudentParams& p, const Tensor& state, int token,
                     const AttnContext* ctx) {
    CellOut c = cell_step(p, state, token, ctx);
    StepOut out;
    out.logits = project_logits(p, c.hidden);
    out.hidden = std::move(c.hidden);
    out.state = std::move(c.state);
    return out;
}

GenerationRecord generate(const StudentParams& p, const std::vector<int>& prompt,
                          const Hook& hook, int max_len) {
    if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
    if (max_len < 1) throw std::invalid_argument("generate: max_len must be positive");
    const Vocab& vocab = Vocab::instance();

    GenerationRecord rec;
    rec.prompt = prompt;

    AttnContext ctx;
    const AttnContext* cp = nullptr;
    if (p.attention) {
        ctx = make_attn_context(p, prompt);
        cp = &ctx;
    }

    Tensor s = Tensor::vec(static_cast<std::size_t>(p.hidden_dim));
    for (std::size_t i = 0; i + 1 < prompt.size(); ++i)
        s = cell_step(p, s, prompt[i], cp).state;

    int tok = prompt.back();
    for (int slot = 0; slot < max_len; ++slot) {
        CellOut c = cell_step(p, s, tok, cp);
        SlotInfo si{static_cast<std::size_t>(slot), tok, tok == vocab.nl_id()};
        Tensor h = hook ? hook(c.hidden, si) : c.hidden;
        if (h.numel() != c.hidden.numel())
            throw std::invalid_argument("generate: hook changed the hidden size");
        Tensor logits = project_logits(p, h);

        rec.hiddens.push_back(h);
        if (si.line_start && slot > 0)
            rec.step_final_slots.push_back(static_cast<std::size_t>(slot));

        int next = 0;
        for (std::size_t i = 1; i < logits.numel(); ++i)
            if (logits[i] > logits[static_cast<std::size_t>(next)]) next = static_cast<int>(i);
        rec.generated.push_back(next);

        s = h;
        for (double& x : s.data) x /= p.hidden_scale;
        tok = next;
        if (next == vocab.eos_id()) break;
    }

    rec.text = vocab.decode(rec.generated);
    rec.answer = corpus::extract_final_answer(rec.text);
    rec.missing_answer = !rec.answer.has_value();
    return rec;
}

std::vector<int> prompt_tokens(const corpus::Problem& problem) {
    const Vocab& v = Vocab::instance();
    std::vector<int> toks = v.encode(problem.question_text);
    toks.push_back(v.nl_id());
    return toks;
}

std::vector<Tensor> extract_prefix_hiddens(const StudentParams& p,
                                           const corpus::DatasetRecord& record) {
    const Vocab& vocab = Vocab::instance();
    std::string text = record.problem.question_text;
    for (const std::string& step : record.trajectory.steps) {
        text += '\n';
        text += step;
    }
    text += '\n';  // delimiter after the last step, matching generation
    std::vector<int> toks = vocab.encode(text);

    AttnContext ctx;
    const AttnContext* cp = nullptr;
    if (p.attention) {
        std::vector<int> prompt;
        for (int tok : toks) {
            prompt.push_back(tok);
            if (tok == vocab.nl_id()) break;  // question plus its delimiter
        }
        ctx = make_attn_context(p, prompt);
        cp = &ctx;
    }

    std::vector<Tensor> out;
    Tensor s = Tensor::vec(static_cast<std::size_t>(p.hidden_dim));
    int nl_seen = 0;
    for (int tok : toks) {
        CellOut c = cell_step(p, s, tok, cp);
        s = c.hidden;
        for (double& x : s.data) x /= p.hidden_scale;
        if (tok == vocab.nl_id()) {
            ++nl_seen;
            if (nl_seen > 1) out.push_back(c.hidden);  // first delimiter ends the question
        }
    }
    if (out.size() != record.quality.scores.size())
        throw std::runtime_error("extract_prefix_hiddens: step/score misalignment for " +
                                 record.problem.id);
    return out;
}

namespace {

struct EncodedSeq {
    std::vector<int> tokens;      // question .. steps .. answer, <eos>-terminated
    std::size_t prompt_len = 0;   // question tokens plus its delimiter
};

EncodedSeq encode_record(const corpus::DatasetRecord& r) {
    const Vocab& v = Vocab::instance();
    std::string text = r.problem.question_text;
    for (const std::string& step : r.trajectory.steps) {
        text += '\n';
        text += step;
    }
    text += '\n';
    text += r.trajectory.answer_text;

    EncodedSeq seq;
    seq.tokens = v.encode(text);
    seq.tokens.push_back(v.eos_id());
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        if (seq.tokens[i] == v.nl_id()) {
            seq.prompt_len = i + 1;
            break;
        }
    }
    if (seq.prompt_len == 0 || seq.prompt_len + 1 >= seq.tokens.size())
        throw std::runtime_error("encode_record: degenerate sequence");
    return seq;
}

double plain_sequence_loss(const StudentParams& p, const EncodedSeq& seq) {
    AttnContext ctx;
    const AttnContext* cp = nullptr;
    if (p.attention) {
        std::vector<int> prompt(seq.tokens.begin(),
                                seq.tokens.begin() + static_cast<long>(seq.prompt_len));
        ctx = make_attn_context(p, prompt);
        cp = &ctx;
    }
    Tensor s = Tensor::vec(static_cast<std::size_t>(p.hidden_dim));
    double total = 0.0;
    int n = 0;
    for (std::size_t pos = 0; pos + 1 < seq.tokens.size(); ++pos) {
        CellOut c = cell_step(p, s, seq.tokens[pos], cp);
        if (pos + 1 >= seq.prompt_len) {
            Tensor logits = project_logits(p, c.hidden);
            double mx = logits[0];
            for (double x : logits.data) mx = std::max(mx, x);
            double z = 0.0;
            for (double x : logits.data) z += std::exp(x - mx);
            total += mx + std::log(z) - logits[static_cast<std::size_t>(seq.tokens[pos + 1])];
            ++n;
        }
        s = c.state;
    }
    return total / n;
}

}  // namespace

TrainResult train_student(const std::vector<corpus::DatasetRecord>& train,
                          const std::vector<corpus::DatasetRecord>& val,
                          const StudentConfig& cfg) {
    if (cfg.epochs < 1 || cfg.batch < 1 || cfg.lr <= 0.0)
        throw std::invalid_argument("train_student: bad training config");

    std::vector<EncodedSeq> train_seqs, val_seqs;
    for (const auto& r : train)
        if (cfg.train_neg || r.trajectory.kind == corpus::TrajectoryKind::pos)
            train_seqs.push_back(encode_record(r));
    // held-out loss tracks clean trajectories regardless of the training mix
    for (const auto& r : val)
        if (r.trajectory.kind == corpus::TrajectoryKind::pos)
            val_seqs.push_back(encode_record(r));
    if (train_seqs.empty())
        throw std::invalid_argument("train_student: no pos trajectories to train on");

    Rng rng(cfg.seed);
    TrainResult res;
    res.params = init_student(cfg, rng);
    StudentParams& p = res.params;

    auto named = p.named();
    std::vector<Tensor*> ptrs;
    for (auto& [name, t] : named) ptrs.push_back(t);
    Adam opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8}, ptrs);

    std::vector<std::size_t> order(train_seqs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;

        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch)) {
            std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            std::vector<Tensor> grads;
            for (Tensor* t : ptrs) grads.emplace_back(t->shape);

            for (std::size_t bi = start; bi < stop; ++bi) {
                const EncodedSeq& seq = train_seqs[order[bi]];
                Tape tape;
                std::vector<NodeId> pids;
                for (Tensor* t : ptrs) pids.push_back(tape.leaf(*t, true));
                NodeId embed = pids[0], wz = pids[1], bz = pids[2], wr = pids[3], br = pids[4],
                       wc = pids[5], bc = pids[6], wo = pids[7], bo = pids[8];

                std::size_t ad = static_cast<std::size_t>(cfg.attn_dim);
                NodeId wqn = -1, kflat = -1, vflat = -1, zq = -1;
                if (p.attention) {
                    wqn = pids[9];
                    NodeId wkn = pids[10], wvn = pids[11], posn = pids[12];
                    zq = tape.leaf(Tensor::vec(ad), false);
                    for (std::size_t j = 0; j < seq.prompt_len; ++j) {
                        std::size_t pr = std::min(j, kMaxPromptPos - 1);
                        NodeId xj = tape.add(
                            tape.row(embed, static_cast<std::size_t>(seq.tokens[j])),
                            tape.row(posn, pr));
                        NodeId kj = tape.affine(wkn, xj, zq);
                        NodeId vj = tape.affine(wvn, xj, zq);
                        kflat = (j == 0) ? kj : tape.concat(kflat, kj);
                        vflat = (j == 0) ? vj : tape.concat(vflat, vj);
                    }
                }

                NodeId s = tape.leaf(Tensor::vec(static_cast<std::size_t>(cfg.hidden_dim)), false);
                NodeId total = -1;
                int n_terms = 0;
                for (std::size_t pos = 0; pos + 1 < seq.tokens.size(); ++pos) {
                    NodeId x = tape.row(embed, static_cast<std::size_t>(seq.tokens[pos]));
                    NodeId front = x;
                    if (p.attention) {
                        NodeId q = tape.affine(wqn, s, zq);
                        NodeId at = tape.attend(q, kflat, vflat, ad);
                        front = tape.concat(x, at);
                    }
                    NodeId xs = tape.concat(front, s);
                    NodeId z = tape.sigmoid_fn(tape.affine(wz, xs, bz));
                    NodeId r = tape.sigmoid_fn(tape.affine(wr, xs, br));
                    NodeId xrs = tape.concat(front, tape.mul(r, s));
                    NodeId c = tape.tanh_fn(tape.affine(wc, xrs, bc));
                    NodeId sn = tape.add(s, tape.mul(z, tape.sub(c, s)));
                    if (pos + 1 >= seq.prompt_len) {
                        NodeId h = tape.scale(sn, cfg.hidden_scale);
                        NodeId logits = tape.affine(wo, h, bo);
                        NodeId ce = tape.softmax_ce(
                            logits, static_cast<std::size_t>(seq.tokens[pos + 1]));
                        total = (total < 0) ? ce : tape.add(total, ce);
                        ++n_terms;
                    }
                    s = sn;
                }
                NodeId loss = tape.scale(total, 1.0 / n_terms);
                epoch_loss += tape.value(loss)[0];
                tape.backward(loss, Tensor::scalar(1.0));
                for (std::size_t k = 0; k < ptrs.size(); ++k)
                    axpy(1.0, tape.grad(pids[k]), grads[k]);
            }

            double inv = 1.0 / static_cast<double>(stop - start);
            for (Tensor& g : grads)
                for (double& x : g.data) x *= inv;
            clip_global_norm(grads, 5.0);
            opt.step(ptrs, grads);
        }

        double train_mean = epoch_loss / static_cast<double>(train_seqs.size());
        double val_mean = 0.0;
        if (!val_seqs.empty()) {
            for (const EncodedSeq& seq : val_seqs) val_mean += plain_sequence_loss(p, seq);
            val_mean /= static_cast<double>(val_seqs.size());
        }
        if (!std::isfinite(train_mean) || !std::isfinite(val_mean))
            throw std::runtime_error("train_student: loss diverged at epoch " +
                                     std::to_string(epoch));
        res.train_loss.push_back(train_mean);
        res.val_loss.push_back(val_mean);
    }
    return res;
}

void save_student(const std::filesystem::path& path, const StudentParams& p) {
    StudentParams& mp = const_cast<StudentParams&>(p);
    std::vector<NamedArray> arrays;
    for (auto& [name, t] : mp.named()) arrays.push_back({name, *t});
    Tensor meta = Tensor::from({static_cast<double>(p.embed_dim),
                                static_cast<double>(p.hidden_dim), p.hidden_scale,
                                static_cast<double>(Vocab::instance().size()),
                                p.attention ? 1.0 : 0.0,
                                static_cast<double>(p.attn_dim)});
    arrays.push_back({"meta", meta});
    save_checkpoint(path, arrays);
}

StudentParams load_student(const std::filesystem::path& path) {
    std::vector<NamedArray> arrays = load_checkpoint(path);
    const Tensor& meta = find_array(arrays, "meta");
    if (meta.numel() != 6) throw std::runtime_error("load_student: bad meta array");
    if (static_cast<int>(meta[3]) != Vocab::instance().size())
        throw std::runtime_error("load_student: vocabulary size mismatch");

    StudentParams p;
    p.embed_dim = static_cast<int>(meta[0]);
    p.hidden_dim = static_cast<int>(meta[1]);
    p.hidden_scale = meta[2];
    p.attention = meta[4] != 0.0;
    p.attn_dim = static_cast<int>(meta[5]);
    for (auto& [name, t] : p.named()) *t = find_array(arrays, name);
    if (p.embed.rows() != static_cast<std::size_t>(Vocab::instance().size()))
        throw std::runtime_error("load_student: embedding shape mismatch");
    return p;
}

}  // namespace geosteer::student
