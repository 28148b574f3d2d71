#include "geosteer/corpus.hpp"

#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include "geosteer/rng.hpp"
#include "json.hpp"

namespace geosteer::corpus {

namespace {

constexpr long long kValueLimit = 1'000'000;

void check_range(long long v) {
    if (v < -kValueLimit || v > kValueLimit)
        throw std::runtime_error("corpus: intermediate value out of range");
}

std::string num(long long v) { return std::to_string(v); }

std::vector<std::string> lex_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && line[i] == ' ') ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ') ++j;
        if (j > i) {
            std::string word = line.substr(i, j - i);
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
            if (!word.empty()) out.push_back(word);
            for (char c : peeled) out.emplace_back(1, c);
        }
        i = j;
    }
    return out;
}

bool parse_int(const std::string& s, long long& out) {
    if (s.empty()) return false;
    std::size_t i = 0;
    bool neg = false;
    if (s[0] == '-') {
        neg = true;
        i = 1;
        if (s.size() == 1) return false;
    }
    long long v = 0;
    for (; i < s.size(); ++i) {
        if (s[i] < '0' || s[i] > '9') return false;
        v = v * 10 + (s[i] - '0');
        if (v > 100 * kValueLimit) return false;
    }
    out = neg ? -v : v;
    return true;
}

bool opword_to_kind(const std::string& w, OpKind& out) {
    if (w == "plus") out = OpKind::add;
    else if (w == "minus") out = OpKind::sub;
    else if (w == "times") out = OpKind::mul;
    else if (w == "over") out = OpKind::div;
    else return false;
    return true;
}

}  // namespace

long long apply_op(long long value, const ArithOp& op) {
    if (op.operand < 1) throw std::invalid_argument("apply_op: operand must be positive");
    long long r = 0;
    switch (op.kind) {
        case OpKind::add:
            r = value + op.operand;
            break;
        case OpKind::sub:
            r = value - op.operand;
            break;
        case OpKind::mul:
            r = value * op.operand;
            break;
        case OpKind::div:
            if (value % op.operand != 0)
                throw std::runtime_error("apply_op: inexact division");
            r = value / op.operand;
            break;
    }
    check_range(r);
    return r;
}

const char* op_word(OpKind k) {
    switch (k) {
        case OpKind::add: return "plus";
        case OpKind::sub: return "minus";
        case OpKind::mul: return "times";
        case OpKind::div: return "over";
    }
    return "plus";
}

std::string render_question(long long start_value, const std::vector<ArithOp>& ops) {
    std::string q = "Start with " + num(start_value) + ".";
    for (const ArithOp& op : ops) {
        switch (op.kind) {
            case OpKind::add: q += " Add " + num(op.operand) + "."; break;
            case OpKind::sub: q += " Subtract " + num(op.operand) + "."; break;
            case OpKind::mul: q += " Multiply by " + num(op.operand) + "."; break;
            case OpKind::div: q += " Divide by " + num(op.operand) + "."; break;
        }
    }
    q += " What is the final value?";
    return q;
}

std::string render_step(std::size_t index, long long prev, const ArithOp& op, long long value) {
    return "Step " + std::to_string(index) + ": " + num(prev) + " " + op_word(op.kind) + " " +
           num(op.operand) + " = " + num(value) + ".";
}

std::string render_answer(long long value) {
    return std::string(kAnswerPrefix) + " " + num(value) + ".";
}

ParsedStep parse_step(const std::string& line) {
    std::vector<std::string> toks = lex_line(line);
    // Step <i> : <a> <op-word> <b> = <c> .
    if (toks.size() != 9)
        throw std::invalid_argument("parse_step: expected 9 tokens, got " +
                                    std::to_string(toks.size()));
    ParsedStep s;
    if (toks[0] != "Step") throw std::invalid_argument("parse_step: missing 'Step'");
    if (!parse_int(toks[1], s.label)) throw std::invalid_argument("parse_step: bad step label");
    if (toks[2] != ":") throw std::invalid_argument("parse_step: missing ':'");
    if (!parse_int(toks[3], s.lhs)) throw std::invalid_argument("parse_step: bad lhs");
    if (!opword_to_kind(toks[4], s.op)) throw std::invalid_argument("parse_step: bad op word");
    if (!parse_int(toks[5], s.operand)) throw std::invalid_argument("parse_step: bad operand");
    if (toks[6] != "=") throw std::invalid_argument("parse_step: missing '='");
    if (!parse_int(toks[7], s.result)) throw std::invalid_argument("parse_step: bad result");
    if (toks[8] != ".") throw std::invalid_argument("parse_step: missing trailing '.'");
    return s;
}

std::optional<long long> extract_final_answer(const std::string& text) {
    std::size_t pos = text.rfind(kAnswerPrefix);
    if (pos == std::string::npos) return std::nullopt;
    std::size_t i = pos + std::string(kAnswerPrefix).size();
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    if (j < text.size() && text[j] == '-') ++j;
    std::size_t digits_begin = j;
    while (j < text.size() && text[j] >= '0' && text[j] <= '9') ++j;
    if (j == digits_begin) return std::nullopt;
    long long v = 0;
    if (!parse_int(text.substr(i, j - i), v)) return std::nullopt;
    return v;
}

Problem generate_problem(std::uint64_t seed, int num_steps) {
    if (num_steps < 1 || num_steps > 8)
        throw std::invalid_argument("generate_problem: num_steps must be in [1, 8]");
    Rng rng(splitmix64(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(num_steps))));

    Problem p;
    p.seed = seed;
    p.id = "p" + std::to_string(seed);
    p.start_value = rng.uniform_int(2, 9);

    // Keep the gold chain inside single-digit values so the step space stays
    // small enough for a small student model to master from a few hundred
    // examples.
    long long v = p.start_value;
    for (int s = 0; s < num_steps; ++s) {
        std::vector<long long> feas[4];
        for (long long o = 1; o <= 9; ++o) {
            if (v + o <= 9) feas[0].push_back(o);
            if (v - o >= 0) feas[1].push_back(o);
        }
        for (long long o = 2; o <= 9; ++o) {
            if (v * o <= 9) feas[2].push_back(o);
            if (v % o == 0) feas[3].push_back(o);
        }
        std::vector<int> kinds;
        for (int k = 0; k < 4; ++k)
            if (!feas[k].empty()) kinds.push_back(k);
        int k = kinds[static_cast<std::size_t>(rng.below(kinds.size()))];
        long long o = feas[k][static_cast<std::size_t>(rng.below(feas[k].size()))];
        ArithOp op{static_cast<OpKind>(k), o};
        v = apply_op(v, op);
        p.ops.push_back(op);
    }
    p.gold_answer = v;
    p.question_text = render_question(p.start_value, p.ops);
    return p;
}

std::pair<Trajectory, StepQuality> gold_trajectory(const Problem& p) {
    Trajectory t;
    t.problem_id = p.id;
    t.kind = TrajectoryKind::pos;
    long long v = p.start_value;
    for (std::size_t i = 0; i < p.ops.size(); ++i) {
        long long next = apply_op(v, p.ops[i]);
        t.steps.push_back(render_step(i + 1, v, p.ops[i], next));
        v = next;
    }
    t.answer_text = render_answer(v);

    StepQuality q;
    for (std::size_t i = 1; i <= t.steps.size(); ++i) {
        std::vector<std::string> prefix(t.steps.begin(), t.steps.begin() + i);
        q.scores.push_back(oracle_score(p, prefix));
    }
    return {t, q};
}

std::pair<Trajectory, StepQuality> inject_fault(const Problem& p, const Trajectory& pos,
                                                std::uint64_t seed) {
    if (pos.kind != TrajectoryKind::pos)
        throw std::invalid_argument("inject_fault: expected a pos trajectory");
    std::size_t T = p.ops.size();
    if (pos.steps.size() != T)
        throw std::invalid_argument("inject_fault: trajectory/problem length mismatch");

    std::vector<long long> gold(T + 1);
    gold[0] = p.start_value;
    for (std::size_t i = 0; i < T; ++i) gold[i + 1] = apply_op(gold[i], p.ops[i]);

    const long long offsets[] = {1, -1, 2, -2, 10, -10};
    std::vector<std::pair<std::size_t, long long>> candidates;
    for (std::size_t i = 0; i < T; ++i)
        for (long long off : offsets) candidates.emplace_back(i, off);
    Rng rng(seed);
    rng.shuffle(candidates);

    for (const auto& [fi, off] : candidates) {
        long long w = gold[fi + 1] + off;
        if (w < -kValueLimit || w > kValueLimit) continue;
        // wrong chain after the fault, correct arithmetic on the wrong value
        std::vector<long long> chain{w};
        bool ok = true;
        long long cur = w;
        for (std::size_t j = fi + 1; j < T; ++j) {
            const ArithOp& op = p.ops[j];
            if (op.kind == OpKind::div && cur % op.operand != 0) {
                ok = false;
                break;
            }
            switch (op.kind) {
                case OpKind::add: cur += op.operand; break;
                case OpKind::sub: cur -= op.operand; break;
                case OpKind::mul: cur *= op.operand; break;
                case OpKind::div: cur /= op.operand; break;
            }
            if (cur < -kValueLimit || cur > kValueLimit) {
                ok = false;
                break;
            }
            chain.push_back(cur);
        }
        if (!ok) continue;

        Trajectory t;
        t.problem_id = p.id;
        t.kind = TrajectoryKind::neg;
        t.fault_index = fi;
        for (std::size_t i = 0; i < fi; ++i) t.steps.push_back(pos.steps[i]);
        t.steps.push_back(render_step(fi + 1, gold[fi], p.ops[fi], w));
        for (std::size_t j = fi + 1; j < T; ++j)
            t.steps.push_back(render_step(j + 1, chain[j - fi - 1], p.ops[j], chain[j - fi]));
        t.answer_text = render_answer(chain.back());

        StepQuality q;
        for (std::size_t i = 1; i <= t.steps.size(); ++i) {
            std::vector<std::string> prefix(t.steps.begin(), t.steps.begin() + i);
            q.scores.push_back(oracle_score(p, prefix));
        }
        return {t, q};
    }
    throw std::runtime_error("inject_fault: no valid fault candidate for " + p.id);
}

double oracle_score(const Problem& p, const std::vector<std::string>& prefix_steps) {
    if (prefix_steps.empty())
        throw std::invalid_argument("oracle_score: empty prefix");

    std::size_t n = p.ops.size();
    std::vector<long long> gold(n + 1);
    gold[0] = p.start_value;
    for (std::size_t i = 0; i < n; ++i) gold[i + 1] = apply_op(gold[i], p.ops[i]);

    bool valid = true;
    std::size_t derived = 0;
    for (std::size_t i = 0; i < prefix_steps.size(); ++i) {
        ParsedStep s;
        try {
            s = parse_step(prefix_steps[i]);
        } catch (const std::exception& e) {
            throw std::runtime_error("oracle_score: step " + std::to_string(i) + ": " + e.what());
        }
        bool correct = i < n && s.op == p.ops[i].kind && s.operand == p.ops[i].operand &&
                       s.lhs == gold[i] && s.result == gold[i + 1];
        if (!correct) valid = false;
        if (i < n && s.result == gold[i + 1]) ++derived;
    }
    double progress = static_cast<double>(derived) / static_cast<double>(n);
    return 0.5 * (valid ? 1.0 : 0.0) + 0.5 * progress;
}

Dataset build_dataset(const CorpusConfig& cfg) {
    if (cfg.n_train < 0 || cfg.n_val < 0 || cfg.n_test < 0)
        throw std::invalid_argument("build_dataset: negative split size");
    if (cfg.min_steps < 1 || cfg.max_steps > 8 || cfg.min_steps > cfg.max_steps)
        throw std::invalid_argument("build_dataset: step range must satisfy 1 <= min <= max <= 8");

    Rng steps_rng(splitmix64(cfg.master_seed ^ 0x737465707321ULL));
    Dataset ds;
    auto fill = [&](std::vector<DatasetRecord>& out, int count, int base) {
        for (int i = 0; i < count; ++i) {
            std::uint64_t pseed =
                splitmix64(cfg.master_seed + static_cast<std::uint64_t>(base + i));
            int nsteps = static_cast<int>(steps_rng.uniform_int(cfg.min_steps, cfg.max_steps));
            Problem p = generate_problem(pseed, nsteps);
            auto [pos, posq] = gold_trajectory(p);
            auto [neg, negq] = inject_fault(p, pos, splitmix64(pseed ^ 0xfa17ULL));
            out.push_back({p, pos, std::move(posq)});
            out.push_back({p, std::move(neg), std::move(negq)});
        }
    };
    fill(ds.train, cfg.n_train, 0);
    fill(ds.val, cfg.n_val, cfg.n_train);
    fill(ds.test, cfg.n_test, cfg.n_train + cfg.n_val);
    return ds;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
    std::string out;
    for (const DatasetRecord& r : records) {
        nlohmann::ordered_json j;
        j["problem_id"] = r.problem.id;
        j["seed"] = r.problem.seed;
        j["question"] = r.problem.question_text;
        j["gold_answer"] = r.problem.gold_answer;
        j["kind"] = r.trajectory.kind == TrajectoryKind::pos ? "pos" : "neg";
        j["steps"] = r.trajectory.steps;
        j["answer_text"] = r.trajectory.answer_text;
        if (r.trajectory.fault_index)
            j["fault_index"] = *r.trajectory.fault_index;
        else
            j["fault_index"] = nullptr;
        j["scores"] = r.quality.scores;
        out += j.dump();
        out += '\n';
    }

    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("write_jsonl: cannot open " + tmp.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw std::runtime_error("write_jsonl: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::vector<DatasetRecord> read_jsonl(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_jsonl: cannot open " + path.string());
    std::vector<DatasetRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("read_jsonl: " + path.string() + ":" +
                                     std::to_string(lineno) + ": " + e.what());
        }
        DatasetRecord rec;
        std::uint64_t seed = j.at("seed").get<std::uint64_t>();
        std::vector<double> scores = j.at("scores").get<std::vector<double>>();
        rec.problem = generate_problem(seed, static_cast<int>(scores.size()));
        if (rec.problem.id != j.at("problem_id").get<std::string>() ||
            rec.problem.question_text != j.at("question").get<std::string>() ||
            rec.problem.gold_answer != j.at("gold_answer").get<long long>())
            throw std::runtime_error("read_jsonl: " + path.string() + ":" +
                                     std::to_string(lineno) +
                                     ": record does not match its generator");
        rec.trajectory.problem_id = rec.problem.id;
        rec.trajectory.kind = j.at("kind").get<std::string>() == "pos" ? TrajectoryKind::pos
                                                                       : TrajectoryKind::neg;
        rec.trajectory.steps = j.at("steps").get<std::vector<std::string>>();
        rec.trajectory.answer_text = j.at("answer_text").get<std::string>();
        if (!j.at("fault_index").is_null())
            rec.trajectory.fault_index = j.at("fault_index").get<std::size_t>();
        rec.quality.scores = std::move(scores);
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace geosteer::corpus
