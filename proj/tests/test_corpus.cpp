#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "geosteer/corpus.hpp"
#include "json.hpp"

using namespace geosteer;
using namespace geosteer::corpus;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

// independent oracle: left-fold the op list over the start value
long long fold_ops(const Problem& p) {
    long long v = p.start_value;
    for (const ArithOp& op : p.ops) {
        switch (op.kind) {
            case OpKind::add: v += op.operand; break;
            case OpKind::sub: v -= op.operand; break;
            case OpKind::mul: v *= op.operand; break;
            case OpKind::div:
                REQUIRE(op.operand != 0);
                REQUIRE(v % op.operand == 0);
                v /= op.operand;
                break;
        }
    }
    return v;
}

// a 4-op problem with hand-checkable intermediates: 3 +5=8 *2=16 -6=10 /2=5
Problem four_op_problem() {
    Problem p;
    p.id = "hand4";
    p.start_value = 3;
    p.ops = {{OpKind::add, 5}, {OpKind::mul, 2}, {OpKind::sub, 6}, {OpKind::div, 2}};
    p.question_text = render_question(p.start_value, p.ops);
    p.gold_answer = 5;
    return p;
}

}  // namespace

TEST_SUITE_BEGIN("corpus");

TEST_CASE("generated problems agree with an independent fold oracle") {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        for (int steps = 1; steps <= 4; ++steps) {
            Problem p = generate_problem(seed, steps);
            CHECK(static_cast<int>(p.ops.size()) == steps);
            CHECK(p.gold_answer == fold_ops(p));
            CHECK(p.question_text.find("Start with") != std::string::npos);
            CHECK(p.question_text.find("What is the final value?") != std::string::npos);

            Problem again = generate_problem(seed, steps);
            CHECK(again.id == p.id);
            CHECK(again.start_value == p.start_value);
            CHECK(again.gold_answer == p.gold_answer);
            CHECK(again.question_text == p.question_text);
        }
    }
}

TEST_CASE("gold trajectory shape, final score, and step round trip") {
    Problem p = generate_problem(11, 2);
    auto [traj, quality] = gold_trajectory(p);
    CHECK(traj.kind == TrajectoryKind::pos);
    CHECK(traj.steps.size() == 2);
    CHECK(quality.scores.size() == 2);
    CHECK(traj.answer_text == std::string(kAnswerPrefix) + " " +
                                  std::to_string(p.gold_answer) + ".");
    CHECK(quality.scores.back() == 1.0);

    // re-parse every step and re-evaluate the stated arithmetic
    long long value = p.start_value;
    for (std::size_t i = 0; i < traj.steps.size(); ++i) {
        ParsedStep s = parse_step(traj.steps[i]);
        CHECK(s.lhs == value);
        CHECK(s.op == p.ops[i].kind);
        CHECK(s.operand == p.ops[i].operand);
        value = apply_op(value, {s.op, s.operand});
        CHECK(s.result == value);
    }
    CHECK(value == p.gold_answer);
}

TEST_CASE("oracle scores pinned prefix values") {
    Problem p = four_op_problem();
    auto [traj, quality] = gold_trajectory(p);
    REQUIRE(traj.steps.size() == 4);

    // full correct derivation
    CHECK(oracle_score(p, traj.steps) == 1.0);
    CHECK(quality.scores == std::vector<double>{0.625, 0.75, 0.875, 1.0});

    // first step only: validity 1, progress 1/4
    CHECK(oracle_score(p, {traj.steps[0]}) == 0.625);

    // step 0 correct, step 1 states a wrong intermediate: validity 0, progress 1/4
    std::vector<std::string> wrong = {traj.steps[0], "Step 2: 8 times 2 = 17."};
    CHECK(oracle_score(p, wrong) == 0.125);

    CHECK_THROWS(oracle_score(p, {}));
    CHECK_THROWS(oracle_score(p, {"not a step"}));
}

TEST_CASE("oracle scores stay in the unit interval") {
    CorpusConfig cfg;
    cfg.n_train = 30;
    cfg.n_val = 5;
    cfg.n_test = 5;
    Dataset ds = build_dataset(cfg);
    for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
        for (const DatasetRecord& rec : *split) {
            for (std::size_t t = 0; t < rec.trajectory.steps.size(); ++t) {
                std::vector<std::string> prefix(rec.trajectory.steps.begin(),
                                                rec.trajectory.steps.begin() + t + 1);
                double q = oracle_score(rec.problem, prefix);
                CHECK(q >= 0.0);
                CHECK(q <= 1.0);
                CHECK(q == rec.quality.scores[t]);
            }
        }
    }
}

TEST_CASE("fault injection degrades quality and the final answer") {
    int checked = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Problem p = generate_problem(seed, 3);
        auto [pos, posq] = gold_trajectory(p);
        auto [neg, negq] = inject_fault(p, pos, seed * 977 + 5);
        REQUIRE(neg.fault_index.has_value());
        std::size_t f = *neg.fault_index;
        REQUIRE(neg.steps.size() == pos.steps.size());

        // at and after the fault the neg score is strictly below the pos score
        for (std::size_t t = f; t < neg.steps.size(); ++t)
            CHECK(negq.scores[t] < posq.scores[t]);
        for (std::size_t t = 0; t < f; ++t) CHECK(negq.scores[t] == posq.scores[t]);
        CHECK(negq.scores.back() < 1.0);
        CHECK(posq.scores.back() == 1.0);

        // the stated final answer differs from gold
        CHECK(extract_final_answer(neg.answer_text).value() != p.gold_answer);

        // deterministic
        auto [neg2, negq2] = inject_fault(p, pos, seed * 977 + 5);
        CHECK(neg2.steps == neg.steps);
        CHECK(negq2.scores == negq.scores);

        // the faulty chain still uses correct arithmetic after the fault
        for (std::size_t t = f + 1; t < neg.steps.size(); ++t) {
            ParsedStep cur = parse_step(neg.steps[t]);
            ParsedStep prev = parse_step(neg.steps[t - 1]);
            CHECK(cur.lhs == prev.result);
            CHECK(cur.result == apply_op(cur.lhs, {cur.op, cur.operand}));
        }
        ++checked;
    }
    CHECK(checked == 20);
}

TEST_CASE("answer extraction") {
    CHECK(extract_final_answer("The final answer is 5.").value() == 5);
    CHECK(extract_final_answer("noise\nThe final answer is -12.\n").value() == -12);
    CHECK(!extract_final_answer("no pattern here").has_value());
    CHECK(!extract_final_answer("").has_value());
}

TEST_CASE("dataset counts, alignment, and split disjointness") {
    CorpusConfig cfg;
    cfg.n_train = 6;
    cfg.n_val = 2;
    cfg.n_test = 2;
    Dataset ds = build_dataset(cfg);
    CHECK(ds.train.size() == 12);  // one pos and one neg per problem
    CHECK(ds.val.size() == 4);
    CHECK(ds.test.size() == 4);

    std::vector<std::string> train_ids, other_ids;
    for (const auto& r : ds.train) {
        CHECK(r.quality.scores.size() == r.trajectory.steps.size());
        train_ids.push_back(r.problem.id);
    }
    for (const auto& r : ds.val) other_ids.push_back(r.problem.id);
    for (const auto& r : ds.test) other_ids.push_back(r.problem.id);
    for (const auto& id : train_ids)
        for (const auto& other : other_ids) CHECK(id != other);
}

TEST_CASE("jsonl files are byte-deterministic with the pinned field set") {
    fs::path dir = fresh_dir("geosteer_test_corpus_jsonl");
    CorpusConfig cfg;
    cfg.n_train = 5;
    cfg.n_val = 2;
    cfg.n_test = 2;
    Dataset a = build_dataset(cfg);
    Dataset b = build_dataset(cfg);
    write_jsonl(dir / "a.jsonl", a.train);
    write_jsonl(dir / "b.jsonl", b.train);
    std::string bytes = slurp(dir / "a.jsonl");
    CHECK(bytes == slurp(dir / "b.jsonl"));
    CHECK(bytes.find("\r\n") == std::string::npos);  // LF endings

    // pinned field names, line by line
    std::istringstream lines(bytes);
    std::string line;
    std::size_t n_lines = 0;
    while (std::getline(lines, line)) {
        nlohmann::json j = nlohmann::json::parse(line);
        for (const char* key : {"problem_id", "seed", "question", "gold_answer", "kind",
                                "steps", "answer_text", "fault_index", "scores"})
            CHECK(j.contains(key));
        CHECK(j.size() == 9);
        ++n_lines;
    }
    CHECK(n_lines == a.train.size());

    // round trip through the reader
    auto back = read_jsonl(dir / "a.jsonl");
    REQUIRE(back.size() == a.train.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].problem.id == a.train[i].problem.id);
        CHECK(back[i].problem.gold_answer == a.train[i].problem.gold_answer);
        CHECK(back[i].trajectory.steps == a.train[i].trajectory.steps);
        CHECK(back[i].quality.scores == a.train[i].quality.scores);
        CHECK(back[i].trajectory.fault_index == a.train[i].trajectory.fault_index);
    }
    fs::remove_all(dir);
}

TEST_CASE("exact integer arithmetic guards") {
    CHECK(apply_op(6, {OpKind::div, 3}) == 2);
    CHECK_THROWS(apply_op(7, {OpKind::div, 3}));   // inexact
    CHECK_THROWS(apply_op(7, {OpKind::div, 0}));   // zero divisor
    CHECK(apply_op(3, {OpKind::mul, 4}) == 12);
    CHECK(apply_op(3, {OpKind::sub, 9}) == -6);
}

TEST_SUITE_END();
