#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace geosteer::corpus {

enum class OpKind { add, sub, mul, div };

struct ArithOp {
    OpKind kind;
    long long operand;
};

struct Problem {
    std::string id;
    std::uint64_t seed = 0;
    long long start_value = 0;
    std::vector<ArithOp> ops;
    std::string question_text;
    long long gold_answer = 0;
};

enum class TrajectoryKind { pos, neg };

struct Trajectory {
    std::string problem_id;
    TrajectoryKind kind = TrajectoryKind::pos;
    std::vector<std::string> steps;
    std::string answer_text;
    std::optional<std::size_t> fault_index;
};

struct StepQuality {
    std::vector<double> scores;  // one per prefix, index t scores steps [0..t]
};

struct DatasetRecord {
    Problem problem;
    Trajectory trajectory;
    StepQuality quality;
};

inline constexpr const char* kAnswerPrefix = "The final answer is";

// Applies one op with exact integer arithmetic; throws on inexact division,
// division by a non-positive operand, or a result outside [-1e6, 1e6].
long long apply_op(long long value, const ArithOp& op);

const char* op_word(OpKind k);  // step grammar word: plus / minus / times / over

std::string render_question(long long start_value, const std::vector<ArithOp>& ops);
std::string render_step(std::size_t index, long long prev, const ArithOp& op, long long value);
std::string render_answer(long long value);

struct ParsedStep {
    long long label = 0;  // the integer after "Step" (not semantically checked)
    long long lhs = 0;
    OpKind op = OpKind::add;
    long long operand = 0;
    long long result = 0;
};

// Parses one line of the fixed step grammar
// "Step <i>: <prev> <op-word> <operand> = <value>."; throws std::invalid_argument
// with a reason if the line does not match.
ParsedStep parse_step(const std::string& line);

std::optional<long long> extract_final_answer(const std::string& text);

// Deterministic in (seed, num_steps); all intermediates are exact integers.
Problem generate_problem(std::uint64_t seed, int num_steps);

std::pair<Trajectory, StepQuality> gold_trajectory(const Problem& p);

// Picks one step, replaces its stated result with a nearby wrong value and
// re-derives every later step from the wrong chain with correct arithmetic.
// The candidate (index, offset) is chosen seeded-randomly among those keeping
// the wrong chain integer-exact and in range.
std::pair<Trajectory, StepQuality> inject_fault(const Problem& p, const Trajectory& pos,
                                                std::uint64_t seed);

// 0.5 * validity + 0.5 * progress over a non-empty step prefix. Validity is 1
// only while every step matches the problem's op sequence and gold chain;
// progress counts gold intermediates stated at their own position. Throws on
// an empty prefix or an unparseable step, naming the offending index.
double oracle_score(const Problem& p, const std::vector<std::string>& prefix_steps);

struct CorpusConfig {
    int n_train = 500;
    int n_val = 100;
    int n_test = 100;
    int min_steps = 1;
    int max_steps = 4;
    std::uint64_t master_seed = 42;
};

struct Dataset {
    std::vector<DatasetRecord> train, val, test;
};

// One pos and one neg trajectory per problem; splits are disjoint by id.
Dataset build_dataset(const CorpusConfig& cfg);

void write_jsonl(const std::filesystem::path& path, const std::vector<DatasetRecord>& records);

// Rebuilds each Problem from (seed, step count) and cross-checks the stored
// question text, so records stay self-consistent with the generator.
std::vector<DatasetRecord> read_jsonl(const std::filesystem::path& path);

}  // namespace geosteer::corpus
