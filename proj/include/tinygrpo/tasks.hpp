#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tinygrpo/vocab.hpp"

namespace tinygrpo {

// Five synthetic task families with machine-checkable rewards, spanning the
// two reward shapes the trainer cares about (all-or-nothing vs partial
// credit) and four answer-extraction conventions.
enum class Family { arith, tagmath, countdown, stackcode, format };

enum class RewardKind { binary, continuous };

RewardKind reward_kind(Family f);
const char* family_name(Family f);
std::optional<Family> family_from_name(const std::string& name);
// Family prefix of a task id like "arith:17:3"; nullopt if unknown.
std::optional<Family> family_of_task(const std::string& task_id);

// Difficulty knobs. Defaults are the desk-scale settings exercised by the
// shipped configs; every field documents its own range.
struct TaskSpec {
    Family family = Family::arith;

    // arith: a OP b with OP drawn from ops_arith; answer in \boxed{ }.
    // Defaults pick uniformly two-digit operands whose digit columns never
    // carry, so every prompt is six tokens long and each answer digit is a
    // function of one digit pair — learnable compositionally rather than by
    // rote. Widen the range or allow carries for harder variants.
    int operand_min = 10;           // >= 0
    int operand_max = 99;           // <= 99, >= operand_min
    std::string ops_arith = "+";    // subset of "+-*"
    bool arith_carry_free = true;   // '+': no column carries; '-': no borrows

    // tagmath: same arithmetic, answer inside <answer> tags.
    int tag_operand_max = 14;       // 0..this, <= 99
    std::string ops_tagmath = "+*";

    // countdown: reach the target from the given numbers, each usable at
    // most once; the response *is* the expression.
    int countdown_numbers = 3;      // 2..6 given numbers
    int countdown_value_max = 9;    // given numbers drawn from 1..this

    // stackcode: emit a fenced stack-machine program matching k hidden tests.
    int program_min = 3, program_max = 6; // generated reference length
    int stack_inputs = 2;                 // test-case arity
    int test_cases = 4;                   // k
    int step_limit = 64;                  // per-evaluation budget

    // format: satisfy length / required-token / forbidden-token constraints.
    int format_max_len_lo = 3, format_max_len_hi = 10;
};

struct Prompt {
    std::string prompt_id; // unique instance id
    std::string task_id;   // verifier routing id (family prefix); == prompt_id
    TokenSequence tokens;  // what the policy conditions on
    std::string payload;   // JSON consumed by the verifier
};

enum class Split { train, validation };

// Deterministic in (spec, seed, count, split). Enumerable families (arith,
// tagmath) deal instances from opposite ends of one seed-shuffled deck, so
// train and validation are instance-disjoint whenever the two counts sum to
// at most the enumeration size. Stream families use disjoint index ranges.
std::vector<Prompt> generate(const TaskSpec& spec, uint64_t seed, int count,
                             Split split = Split::train);

// Exact deck size for the enumerable families (arith, tagmath) under the
// spec's knobs; nullopt for the stream families.
std::optional<long long> enumerable_pool_size(const TaskSpec& spec);

struct VerifierResult {
    double reward = 0.0;       // always in [0, 1]
    bool parsed_ok = false;    // answer/program extraction succeeded
    bool terminated_ok = false;// response ended with <eos>
    std::string detail;        // human-readable diagnostic, in-process only
};

// Pure scoring function: never throws on weird response text, only on a
// payload that does not match the family's schema.
VerifierResult verify(Family family, const std::string& payload,
                      const std::string& response_text);

// ---- extraction helpers (exposed for the fuzz + soundness suites) ----

// Content of the last "\boxed{" group, scanned to its balancing "}".
std::optional<std::string> parse_boxed(const std::string& text);
// Content of the last <answer>...</answer> pair.
std::optional<std::string> parse_answer_tags(const std::string& text);

// Split at the last "</think>" marker: (reasoning, final). No marker ->
// empty reasoning, the whole text as final.
struct ThinkSplit {
    std::string reasoning;
    std::string final_part;
};
ThinkSplit split_think(const std::string& text);
// Whitespace-insensitive integer: strips all whitespace, accepts an optional
// leading '-', then digits only. "  1 2 " -> 12.
std::optional<long long> parse_canonical_int(const std::string& text);

// ---- stack machine ----

struct StackOutcome {
    enum class Kind { value, error, timeout } kind = Kind::error;
    long long value = 0;
};

// Programs are whitespace-token lists over {0..9, +, -, *, dup, swap}.
// Inputs are pushed left to right (last input on top). Each executed token
// costs one step; running out of budget with tokens left is a timeout.
StackOutcome eval_stack_program(const std::vector<std::string>& program,
                                const std::vector<long long>& inputs,
                                int step_limit);

// ---- instance files (one JSON object per line) ----

void write_instances(std::ostream& out, const std::vector<Prompt>& prompts);
std::vector<Prompt> read_instances(std::istream& in);

} // namespace tinygrpo
