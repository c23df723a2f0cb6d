#include "tinygrpo/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tinygrpo/rng.hpp"

namespace tinygrpo {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr long long kValueCap = 1000000000000000LL; // defensive overflow bound

TokenId op_token(char op) {
    switch (op) {
        case '+': return DefaultTokens::plus;
        case '-': return DefaultTokens::minus;
        case '*': return DefaultTokens::times;
        default: throw std::invalid_argument("unsupported operator");
    }
}

TokenSequence int_tokens(long long v) {
    TokenSequence out;
    if (v < 0) {
        out.push_back(DefaultTokens::minus);
        v = -v;
    }
    TokenSequence digits = digit_tokens(v);
    out.insert(out.end(), digits.begin(), digits.end());
    return out;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream in(text);
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

// Trailing <eos> marks clean termination; everything before it is content.
std::vector<std::string> strip_trailing_eos(std::vector<std::string> words,
                                            bool& terminated) {
    terminated = !words.empty() && words.back() == "<eos>";
    if (terminated) words.pop_back();
    return words;
}

bool all_digits(const std::string& w) {
    if (w.empty()) return false;
    for (char c : w)
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    return true;
}

// ---- countdown expression parsing ----

struct ExprLex {
    enum class Kind { num, plus, minus, star, lparen, rparen } kind;
    long long value = 0;
};

// Words -> lex tokens; adjacent digit words merge into one number ("1 2" ==
// "12"). Any unrecognized word fails the whole parse.
std::optional<std::vector<ExprLex>> lex_expression(
    const std::vector<std::string>& words) {
    std::vector<ExprLex> out;
    size_t i = 0;
    while (i < words.size()) {
        const std::string& w = words[i];
        if (all_digits(w)) {
            std::string digits;
            while (i < words.size() && all_digits(words[i])) {
                digits += words[i];
                ++i;
            }
            if (digits.size() > 15) return std::nullopt;
            out.push_back({ExprLex::Kind::num, std::stoll(digits)});
            continue;
        }
        ExprLex::Kind k;
        if (w == "+") k = ExprLex::Kind::plus;
        else if (w == "-") k = ExprLex::Kind::minus;
        else if (w == "*") k = ExprLex::Kind::star;
        else if (w == "(") k = ExprLex::Kind::lparen;
        else if (w == ")") k = ExprLex::Kind::rparen;
        else return std::nullopt;
        out.push_back({k, 0});
        ++i;
    }
    return out;
}

// Standard precedence grammar; collects every literal used so the caller can
// check the numbers constraint.
struct ExprParser {
    const std::vector<ExprLex>& toks;
    size_t pos = 0;
    std::vector<long long> used;
    bool ok = true;

    bool at(ExprLex::Kind k) const {
        return pos < toks.size() && toks[pos].kind == k;
    }

    long long factor() {
        if (at(ExprLex::Kind::num)) {
            long long v = toks[pos++].value;
            used.push_back(v);
            return v;
        }
        if (at(ExprLex::Kind::lparen)) {
            ++pos;
            long long v = expr();
            if (!at(ExprLex::Kind::rparen)) { ok = false; return 0; }
            ++pos;
            return v;
        }
        ok = false;
        return 0;
    }

    long long term() {
        long long v = factor();
        while (ok && at(ExprLex::Kind::star)) {
            ++pos;
            v *= factor();
            if (std::abs(v) > kValueCap) ok = false;
        }
        return v;
    }

    long long expr() {
        long long v = term();
        while (ok && (at(ExprLex::Kind::plus) || at(ExprLex::Kind::minus))) {
            bool add = at(ExprLex::Kind::plus);
            ++pos;
            long long rhs = term();
            v = add ? v + rhs : v - rhs;
            if (std::abs(v) > kValueCap) ok = false;
        }
        return v;
    }
};

struct ParsedExpr {
    long long value = 0;
    std::vector<long long> numbers_used;
};

std::optional<ParsedExpr> parse_expression(const std::vector<std::string>& words) {
    if (words.empty()) return std::nullopt;
    auto lexed = lex_expression(words);
    if (!lexed) return std::nullopt;
    ExprParser p{*lexed};
    long long v = p.expr();
    if (!p.ok || p.pos != lexed->size()) return std::nullopt;
    return ParsedExpr{v, std::move(p.used)};
}

// ---- per-family generation ----

std::string make_id(Family f, uint64_t seed, uint64_t index) {
    return std::string(family_name(f)) + ":" + std::to_string(seed) + ":" +
           std::to_string(index);
}

struct ArithInstance {
    char op;
    int a, b;
};

// carry_free admits only digit-column-independent pairs: additions whose
// columns sum to <= 9 and subtractions that never borrow. '*' is unaffected.
bool carry_free_pair(char op, int a, int b) {
    switch (op) {
        case '+': return a % 10 + b % 10 <= 9 && a / 10 + b / 10 <= 9;
        case '-': return a % 10 >= b % 10 && a / 10 >= b / 10;
        default: return true;
    }
}

std::vector<ArithInstance> arith_deck(const std::string& ops, int lo, int hi,
                                      bool carry_free, uint64_t seed,
                                      const char* purpose) {
    if (lo < 0 || hi > 99 || lo > hi)
        throw std::invalid_argument("operand range out of bounds");
    if (ops.empty() || ops.find_first_not_of("+-*") != std::string::npos)
        throw std::invalid_argument("operator set must be a subset of +-*");
    std::vector<ArithInstance> deck;
    for (char op : ops)
        for (int a = lo; a <= hi; ++a)
            for (int b = lo; b <= hi; ++b) {
                if (carry_free && !carry_free_pair(op, a, b)) continue;
                deck.push_back({op, a, b});
            }
    RngStream rs(stream_id(seed, purpose));
    rs.shuffle(deck);
    return deck;
}

long long apply_op(char op, long long a, long long b) {
    switch (op) {
        case '+': return a + b;
        case '-': return a - b;
        case '*': return a * b;
        default: throw std::invalid_argument("unsupported operator");
    }
}

Prompt make_arith_prompt(Family fam, const ArithInstance& inst, uint64_t seed,
                         uint64_t index) {
    Prompt p;
    p.prompt_id = p.task_id = make_id(fam, seed, index);
    TokenSequence a = digit_tokens(inst.a), b = digit_tokens(inst.b);
    p.tokens.insert(p.tokens.end(), a.begin(), a.end());
    p.tokens.push_back(op_token(inst.op));
    p.tokens.insert(p.tokens.end(), b.begin(), b.end());
    p.tokens.push_back(DefaultTokens::equals);
    ordered_json payload;
    payload["answer"] = apply_op(inst.op, inst.a, inst.b);
    p.payload = payload.dump();
    return p;
}

std::vector<Prompt> generate_enumerable(Family fam, const TaskSpec& spec,
                                        uint64_t seed, int count, Split split) {
    const bool arith = fam == Family::arith;
    auto deck = arith_deck(arith ? spec.ops_arith : spec.ops_tagmath,
                           arith ? spec.operand_min : 0,
                           arith ? spec.operand_max : spec.tag_operand_max,
                           arith && spec.arith_carry_free, seed,
                           arith ? "arith.deck" : "tagmath.deck");
    if (count > static_cast<int>(deck.size()))
        throw std::invalid_argument("count exceeds enumerable instance pool");
    std::vector<Prompt> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        // train deals from the front of the shuffled deck, validation from
        // the back; disjoint as long as the two counts sum to <= deck size
        size_t idx = split == Split::train
                         ? static_cast<size_t>(i)
                         : deck.size() - static_cast<size_t>(count) + i;
        out.push_back(make_arith_prompt(fam, deck[idx], seed, idx));
    }
    return out;
}

long long arith_pool_size(const std::string& ops, int lo, int hi,
                          bool carry_free) {
    long long n = 0;
    for (char op : ops)
        for (int a = lo; a <= hi; ++a)
            for (int b = lo; b <= hi; ++b)
                n += !carry_free || carry_free_pair(op, a, b);
    return n;
}

uint64_t stream_index(Split split, int i) {
    return split == Split::train ? static_cast<uint64_t>(i)
                                 : (1ULL << 20) + static_cast<uint64_t>(i);
}

Prompt gen_countdown(const TaskSpec& spec, uint64_t seed, uint64_t index) {
    const int k = spec.countdown_numbers;
    if (k < 2 || k > spec.countdown_value_max || spec.countdown_value_max > 9)
        throw std::invalid_argument("countdown knobs out of range");
    RngStream rs(stream_id(seed, "countdown.gen", index));

    std::vector<long long> numbers(spec.countdown_value_max);
    for (int i = 0; i < spec.countdown_value_max; ++i) numbers[i] = i + 1;
    rs.shuffle(numbers);
    numbers.resize(k); // distinct by construction

    // Build a candidate expression from a random subset, then score it with
    // the same grammar the verifier uses, so the stored solution is valid by
    // construction.
    const char ops[] = {'+', '-', '*'};
    std::string solution;
    long long target = -1;
    for (int attempt = 0; attempt < 200 && target < 0; ++attempt) {
        std::vector<long long> pool = numbers;
        rs.shuffle(pool);
        const size_t m = 2 + rs.uniform_below(static_cast<uint64_t>(k - 1));
        std::string expr = std::to_string(pool[0]);
        for (size_t i = 1; i < m; ++i) {
            expr += ' ';
            expr += ops[rs.uniform_below(3)];
            expr += ' ';
            expr += std::to_string(pool[i]);
        }
        auto parsed = parse_expression(split_words(expr));
        if (parsed && parsed->value >= 0 && parsed->value <= 99) {
            solution = expr;
            target = parsed->value;
        }
    }
    if (target < 0) { // two smallest always sum within range
        solution = std::to_string(numbers[0]) + " + " + std::to_string(numbers[1]);
        target = numbers[0] + numbers[1];
    }

    Prompt p;
    p.prompt_id = p.task_id = make_id(Family::countdown, seed, index);
    for (long long n : numbers) {
        TokenSequence t = int_tokens(n);
        p.tokens.insert(p.tokens.end(), t.begin(), t.end());
    }
    p.tokens.push_back(DefaultTokens::equals);
    TokenSequence t = int_tokens(target);
    p.tokens.insert(p.tokens.end(), t.begin(), t.end());

    ordered_json payload;
    payload["numbers"] = numbers;
    payload["target"] = target;
    payload["solution"] = solution; // debug metadata; the verifier ignores it
    p.payload = payload.dump();
    return p;
}

Prompt gen_stackcode(const TaskSpec& spec, uint64_t seed, uint64_t index) {
    if (spec.program_min < 1 || spec.program_max < spec.program_min ||
        spec.stack_inputs < 1 || spec.test_cases < 1 || spec.step_limit < 1)
        throw std::invalid_argument("stackcode knobs out of range");
    RngStream rs(stream_id(seed, "stackcode.gen", index));

    // depth-tracked construction: every op keeps the stack legal
    const int len = spec.program_min +
                    static_cast<int>(rs.uniform_below(
                        static_cast<uint64_t>(spec.program_max - spec.program_min + 1)));
    std::vector<std::string> program;
    int depth = spec.stack_inputs;
    for (int i = 0; i < len; ++i) {
        std::vector<std::string> choices;
        choices.push_back(std::to_string(rs.uniform_below(10)));
        if (depth >= 1) choices.push_back("dup");
        if (depth >= 2) {
            choices.push_back("+");
            choices.push_back("-");
            choices.push_back("*");
            choices.push_back("swap");
        }
        std::string pick = choices[rs.uniform_below(choices.size())];
        if (pick == "dup") depth += 1;
        else if (pick == "+" || pick == "-" || pick == "*") depth -= 1;
        else if (pick != "swap") depth += 1; // literal push
        program.push_back(std::move(pick));
    }

    ordered_json tests = ordered_json::array();
    Prompt p;
    p.prompt_id = p.task_id = make_id(Family::stackcode, seed, index);
    for (int c = 0; c < spec.test_cases; ++c) {
        std::vector<long long> inputs(spec.stack_inputs);
        for (auto& x : inputs) x = static_cast<long long>(rs.uniform_below(10));
        StackOutcome out = eval_stack_program(program, inputs, spec.step_limit);
        if (out.kind != StackOutcome::Kind::value)
            throw std::logic_error("generated stack program failed its own test");
        tests.push_back({{"in", inputs}, {"out", out.value}});

        p.tokens.push_back(DefaultTokens::lparen);
        for (long long x : inputs) {
            TokenSequence t = int_tokens(x);
            p.tokens.insert(p.tokens.end(), t.begin(), t.end());
        }
        p.tokens.push_back(DefaultTokens::equals);
        TokenSequence t = int_tokens(out.value);
        p.tokens.insert(p.tokens.end(), t.begin(), t.end());
        p.tokens.push_back(DefaultTokens::rparen);
    }

    ordered_json payload;
    payload["tests"] = std::move(tests);
    payload["step_limit"] = spec.step_limit;
    std::string ref;
    for (size_t i = 0; i < program.size(); ++i) {
        if (i) ref += ' ';
        ref += program[i];
    }
    payload["ref"] = ref; // reference program; the verifier ignores it
    p.payload = payload.dump();
    return p;
}

Prompt gen_format(const TaskSpec& spec, uint64_t seed, uint64_t index) {
    if (spec.format_max_len_lo < 1 || spec.format_max_len_hi < spec.format_max_len_lo)
        throw std::invalid_argument("format length knobs out of range");
    RngStream rs(stream_id(seed, "format.gen", index));
    const int n_fillers = DefaultTokens::filler_last - DefaultTokens::filler_first + 1;
    const int max_len =
        spec.format_max_len_lo +
        static_cast<int>(rs.uniform_below(static_cast<uint64_t>(
            spec.format_max_len_hi - spec.format_max_len_lo + 1)));
    const TokenId required =
        DefaultTokens::filler_first + static_cast<TokenId>(rs.uniform_below(n_fillers));
    TokenId forbidden = required;
    while (forbidden == required)
        forbidden = DefaultTokens::filler_first +
                    static_cast<TokenId>(rs.uniform_below(n_fillers));

    const Vocabulary& v = default_vocab();
    Prompt p;
    p.prompt_id = p.task_id = make_id(Family::format, seed, index);
    TokenSequence t = digit_tokens(max_len);
    p.tokens.insert(p.tokens.end(), t.begin(), t.end());
    p.tokens.push_back(required);
    p.tokens.push_back(forbidden);

    ordered_json payload;
    payload["max_len"] = max_len;
    payload["required"] = v.token(required);
    payload["forbidden"] = v.token(forbidden);
    p.payload = payload.dump();
    return p;
}

// ---- per-family verification ----

VerifierResult verify_int_answer(const std::string& payload,
                                 const std::string& response, bool boxed) {
    ordered_json pj = ordered_json::parse(payload);
    const long long answer = pj.at("answer").get<long long>();
    VerifierResult r;
    std::vector<std::string> words = split_words(response);
    strip_trailing_eos(words, r.terminated_ok);
    const std::string body = split_think(response).final_part;
    auto extracted = boxed ? parse_boxed(body) : parse_answer_tags(body);
    if (!extracted) {
        r.detail = boxed ? "no boxed group" : "no answer tags";
        return r;
    }
    auto value = parse_canonical_int(*extracted);
    if (!value) {
        r.detail = "answer not an integer";
        return r;
    }
    r.parsed_ok = true;
    r.reward = (*value == answer) ? 1.0 : 0.0;
    if (r.reward == 0.0)
        r.detail = "expected " + std::to_string(answer) + ", got " + std::to_string(*value);
    return r;
}

VerifierResult verify_countdown(const std::string& payload,
                                const std::string& response) {
    ordered_json pj = ordered_json::parse(payload);
    std::vector<long long> given = pj.at("numbers").get<std::vector<long long>>();
    const long long target = pj.at("target").get<long long>();
    VerifierResult r;
    {
        std::vector<std::string> raw = split_words(response);
        r.terminated_ok = !raw.empty() && raw.back() == "<eos>";
    }
    std::vector<std::string> words = split_words(split_think(response).final_part);
    bool ignored;
    words = strip_trailing_eos(words, ignored);
    auto parsed = parse_expression(words);
    if (!parsed) {
        r.detail = "not a valid expression";
        return r;
    }
    r.parsed_ok = true;
    // each given number usable at most once; numbers outside the set forbidden
    std::vector<long long> pool = given;
    bool numbers_ok = true;
    for (long long used : parsed->numbers_used) {
        auto it = std::find(pool.begin(), pool.end(), used);
        if (it == pool.end()) { numbers_ok = false; break; }
        pool.erase(it);
    }
    if (!numbers_ok) r.detail = "uses a number outside the given multiset";
    else if (parsed->value != target)
        r.detail = "evaluates to " + std::to_string(parsed->value) + ", target " +
                   std::to_string(target);
    r.reward = (numbers_ok && parsed->value == target) ? 1.0 : 0.0;
    return r;
}

VerifierResult verify_stackcode(const std::string& payload,
                                const std::string& response) {
    ordered_json pj = ordered_json::parse(payload);
    const int step_limit = pj.at("step_limit").get<int>();
    VerifierResult r;
    {
        std::vector<std::string> raw = split_words(response);
        r.terminated_ok = !raw.empty() && raw.back() == "<eos>";
    }
    std::vector<std::string> words = split_words(split_think(response).final_part);
    bool ignored;
    words = strip_trailing_eos(words, ignored);

    // program = tokens inside the last complete ``` ... ``` pair
    std::vector<size_t> fences;
    for (size_t i = 0; i < words.size(); ++i)
        if (words[i] == "```") fences.push_back(i);
    if (fences.size() < 2) {
        r.detail = "no fenced program";
        return r;
    }
    // last complete pair; a trailing unmatched fence is ignored
    const size_t pairs = fences.size() / 2;
    const size_t lo = fences[2 * pairs - 2], hi = fences[2 * pairs - 1];
    std::vector<std::string> program(words.begin() + lo + 1, words.begin() + hi);
    for (const std::string& w : program) {
        const bool ok = (w.size() == 1 && std::isdigit(static_cast<unsigned char>(w[0]))) ||
                        w == "+" || w == "-" || w == "*" || w == "dup" || w == "swap";
        if (!ok) {
            r.detail = "illegal program token: " + w;
            return r;
        }
    }
    r.parsed_ok = true;

    int passed = 0, total = 0;
    for (const auto& test : pj.at("tests")) {
        ++total;
        std::vector<long long> inputs = test.at("in").get<std::vector<long long>>();
        const long long expected = test.at("out").get<long long>();
        StackOutcome out = eval_stack_program(program, inputs, step_limit);
        if (out.kind == StackOutcome::Kind::timeout) {
            // blowing the budget anywhere zeroes the whole submission
            r.reward = 0.0;
            r.detail = "step budget exceeded";
            return r;
        }
        if (out.kind == StackOutcome::Kind::value && out.value == expected) ++passed;
    }
    r.reward = total ? static_cast<double>(passed) / total : 0.0;
    if (passed < total)
        r.detail = std::to_string(passed) + "/" + std::to_string(total) + " tests passed";
    return r;
}

VerifierResult verify_format(const std::string& payload,
                             const std::string& response) {
    ordered_json pj = ordered_json::parse(payload);
    const size_t max_len = pj.at("max_len").get<size_t>();
    const std::string required = pj.at("required").get<std::string>();
    const std::string forbidden = pj.at("forbidden").get<std::string>();
    VerifierResult r;
    r.parsed_ok = true; // scoring is total: any text earns a score
    {
        std::vector<std::string> raw = split_words(response);
        r.terminated_ok = !raw.empty() && raw.back() == "<eos>";
    }
    std::vector<std::string> words = split_words(split_think(response).final_part);
    bool ignored;
    words = strip_trailing_eos(words, ignored);

    int satisfied = 0;
    if (words.size() <= max_len) ++satisfied;
    if (std::find(words.begin(), words.end(), required) != words.end()) ++satisfied;
    if (std::find(words.begin(), words.end(), forbidden) == words.end()) ++satisfied;
    r.reward = satisfied / 3.0;
    return r;
}

} // namespace

RewardKind reward_kind(Family f) {
    switch (f) {
        case Family::stackcode:
        case Family::format: return RewardKind::continuous;
        default: return RewardKind::binary;
    }
}

const char* family_name(Family f) {
    switch (f) {
        case Family::arith: return "arith";
        case Family::tagmath: return "tagmath";
        case Family::countdown: return "countdown";
        case Family::stackcode: return "stackcode";
        case Family::format: return "format";
    }
    throw std::invalid_argument("bad family");
}

std::optional<Family> family_from_name(const std::string& name) {
    if (name == "arith") return Family::arith;
    if (name == "tagmath") return Family::tagmath;
    if (name == "countdown") return Family::countdown;
    if (name == "stackcode") return Family::stackcode;
    if (name == "format") return Family::format;
    return std::nullopt;
}

std::optional<Family> family_of_task(const std::string& task_id) {
    const size_t colon = task_id.find(':');
    if (colon == std::string::npos) return std::nullopt;
    return family_from_name(task_id.substr(0, colon));
}

std::vector<Prompt> generate(const TaskSpec& spec, uint64_t seed, int count,
                             Split split) {
    if (count < 0) throw std::invalid_argument("count must be >= 0");
    switch (spec.family) {
        case Family::arith:
        case Family::tagmath:
            return generate_enumerable(spec.family, spec, seed, count, split);
        default: break;
    }
    std::vector<Prompt> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        const uint64_t idx = stream_index(split, i);
        switch (spec.family) {
            case Family::countdown: out.push_back(gen_countdown(spec, seed, idx)); break;
            case Family::stackcode: out.push_back(gen_stackcode(spec, seed, idx)); break;
            case Family::format: out.push_back(gen_format(spec, seed, idx)); break;
            default: throw std::logic_error("unreachable");
        }
    }
    return out;
}

std::optional<long long> enumerable_pool_size(const TaskSpec& spec) {
    switch (spec.family) {
        case Family::arith:
            return arith_pool_size(spec.ops_arith, spec.operand_min,
                                   spec.operand_max, spec.arith_carry_free);
        case Family::tagmath:
            return arith_pool_size(spec.ops_tagmath, 0, spec.tag_operand_max,
                                   false);
        default: return std::nullopt;
    }
}

VerifierResult verify(Family family, const std::string& payload,
                      const std::string& response_text) {
    switch (family) {
        case Family::arith: return verify_int_answer(payload, response_text, true);
        case Family::tagmath: return verify_int_answer(payload, response_text, false);
        case Family::countdown: return verify_countdown(payload, response_text);
        case Family::stackcode: return verify_stackcode(payload, response_text);
        case Family::format: return verify_format(payload, response_text);
    }
    throw std::invalid_argument("bad family");
}

std::optional<std::string> parse_boxed(const std::string& text) {
    static const std::string open = "\\boxed{";
    const size_t start = text.rfind(open);
    if (start == std::string::npos) return std::nullopt;
    int depth = 1;
    for (size_t i = start + open.size(); i < text.size(); ++i) {
        if (text[i] == '{') ++depth;
        else if (text[i] == '}') {
            --depth;
            if (depth == 0)
                return text.substr(start + open.size(), i - start - open.size());
        }
    }
    return std::nullopt; // unbalanced
}

std::optional<std::string> parse_answer_tags(const std::string& text) {
    static const std::string open = "<answer>", close = "</answer>";
    const size_t start = text.rfind(open);
    if (start == std::string::npos) return std::nullopt;
    const size_t end = text.find(close, start + open.size());
    if (end == std::string::npos) return std::nullopt;
    return text.substr(start + open.size(), end - start - open.size());
}

ThinkSplit split_think(const std::string& text) {
    static const std::string marker = "</think>";
    const size_t pos = text.rfind(marker);
    if (pos == std::string::npos) return {"", text};
    return {text.substr(0, pos), text.substr(pos + marker.size())};
}

std::optional<long long> parse_canonical_int(const std::string& text) {
    std::string compact;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c))) compact += c;
    if (compact.empty()) return std::nullopt;
    size_t i = 0;
    bool negative = false;
    if (compact[0] == '-') {
        negative = true;
        i = 1;
    }
    if (i == compact.size() || compact.size() - i > 15) return std::nullopt;
    long long v = 0;
    for (; i < compact.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(compact[i]))) return std::nullopt;
        v = v * 10 + (compact[i] - '0');
    }
    return negative ? -v : v;
}

StackOutcome eval_stack_program(const std::vector<std::string>& program,
                                const std::vector<long long>& inputs,
                                int step_limit) {
    if (step_limit < 0) throw std::invalid_argument("step limit must be >= 0");
    std::vector<long long> stack(inputs.begin(), inputs.end());
    int steps = 0;
    for (const std::string& tok : program) {
        if (steps >= step_limit) return {StackOutcome::Kind::timeout, 0};
        ++steps;
        if (tok.size() == 1 && std::isdigit(static_cast<unsigned char>(tok[0]))) {
            stack.push_back(tok[0] - '0');
        } else if (tok == "+" || tok == "-" || tok == "*") {
            if (stack.size() < 2) return {StackOutcome::Kind::error, 0};
            const long long b = stack.back(); stack.pop_back();
            const long long a = stack.back(); stack.pop_back();
            long long v = tok == "+" ? a + b : tok == "-" ? a - b : a * b;
            if (std::abs(v) > kValueCap) return {StackOutcome::Kind::error, 0};
            stack.push_back(v);
        } else if (tok == "dup") {
            if (stack.empty()) return {StackOutcome::Kind::error, 0};
            stack.push_back(stack.back());
        } else if (tok == "swap") {
            if (stack.size() < 2) return {StackOutcome::Kind::error, 0};
            std::swap(stack[stack.size() - 1], stack[stack.size() - 2]);
        } else {
            return {StackOutcome::Kind::error, 0};
        }
    }
    if (stack.empty()) return {StackOutcome::Kind::error, 0};
    return {StackOutcome::Kind::value, stack.back()};
}

void write_instances(std::ostream& out, const std::vector<Prompt>& prompts) {
    for (const Prompt& p : prompts) {
        ordered_json j;
        j["prompt_id"] = p.prompt_id;
        j["task_id"] = p.task_id;
        j["tokens"] = p.tokens;
        j["payload"] = ordered_json::parse(p.payload);
        out << j.dump() << '\n';
    }
}

std::vector<Prompt> read_instances(std::istream& in) {
    std::vector<Prompt> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("instance file line " + std::to_string(lineno) +
                                     ": " + e.what());
        }
        Prompt p;
        p.prompt_id = j.at("prompt_id").get<std::string>();
        p.task_id = j.at("task_id").get<std::string>();
        p.tokens = j.at("tokens").get<TokenSequence>();
        p.payload = j.at("payload").dump();
        out.push_back(std::move(p));
    }
    return out;
}

} // namespace tinygrpo
