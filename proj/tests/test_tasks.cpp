#include <doctest.h>

#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "task_gold.hpp"
#include "tinygrpo/rng.hpp"
#include "tinygrpo/tasks.hpp"
#include "tinygrpo/vocab.hpp"

using namespace tinygrpo;

TEST_CASE("family names round-trip and task ids route") {
    for (Family f : {Family::arith, Family::tagmath, Family::countdown,
                     Family::stackcode, Family::format}) {
        CHECK(family_from_name(family_name(f)) == f);
    }
    CHECK(family_of_task("arith:7:12") == Family::arith);
    CHECK(family_of_task("stackcode:1:0") == Family::stackcode);
    CHECK(!family_of_task("nonsense:1:0").has_value());
    CHECK(!family_of_task("no-colon").has_value());
    CHECK(reward_kind(Family::arith) == RewardKind::binary);
    CHECK(reward_kind(Family::stackcode) == RewardKind::continuous);
    CHECK(reward_kind(Family::format) == RewardKind::continuous);
}

TEST_CASE("parse_boxed finds the last balanced group") {
    CHECK(parse_boxed("\\boxed{ 4 2 }") == " 4 2 ");
    CHECK(parse_boxed("a \\boxed{ 1 } b \\boxed{ 2 } c") == " 2 ");
    CHECK(parse_boxed("\\boxed{ \\frac{1}{2} }") == " \\frac{1}{2} ");
    CHECK(!parse_boxed("\\boxed{ unbalanced").has_value());
    CHECK(!parse_boxed("no box at all").has_value());
}

TEST_CASE("parse_answer_tags finds the last pair") {
    CHECK(parse_answer_tags("<answer> 9 </answer>") == " 9 ");
    CHECK(parse_answer_tags("<answer> 1 </answer> <answer> 2 </answer>") == " 2 ");
    CHECK(!parse_answer_tags("<answer> open forever").has_value());
    CHECK(!parse_answer_tags("nothing here").has_value());
}

TEST_CASE("split_think cuts at the last marker") {
    ThinkSplit s = split_think("aa </think> bb </think> cc");
    CHECK(s.reasoning == "aa </think> bb ");
    CHECK(s.final_part == " cc");
    ThinkSplit none = split_think("plain text");
    CHECK(none.reasoning.empty());
    CHECK(none.final_part == "plain text");
}

TEST_CASE("parse_canonical_int is whitespace-insensitive and strict") {
    CHECK(parse_canonical_int("  1 2 ") == 12);
    CHECK(parse_canonical_int("- 5") == -5);
    CHECK(parse_canonical_int("0") == 0);
    CHECK(!parse_canonical_int("").has_value());
    CHECK(!parse_canonical_int("   ").has_value());
    CHECK(!parse_canonical_int("-").has_value());
    CHECK(!parse_canonical_int("12a").has_value());
    CHECK(!parse_canonical_int("1.5").has_value());
    CHECK(!parse_canonical_int("1234567890123456").has_value()); // > 15 digits
}

TEST_CASE("stack machine semantics") {
    using K = StackOutcome::Kind;
    auto run = [](std::vector<std::string> p, std::vector<long long> in,
                  int limit = 64) { return eval_stack_program(p, in, limit); };
    CHECK(run({"3", "4", "+"}, {}).value == 7);
    CHECK(run({"3", "4", "-"}, {}).value == -1);
    CHECK(run({"5", "dup", "*"}, {}).value == 25);
    CHECK(run({"swap", "-"}, {2, 9}).value == 7);  // 9 2 - after swap
    CHECK(run({"+"}, {2, 9}).value == 11);         // inputs pre-pushed
    CHECK(run({}, {2, 9}).value == 9);             // top of stack = last input
    CHECK(run({"+"}, {1}).kind == K::error);       // underflow
    CHECK(run({"dup"}, {}).kind == K::error);
    CHECK(run({"cat"}, {1}).kind == K::error);
    CHECK(run({}, {}).kind == K::error);           // empty stack at the end
    CHECK(run({"1", "1", "+", "1"}, {}, 2).kind == K::timeout);
    CHECK(run({"1", "1"}, {}, 2).kind == K::value); // exactly on budget
}

TEST_CASE("arith verification") {
    const std::string payload = R"({"answer":12})";
    auto good = verify(Family::arith, payload, "\\boxed{ 1 2 } <eos>");
    CHECK(good.reward == 1.0);
    CHECK(good.parsed_ok);
    CHECK(good.terminated_ok);
    auto wrong = verify(Family::arith, payload, "\\boxed{ 1 3 } <eos>");
    CHECK(wrong.reward == 0.0);
    CHECK(wrong.parsed_ok);
    auto nobox = verify(Family::arith, payload, "1 2 <eos>");
    CHECK(nobox.reward == 0.0);
    CHECK(!nobox.parsed_ok);
    auto noint = verify(Family::arith, payload, "\\boxed{ cat } <eos>");
    CHECK(noint.reward == 0.0);
    CHECK(!noint.parsed_ok);
    auto noeos = verify(Family::arith, payload, "\\boxed{ 1 2 }");
    CHECK(noeos.reward == 1.0); // correctness and termination are separate
    CHECK(!noeos.terminated_ok);
    // reasoning before the marker is ignored, even a decoy box
    auto think = verify(Family::arith, payload,
                        "\\boxed{ 9 9 } </think> \\boxed{ 1 2 } <eos>");
    CHECK(think.reward == 1.0);
    // negative answers spell the minus sign as its own token
    auto neg = verify(Family::arith, R"({"answer":-3})", "\\boxed{ - 3 } <eos>");
    CHECK(neg.reward == 1.0);
}

TEST_CASE("tagmath verification") {
    const std::string payload = R"({"answer":35})";
    CHECK(verify(Family::tagmath, payload, "<answer> 3 5 </answer> <eos>").reward == 1.0);
    CHECK(verify(Family::tagmath, payload, "<answer> 3 4 </answer> <eos>").reward == 0.0);
    CHECK(verify(Family::tagmath, payload, "\\boxed{ 3 5 } <eos>").parsed_ok == false);
}

TEST_CASE("countdown verification enforces value and multiset") {
    const std::string payload = R"({"numbers":[3,4,5],"target":7,"solution":"3 + 4"})";
    CHECK(verify(Family::countdown, payload, "3 + 4 <eos>").reward == 1.0);
    CHECK(verify(Family::countdown, payload, "4 + 3 <eos>").reward == 1.0);
    CHECK(verify(Family::countdown, payload, "( 3 + 4 ) <eos>").reward == 1.0);
    // 12 - 5 = 7 but 12 is not a given number
    CHECK(verify(Family::countdown, payload, "1 2 - 5 <eos>").reward == 0.0);
    // 3 + 3 + 1: right value, but reuses 3 and invents 1
    CHECK(verify(Family::countdown, payload, "3 + 3 + 1 <eos>").reward == 0.0);
    // wrong value
    CHECK(verify(Family::countdown, payload, "3 * 4 <eos>").reward == 0.0);
    auto junk = verify(Family::countdown, payload, "+ + 3 <eos>");
    CHECK(junk.reward == 0.0);
    CHECK(!junk.parsed_ok);
    // adjacent digits merge: "3 4" is the number 34, outside the set
    CHECK(verify(Family::countdown, payload, "3 4 <eos>").reward == 0.0);
}

TEST_CASE("stackcode verification: fences, fractions, timeouts") {
    const std::string payload =
        R"({"tests":[{"in":[0,0],"out":0},{"in":[1,2],"out":3},{"in":[4,4],"out":8}],"step_limit":8})";
    auto full = verify(Family::stackcode, payload, "``` + ``` <eos>");
    CHECK(full.reward == 1.0);
    CHECK(full.parsed_ok);
    // a - b: only the [0,0] case survives -> 1/3
    auto partial = verify(Family::stackcode, payload, "``` - ``` <eos>");
    CHECK(partial.reward == doctest::Approx(1.0 / 3.0));
    auto nofence = verify(Family::stackcode, payload, "+ <eos>");
    CHECK(!nofence.parsed_ok);
    CHECK(nofence.reward == 0.0);
    auto illegal = verify(Family::stackcode, payload, "``` cat ``` <eos>");
    CHECK(!illegal.parsed_ok);
    // the *last complete* fenced block wins
    auto last = verify(Family::stackcode, payload, "``` - ``` ``` + ``` <eos>");
    CHECK(last.reward == 1.0);
    // budget blowout anywhere zeroes the whole submission
    const std::string tiny =
        R"({"tests":[{"in":[1,1],"out":2}],"step_limit":2})";
    auto blown = verify(Family::stackcode, tiny, "``` 1 1 + + ``` <eos>");
    CHECK(blown.reward == 0.0);
    CHECK(blown.parsed_ok);
}

TEST_CASE("format verification counts satisfied constraints") {
    const std::string payload = R"({"max_len":3,"required":"red","forbidden":"blue"})";
    CHECK(verify(Family::format, payload, "red <eos>").reward == 1.0);
    CHECK(verify(Family::format, payload, "red blue <eos>").reward ==
          doctest::Approx(2.0 / 3.0));
    CHECK(verify(Family::format, payload, "cat dog sun moon <eos>").reward ==
          doctest::Approx(1.0 / 3.0));
    CHECK(verify(Family::format, payload, "").reward == doctest::Approx(2.0 / 3.0));
    CHECK(verify(Family::format, payload, "").terminated_ok == false);
}

TEST_CASE("generators are deterministic and splits are disjoint") {
    for (Family f : {Family::arith, Family::tagmath, Family::countdown,
                     Family::stackcode, Family::format}) {
        TaskSpec spec;
        spec.family = f;
        auto a = generate(spec, 11, 40, Split::train);
        auto b = generate(spec, 11, 40, Split::train);
        REQUIRE(a.size() == 40);
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].prompt_id == b[i].prompt_id);
            CHECK(a[i].tokens == b[i].tokens);
            CHECK(a[i].payload == b[i].payload);
        }
        auto val = generate(spec, 11, 20, Split::validation);
        std::set<std::string> train_ids;
        for (const Prompt& p : a) train_ids.insert(p.prompt_id);
        CHECK(train_ids.size() == a.size());
        for (const Prompt& p : val) CHECK(train_ids.count(p.prompt_id) == 0);
        // different seed shuffles the deck / regenerates instances
        auto c = generate(spec, 12, 40, Split::train);
        bool any_diff = false;
        for (size_t i = 0; i < a.size(); ++i)
            if (a[i].payload != c[i].payload || a[i].tokens != c[i].tokens)
                any_diff = true;
        CHECK(any_diff);
    }
}

TEST_CASE("enumerable families refuse counts beyond the pool") {
    TaskSpec arith;
    arith.family = Family::arith;
    // two-digit carry-free "+": 36 tens-pairs x 55 units-pairs = 1980
    CHECK_NOTHROW((void)generate(arith, 1, 1980, Split::train));
    CHECK_THROWS((void)generate(arith, 1, 1981, Split::train));
    TaskSpec tag;
    tag.family = Family::tagmath; // 15x15x2 ops = 450
    CHECK_NOTHROW((void)generate(tag, 1, 450, Split::train));
    CHECK_THROWS((void)generate(tag, 1, 451, Split::train));
}

TEST_CASE("carry-free arith deck admits exactly the no-carry pairs") {
    TaskSpec spec;
    spec.family = Family::arith;
    auto all = generate(spec, 5, 1980, Split::train);
    std::set<std::pair<long long, long long>> seen;
    for (const Prompt& p : all) {
        // prompt shape is fixed: a1 a0 + b1 b0 =
        REQUIRE(p.tokens.size() == 6);
        long long a = p.tokens[0] * 10 + p.tokens[1];
        long long b = p.tokens[3] * 10 + p.tokens[4];
        CHECK(a % 10 + b % 10 <= 9);
        CHECK(a / 10 + b / 10 <= 9);
        auto payload = nlohmann::json::parse(p.payload);
        CHECK(payload.at("answer").get<long long>() == a + b);
        seen.insert({a, b});
    }
    CHECK(seen.size() == 1980); // every admissible pair exactly once
    // carries allowed -> the full rectangle comes back
    spec.arith_carry_free = false;
    CHECK_NOTHROW((void)generate(spec, 1, 8100, Split::train));
    CHECK_THROWS((void)generate(spec, 1, 8101, Split::train));
}

TEST_CASE("arith train/validation decks are instance-disjoint at full tilt") {
    TaskSpec spec;
    spec.family = Family::arith;
    auto train = generate(spec, 3, 200, Split::train);
    auto val = generate(spec, 3, 25, Split::validation);
    std::set<std::string> ids;
    for (const Prompt& p : train) ids.insert(p.prompt_id);
    for (const Prompt& p : val) CHECK(ids.count(p.prompt_id) == 0);
    // ids are deck positions; prompt-text disjointness is what matters
    std::set<std::string> texts;
    const Vocabulary& v = default_vocab();
    for (const Prompt& p : train) texts.insert(v.decode(p.tokens));
    for (const Prompt& p : val) CHECK(texts.count(v.decode(p.tokens)) == 0);
}

TEST_CASE("generated instances score 1.0 on their own ground truth") {
    for (Family f : {Family::arith, Family::tagmath, Family::countdown,
                     Family::stackcode, Family::format}) {
        TaskSpec spec;
        spec.family = f;
        if (f == Family::arith) spec.ops_arith = "+-*";
        for (const Prompt& p : generate(spec, 99, 50, Split::train)) {
            auto gold = testhelp::gold_response(f, p.payload);
            VerifierResult r = verify(f, p.payload, gold);
            CHECK(r.reward == 1.0);
            CHECK(r.terminated_ok);
            auto bad = testhelp::corrupt_response(f, p.payload);
            CHECK(verify(f, p.payload, bad).reward < 1.0);
        }
    }
}

TEST_CASE("verifier never throws on fuzzed token soup") {
    const Vocabulary& v = default_vocab();
    RngStream rng(stream_id(17, "test.fuzz"));
    for (Family f : {Family::arith, Family::tagmath, Family::countdown,
                     Family::stackcode, Family::format}) {
        TaskSpec spec;
        spec.family = f;
        auto prompts = generate(spec, 5, 4, Split::train);
        for (int i = 0; i < 300; ++i) {
            const Prompt& p = prompts[i % prompts.size()];
            TokenSequence toks;
            const int len = static_cast<int>(rng.uniform_below(20));
            for (int t = 0; t < len; ++t)
                toks.push_back(static_cast<TokenId>(rng.uniform_below(32)));
            VerifierResult r = verify(f, p.payload, v.decode(toks));
            CHECK(r.reward >= 0.0);
            CHECK(r.reward <= 1.0);
        }
    }
}

TEST_CASE("instance files round-trip byte-identical payloads") {
    TaskSpec spec;
    spec.family = Family::stackcode;
    auto prompts = generate(spec, 21, 12, Split::train);
    std::stringstream buf;
    write_instances(buf, prompts);
    auto back = read_instances(buf);
    REQUIRE(back.size() == prompts.size());
    for (size_t i = 0; i < prompts.size(); ++i) {
        CHECK(back[i].prompt_id == prompts[i].prompt_id);
        CHECK(back[i].task_id == prompts[i].task_id);
        CHECK(back[i].tokens == prompts[i].tokens);
        CHECK(back[i].payload == prompts[i].payload);
    }
    std::stringstream bad("not json\n");
    CHECK_THROWS((void)read_instances(bad));
}
