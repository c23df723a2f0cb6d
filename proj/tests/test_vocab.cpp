#include <doctest.h>

#include <stdexcept>

#include "tinygrpo/vocab.hpp"

using namespace tinygrpo;

TEST_CASE("default vocabulary has the documented layout") {
    const Vocabulary& v = default_vocab();
    CHECK(v.size() == 32);
    for (int d = 0; d <= 9; ++d) CHECK(v.token(d) == std::string(1, char('0' + d)));
    CHECK(v.token(DefaultTokens::plus) == "+");
    CHECK(v.token(DefaultTokens::minus) == "-");
    CHECK(v.token(DefaultTokens::times) == "*");
    CHECK(v.token(DefaultTokens::boxed_open) == "\\boxed{");
    CHECK(v.token(DefaultTokens::rbrace) == "}");
    CHECK(v.token(DefaultTokens::answer_open) == "<answer>");
    CHECK(v.token(DefaultTokens::answer_close) == "</answer>");
    CHECK(v.token(DefaultTokens::think_close) == "</think>");
    CHECK(v.token(DefaultTokens::fence) == "```");
    CHECK(v.token(DefaultTokens::dup) == "dup");
    CHECK(v.token(DefaultTokens::swap) == "swap");
    CHECK(v.token(DefaultTokens::eos) == "<eos>");
    CHECK(v.eos_id() == 31);
    CHECK(v.pad_id() == 32); // reserved index just past the vocabulary
}

TEST_CASE("encode/decode round trip") {
    const Vocabulary& v = default_vocab();
    TokenSequence toks = v.encode("\\boxed{ 1 7 } <eos>");
    CHECK(toks == TokenSequence{DefaultTokens::boxed_open, 1, 7,
                                DefaultTokens::rbrace, DefaultTokens::eos});
    CHECK(v.decode(toks) == "\\boxed{ 1 7 } <eos>");
    CHECK_THROWS_AS((void)v.encode("no-such-token"), std::invalid_argument);
    CHECK(v.lookup("dup") == DefaultTokens::dup);
    CHECK(v.lookup("no-such-token") == -1);
}

TEST_CASE("digit_tokens expands numbers most-significant first") {
    CHECK(digit_tokens(0) == std::vector<TokenId>{0});
    CHECK(digit_tokens(7) == std::vector<TokenId>{7});
    CHECK(digit_tokens(28) == std::vector<TokenId>{2, 8});
    CHECK(digit_tokens(105) == std::vector<TokenId>{1, 0, 5});
}
