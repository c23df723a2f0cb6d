#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace tinygrpo {

using TokenId = int32_t;
using TokenSequence = std::vector<TokenId>;

// Fixed whitespace-separated token vocabulary. Index V (one past the last
// real token) is the reserved left-padding index: it owns an embedding row
// but no output logit, so the model can never emit it.
class Vocabulary {
public:
    explicit Vocabulary(std::vector<std::string> tokens, TokenId eos);

    int size() const { return static_cast<int>(tokens_.size()); }
    TokenId eos_id() const { return eos_id_; }
    TokenId pad_id() const { return static_cast<TokenId>(tokens_.size()); }

    const std::string& token(TokenId id) const;
    // -1 if the text is not a known token
    TokenId lookup(const std::string& text) const;

    // Space-joined rendering; includes every token given (eos included).
    std::string decode(const TokenSequence& ids) const;
    // Splits on whitespace; throws std::invalid_argument on unknown tokens.
    TokenSequence encode(const std::string& text) const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    TokenId eos_id_;
};

// The stock 32-token vocabulary used by every shipped task family:
//   0-9    digits
//   10-15  + - * ( ) =
//   16-17  \boxed{  }
//   18-19  <answer>  </answer>
//   20     </think>
//   21     ``` (code fence)
//   22-23  dup  swap
//   24-30  filler words (red blue green cat dog sun moon)
//   31     <eos>
const Vocabulary& default_vocab();

// Convenience: token ids of the digits of a non-negative integer, most
// significant first ("0" for zero). Digits 0-9 sit at ids 0-9.
TokenSequence digit_tokens(long long value);

struct DefaultTokens {
    static constexpr TokenId plus = 10;
    static constexpr TokenId minus = 11;
    static constexpr TokenId times = 12;
    static constexpr TokenId lparen = 13;
    static constexpr TokenId rparen = 14;
    static constexpr TokenId equals = 15;
    static constexpr TokenId boxed_open = 16;
    static constexpr TokenId rbrace = 17;
    static constexpr TokenId answer_open = 18;
    static constexpr TokenId answer_close = 19;
    static constexpr TokenId think_close = 20;
    static constexpr TokenId fence = 21;
    static constexpr TokenId dup = 22;
    static constexpr TokenId swap = 23;
    static constexpr TokenId filler_first = 24; // red
    static constexpr TokenId filler_last = 30;  // moon
    static constexpr TokenId eos = 31;
};

} // namespace tinygrpo
