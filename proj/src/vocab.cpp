#include "tinygrpo/vocab.hpp"

#include <sstream>
#include <stdexcept>

namespace tinygrpo {

Vocabulary::Vocabulary(std::vector<std::string> tokens, TokenId eos)
    : tokens_(std::move(tokens)), eos_id_(eos) {
    if (tokens_.empty()) throw std::invalid_argument("vocabulary must be non-empty");
    if (eos_id_ < 0 || eos_id_ >= size())
        throw std::invalid_argument("eos id out of range");
    for (TokenId i = 0; i < size(); ++i) {
        auto [it, inserted] = index_.emplace(tokens_[i], i);
        if (!inserted) throw std::invalid_argument("duplicate token: " + tokens_[i]);
    }
}

const std::string& Vocabulary::token(TokenId id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("token id out of range");
    return tokens_[id];
}

TokenId Vocabulary::lookup(const std::string& text) const {
    auto it = index_.find(text);
    return it == index_.end() ? -1 : it->second;
}

std::string Vocabulary::decode(const TokenSequence& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += token(ids[i]);
    }
    return out;
}

TokenSequence Vocabulary::encode(const std::string& text) const {
    TokenSequence out;
    std::istringstream in(text);
    std::string word;
    while (in >> word) {
        TokenId id = lookup(word);
        if (id < 0) throw std::invalid_argument("unknown token: " + word);
        out.push_back(id);
    }
    return out;
}

const Vocabulary& default_vocab() {
    static const Vocabulary v(
        {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
         "+", "-", "*", "(", ")", "=",
         "\\boxed{", "}",
         "<answer>", "</answer>", "</think>", "```",
         "dup", "swap",
         "red", "blue", "green", "cat", "dog", "sun", "moon",
         "<eos>"},
        /*eos=*/31);
    return v;
}

TokenSequence digit_tokens(long long value) {
    if (value < 0) throw std::invalid_argument("digit_tokens expects a non-negative value");
    std::string s = std::to_string(value);
    TokenSequence out;
    out.reserve(s.size());
    for (char c : s) out.push_back(static_cast<TokenId>(c - '0'));
    return out;
}

} // namespace tinygrpo
