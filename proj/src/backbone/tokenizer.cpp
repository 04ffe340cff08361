#include "ctxseg/backbone/tokenizer.hpp"

#include <algorithm>
#include <string>

namespace ctxseg {

TokenIds phrase_bytes(std::string_view phrase) {
    TokenIds ids;
    ids.reserve(phrase.size());
    for (unsigned char c : phrase) {
        if (c == kBosToken || c == kEosToken) {
            throw TokenizationError("phrase contains a reserved marker byte");
        }
        ids.push_back(c);
    }
    return ids;
}

TokenIds tokenize(std::string_view phrase, std::size_t max_tokens) {
    TokenIds ids{kBosToken};
    auto body = phrase_bytes(phrase);
    ids.insert(ids.end(), body.begin(), body.end());
    ids.push_back(kEosToken);
    if (ids.size() > max_tokens) {
        throw TruncationError("phrase '" + std::string(phrase) + "' needs " + std::to_string(ids.size()) +
                                " tokens, limit is " + std::to_string(max_tokens));
    }
    return ids;
}

std::size_t eos_position(const TokenIds& tokens) {
    auto n = std::count(tokens.begin(), tokens.end(), kEosToken);
    if (n == 0) throw TokenizationError("token sequence has no EOS marker");
    if (n > 1) throw TokenizationError("token sequence has more than one EOS marker");
    return static_cast<std::size_t>(std::find(tokens.begin(), tokens.end(), kEosToken) - tokens.begin());
}

}  // namespace ctxseg
