#pragma once

#include <cstddef>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace ctxseg {

struct TokenizationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Sequence longer than the encoder's positional table.
struct TruncationError : TokenizationError {
    using TokenizationError::TokenizationError;
};

using TokenIds = std::vector<std::size_t>;

// Byte-level vocabulary of 256 ids. The ASCII control bytes STX and ETX
// double as begin/end markers and are rejected inside phrases.
inline constexpr std::size_t kBosToken = 0x02;
inline constexpr std::size_t kEosToken = 0x03;

/// [BOS, bytes..., EOS]; throws TruncationError past max_tokens.
TokenIds tokenize(std::string_view phrase, std::size_t max_tokens);

/// Byte ids of the phrase without markers.
TokenIds phrase_bytes(std::string_view phrase);

/// Position of the single EOS marker; throws TokenizationError when
/// there is none or more than one.
std::size_t eos_position(const TokenIds& tokens);

}  // namespace ctxseg
