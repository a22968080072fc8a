#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace flonet {

using TokenId = std::int32_t;

struct TokenizerOptions {
  bool lowercase = true;
};

/// Word tokenizer: splits on whitespace and emits every ASCII punctuation
/// character as its own token. Apostrophes between letters stay inside the
/// word ("isn't"). Bytes >= 0x80 are treated as word characters.
std::vector<std::string> tokenize(std::string_view text, TokenizerOptions opts = {});

/// Inverse of tokenize for the usual English spacing conventions: closing
/// punctuation attaches to the previous token, opening brackets to the next.
std::string detokenize(std::span<const std::string> tokens);

/// Lowercase and trim; used for edge labels.
std::string normalize_label(std::string_view label);

std::string to_lower(std::string_view s);

/// Stable 64-bit FNV-1a hash; used to key caches by content.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Bidirectional token <-> id table. A fixed list of special tokens occupies
/// the first ids; everything unseen maps to the unknown token.
class Vocab {
 public:
  Vocab() = default;
  Vocab(std::vector<std::string> specials, std::string unk_token);

  TokenId add(const std::string& token);
  TokenId id(const std::string& token) const;
  bool contains(const std::string& token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  TokenId unk() const { return unk_; }
  std::size_t num_specials() const { return num_specials_; }
  bool is_special(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < num_specials_; }

  std::vector<TokenId> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const TokenId> ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::size_t num_specials_ = 0;
  TokenId unk_ = 0;
};

}  // namespace flonet
