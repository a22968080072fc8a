#include "flonet/text.hpp"

#include <cctype>
#include <stdexcept>

#include "flonet/error.hpp"

namespace flonet {

namespace {

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c >= 0x80;
}

bool attaches_left(const std::string& tok) {
  static const std::string closers = ".,?!;:)]}%";
  return tok.size() == 1 && closers.find(tok[0]) != std::string::npos;
}

bool attaches_right(const std::string& tok) {
  return tok == "(" || tok == "[" || tok == "{" || tok == "$";
}

}  // namespace

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> tokenize(std::string_view text, TokenizerOptions opts) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(opts.lowercase ? to_lower(cur) : cur);
      cur.clear();
    }
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (is_word_byte(c)) {
      cur.push_back(static_cast<char>(c));
    } else if (c == '\'' && !cur.empty() && i + 1 < text.size() &&
               is_word_byte(static_cast<unsigned char>(text[i + 1]))) {
      cur.push_back('\'');
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  bool glue_next = true;
  for (const auto& tok : tokens) {
    if (!glue_next && !attaches_left(tok)) out.push_back(' ');
    out += tok;
    glue_next = attaches_right(tok);
  }
  return out;
}

std::string normalize_label(std::string_view label) {
  std::size_t b = 0, e = label.size();
  while (b < e && std::isspace(static_cast<unsigned char>(label[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(label[e - 1]))) --e;
  return to_lower(label.substr(b, e - b));
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Vocab::Vocab(std::vector<std::string> specials, std::string unk_token) {
  for (auto& s : specials) add(s);
  num_specials_ = tokens_.size();
  auto it = index_.find(unk_token);
  if (it == index_.end()) throw ValidationError("vocab: unknown token must be one of the specials");
  unk_ = it->second;
}

TokenId Vocab::add(const std::string& token) {
  auto [it, inserted] = index_.try_emplace(token, static_cast<TokenId>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

TokenId Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk_ : it->second;
}

bool Vocab::contains(const std::string& token) const { return index_.count(token) > 0; }

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw std::out_of_range("vocab: token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocab::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(token(i));
  return out;
}

}  // namespace flonet
