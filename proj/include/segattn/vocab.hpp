#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "segattn/check.hpp"

namespace segattn {

class Vocabulary {
public:
  Vocabulary() {
    pad_id_ = add("<pad>");
    unk_id_ = add("<unk>");
  }

  int add(const std::string& token) {
    auto it = token_to_id_.find(token);
    if (it != token_to_id_.end()) return it->second;
    int id = static_cast<int>(id_to_token_.size());
    id_to_token_.push_back(token);
    token_to_id_[token] = id;
    return id;
  }

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int pad_id() const { return pad_id_; }
  int unk_id() const { return unk_id_; }

  bool contains(const std::string& token) const {
    return token_to_id_.count(token) > 0;
  }

  int id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    SEGATTN_CHECK(it != token_to_id_.end(), "unknown token '" << token << "'");
    return it->second;
  }

  // Lookup that maps unknown tokens to unk_id instead of failing.
  int id_or_unk(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? unk_id_ : it->second;
  }

  const std::string& token(int id) const {
    SEGATTN_CHECK(id >= 0 && id < size(), "token id " << id << " out of range");
    return id_to_token_[static_cast<size_t>(id)];
  }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

private:
  std::vector<std::string> id_to_token_;
  std::map<std::string, int> token_to_id_;
  int pad_id_ = 0;
  int unk_id_ = 0;
};

// Fixed-capacity padded token id sequence.
struct TokenSequence {
  std::vector<int> ids;  // size t_max, positions >= length hold pad_id
  int length = 0;

  static TokenSequence from_tokens(const std::vector<int>& toks, int t_max,
                                   int pad_id) {
    SEGATTN_CHECK(!toks.empty(), "empty token sequence");
    SEGATTN_CHECK(static_cast<int>(toks.size()) <= t_max,
                  "sequence length " << toks.size() << " exceeds t_max " << t_max);
    TokenSequence s;
    s.ids.assign(static_cast<size_t>(t_max), pad_id);
    std::copy(toks.begin(), toks.end(), s.ids.begin());
    s.length = static_cast<int>(toks.size());
    return s;
  }
};

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

inline TokenSequence tokenize(const Vocabulary& vocab, const std::string& text,
                              int t_max, bool allow_unknown,
                              int* unknown_count = nullptr) {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) {
    if (allow_unknown) {
      int id = vocab.id_or_unk(w);
      if (id == vocab.unk_id() && unknown_count && w != "<unk>") ++*unknown_count;
      ids.push_back(id);
    } else {
      ids.push_back(vocab.id(w));
    }
  }
  return TokenSequence::from_tokens(ids, t_max, vocab.pad_id());
}

}  // namespace segattn
