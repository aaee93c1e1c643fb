#include "o2na/vocab.hpp"

#include <cctype>
#include <iostream>
#include <sstream>

#include "o2na/errors.hpp"

namespace o2na {

Vocabulary::Vocabulary() {
  add(std::string(kPadToken));
  add(std::string(kUnkToken));
  add(std::string(kMaskToken));
}

Vocabulary::Vocabulary(std::span<const std::string> words) : Vocabulary() {
  for (const auto& w : words) add(w);
}

int Vocabulary::add(const std::string& word) {
  if (auto it = index_.find(word); it != index_.end()) return it->second;
  const int id = static_cast<int>(words_.size());
  words_.push_back(word);
  index_.emplace(word, id);
  return id;
}

std::optional<int> Vocabulary::find(std::string_view word) const {
  if (auto it = index_.find(std::string(word)); it != index_.end()) return it->second;
  return std::nullopt;
}

int Vocabulary::id(std::string_view word) const { return find(word).value_or(kUnkId); }

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(words_.size()));
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += word(id);
  }
  return out;
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (const auto& w : words_) {
    out += w;
    out.push_back('\n');
  }
  return out;
}

Vocabulary Vocabulary::from_text(std::string_view text) {
  Vocabulary v;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no < 3) {
      const std::string_view expected[] = {kPadToken, kUnkToken, kMaskToken};
      if (line != expected[line_no]) {
        throw FormatError("vocabulary line " + std::to_string(line_no + 1) +
                          " must be " + std::string(expected[line_no]));
      }
    } else {
      v.add(line);
    }
    ++line_no;
  }
  return v;
}

ObjectVocabulary::ObjectVocabulary(std::vector<std::string> words,
                                   const Vocabulary& vocab) {
  for (auto& w : words) {
    auto id = vocab.find(w);
    if (!id || Vocabulary::is_special(*id)) {
      std::cerr << "warning: object word '" << w
                << "' is not in the word vocabulary; dropped\n";
      continue;
    }
    if (by_id_.count(*id)) continue;
    by_id_.emplace(*id, words_.size());
    words_.push_back(w);
    word_ids_.push_back(*id);
  }
}

std::optional<std::size_t> ObjectVocabulary::index_of_word(std::string_view word) const {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i] == word) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> ObjectVocabulary::index_of_id(int word_id) const {
  if (auto it = by_id_.find(word_id); it != by_id_.end()) return it->second;
  return std::nullopt;
}

std::string ObjectVocabulary::to_text() const {
  std::string out;
  for (const auto& w : words_) {
    out += w;
    out.push_back('\n');
  }
  return out;
}

ObjectVocabulary ObjectVocabulary::from_text(std::string_view text,
                                             const Vocabulary& vocab) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    auto toks = tokenize(line);
    if (!toks.empty()) words.push_back(toks.front());
  }
  return ObjectVocabulary(std::move(words), vocab);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

}  // namespace o2na
