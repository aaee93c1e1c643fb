#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace o2na {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kMaskId = 2;
inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kMaskToken = "[MASK]";

// Word vocabulary D. Ids 0..2 are the special tokens.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::span<const std::string> words);

  int add(const std::string& word);
  int id(std::string_view word) const;  // kUnkId when absent
  std::optional<int> find(std::string_view word) const;
  const std::string& word(int id) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  static bool is_special(int id) { return id == kPadId || id == kUnkId || id == kMaskId; }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  std::string decode(std::span<const int> ids) const;

  // One token per line, specials first.
  std::string to_text() const;
  static Vocabulary from_text(std::string_view text);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// Object vocabulary: object index i <-> word id in D.
class ObjectVocabulary {
 public:
  ObjectVocabulary() = default;
  ObjectVocabulary(std::vector<std::string> words, const Vocabulary& vocab);

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  int word_id(std::size_t object) const { return word_ids_.at(object); }
  std::optional<std::size_t> index_of_word(std::string_view word) const;
  std::optional<std::size_t> index_of_id(int word_id) const;

  std::string to_text() const;
  static ObjectVocabulary from_text(std::string_view text, const Vocabulary& vocab);

 private:
  std::vector<std::string> words_;
  std::vector<int> word_ids_;
  std::unordered_map<int, std::size_t> by_id_;
};

// Lowercased whitespace tokenization.
std::vector<std::string> tokenize(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);

}  // namespace o2na
