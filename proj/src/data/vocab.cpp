#include "ctvqa/data/vocab.hpp"

#include <cctype>
#include <sstream>
#include <stdexcept>

#include "ctvqa/errors.hpp"

namespace ctvqa {

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab({
      "<pad>", "<unk>", "<bos>", "<eos>",
      // question templates
      "in", "which", "plane", "is", "this", "ct", "scan", "what", "the", "scanning", "of",
      "image", "contrast", "phase", "was", "acquired", "organ", "shown", "does", "show",
      "abnormality", "seen", "type", "lesion", "present", "quadrant", "located", "where",
      // answers
      "axial", "coronal", "sagittal", "non", "arterial", "portal", "venous", "delayed", "liver",
      "kidney", "lung", "spleen", "lesion-a", "lesion-b", "lesion-c", "no", "upper", "lower",
      "left", "right", "not", "applicable",
  });
  return vocab;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary word " + words_[i]);
    }
  }
}

int Vocabulary::id(std::string_view word) const {
  const auto it = index_.find(word);
  return it == index_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view word) const { return index_.find(word) != index_.end(); }

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) {
    throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(size()));
  }
  return words_[static_cast<std::size_t>(id)];
}

std::string normalize_text(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::vector<int> Vocabulary::encode(std::string_view text, std::vector<std::string>* unknown) const {
  std::istringstream in(normalize_text(text));
  std::vector<int> ids;
  std::string w;
  while (in >> w) {
    const int i = id(w);
    if (i == kUnkId && unknown) {
      bool seen = false;
      for (const auto& u : *unknown) seen = seen || u == w;
      if (!seen) unknown->push_back(w);
    }
    ids.push_back(i);
  }
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    if (i == kEosId) break;
    if (i == kPadId || i == kBosId) continue;
    if (!out.empty()) out.push_back(' ');
    out += word(i);
  }
  return out;
}

}  // namespace ctvqa
