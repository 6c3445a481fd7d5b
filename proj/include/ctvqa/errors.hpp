#pragma once

#include <stdexcept>

namespace ctvqa {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A non-finite value or a degenerate numeric input (all-zero softmax mask
/// row, non-finite objective, diverged training).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Token id outside the vocabulary.
class VocabularyError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Empty or otherwise unusable caller input.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed file: bad magic, unsupported version, truncation.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ctvqa
