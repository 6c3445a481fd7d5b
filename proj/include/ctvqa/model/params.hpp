#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ctvqa/numerics/tape.hpp"

namespace ctvqa {

/// Named trainable tensors in insertion order. The order is the checkpoint
/// order and the optimizer's iteration order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor2 value;
  };

  void add(std::string name, Tensor2 value);
  bool contains(std::string_view name) const;
  Tensor2& at(std::string_view name);
  const Tensor2& at(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  bool operator==(const ParamStore& other) const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Binds tensors of a store to leaves of one tape for a single forward pass.
/// A tensor is copied onto the tape the first time it is looked up.
class ParamBinding {
 public:
  ParamBinding(Tape& tape, const ParamStore& store);

  const Var& operator[](std::string_view name) const;
  Tape& tape() const { return *tape_; }

  /// Gradients in store order; valid after tape.backward(). Tensors never
  /// looked up get zeros.
  std::vector<Tensor2> gradients() const;

 private:
  Tape* tape_;
  const ParamStore* store_;
  mutable std::vector<Var> leaves_;
  mutable std::vector<bool> bound_;
};

}  // namespace ctvqa
