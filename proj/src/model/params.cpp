#include "ctvqa/model/params.hpp"

#include <stdexcept>

namespace ctvqa {

void ParamStore::add(std::string name, Tensor2 value) {
  if (index_.contains(name)) throw std::logic_error("duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(value)});
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamStore::index_of(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + std::string(name));
  return it->second;
}

Tensor2& ParamStore::at(std::string_view name) { return entries_[index_of(name)].value; }
const Tensor2& ParamStore::at(std::string_view name) const {
  return entries_[index_of(name)].value;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const Entry& a = entries_[i];
    const Entry& b = other.entries_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols() ||
        a.value != b.value) {
      return false;
    }
  }
  return true;
}

ParamBinding::ParamBinding(Tape& tape, const ParamStore& store)
    : tape_(&tape), store_(&store), leaves_(store.size()), bound_(store.size(), false) {}

const Var& ParamBinding::operator[](std::string_view name) const {
  const std::size_t i = store_->index_of(name);
  if (!bound_[i]) {
    leaves_[i] = tape_->leaf(store_->entries()[i].value);
    bound_[i] = true;
  }
  return leaves_[i];
}

std::vector<Tensor2> ParamBinding::gradients() const {
  std::vector<Tensor2> grads;
  grads.reserve(leaves_.size());
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    const Tensor2& value = store_->entries()[i].value;
    grads.push_back(bound_[i] ? tape_->grad(leaves_[i])
                              : Tensor2(Tensor2::Zero(value.rows(), value.cols())));
  }
  return grads;
}

}  // namespace ctvqa
