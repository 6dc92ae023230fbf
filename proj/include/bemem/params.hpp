#pragma once

#include "bemem/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace bemem {

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Matrix<Scalar> value;
};

/// Ordered collection of named weight arrays. Order is part of the checkpoint
/// format and of the optimizer state, so entries are only ever appended.
template <typename Scalar>
class ParamSet {
 public:
  std::size_t add(std::string name, Matrix<Scalar> value) {
    for (const auto& t : items_)
      if (t.name == name) throw ShapeError("ParamSet: duplicate name " + name);
    items_.push_back({std::move(name), std::move(value)});
    return items_.size() - 1;
  }

  std::size_t size() const { return items_.size(); }
  NamedTensor<Scalar>& operator[](std::size_t i) { return items_[i]; }
  const NamedTensor<Scalar>& operator[](std::size_t i) const { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }

  const Matrix<Scalar>& at(const std::string& name) const { return items_[index_of(name)].value; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (items_[i].name == name) return i;
    throw ShapeError("ParamSet: no tensor named " + name);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : items_) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

  template <typename Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out;
    for (const auto& t : items_) out.add(t.name, t.value.template cast<Other>());
    return out;
  }

  bool operator==(const ParamSet& o) const {
    if (items_.size() != o.items_.size()) return false;
    for (std::size_t i = 0; i < items_.size(); ++i) {
      const auto& a = items_[i];
      const auto& b = o.items_[i];
      if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols() ||
          a.value != b.value)
        return false;
    }
    return true;
  }

 private:
  std::vector<NamedTensor<Scalar>> items_;
};

}  // namespace bemem
