#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "degentune/errors.hpp"
#include "degentune/rng.hpp"
#include "degentune/tensor.hpp"

namespace dgt {

/// Parameter group names. Every trainable tensor belongs to exactly one;
/// the split is what module-subset tuning and the fusion tools operate on.
inline const std::vector<std::string>& param_group_names() {
  static const std::vector<std::string> kGroups = {"cross_attention", "resblock", "other"};
  return kGroups;
}

/// Named parameter tensors with paired gradient buffers, kept in insertion
/// order. Serialization iterates groups in canonical order and entries in
/// insertion order, which fixes the on-disk layout.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::string group;
    Tensor value;
    Tensor grad;
  };

  Tensor& add(const std::string& name, const std::string& group,
              std::vector<int> shape) {
    if (index_.count(name)) throw ValidationError("duplicate parameter: " + name);
    bool known = false;
    for (const auto& g : param_group_names()) known = known || g == group;
    if (!known) throw ValidationError("unknown parameter group: " + group);
    Entry e;
    e.name = name;
    e.group = group;
    e.value = Tensor(shape);
    e.grad = Tensor(std::move(shape));
    index_[name] = static_cast<int>(entries_.size());
    entries_.push_back(std::move(e));
    return entries_.back().value;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("no such parameter: " + name);
    return it->second;
  }

  Entry& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("no such parameter: " + name);
    return entries_[static_cast<std::size_t>(it->second)];
  }
  const Entry& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("no such parameter: " + name);
    return entries_[static_cast<std::size_t>(it->second)];
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  /// Entries of one group, in insertion order.
  std::vector<const Entry*> group_entries(const std::string& group) const {
    std::vector<const Entry*> out;
    for (const auto& e : entries_)
      if (e.group == group) out.push_back(&e);
    return out;
  }

  void zero_grads() {
    for (auto& e : entries_) e.grad.fill(0.0);
  }

  std::int64_t total_params() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  bool all_finite() const {
    for (const auto& e : entries_)
      if (!e.value.all_finite()) return false;
    return true;
  }

  bool same_layout(const ParamStore& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& a = entries_[i];
      const auto& b = o.entries_[i];
      if (a.name != b.name || a.group != b.group || a.value.shape != b.value.shape)
        return false;
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

/// Zeroed gradient buffers matching a store's entries, for accumulating one
/// sample's gradients off to the side (keeps batch parallelism independent
/// of worker count: per-sample sinks merge in sample order).
inline std::vector<Tensor> make_grad_sink(const ParamStore& store) {
  std::vector<Tensor> sink;
  sink.reserve(store.entries().size());
  for (const auto& e : store.entries()) sink.emplace_back(e.value.shape);
  return sink;
}

/// Gaussian init helpers; all randomness flows through GaussRng streams.
inline void init_gaussian(Tensor& t, GaussRng& rng, double std_dev) {
  for (double& v : t.data) v = rng.next() * std_dev;
}

}  // namespace dgt
