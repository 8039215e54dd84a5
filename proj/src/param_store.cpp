#include "scenedistill/param_store.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

#include "scenedistill/rng.hpp"

namespace scenedistill {

ParamStore::Entry& ParamStore::add(const std::string& name, std::size_t rows, std::size_t cols, double fill) {
  auto [it, inserted] = entries_.try_emplace(name);
  if (!inserted) throw std::invalid_argument("ParamStore: duplicate entry '" + name + "'");
  it->second.value = Tensor2(rows, cols, fill);
  it->second.grad = Tensor2(rows, cols);
  return it->second;
}

ParamStore::Entry& ParamStore::add_buffer(const std::string& name, std::size_t rows, std::size_t cols, double fill) {
  auto& e = add(name, rows, cols, fill);
  e.buffer = true;
  return e;
}

ParamStore::Entry& ParamStore::add_glorot(const std::string& name, std::size_t rows, std::size_t cols,
                                          std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  auto& e = add(name, rows, cols);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : e.value.data) v = rng.uniform(-limit, limit);
  return e;
}

bool ParamStore::contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

ParamStore::Entry& ParamStore::at(std::string_view name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: no entry '" + std::string(name) + "'");
  return it->second;
}

const ParamStore::Entry& ParamStore::at(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: no entry '" + std::string(name) + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [_, e] : entries_) e.grad.fill(0.0);
}

void ParamStore::set_frozen(std::string_view prefix, bool frozen) {
  for (auto& [name, e] : entries_)
    if (!e.buffer && name.starts_with(prefix)) e.frozen = frozen;
}

bool ParamStore::all_frozen(std::string_view prefix) const {
  for (const auto& [name, e] : entries_)
    if (!e.buffer && name.starts_with(prefix) && !e.frozen) return false;
  return true;
}

std::size_t ParamStore::count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_)
    if (!e.buffer && name.starts_with(prefix)) n += e.value.size();
  return n;
}

std::uint64_t ParamStore::fingerprint(std::string_view prefix) const {
  std::uint64_t h = 0x84222325CBF29CE4ULL;
  auto feed = [&h](std::uint64_t x) { h = mix64(h ^ x); };
  for (const auto& [name, e] : entries_) {
    if (!name.starts_with(prefix)) continue;
    feed(fnv1a64(name));
    feed(e.value.rows);
    feed(e.value.cols);
    for (double v : e.value.data) feed(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

bool ParamStore::operator==(const ParamStore& o) const {
  if (entries_.size() != o.entries_.size()) return false;
  for (auto a = entries_.begin(), b = o.entries_.begin(); a != entries_.end(); ++a, ++b) {
    if (a->first != b->first || a->second.frozen != b->second.frozen || a->second.buffer != b->second.buffer)
      return false;
    if (!a->second.value.same_shape(b->second.value)) return false;
    for (std::size_t i = 0; i < a->second.value.size(); ++i)
      if (std::bit_cast<std::uint64_t>(a->second.value.data[i]) != std::bit_cast<std::uint64_t>(b->second.value.data[i]))
        return false;
  }
  return true;
}

}  // namespace scenedistill
