#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>

#include "scenedistill/tensor.hpp"

namespace scenedistill {

class RngStream;

/// Named trainable arrays with paired gradient buffers.
///
/// `frozen` entries keep receiving gradients but the optimizer leaves them
/// alone. `buffer` entries (running statistics) are state, not parameters:
/// they are checkpointed but never see gradients or optimizer updates.
class ParamStore {
 public:
  struct Entry {
    Tensor2 value;
    Tensor2 grad;
    bool frozen = false;
    bool buffer = false;
  };

  Entry& add(const std::string& name, std::size_t rows, std::size_t cols, double fill = 0.0);
  Entry& add_buffer(const std::string& name, std::size_t rows, std::size_t cols, double fill = 0.0);
  /// Glorot-uniform initialization, limit sqrt(6 / (fan_in + fan_out)).
  Entry& add_glorot(const std::string& name, std::size_t rows, std::size_t cols, std::size_t fan_in,
                    std::size_t fan_out, RngStream& rng);

  bool contains(std::string_view name) const;
  Entry& at(std::string_view name);
  const Entry& at(std::string_view name) const;
  Tensor2& value(std::string_view name) { return at(name).value; }
  const Tensor2& value(std::string_view name) const { return at(name).value; }
  Tensor2& grad(std::string_view name) { return at(name).grad; }

  void zero_grad();
  /// Freeze (or unfreeze) every non-buffer entry whose name starts with prefix.
  void set_frozen(std::string_view prefix, bool frozen);
  bool all_frozen(std::string_view prefix) const;

  /// Number of trainable scalars (buffers excluded) under prefix.
  std::size_t count(std::string_view prefix = "") const;
  /// Stable 64-bit digest of values under prefix (names, shapes and bits).
  std::uint64_t fingerprint(std::string_view prefix = "") const;

  std::map<std::string, Entry, std::less<>>& entries() { return entries_; }
  const std::map<std::string, Entry, std::less<>>& entries() const { return entries_; }

  bool operator==(const ParamStore& o) const;

 private:
  std::map<std::string, Entry, std::less<>> entries_;
};

}  // namespace scenedistill
