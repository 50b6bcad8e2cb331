#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scnaps/autodiff.hpp"
#include "scnaps/tensor.hpp"

namespace scnaps {

// Named trainable tensors in insertion order.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor init);
  bool contains(std::string_view name) const;
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;

  std::size_t size() const noexcept { return values_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::vector<Tensor>& values() noexcept { return values_; }
  const std::vector<Tensor>& values() const noexcept { return values_; }
  std::size_t index_of(std::string_view name) const;

  // Number of scalars in parameters whose name starts with `prefix`.
  std::size_t scalar_count(std::string_view prefix = "") const;

  bool operator==(const ParameterStore& other) const {
    return names_ == other.names_ && values_ == other.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Per-tape view of a ParameterStore. Parameters are bound as leaves the first
// time they are requested; unrequested ones get zero gradient.
class BoundParameters {
 public:
  BoundParameters(ad::Tape& tape, const ParameterStore& store, bool requires_grad = true);
  // Uses `leaves` (one per store entry, in store order) instead of binding anew.
  BoundParameters(ad::Tape& tape, const ParameterStore& store, std::span<const ad::Var> leaves);

  ad::Var operator[](std::string_view name) const;
  ad::Tape& tape() const noexcept { return tape_; }
  // Gradients in store order, after tape.backward().
  std::vector<Tensor> gradients() const;

 private:
  ad::Tape& tape_;
  const ParameterStore& store_;
  bool requires_grad_;
  mutable std::vector<ad::Var> bound_;
  mutable std::vector<bool> is_bound_;
};

// Checkpoint file layout (all integers little-endian):
//   magic     8 bytes  "SCNPCKPT"
//   version   u32      = 1
//   episode   u64      training episode index at save time
//   val_acc   f64      IEEE-754 bits, little-endian
//   config    u64      fingerprint of the model-defining configuration
//   count     u32      number of tensors
//   tensors   count x { u32 name_len, name bytes (UTF-8), u32 rows, u32 cols,
//                       rows*cols f64 values row-major }
struct Checkpoint {
  ParameterStore params;
  std::uint64_t episode = 0;
  double validation_accuracy = 0.0;
  std::uint64_t config_fingerprint = 0;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view text);

}  // namespace scnaps
