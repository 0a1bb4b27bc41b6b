#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "evloop/random.hpp"

namespace evloop {

class PolicyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a over length-prefixed pool entries, as 16 hex digits.
std::string pool_hash(const std::vector<std::string>& pool);

/// Desk-scale policy: one softmax over a fixed candidate pool per context.
class CategoricalPolicy {
 public:
  struct Context {
    std::string pool_hash;
    std::vector<double> logits;
  };

  explicit CategoricalPolicy(double temperature = 1.0);

  /// Registers a context with uniform (zero) logits. If the context exists its hash
  /// must match `pool`; existing logits are kept.
  void ensure_context(const std::string& id, const std::vector<std::string>& pool);

  bool has_context(const std::string& id) const { return contexts_.count(id) != 0; }
  const Context& context(const std::string& id) const;
  std::vector<double>& mutable_logits(const std::string& id);
  const std::vector<double>& logits(const std::string& id) const { return context(id).logits; }
  const std::map<std::string, Context>& contexts() const { return contexts_; }

  double temperature() const { return temperature_; }

  std::vector<double> probabilities(const std::string& id) const;
  std::vector<double> log_probabilities(const std::string& id) const;
  double log_prob(const std::string& id, std::size_t index) const;

  /// Inverse-CDF draw from the softmax.
  std::size_t sample(const std::string& id, Rng& rng) const;
  /// Argmax of the logits, lowest index on ties.
  std::size_t greedy(const std::string& id) const;

  /// Same contexts with identical pool hashes and logits vector lengths.
  bool same_shape(const CategoricalPolicy& other) const;

  std::string to_json() const;
  static CategoricalPolicy from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static CategoricalPolicy load(const std::filesystem::path& path);

 private:
  double temperature_;
  std::map<std::string, Context> contexts_;
};

/// log-softmax of logits / temperature, computed with the max-shift.
std::vector<double> log_softmax(const std::vector<double>& logits, double temperature);

}  // namespace evloop
