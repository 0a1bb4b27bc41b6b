#include "evloop/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>

namespace evloop {

using nlohmann::json;

std::string pool_hash(const std::vector<std::string>& pool) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](unsigned char b) {
    h ^= b;
    h *= 0x100000001b3ULL;
  };
  for (const auto& entry : pool) {
    std::uint64_t n = entry.size();
    for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(n >> (8 * i)));
    for (char c : entry) mix(static_cast<unsigned char>(c));
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<double> log_softmax(const std::vector<double>& logits, double temperature) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) mx = std::max(mx, z / temperature);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z / temperature - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] / temperature - lse;
  return out;
}

CategoricalPolicy::CategoricalPolicy(double temperature) : temperature_(temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw PolicyError("temperature must be positive");
}

void CategoricalPolicy::ensure_context(const std::string& id, const std::vector<std::string>& pool) {
  if (pool.empty()) throw PolicyError("context '" + id + "' has an empty candidate pool");
  const std::string h = pool_hash(pool);
  auto it = contexts_.find(id);
  if (it != contexts_.end()) {
    if (it->second.pool_hash != h || it->second.logits.size() != pool.size()) {
      throw PolicyError("policy logits for '" + id + "' do not match the dataset's candidate pool");
    }
    return;
  }
  contexts_.emplace(id, Context{h, std::vector<double>(pool.size(), 0.0)});
}

const CategoricalPolicy::Context& CategoricalPolicy::context(const std::string& id) const {
  auto it = contexts_.find(id);
  if (it == contexts_.end()) throw PolicyError("unknown policy context '" + id + "'");
  return it->second;
}

std::vector<double>& CategoricalPolicy::mutable_logits(const std::string& id) {
  auto it = contexts_.find(id);
  if (it == contexts_.end()) throw PolicyError("unknown policy context '" + id + "'");
  return it->second.logits;
}

std::vector<double> CategoricalPolicy::probabilities(const std::string& id) const {
  auto lp = log_probabilities(id);
  for (double& v : lp) v = std::exp(v);
  return lp;
}

std::vector<double> CategoricalPolicy::log_probabilities(const std::string& id) const {
  return log_softmax(context(id).logits, temperature_);
}

double CategoricalPolicy::log_prob(const std::string& id, std::size_t index) const {
  const auto lp = log_probabilities(id);
  if (index >= lp.size()) throw PolicyError("candidate index out of range for '" + id + "'");
  return lp[index];
}

std::size_t CategoricalPolicy::sample(const std::string& id, Rng& rng) const {
  const auto p = probabilities(id);
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  return p.size() - 1;
}

std::size_t CategoricalPolicy::greedy(const std::string& id) const {
  const auto& z = context(id).logits;
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

bool CategoricalPolicy::same_shape(const CategoricalPolicy& other) const {
  if (contexts_.size() != other.contexts_.size()) return false;
  for (const auto& [id, ctx] : contexts_) {
    auto it = other.contexts_.find(id);
    if (it == other.contexts_.end() || it->second.pool_hash != ctx.pool_hash ||
        it->second.logits.size() != ctx.logits.size()) {
      return false;
    }
  }
  return true;
}

std::string CategoricalPolicy::to_json() const {
  json j;
  j["temperature"] = temperature_;
  json ctxs = json::object();
  for (const auto& [id, ctx] : contexts_) ctxs[id] = {{"pool_hash", ctx.pool_hash}, {"logits", ctx.logits}};
  j["contexts"] = ctxs;
  return j.dump(2) + "\n";
}

CategoricalPolicy CategoricalPolicy::from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    CategoricalPolicy p(j.value("temperature", 1.0));
    for (const auto& [id, c] : j.at("contexts").items()) {
      Context ctx{c.at("pool_hash").get<std::string>(), c.at("logits").get<std::vector<double>>()};
      if (ctx.logits.empty()) throw PolicyError("context '" + id + "' has no logits");
      for (double z : ctx.logits) {
        if (!std::isfinite(z)) throw PolicyError("context '" + id + "' has a non-finite logit");
      }
      p.contexts_.emplace(id, std::move(ctx));
    }
    return p;
  } catch (const json::exception& e) {
    throw PolicyError(std::string("malformed policy file: ") + e.what());
  }
}

void CategoricalPolicy::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << to_json();
  if (!out) throw PolicyError("cannot write policy file " + path.string());
}

CategoricalPolicy CategoricalPolicy::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PolicyError("cannot read policy file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace evloop
