#include "stiefel_lora/config.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <limits>

#include "stiefel_lora/errors.hpp"

namespace stiefel_lora {

using nlohmann::json;

namespace {

constexpr std::array<const char*, 23> kKnownKeys = {
    "d",          "k",          "r",            "r_star",   "alpha",        "optimizer",
    "lr",         "stiefel_lr", "beta1",        "beta2",    "eps",          "weight_decay",
    "steps",      "batch_size", "seed",         "variant",  "train_a",      "lr_schedule",
    "metrics_every", "depth",   "ranks",        "seeds",    "rslora"};

double get_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError("config key '" + key + "' must be finite");
  return x;
}

std::uint64_t get_count(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    if (v.get<std::int64_t>() < 0) throw ConfigError("config key '" + key + "' must be >= 0");
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  throw ConfigError("config key '" + key + "' must be a non-negative integer");
}

bool get_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be true or false");
  return v.get<bool>();
}

std::string get_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
  return v.get<std::string>();
}

std::int64_t get_signed_count(const json& v, const std::string& key) {
  const std::uint64_t n = get_count(v, key);
  if (n > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
    throw ConfigError("config key '" + key + "' is too large");
  return static_cast<std::int64_t>(n);
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    bool known = false;
    for (const char* k : kKnownKeys) known = known || key == k;
    if (!known) throw ConfigError("unknown config key '" + key + "'");
  }

  RunConfig c;
  auto has = [&](const char* key) { return doc.contains(key); };
  if (has("d")) c.d = get_count(doc["d"], "d");
  if (has("k")) c.k = get_count(doc["k"], "k");
  if (has("r")) c.r = get_count(doc["r"], "r");
  if (has("r_star")) c.r_star = get_count(doc["r_star"], "r_star");
  if (has("alpha")) c.alpha = get_number(doc["alpha"], "alpha");
  if (has("optimizer")) c.optimizer = parse_optimizer(get_string(doc["optimizer"], "optimizer"));
  if (has("lr")) c.lr = get_number(doc["lr"], "lr");
  if (has("stiefel_lr")) c.stiefel_lr = get_number(doc["stiefel_lr"], "stiefel_lr");
  if (has("beta1")) c.beta1 = get_number(doc["beta1"], "beta1");
  if (has("beta2")) c.beta2 = get_number(doc["beta2"], "beta2");
  if (has("eps")) c.eps = get_number(doc["eps"], "eps");
  if (has("weight_decay")) c.weight_decay = get_number(doc["weight_decay"], "weight_decay");
  if (has("steps")) c.steps = get_signed_count(doc["steps"], "steps");
  if (has("batch_size")) c.batch_size = get_count(doc["batch_size"], "batch_size");
  if (has("seed")) c.seed = get_count(doc["seed"], "seed");
  if (has("variant")) c.variant = parse_variant(get_string(doc["variant"], "variant"));
  if (has("train_a")) c.train_a = get_bool(doc["train_a"], "train_a");
  if (has("rslora")) c.rslora = get_bool(doc["rslora"], "rslora");
  if (has("lr_schedule"))
    c.lr_schedule = parse_lr_schedule(get_string(doc["lr_schedule"], "lr_schedule"));
  if (has("metrics_every")) c.metrics_every = get_signed_count(doc["metrics_every"], "metrics_every");
  if (has("depth")) c.depth = get_count(doc["depth"], "depth");
  if (has("ranks")) {
    if (!doc["ranks"].is_array()) throw ConfigError("config key 'ranks' must be an array");
    for (const auto& v : doc["ranks"]) c.ranks.push_back(get_count(v, "ranks"));
  }
  if (has("seeds")) {
    if (!doc["seeds"].is_array()) throw ConfigError("config key 'seeds' must be an array");
    for (const auto& v : doc["seeds"]) c.seeds.push_back(get_count(v, "seeds"));
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  RunConfig c = parse_run_config(doc);
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  json j = {
      {"d", c.d},
      {"k", c.k},
      {"r", c.r},
      {"r_star", c.r_star},
      {"alpha", c.resolved_alpha()},
      {"optimizer", std::string(to_string(c.optimizer))},
      {"lr", c.lr},
      {"stiefel_lr", c.stiefel_lr},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"eps", c.eps},
      {"weight_decay", c.weight_decay},
      {"steps", c.steps},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"variant", std::string(to_string(c.variant))},
      {"train_a", c.train_a},
      {"rslora", c.rslora},
      {"lr_schedule", std::string(to_string(c.lr_schedule))},
      {"metrics_every", c.metrics_every},
      {"depth", c.depth},
  };
  if (!c.ranks.empty()) j["ranks"] = c.ranks;
  if (!c.seeds.empty()) j["seeds"] = c.seeds;
  return j;
}

}  // namespace stiefel_lora
