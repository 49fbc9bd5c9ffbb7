#pragma once

// Scenario runner, benchmark harness and store inspection on top of Deployment.
// Configuration is JSON; unknown keys and ill-typed values are rejected with their field path.

#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qss/tpv.hpp"

namespace qss {

using json = nlohmann::json;

// ---- strict JSON reading ----

namespace cfgjson {

inline std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

inline void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError((path.empty() ? "config" : path) + ": expected an object");
}

inline void check_keys(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
  expect_object(j, path);
  for (const auto& [k, v] : j.items())
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) throw ConfigError(join(path, k) + ": unknown key");
}

template <class T>
const char* type_name() {
  if constexpr (std::is_same_v<T, bool>) return "a boolean";
  else if constexpr (std::is_same_v<T, std::string>) return "a string";
  else if constexpr (std::is_floating_point_v<T>) return "a number";
  else if constexpr (std::is_unsigned_v<T>) return "a non-negative integer";
  else if constexpr (std::is_integral_v<T>) return "an integer";
  else return "a value of the right type";
}

template <class T>
T as(const json& v, const std::string& path) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(path + ": expected " + type_name<T>());
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(path + ": expected " + type_name<T>());
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(path + ": expected " + type_name<T>());
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw ConfigError(path + ": expected " + type_name<T>());
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError(path + ": expected " + type_name<T>());
  }
  return v.get<T>();
}

template <class T>
void read(const json& j, const std::string& path, std::string_view key, T& out) {
  auto it = j.find(std::string(key));
  if (it != j.end()) out = as<T>(*it, join(path, key));
}

template <class T>
std::vector<T> list(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path + ": expected an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as<T>(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

}  // namespace cfgjson

// ---- configuration ----

struct FieldSpec {
  std::string kind = "renewal-group";  // renewal-group | mersenne | prime
  unsigned exponent = 0;
  std::string modulus;
};

struct DataSpec {
  std::size_t size = 1024;
  std::optional<std::string> text;
  std::optional<std::string> hex;
};

struct BenchSpec {
  std::vector<double> sizes_kb = {1, 10, 100};
  std::size_t repetitions = 5;
  bool renewal = true;
  bool field_compare = true;
  double field_compare_kb = 100;
  double max_factor_per_doubling = 2.5;
};

struct ExpectSpec {
  std::map<Phase, Outcome> outcomes;
  std::optional<int> exit_code;
  bool empty() const { return outcomes.empty() && !exit_code; }
};

struct ScenarioConfig {
  std::string name = "scenario";
  DeploymentConfig deploy;
  FieldSpec field;
  DataSpec data;
  std::string password = "open sesame";
  std::optional<std::string> reconstruct_password;
  std::vector<std::string> phases = {"register", "reconstruct", "verify"};
  ExpectSpec expect;
  BenchSpec bench;
  std::string output_dir;
  json source = json::object();  // the accepted input, for persistence
};

inline Phase parse_phase(const std::string& s) {
  for (auto p : {Phase::Registration, Phase::Precompute, Phase::Reconstruction, Phase::IntegrityCheck, Phase::Refutation,
                 Phase::Renewal})
    if (to_string(p) == s) return p;
  throw ConfigError("unknown phase '" + s + "'");
}

// Step grammar: register | reconstruct | verify | refute | renew | offline:<j> | online:<j> | wait:<ms>
inline void validate_step(const std::string& step, const std::string& path, std::size_t holders) {
  static const std::vector<std::string> plain = {"register", "reconstruct", "verify", "refute", "renew"};
  if (std::find(plain.begin(), plain.end(), step) != plain.end()) return;
  const auto colon = step.find(':');
  if (colon == std::string::npos) throw ConfigError(path + ": unknown step '" + step + "'");
  const std::string verb = step.substr(0, colon), arg = step.substr(colon + 1);
  double value = 0;
  try {
    std::size_t used = 0;
    value = std::stod(arg, &used);
    if (used != arg.size()) throw std::invalid_argument(arg);
  } catch (const std::exception&) {
    throw ConfigError(path + ": bad argument in '" + step + "'");
  }
  if (verb == "offline" || verb == "online") {
    if (value < 1 || value > static_cast<double>(holders) || value != std::floor(value))
      throw ConfigError(path + ": no such holder in '" + step + "'");
    return;
  }
  if (verb == "wait") {
    if (value < 0) throw ConfigError(path + ": wait must be non-negative");
    return;
  }
  throw ConfigError(path + ": unknown step '" + step + "'");
}

inline NetworkTopology parse_topology(const json& j, const std::string& path) {
  using namespace cfgjson;
  if (j.is_string()) {
    if (j.get<std::string>() != "tokyo") throw ConfigError(path + ": unknown preset '" + j.get<std::string>() + "'");
    return NetworkTopology::tokyo();
  }
  check_keys(j, path, {"preset", "nodes", "links"});
  if (j.contains("preset")) {
    if (j.size() != 1) throw ConfigError(path + ": a preset cannot be combined with nodes or links");
    return parse_topology(j["preset"], join(path, "preset"));
  }
  NetworkTopology t;
  if (!j.contains("nodes")) throw ConfigError(join(path, "nodes") + ": required");
  t.nodes = list<std::string>(j["nodes"], join(path, "nodes"));
  if (j.contains("links")) {
    const auto& ls = j["links"];
    if (!ls.is_array()) throw ConfigError(join(path, "links") + ": expected an array");
    for (std::size_t i = 0; i < ls.size(); ++i) {
      const std::string p = join(path, "links") + "[" + std::to_string(i) + "]";
      check_keys(ls[i], p, {"name", "a", "b", "length_km", "loss_db", "rate_bps", "capacity_bits", "up"});
      LinkSpec l;
      l.name = "link-" + std::to_string(i);
      read(ls[i], p, "name", l.name);
      if (!ls[i].contains("a") || !ls[i].contains("b")) throw ConfigError(p + ": endpoints a and b are required");
      read(ls[i], p, "a", l.a);
      read(ls[i], p, "b", l.b);
      read(ls[i], p, "length_km", l.length_km);
      read(ls[i], p, "loss_db", l.loss_db);
      l.rate_bps = NetworkTopology::default_rate(l.loss_db);
      read(ls[i], p, "rate_bps", l.rate_bps);
      l.capacity_bits = std::uint64_t{1} << 28;
      read(ls[i], p, "capacity_bits", l.capacity_bits);
      read(ls[i], p, "up", l.up);
      t.links.push_back(l);
    }
  }
  return t;
}

inline FieldPtr build_field(const FieldSpec& f, const std::string& group) {
  if (f.kind == "renewal-group") return RenewalGroupConfig::by_name(group).share_field();
  if (f.kind == "mersenne") {
    if (f.exponent < 2 || f.exponent > 4096) throw ConfigError("spss.field.exponent: must lie in [2, 4096]");
    BigInt q = (BigInt(1) << f.exponent) - 1;
    if (mpz_probab_prime_p(q.get_mpz_t(), 30) == 0) throw ConfigError("spss.field.exponent: 2^e - 1 is not prime");
    return PrimeFieldConfig::mersenne(f.exponent);
  }
  if (f.kind == "prime") {
    BigInt q;
    const std::string& s = f.modulus;
    const bool hex = s.size() > 2 && (s.rfind("0x", 0) == 0 || s.rfind("0X", 0) == 0);
    if (s.empty() || q.set_str(hex ? s.substr(2) : s, hex ? 16 : 10) != 0) throw ConfigError("spss.field.modulus: not a number");
    if (q < 5 || mpz_probab_prime_p(q.get_mpz_t(), 30) == 0) throw ConfigError("spss.field.modulus: not a prime above 3");
    return PrimeFieldConfig::from_modulus(q);
  }
  throw ConfigError("spss.field.kind: expected renewal-group, mersenne or prime");
}

inline ScenarioConfig parse_scenario(const json& root) {
  using namespace cfgjson;
  ScenarioConfig sc;
  check_keys(root, "", {"name", "seed", "topology", "keynet", "channel", "spss", "renewal", "mac", "cs", "placement", "sim",
                        "data", "password", "reconstruct_password", "phases", "attacks", "expect", "bench", "output"});
  auto& d = sc.deploy;
  read(root, "", "name", sc.name);
  read(root, "", "seed", d.seed);
  if (root.contains("topology")) d.topology = parse_topology(root["topology"], "topology");

  if (root.contains("keynet")) {
    const auto& j = root["keynet"];
    check_keys(j, "keynet", {"warmup_s", "ksa_rate_bps", "ksa_capacity_bits", "relay_chunk_bits", "max_key_wait_ms"});
    read(j, "keynet", "warmup_s", d.keynet.warmup_s);
    read(j, "keynet", "ksa_rate_bps", d.keynet.ksa_rate_bps);
    read(j, "keynet", "ksa_capacity_bits", d.keynet.ksa_capacity_bits);
    read(j, "keynet", "relay_chunk_bits", d.keynet.relay_chunk_bits);
    read(j, "keynet", "max_key_wait_ms", d.keynet.max_key_wait_ms);
    if (d.keynet.warmup_s < 0) throw ConfigError("keynet.warmup_s: must be non-negative");
    if (d.keynet.relay_chunk_bits == 0) throw ConfigError("keynet.relay_chunk_bits: must be positive");
  }
  auto read_scheme = [&](const json& j, const std::string& path, HashScheme& out) {
    if (!j.contains("scheme")) return;
    try {
      out = parse_hash_scheme(as<std::string>(j["scheme"], join(path, "scheme")));
    } catch (const ConfigError&) {
      throw ConfigError(join(path, "scheme") + ": expected toeplitz or polyeval");
    }
  };
  if (root.contains("channel")) {
    const auto& j = root["channel"];
    check_keys(j, "channel", {"scheme", "k"});
    read_scheme(j, "channel", d.channel.scheme);
    read(j, "channel", "k", d.channel.k);
  }
  if (root.contains("renewal")) {
    check_keys(root["renewal"], "renewal", {"group"});
    read(root["renewal"], "renewal", "group", d.renewal_group);
  }
  if (root.contains("spss")) {
    const auto& j = root["spss"];
    check_keys(j, "spss", {"threshold", "holders", "field"});
    read(j, "spss", "threshold", d.spss.threshold);
    read(j, "spss", "holders", d.spss.holders);
    if (j.contains("field")) {
      const auto& f = j["field"];
      if (f.is_string()) {
        sc.field.kind = f.get<std::string>();
      } else {
        check_keys(f, "spss.field", {"kind", "exponent", "modulus"});
        read(f, "spss.field", "kind", sc.field.kind);
        read(f, "spss.field", "exponent", sc.field.exponent);
        read(f, "spss.field", "modulus", sc.field.modulus);
      }
    }
  }
  try {
    d.spss.field = build_field(sc.field, d.renewal_group);
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    throw ConfigError(what.rfind("unknown renewal group", 0) == 0 ? "renewal.group: " + what : what);
  }
  if (root.contains("mac")) {
    const auto& j = root["mac"];
    check_keys(j, "mac", {"scheme", "k"});
    read_scheme(j, "mac", d.mac.scheme);
    read(j, "mac", "k", d.mac.k);
  }
  if (root.contains("cs")) {
    const auto& j = root["cs"];
    check_keys(j, "cs", {"enabled", "digest_bits"});
    read(j, "cs", "enabled", d.cs.enabled);
    read(j, "cs", "digest_bits", d.cs.digest_bits);
  }
  if (root.contains("placement")) {
    const auto& j = root["placement"];
    check_keys(j, "placement", {"owner", "calculator", "verifier", "end_user", "holders"});
    read(j, "placement", "owner", d.placement.owner);
    read(j, "placement", "calculator", d.placement.calculator);
    read(j, "placement", "verifier", d.placement.verifier);
    read(j, "placement", "end_user", d.placement.end_user);
    if (j.contains("holders")) d.placement.holders = list<std::string>(j["holders"], "placement.holders");
  }
  if (root.contains("sim")) {
    const auto& j = root["sim"];
    check_keys(j, "sim", {"hop_latency_ms", "local_latency_ms", "timeout_ms", "epoch_ms", "clock_skew_ms"});
    read(j, "sim", "hop_latency_ms", d.sim.hop_latency_ms);
    read(j, "sim", "local_latency_ms", d.sim.local_latency_ms);
    read(j, "sim", "timeout_ms", d.sim.timeout_ms);
    read(j, "sim", "epoch_ms", d.sim.epoch_ms);
    if (j.contains("clock_skew_ms")) {
      expect_object(j["clock_skew_ms"], "sim.clock_skew_ms");
      for (const auto& [node, v] : j["clock_skew_ms"].items())
        d.sim.clock_skew_ms[node] = as<double>(v, "sim.clock_skew_ms." + node);
    }
  }
  if (root.contains("attacks")) {
    const auto& j = root["attacks"];
    check_keys(j, "attacks", {"tamper_owner", "false_claim_user", "corrupt_holder", "drop_holders", "bit_flip"});
    read(j, "attacks", "tamper_owner", d.attacks.tamper_owner);
    read(j, "attacks", "false_claim_user", d.attacks.false_claim_user);
    read(j, "attacks", "corrupt_holder", d.attacks.corrupt_holder);
    if (j.contains("drop_holders")) d.attacks.drop_holders = list<HolderIndex>(j["drop_holders"], "attacks.drop_holders");
    if (j.contains("bit_flip") && !j["bit_flip"].is_null()) {
      const auto& b = j["bit_flip"];
      check_keys(b, "attacks.bit_flip", {"from", "to", "phase", "count"});
      BitFlipAttack a;
      if (!b.contains("from") || !b.contains("to")) throw ConfigError("attacks.bit_flip: from and to are required");
      read(b, "attacks.bit_flip", "from", a.from);
      read(b, "attacks.bit_flip", "to", a.to);
      std::string ph = to_string(a.phase);
      read(b, "attacks.bit_flip", "phase", ph);
      try {
        a.phase = parse_phase(ph);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("attacks.bit_flip.phase: ") + e.what());
      }
      read(b, "attacks.bit_flip", "count", a.count);
      for (const auto& [key, who] : {std::pair{"from", a.from}, std::pair{"to", a.to}}) {
        try {
          party::parse(who);
        } catch (const ConfigError& e) {
          throw ConfigError(std::string("attacks.bit_flip.") + key + ": " + e.what());
        }
      }
      d.attacks.bit_flip = a;
    }
  }
  if (root.contains("data")) {
    const auto& j = root["data"];
    check_keys(j, "data", {"size", "text", "hex"});
    if (static_cast<int>(j.contains("size")) + j.contains("text") + j.contains("hex") > 1)
      throw ConfigError("data: give exactly one of size, text or hex");
    read(j, "data", "size", sc.data.size);
    if (j.contains("text")) sc.data.text = as<std::string>(j["text"], "data.text");
    if (j.contains("hex")) {
      sc.data.hex = as<std::string>(j["hex"], "data.hex");
      try {
        from_hex(*sc.data.hex);
      } catch (const std::exception&) {
        throw ConfigError("data.hex: not a hex string");
      }
    }
  }
  read(root, "", "password", sc.password);
  if (root.contains("reconstruct_password")) sc.reconstruct_password = as<std::string>(root["reconstruct_password"], "reconstruct_password");
  for (const auto& [key, pw] : {std::pair{"password", sc.password}, std::pair{"reconstruct_password", sc.reconstruct_password.value_or("")}})
    if (pw.size() * 8 > d.spss.block_bits())
      throw ConfigError(std::string(key) + ": longer than the " + std::to_string(d.spss.block_bits() / 8) + " bytes the field allows");
  if (root.contains("phases")) sc.phases = list<std::string>(root["phases"], "phases");
  for (std::size_t i = 0; i < sc.phases.size(); ++i)
    validate_step(sc.phases[i], "phases[" + std::to_string(i) + "]", d.spss.holders);
  if (root.contains("expect")) {
    const auto& j = root["expect"];
    expect_object(j, "expect");
    for (const auto& [k, v] : j.items()) {
      const std::string path = "expect." + k;
      if (k == "exit_code") {
        sc.expect.exit_code = as<int>(v, path);
        continue;
      }
      Phase ph;
      try {
        ph = parse_phase(k);
      } catch (const ConfigError&) {
        throw ConfigError(path + ": unknown key");
      }
      try {
        sc.expect.outcomes[ph] = parse_outcome(as<std::string>(v, path));
      } catch (const ConfigError& e) {
        const std::string what = e.what();
        throw ConfigError(what.rfind(path, 0) == 0 ? what : path + ": " + what);
      }
    }
  }
  if (root.contains("bench")) {
    const auto& j = root["bench"];
    check_keys(j, "bench", {"sizes_kb", "repetitions", "renewal", "field_compare", "field_compare_kb", "max_factor_per_doubling"});
    if (j.contains("sizes_kb")) sc.bench.sizes_kb = list<double>(j["sizes_kb"], "bench.sizes_kb");
    read(j, "bench", "repetitions", sc.bench.repetitions);
    read(j, "bench", "renewal", sc.bench.renewal);
    read(j, "bench", "field_compare", sc.bench.field_compare);
    read(j, "bench", "field_compare_kb", sc.bench.field_compare_kb);
    read(j, "bench", "max_factor_per_doubling", sc.bench.max_factor_per_doubling);
    if (sc.bench.sizes_kb.empty()) throw ConfigError("bench.sizes_kb: at least one size required");
    for (std::size_t i = 0; i < sc.bench.sizes_kb.size(); ++i)
      if (!(sc.bench.sizes_kb[i] > 0)) throw ConfigError("bench.sizes_kb[" + std::to_string(i) + "]: must be positive");
    if (sc.bench.repetitions == 0) throw ConfigError("bench.repetitions: must be positive");
  }
  if (root.contains("output")) {
    check_keys(root["output"], "output", {"dir"});
    read(root["output"], "output", "dir", sc.output_dir);
  }
  d.validate();
  sc.source = root;
  return sc;
}

inline json load_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read config file " + p.string());
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

// Applies `a.b.c=value`; the value is parsed as JSON when possible and taken as a string otherwise.
inline void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "': empty path component");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline Bytes scenario_data(const ScenarioConfig& sc) {
  if (sc.data.text) return Bytes(sc.data.text->begin(), sc.data.text->end());
  if (sc.data.hex) return from_hex(*sc.data.hex);
  SeededRandom rng(derive_seed(sc.deploy.seed, "scenario-data"));
  return rng.bytes(sc.data.size);
}

// ---- persisted deployment state ----

inline json state_to_json(const Deployment::State& s) {
  json j;
  j["now_s"] = s.now_s;
  j["next_id"] = s.next_id;
  j["next_nonce"] = s.next_nonce;
  j["next_round"] = s.next_round;
  j["overhead"] = s.overhead;
  j["pools"] = json::array();
  for (const auto& p : s.pools)
    j["pools"].push_back({{"id", p.id}, {"head", p.head}, {"tail", p.tail}, {"generated", p.generated},
                          {"credited", p.credited}, {"consumed", p.consumed}, {"relayed_out", p.relayed_out},
                          {"discarded", p.discarded}, {"produced_until_s", p.produced_until_s}});
  j["uses"] = json::array();
  for (const auto& u : s.uses) j["uses"].push_back({u.stream, u.offset, u.length, u.purpose});
  auto seqs = [](const std::map<std::pair<std::uint16_t, std::uint16_t>, std::uint64_t>& m) {
    json a = json::array();
    for (const auto& [k, v] : m) a.push_back({k.first, k.second, v});
    return a;
  };
  j["send_seq"] = seqs(s.send_seq);
  j["recv_seq"] = seqs(s.recv_seq);
  j["owner"] = json::array();
  for (const auto& [id, r] : s.owner) j["owner"].push_back({id, r.t1});
  j["end_user"] = json::array();
  for (const auto& [id, r] : s.end_user) j["end_user"].push_back({id, r.t1, to_hex(r.data)});
  return j;
}

inline Deployment::State state_from_json(const json& j) {
  Deployment::State s;
  try {
    s.now_s = j.at("now_s").get<double>();
    s.next_id = j.at("next_id").get<std::uint64_t>();
    s.next_nonce = j.at("next_nonce").get<std::uint64_t>();
    s.next_round = j.at("next_round").get<std::uint64_t>();
    s.overhead = j.at("overhead").get<std::uint64_t>();
    for (const auto& p : j.at("pools"))
      s.pools.push_back({p.at("id").get<std::string>(), p.at("head").get<std::uint64_t>(), p.at("tail").get<std::uint64_t>(),
                         p.at("generated").get<std::uint64_t>(), p.at("credited").get<std::uint64_t>(),
                         p.at("consumed").get<std::uint64_t>(), p.at("relayed_out").get<std::uint64_t>(),
                         p.at("discarded").get<std::uint64_t>(), p.at("produced_until_s").get<double>()});
    for (const auto& u : j.at("uses"))
      s.uses.push_back({u.at(0).get<std::string>(), u.at(1).get<std::uint64_t>(), u.at(2).get<std::uint64_t>(), u.at(3).get<std::string>()});
    for (const auto& e : j.at("send_seq")) s.send_seq[{e.at(0).get<std::uint16_t>(), e.at(1).get<std::uint16_t>()}] = e.at(2).get<std::uint64_t>();
    for (const auto& e : j.at("recv_seq")) s.recv_seq[{e.at(0).get<std::uint16_t>(), e.at(1).get<std::uint16_t>()}] = e.at(2).get<std::uint64_t>();
    for (const auto& e : j.at("owner")) s.owner[e.at(0).get<SecretId>()] = {e.at(1).get<std::uint64_t>()};
    for (const auto& e : j.at("end_user"))
      s.end_user[e.at(0).get<SecretId>()] = {e.at(1).get<std::uint64_t>(), from_hex(e.at(2).get<std::string>())};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sim.json: malformed state: ") + e.what());
  }
  return s;
}

// A directory holding config.json, sim.json, transcript.log and one store directory per role.
class StateDir {
 public:
  explicit StateDir(fs::path dir) : dir_(std::move(dir)) {}

  bool exists() const { return fs::exists(dir_ / "config.json"); }
  const fs::path& path() const { return dir_; }

  void create(const json& config) {
    if (exists()) throw ConfigError("state directory " + dir_.string() + " is already initialized");
    parse_scenario(config);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "config.json") << config.dump(2) << "\n";
  }

  json config_json() const { return load_json_file(dir_ / "config.json"); }

  // `config` may differ from the stored one only in transient settings such as attacks.
  std::unique_ptr<Deployment> open(const ScenarioConfig& config) const {
    auto d = std::make_unique<Deployment>(config.deploy, dir_);
    if (fs::exists(dir_ / "sim.json")) d->import_state(state_from_json(load_json_file(dir_ / "sim.json")));
    return d;
  }

  void save(const Deployment& d) const {
    const fs::path tmp = dir_ / "sim.json.tmp";
    std::ofstream(tmp) << state_to_json(d.export_state()).dump() << "\n";
    fs::rename(tmp, dir_ / "sim.json");
    std::ofstream(dir_ / "transcript.log", std::ios::app) << d.transcript().text();
  }

 private:
  fs::path dir_;
};

// ---- scenario execution ----

inline int exit_code_for(const std::vector<VerdictEvent>& verdicts) {
  bool abort = false, fail = false;
  for (const auto& v : verdicts) {
    if (v.outcome == Outcome::Abort) abort = true;
    if (v.outcome == Outcome::Fail || v.outcome == Outcome::RefutationFail || v.outcome == Outcome::CannotAdjudicate) fail = true;
  }
  return abort ? 2 : fail ? 1 : 0;
}

inline std::string format_verdict(const VerdictEvent& v) {
  std::string s = "verdict id=" + std::to_string(v.id) + " phase=" + to_string(v.phase) + " outcome=" + to_string(v.outcome);
  if (!v.detail.empty()) s += " detail=\"" + v.detail + "\"";
  return s;
}

struct ScenarioResult {
  std::string name;
  std::vector<VerdictEvent> verdicts;
  std::string transcript;
  std::string transcript_id;
  std::string ledger;
  bool conserved = false;
  bool no_reuse = false;
  std::vector<std::string> expectation_failures;
  int verdict_code = 0;
  int exit_code = 0;

  std::string summary() const {
    std::ostringstream os;
    os << "scenario " << name << " transcript=" << transcript_id << "\n";
    for (const auto& v : verdicts) os << format_verdict(v) << "\n";
    os << "key ledger conserved=" << (conserved ? "yes" : "no") << " reuse=" << (no_reuse ? "none" : "DETECTED") << "\n";
    for (const auto& f : expectation_failures) os << "expectation unmet: " << f << "\n";
    os << "exit " << exit_code << "\n";
    return os.str();
  }
};

inline std::vector<std::string> check_expectations(const ExpectSpec& e, const std::vector<VerdictEvent>& verdicts, int code) {
  std::vector<std::string> out;
  for (const auto& [ph, want] : e.outcomes) {
    bool seen = false;
    for (const auto& v : verdicts) {
      if (v.phase != ph) continue;
      seen = true;
      if (v.outcome != want)
        out.push_back(to_string(ph) + ": expected " + to_string(want) + ", got " + to_string(v.outcome));
    }
    if (!seen) out.push_back(to_string(ph) + ": expected " + to_string(want) + ", no verdict reached");
  }
  if (e.exit_code && *e.exit_code != code)
    out.push_back("exit_code: expected " + std::to_string(*e.exit_code) + ", got " + std::to_string(code));
  return out;
}

// Runs one step against a deployment, tracking the current secret id.
inline void run_step(Deployment& d, const ScenarioConfig& sc, const std::string& step, SecretId& id,
                     std::vector<VerdictEvent>& skipped) {
  auto need_id = [&](Phase ph) {
    if (id != 0) return true;
    skipped.push_back(VerdictEvent{0, ph, Outcome::Abort, "no registered secret", d.now_ms()});
    d.transcript().log(d.now_ms(), "skip").kv("phase", to_string(ph)).kv("reason", "no-secret");
    return false;
  };
  if (step == "register") {
    const SecretId got = d.register_data(scenario_data(sc), sc.password);
    if (got != 0) id = got;
  } else if (step == "reconstruct") {
    if (need_id(Phase::Reconstruction)) d.reconstruct(id, sc.reconstruct_password.value_or(sc.password));
  } else if (step == "verify") {
    if (need_id(Phase::IntegrityCheck)) d.verify(id);
  } else if (step == "refute") {
    if (need_id(Phase::Refutation)) d.refute(id);
  } else if (step == "renew") {
    if (need_id(Phase::Renewal)) d.renew(id);
  } else {
    const auto colon = step.find(':');
    const std::string verb = step.substr(0, colon);
    const double arg = std::stod(step.substr(colon + 1));
    if (verb == "offline" || verb == "online") {
      d.set_offline(static_cast<HolderIndex>(arg), verb == "offline");
      d.transcript().log(d.now_ms(), verb).kv("holder", static_cast<std::uint64_t>(arg));
    } else if (verb == "wait") {
      d.network().advance_to((d.now_ms() + arg) / 1000.0);
      d.transcript().log(d.now_ms(), "wait").ms("ms", arg);
    }
  }
}

inline ScenarioResult finish_result(const ScenarioConfig& sc, const Deployment& d, std::vector<VerdictEvent> verdicts) {
  ScenarioResult r;
  r.name = sc.name;
  r.verdicts = std::move(verdicts);
  std::stable_sort(r.verdicts.begin(), r.verdicts.end(), [](const auto& a, const auto& b) { return a.at_ms < b.at_ms; });
  r.transcript = d.transcript().text();
  r.transcript_id = d.transcript().id();
  r.ledger = d.network().ledger_text();
  r.conserved = d.network().conservation().holds();
  r.no_reuse = d.network().no_reuse();
  r.verdict_code = exit_code_for(r.verdicts);
  r.expectation_failures = check_expectations(sc.expect, r.verdicts, r.verdict_code);
  r.exit_code = r.expectation_failures.empty() ? r.verdict_code : 3;
  return r;
}

// Executes the configured steps on a fresh deployment. With `store_dir` set, role stores live there.
inline ScenarioResult run_scenario(const ScenarioConfig& sc, const fs::path& store_dir = {}) {
  Deployment d(sc.deploy, store_dir);
  SecretId id = 0;
  std::vector<VerdictEvent> skipped;
  for (const auto& step : sc.phases) run_step(d, sc, step, id, skipped);
  auto all = d.verdicts();
  all.insert(all.end(), skipped.begin(), skipped.end());
  return finish_result(sc, d, std::move(all));
}

// Writes transcript.log, ledger.txt and summary.txt into `dir`.
inline void write_scenario_outputs(const ScenarioResult& r, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream(dir / "transcript.log") << r.transcript;
  std::ofstream(dir / "ledger.txt") << r.ledger;
  std::ofstream(dir / "summary.txt") << r.summary();
}

// ---- benchmark ----

struct Stats {
  double median = 0, q1 = 0, q3 = 0;
  double iqr() const { return q3 - q1; }
};

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

inline Stats stats_of(const std::vector<double>& v) { return Stats{quantile(v, 0.5), quantile(v, 0.25), quantile(v, 0.75)}; }

struct BenchRow {
  double size_kb = 0;
  std::size_t rep = 0;
  std::string phase;
  double wall_ms = 0;
  std::string transcript_id;
};

struct BenchSummary {
  double size_kb = 0;
  std::string phase;
  Stats stats;
};

struct ScalingCheck {
  std::string phase;
  double from_kb = 0, to_kb = 0;
  double factor_per_doubling = 0;
  bool ok = false;
};

struct FieldComparison {
  std::size_t bytes = 0;
  std::size_t repetitions = 0;
  std::string general_modulus;
  Stats mersenne_ms, general_ms;
  bool mersenne_faster() const { return mersenne_ms.median < general_ms.median; }
};

struct BenchReport {
  std::vector<std::string> phases;
  std::vector<BenchRow> rows;
  std::vector<BenchSummary> summary;
  std::vector<ScalingCheck> scaling;
  std::optional<FieldComparison> field;
  std::uint64_t key_bits_consumed = 0;
  bool ledger_ok = true;

  bool scaling_ok() const {
    return std::all_of(scaling.begin(), scaling.end(), [](const auto& s) { return s.ok; });
  }

  std::string csv() const {
    std::ostringstream os;
    os << "size_kb,rep,phase,wall_ms,transcript_id\n";
    for (const auto& r : rows) os << r.size_kb << "," << r.rep << "," << r.phase << "," << r.wall_ms << "," << r.transcript_id << "\n";
    return os.str();
  }

  // gnuplot columns: size_kb, then median q1 q3 for each phase in order.
  std::string dat() const {
    std::ostringstream os;
    os << "# size_kb";
    for (const auto& p : phases) os << " " << p << "_median " << p << "_q1 " << p << "_q3";
    os << "\n";
    std::vector<double> sizes;
    for (const auto& s : summary)
      if (std::find(sizes.begin(), sizes.end(), s.size_kb) == sizes.end()) sizes.push_back(s.size_kb);
    for (double kb : sizes) {
      os << kb;
      for (const auto& p : phases)
        for (const auto& s : summary)
          if (s.size_kb == kb && s.phase == p) os << " " << s.stats.median << " " << s.stats.q1 << " " << s.stats.q3;
      os << "\n";
    }
    return os.str();
  }

  std::string table() const {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-10s %-16s %12s %12s\n", "size_kb", "phase", "median_ms", "iqr_ms");
    os << buf;
    for (const auto& s : summary) {
      std::snprintf(buf, sizeof buf, "%-10g %-16s %12.3f %12.3f\n", s.size_kb, s.phase.c_str(), s.stats.median, s.stats.iqr());
      os << buf;
    }
    for (const auto& c : scaling) {
      std::snprintf(buf, sizeof buf, "scaling %-16s %g->%g KB: %.3fx per doubling %s\n", c.phase.c_str(), c.from_kb, c.to_kb,
                    c.factor_per_doubling, c.ok ? "ok" : "EXCEEDED");
      os << buf;
    }
    if (field) {
      std::snprintf(buf, sizeof buf, "field %zu bytes: mersenne-127 %.3f ms, general-127 %.3f ms (%.2fx) %s\n", field->bytes,
                    field->mersenne_ms.median, field->general_ms.median, field->general_ms.median / field->mersenne_ms.median,
                    field->mersenne_faster() ? "mersenne faster" : "mersenne NOT faster");
      os << buf;
    }
    os << "key ledger: consumed_bits=" << key_bits_consumed << " conserved_and_no_reuse=" << (ledger_ok ? "yes" : "no") << "\n";
    return os.str();
  }
};

// A 127-bit prime that is not of Mersenne form.
inline BigInt general_prime_127() {
  BigInt start = (BigInt(1) << 126) + (BigInt(1) << 125);
  BigInt q;
  mpz_nextprime(q.get_mpz_t(), start.get_mpz_t());
  return q;
}

inline FieldComparison compare_fields(std::size_t bytes, std::size_t reps, std::uint64_t seed) {
  FieldComparison fc;
  fc.bytes = bytes;
  fc.repetitions = reps;
  const BigInt gq = general_prime_127();
  fc.general_modulus = gq.get_str(16);
  const FieldPtr fields[2] = {PrimeFieldConfig::mersenne(127), PrimeFieldConfig::general(gq)};
  SeededRandom data_rng(derive_seed(seed, "field-compare-data"));
  const Bytes data = data_rng.bytes(bytes);
  std::vector<double> times[2];
  for (std::size_t r = 0; r < reps + 1; ++r) {
    for (int f = 0; f < 2; ++f) {
      SpssParams p;
      p.field = fields[f];
      SeededRandom rng(derive_seed(seed, "field-compare/" + std::to_string(r)));
      const auto pw = FieldElement(*p.field, 12345L);
      const auto t0 = std::chrono::steady_clock::now();
      auto reg = spss_register(1, data, pw, p, rng);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      if (reg.fragments.size() != p.holders) throw ProtocolError("field comparison produced no shares");
      if (r > 0) times[f].push_back(ms);  // the first round warms caches
    }
  }
  fc.mersenne_ms = stats_of(times[0]);
  fc.general_ms = stats_of(times[1]);
  return fc;
}

inline BenchReport run_bench(const ScenarioConfig& sc) {
  BenchReport rep;
  rep.phases = {"registration", "communication", "reconstruction"};
  if (sc.bench.renewal) rep.phases.push_back("renewal");
  std::map<std::pair<double, std::string>, std::vector<double>> samples;
  for (double kb : sc.bench.sizes_kb) {
    const auto bytes = static_cast<std::size_t>(std::llround(kb * 1024));
    for (std::size_t r = 0; r < sc.bench.repetitions; ++r) {
      DeploymentConfig cfg = sc.deploy;
      // Stretched so that key waits on slow links cannot abort a timing run.
      cfg.sim.timeout_ms = std::max(cfg.sim.timeout_ms, 3.6e9);
      cfg.keynet.max_key_wait_ms = std::max(cfg.keynet.max_key_wait_ms, 3.6e9);
      cfg.seed = derive_seed(sc.deploy.seed, "bench/" + std::to_string(bytes) + "/" + std::to_string(r));
      Deployment d(cfg);
      SeededRandom rng(derive_seed(cfg.seed, "data"));
      const Bytes data = rng.bytes(bytes);
      d.reset_wall_ms();
      const SecretId id = d.register_data(data, sc.password);
      if (id == 0) throw ProtocolError("benchmark registration aborted at " + std::to_string(kb) + " KB");
      auto v = d.reconstruct(id, sc.password);
      if (v.outcome != Outcome::Success) throw ProtocolError("benchmark reconstruction did not succeed: " + v.detail);
      if (sc.bench.renewal) {
        v = d.renew(id);
        if (v.outcome != Outcome::Success) throw ProtocolError("benchmark renewal did not succeed: " + v.detail);
      }
      const std::string tid = d.transcript().id();
      auto add = [&](const std::string& name, double ms) {
        rep.rows.push_back(BenchRow{kb, r, name, ms, tid});
        samples[{kb, name}].push_back(ms);
      };
      add("registration", d.wall_ms(Phase::Registration));
      add("communication", d.wall_ms(Phase::Precompute));
      add("reconstruction", d.wall_ms(Phase::Reconstruction));
      if (sc.bench.renewal) add("renewal", d.wall_ms(Phase::Renewal));
      rep.key_bits_consumed += d.network().conservation().consumed;
      rep.ledger_ok = rep.ledger_ok && d.network().conservation().holds() && d.network().no_reuse();
    }
  }
  for (double kb : sc.bench.sizes_kb)
    for (const auto& p : rep.phases) rep.summary.push_back(BenchSummary{kb, p, stats_of(samples[{kb, p}])});
  std::vector<double> sizes = sc.bench.sizes_kb;
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  for (const auto& p : rep.phases) {
    for (std::size_t i = 1; i < sizes.size(); ++i) {
      const double a = stats_of(samples[{sizes[i - 1], p}]).median, b = stats_of(samples[{sizes[i], p}]).median;
      const double doublings = std::log2(sizes[i] / sizes[i - 1]);
      const double factor = a > 0 ? std::pow(b / a, 1.0 / doublings) : INFINITY;
      rep.scaling.push_back(ScalingCheck{p, sizes[i - 1], sizes[i], factor, factor <= sc.bench.max_factor_per_doubling});
    }
  }
  if (sc.bench.field_compare)
    rep.field = compare_fields(static_cast<std::size_t>(std::llround(sc.bench.field_compare_kb * 1024)), sc.bench.repetitions,
                               sc.deploy.seed);
  return rep;
}

inline void write_bench_outputs(const BenchReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream(dir / "bench.csv") << r.csv();
  std::ofstream(dir / "bench.dat") << r.dat();
  std::ofstream(dir / "bench.txt") << r.table();
}

// ---- inspection ----

inline std::string transcript_summary(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::ostringstream verdicts;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find(" verdict ") != std::string::npos) verdicts << "  " << line << "\n";
  }
  auto d = cr_hash(ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  std::ostringstream os;
  os << "transcript lines=" << n << " id=" << to_hex(ByteView(d.data(), 8)) << "\n" << verdicts.str();
  return os.str();
}

// Field and MAC settings come from the nearest config.json (the path itself or its parent), or defaults.
inline std::optional<ScenarioConfig> nearby_config(const fs::path& p) {
  for (const auto& dir : {p, p.parent_path()}) {
    if (!dir.empty() && fs::exists(dir / "config.json")) return parse_scenario(load_json_file(dir / "config.json"));
  }
  return std::nullopt;
}

inline std::string inspect_holder(const fs::path& dir, const ScenarioConfig& sc) {
  const std::string name = dir.filename().string();
  HolderIndex j = 0;
  if (name.rfind("holder-", 0) == 0) j = static_cast<HolderIndex>(std::stoul(name.substr(7)));
  return HolderStore::load(j, sc.deploy.spss.field, dir).dump();
}

inline std::string inspect_path(const fs::path& p) {
  if (!fs::exists(p)) throw ConfigError("no such file or directory: " + p.string());
  const auto near = nearby_config(p);
  const ScenarioConfig sc = near ? *near : parse_scenario(json::object());
  const auto& mac = sc.deploy.mac;
  if (fs::is_regular_file(p)) {
    const Bytes head = io::read_file(p);
    const std::string text(head.begin(), head.end());
    if (text.rfind("QSSVLOG1", 0) == 0) return VerifierStore::load(p.parent_path()).dump();
    if (p.extension() == ".rec") return CalculatorStore::load(mac.scheme, mac.k, p.parent_path()).dump();
    if (p.filename() == "shares.bin" || p.filename() == "journal.bin") return inspect_holder(p.parent_path(), sc);
    return transcript_summary(text);
  }
  const std::string name = p.filename().string();
  if (fs::exists(p / "config.json")) {
    std::ostringstream os;
    os << "state " << p.string() << "\n";
    for (HolderIndex j = 1; j <= sc.deploy.spss.holders; ++j) {
      const auto h = p / ("holder-" + std::to_string(j));
      if (fs::exists(h)) os << inspect_holder(h, sc);
    }
    if (fs::exists(p / "verifier")) os << VerifierStore::load(p / "verifier").dump();
    if (fs::exists(p / "calculator")) os << CalculatorStore::load(mac.scheme, mac.k, p / "calculator").dump();
    if (fs::exists(p / "sim.json")) {
      auto st = state_from_json(load_json_file(p / "sim.json"));
      os << "sim now_s=" << st.now_s << " next_id=" << st.next_id << " owner_records=" << st.owner.size()
         << " end_user_records=" << st.end_user.size() << "\n";
    }
    if (fs::exists(p / "transcript.log")) {
      const Bytes t = io::read_file(p / "transcript.log");
      os << transcript_summary(std::string(t.begin(), t.end()));
    }
    return os.str();
  }
  if (name == "verifier" || fs::exists(p / "records.log")) return VerifierStore::load(p).dump();
  if (name.rfind("holder-", 0) == 0 || fs::exists(p / "shares.bin") || fs::exists(p / "journal.bin")) return inspect_holder(p, sc);
  if (name == "calculator") return CalculatorStore::load(mac.scheme, mac.k, p).dump();
  for (const auto& e : fs::directory_iterator(p))
    if (e.path().extension() == ".rec") return CalculatorStore::load(mac.scheme, mac.k, p).dump();
  return "empty\n";
}

}  // namespace qss
