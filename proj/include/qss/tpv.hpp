#pragma once

// Third-party verification deployment: data owner, share calculator, share holders, verifier and
// end user run as actors on one event loop. Every message between nodes travels as an OTP-encrypted,
// Wegman-Carter-authenticated envelope keyed from the simulated QKD network.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "qss/keynet.hpp"
#include "qss/renewal.hpp"
#include "qss/sim.hpp"
#include "qss/spss.hpp"
#include "qss/stores.hpp"
#include "qss/uhash.hpp"

namespace qss {

enum class Phase : std::uint8_t { Registration = 1, Precompute, Reconstruction, IntegrityCheck, Refutation, Renewal };

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::Registration: return "registration";
    case Phase::Precompute: return "precompute";
    case Phase::Reconstruction: return "reconstruction";
    case Phase::IntegrityCheck: return "integrity-check";
    case Phase::Refutation: return "refutation";
    case Phase::Renewal: return "renewal";
  }
  return "unknown";
}

enum class Outcome { Success, Fail, Abort, RefutationSuccess, RefutationFail, CannotAdjudicate };

inline std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::Success: return "success";
    case Outcome::Fail: return "fail";
    case Outcome::Abort: return "abort";
    case Outcome::RefutationSuccess: return "refutation-success";
    case Outcome::RefutationFail: return "refutation-fail";
    case Outcome::CannotAdjudicate: return "cannot-adjudicate";
  }
  return "unknown";
}

inline Outcome parse_outcome(const std::string& s) {
  for (auto o : {Outcome::Success, Outcome::Fail, Outcome::Abort, Outcome::RefutationSuccess, Outcome::RefutationFail,
                 Outcome::CannotAdjudicate})
    if (to_string(o) == s) return o;
  throw ConfigError("unknown outcome '" + s + "'");
}

struct VerdictEvent {
  SecretId id = 0;
  Phase phase = Phase::Registration;
  Outcome outcome = Outcome::Abort;
  std::string detail;
  double at_ms = 0;
};

// Party ids on the wire. Holder j is holder_base + j.
namespace party {
constexpr std::uint16_t owner = 1;
constexpr std::uint16_t calculator = 2;
constexpr std::uint16_t verifier = 3;
constexpr std::uint16_t end_user = 4;
constexpr std::uint16_t holder_base = 100;
inline std::uint16_t holder(HolderIndex j) { return static_cast<std::uint16_t>(holder_base + j); }
inline bool is_holder(std::uint16_t p) { return p > holder_base; }
inline HolderIndex holder_index(std::uint16_t p) { return static_cast<HolderIndex>(p - holder_base); }
inline std::string name(std::uint16_t p) {
  switch (p) {
    case owner: return "owner";
    case calculator: return "calculator";
    case verifier: return "verifier";
    case end_user: return "end-user";
    default: return "holder-" + std::to_string(p - holder_base);
  }
}
inline std::uint16_t parse(const std::string& s) {
  if (s == "owner") return owner;
  if (s == "calculator") return calculator;
  if (s == "verifier") return verifier;
  if (s == "end-user") return end_user;
  if (s.rfind("holder-", 0) == 0) {
    try {
      return holder(static_cast<HolderIndex>(std::stoul(s.substr(7))));
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("unknown party '" + s + "'");
}
}  // namespace party

enum class MsgKind : std::uint8_t {
  RegData = 1,
  ShareFragment,
  RegTag,
  RegAck,
  CsTag,
  RecRequest,
  Ping,
  Pong,
  PrecomputeStart,
  PrecomputeShare,
  PrecomputeDone,
  ShareRequest,
  ShareResponse,
  Release,
  Deliver,
  VerifyRequest,
  TagCheck,
  CsCheck,
  Verdict,
  Claim,
  RefuteRequest,
  RefuteCheck,
  CsRefute,
  RefuteVerdict,
  RenewStart,
  RenewPacket,
  RenewVote,
  RenewDone,
};

struct Placement {
  std::string owner = "Ohtemachi-1";
  std::string calculator = "Koganei-2";
  std::string verifier = "Koganei-1";
  std::string end_user = "Koganei-3";
  std::vector<std::string> holders = {"Koganei-1", "Koganei-2", "Koganei-3", "Koganei-4"};
};

struct MacConfig {
  HashScheme scheme = HashScheme::Toeplitz;
  std::size_t k = 256;
};

// Computational-security option: the verifier holds a truncated SHA-512 digest instead of a MAC tag.
struct CsConfig {
  bool enabled = false;
  std::size_t digest_bits = 512;
};

struct BitFlipAttack {
  std::string from, to;
  Phase phase = Phase::Reconstruction;
  std::size_t count = 1;
};

struct AttackConfig {
  bool tamper_owner = false;
  bool false_claim_user = false;
  HolderIndex corrupt_holder = 0;
  std::vector<HolderIndex> drop_holders;
  std::optional<BitFlipAttack> bit_flip;
};

struct SimConfig {
  double hop_latency_ms = 1.0;
  double local_latency_ms = 0.05;
  double timeout_ms = 5000;
  std::uint64_t epoch_ms = 1700000000000ULL;
  std::map<std::string, double> clock_skew_ms;
};

struct DeploymentConfig {
  std::uint64_t seed = 1;
  NetworkTopology topology = NetworkTopology::tokyo();
  KeynetConfig keynet;
  ChannelConfig channel;
  SpssParams spss;
  std::string renewal_group = "modp-2048-256";
  MacConfig mac;
  CsConfig cs;
  Placement placement;
  SimConfig sim;
  AttackConfig attacks;

  void validate() const {
    topology.validate();
    spss.validate();
    auto need_node = [&](const std::string& path, const std::string& node) {
      if (!topology.has_node(node)) throw ConfigError(path + ": unknown node '" + node + "'");
    };
    need_node("placement.owner", placement.owner);
    need_node("placement.calculator", placement.calculator);
    need_node("placement.verifier", placement.verifier);
    need_node("placement.end_user", placement.end_user);
    if (placement.holders.size() != spss.holders)
      throw ConfigError("placement.holders: expected " + std::to_string(spss.holders) + " entries");
    for (std::size_t i = 0; i < placement.holders.size(); ++i)
      need_node("placement.holders[" + std::to_string(i) + "]", placement.holders[i]);
    if (mac.k < 2 || mac.k > 4096) throw ConfigError("mac.k: must lie in [2, 4096]");
    if (mac.scheme == HashScheme::Toeplitz && mac.k % 8 != 0) throw ConfigError("mac.k: toeplitz tags need a multiple of 8");
    if (channel.k < 2 || (channel.scheme == HashScheme::Toeplitz && channel.k % 8 != 0))
      throw ConfigError("channel.k: invalid tag length");
    if (cs.digest_bits == 0 || cs.digest_bits > 512 || cs.digest_bits % 8 != 0)
      throw ConfigError("cs.digest_bits: must be a multiple of 8 in [8, 512]");
    if (sim.timeout_ms <= 0) throw ConfigError("sim.timeout_ms: must be positive");
    if (sim.hop_latency_ms < 0 || sim.local_latency_ms < 0) throw ConfigError("sim: latencies must be non-negative");
    for (const auto& [node, s] : sim.clock_skew_ms) need_node("sim.clock_skew_ms", node);
    if (attacks.corrupt_holder > spss.holders) throw ConfigError("attacks.corrupt_holder: no such holder");
    for (auto h : attacks.drop_holders)
      if (h == 0 || h > spss.holders) throw ConfigError("attacks.drop_holders: no such holder " + std::to_string(h));
    if (attacks.bit_flip) {
      auto check = [&](const std::string& path, const std::string& p) {
        auto id = party::parse(p);
        if (party::is_holder(id) && party::holder_index(id) > spss.holders) throw ConfigError(path + ": no such holder");
      };
      check("attacks.bit_flip.from", attacks.bit_flip->from);
      check("attacks.bit_flip.to", attacks.bit_flip->to);
    }
  }
};

// t1 as eight big-endian bytes followed by the datum: the message tagged at registration.
inline Bytes timestamped(std::uint64_t t1, ByteView data) {
  ByteWriter w;
  w.u64(t1).raw(data);
  return w.take();
}

inline BitString cs_digest(std::uint64_t t1, ByteView data, std::size_t bits) {
  auto msg = timestamped(t1, data);
  auto d = cr_hash(msg);
  return BitString::from_bytes(ByteView(d.data(), d.size())).slice(0, bits);
}

class Deployment {
 public:
  struct OwnerRecord {
    std::uint64_t t1 = 0;
  };
  struct Received {
    std::uint64_t t1 = 0;
    Bytes data;
  };

  // Operational counters and role memories that survive between invocations.
  struct State {
    double now_s = 0;
    std::uint64_t next_id = 1, next_nonce = 1, next_round = 1;
    std::vector<KeyNetwork::PoolState> pools;
    std::uint64_t overhead = 0;
    std::vector<KeyUse> uses;
    std::map<std::pair<std::uint16_t, std::uint16_t>, std::uint64_t> send_seq, recv_seq;
    std::map<SecretId, OwnerRecord> owner;
    std::map<SecretId, Received> end_user;
  };

  explicit Deployment(DeploymentConfig cfg, fs::path dir = {})
      : cfg_((cfg.validate(), std::move(cfg))),
        net_(cfg_.topology, cfg_.keynet, derive_seed(cfg_.seed, "keynet")),
        channels_(net_, cfg_.channel),
        clocks_(cfg_.sim.epoch_ms, cfg_.sim.clock_skew_ms),
        dir_(std::move(dir)),
        verifier_(dir_.empty() ? VerifierStore() : VerifierStore::load(dir_ / "verifier")),
        calc_store_(dir_.empty() ? CalculatorStore(cfg_.mac.scheme, cfg_.mac.k)
                                 : CalculatorStore::load(cfg_.mac.scheme, cfg_.mac.k, dir_ / "calculator")) {
    for (HolderIndex j = 1; j <= cfg_.spss.holders; ++j) {
      holders_.emplace(j, dir_.empty() ? HolderStore(j, cfg_.spss.field)
                                       : HolderStore::load(j, cfg_.spss.field, dir_ / ("holder-" + std::to_string(j))));
    }
    offline_.insert(cfg_.attacks.drop_holders.begin(), cfg_.attacks.drop_holders.end());
  }

  const DeploymentConfig& config() const { return cfg_; }
  KeyNetwork& network() { return net_; }
  const KeyNetwork& network() const { return net_; }
  const Transcript& transcript() const { return transcript_; }
  Transcript& transcript() { return transcript_; }
  const std::vector<VerdictEvent>& verdicts() const { return verdicts_; }
  const HolderStore& holder_store(HolderIndex j) const { return holders_.at(j); }
  HolderStore& holder_store(HolderIndex j) { return holders_.at(j); }
  const VerifierStore& verifier_store() const { return verifier_; }
  const CalculatorStore& calculator_store() const { return calc_store_; }
  const std::map<SecretId, OwnerRecord>& owner_records() const { return owner_; }
  const std::map<SecretId, Received>& end_user_received() const { return received_; }
  double now_ms() const { return net_.now_ms(); }

  // Host processing time spent handling events of each phase; never written to the transcript.
  double wall_ms(Phase ph) const {
    auto it = wall_ms_.find(ph);
    return it == wall_ms_.end() ? 0.0 : it->second;
  }
  void reset_wall_ms() { wall_ms_.clear(); }

  // Payload bytes (excluding the message kind and secret id) received by `p`, per secret and phase.
  std::uint64_t bytes_received(std::uint16_t p, SecretId id, Phase ph) const {
    auto it = received_bytes_.find({p, id, static_cast<int>(ph)});
    return it == received_bytes_.end() ? 0 : it->second;
  }
  std::uint64_t bytes_received(std::uint16_t p, Phase ph) const {
    std::uint64_t total = 0;
    for (const auto& [key, n] : received_bytes_)
      if (std::get<0>(key) == p && std::get<2>(key) == static_cast<int>(ph)) total += n;
    return total;
  }
  std::uint64_t bytes_received(std::uint16_t p) const {
    std::uint64_t total = 0;
    for (const auto& [key, n] : received_bytes_)
      if (std::get<0>(key) == p) total += n;
    return total;
  }

  void set_offline(HolderIndex j, bool off) {
    if (off)
      offline_.insert(j);
    else
      offline_.erase(j);
  }

  // Owner registers `data`; returns the secret id assigned by the calculator, or 0 on abort.
  SecretId register_data(ByteView data, std::string_view password) {
    const std::size_t mark = verdicts_.size();
    Bytes pw(password.begin(), password.end());
    Bytes d(data.begin(), data.end());
    start(Phase::Registration, 0, [this, d, pw](double now) mutable {
      pending_registration_ = d;
      ByteWriter w;
      w.u64(0).blob(pw).blob(d);
      send(now, party::owner, party::calculator, Phase::Registration, MsgKind::RegData, w.take());
      secure_wipe(d);
    });
    auto v = settle(mark, Phase::Registration, 0);
    return v.outcome == Outcome::Success ? v.id : 0;
  }

  VerdictEvent reconstruct(SecretId id, std::string_view password) {
    const std::size_t mark = verdicts_.size();
    Bytes pw(password.begin(), password.end());
    start(Phase::Reconstruction, id, [this, id, pw](double now) {
      ByteWriter w;
      w.u64(id).blob(pw);
      send(now, party::owner, party::calculator, Phase::Reconstruction, MsgKind::RecRequest, w.take());
    });
    return settle(mark, Phase::Reconstruction, id);
  }

  // The end user asks for an integrity check of the data it received for `id`.
  VerdictEvent verify(SecretId id) {
    const std::size_t mark = verdicts_.size();
    start(Phase::IntegrityCheck, id, [this, id](double now) {
      auto it = received_.find(id);
      if (it == received_.end()) return verdict(now, id, Phase::IntegrityCheck, Outcome::Abort, "end user holds no data for this secret");
      const auto& r = it->second;
      if (cfg_.cs.enabled) {
        ByteWriter w;
        w.u64(id).u64(r.t1).raw(cs_digest(r.t1, r.data, cfg_.cs.digest_bits).bytes());
        send(now, party::end_user, party::verifier, Phase::IntegrityCheck, MsgKind::CsCheck, w.take());
      } else {
        ByteWriter w;
        w.u64(id).u64(r.t1).blob(r.data);
        send(now, party::end_user, party::calculator, Phase::IntegrityCheck, MsgKind::VerifyRequest, w.take());
      }
    });
    return settle(mark, Phase::IntegrityCheck, id);
  }

  // The end user claims receipt of some data; the owner disputes the claim through the verifier.
  VerdictEvent refute(SecretId id, std::optional<std::uint64_t> claimed_t1 = std::nullopt) {
    const std::size_t mark = verdicts_.size();
    start(Phase::Refutation, id, [this, id, claimed_t1](double now) {
      auto it = received_.find(id);
      if (it == received_.end()) return verdict(now, id, Phase::Refutation, Outcome::Abort, "end user has no claim to make");
      Bytes claim = it->second.data;
      if (cfg_.attacks.false_claim_user) flip_random_byte(claim, "false-claim", id);
      ByteWriter w;
      w.u64(id).u64(claimed_t1.value_or(it->second.t1)).blob(claim);
      send(now, party::end_user, party::owner, Phase::Refutation, MsgKind::Claim, w.take());
    });
    return settle(mark, Phase::Refutation, id);
  }

  VerdictEvent renew(SecretId id) {
    const std::size_t mark = verdicts_.size();
    start(Phase::Renewal, id, [this, id](double now) { calc_start_renewal(now, id); });
    return settle(mark, Phase::Renewal, id);
  }

  State export_state() const {
    State s;
    s.now_s = net_.now_s();
    s.next_id = next_id_;
    s.next_nonce = next_nonce_;
    s.next_round = next_round_;
    s.pools = net_.export_state();
    s.overhead = net_.overhead();
    s.uses = net_.uses();
    s.send_seq = channels_.send_sequences();
    s.recv_seq = channels_.recv_sequences();
    s.owner = owner_;
    s.end_user = received_;
    return s;
  }
  void import_state(const State& s) {
    net_.import_state(s.pools, s.now_s, s.overhead, s.uses);
    channels_.restore_sequences(s.send_seq, s.recv_seq);
    next_id_ = s.next_id;
    next_nonce_ = s.next_nonce;
    next_round_ = s.next_round;
    owner_ = s.owner;
    received_ = s.end_user;
  }

  const RenewalGroupConfig& group() {
    if (!group_) group_ = RenewalGroupConfig::by_name(cfg_.renewal_group);
    return *group_;
  }

 private:
  // ---- event loop and transport ----

  struct Prepared {
    std::uint16_t from = 0, to = 0;
    Phase phase = Phase::Registration;
    bool local = false;
    Bytes plaintext;      // local delivery only
    Bytes wire;           // serialized envelope otherwise
    double depart_ms = 0;
    double arrive_ms = 0;
  };

  template <class F>
  void start(Phase ph, SecretId id, F&& f) {
    queue_.at(net_.now_ms(), [this, ph, id, f = std::forward<F>(f)](double now) mutable {
      WallTimer w(*this, ph);
      guarded(now, ph, id, f);
    });
    while (!queue_.empty()) queue_.run_one(net_.now_ms());
  }

  template <class F>
  void guarded(double now, Phase ph, SecretId id, F& f) {
    try {
      f(now);
    } catch (const KeySupplyError& e) {
      fail_session(now, id, ph, Outcome::Abort, e.what());
    } catch (const PrecomputationExhausted& e) {
      fail_session(now, id, ph, Outcome::Abort, e.what());
    } catch (const ProtocolError& e) {
      fail_session(now, id, ph, Outcome::Abort, e.what());
    }
  }

  VerdictEvent settle(std::size_t mark, Phase ph, SecretId id) {
    for (std::size_t i = verdicts_.size(); i-- > mark;)
      if (verdicts_[i].phase == ph && (id == 0 || verdicts_[i].id == id)) return verdicts_[i];
    VerdictEvent v{id, ph, Outcome::Abort, "no verdict reached", net_.now_ms()};
    verdicts_.push_back(v);
    transcript_.log(v.at_ms, "verdict").kv("id", id).kv("phase", to_string(ph)).kv("outcome", "abort").kv("detail", "no-verdict");
    return v;
  }

  const std::string& node_of(std::uint16_t p) const {
    switch (p) {
      case party::owner: return cfg_.placement.owner;
      case party::calculator: return cfg_.placement.calculator;
      case party::verifier: return cfg_.placement.verifier;
      case party::end_user: return cfg_.placement.end_user;
      default: return cfg_.placement.holders.at(party::holder_index(p) - 1);
    }
  }

  Prepared prepare(double now, std::uint16_t from, std::uint16_t to, Phase ph, MsgKind kind, ByteView body) {
    Prepared p;
    p.from = from;
    p.to = to;
    p.phase = ph;
    Bytes pt;
    pt.reserve(body.size() + 1);
    pt.push_back(static_cast<std::uint8_t>(kind));
    pt.insert(pt.end(), body.begin(), body.end());
    const auto& a = node_of(from);
    const auto& b = node_of(to);
    if (a == b) {
      p.local = true;
      p.plaintext = std::move(pt);
      p.depart_ms = now;
      p.arrive_ms = now + cfg_.sim.local_latency_ms;
      return p;
    }
    net_.advance_to(now / 1000.0);
    auto [env, waited] = channels_.seal(from, a, to, b, static_cast<std::uint8_t>(ph), pt);
    secure_wipe(pt);
    p.depart_ms = std::max(now, net_.now_ms());
    const auto hops = net_.topology().path(a, b, true);
    p.arrive_ms = p.depart_ms + cfg_.sim.hop_latency_ms * static_cast<double>(hops ? hops->size() : 1);
    if (flip_matches(from, to, ph)) {
      const std::size_t bit = static_cast<std::size_t>(derive_seed(cfg_.seed, "bit-flip/" + std::to_string(env.seq)) %
                                                       std::max<std::size_t>(1, env.ciphertext.size() * 8));
      if (!env.ciphertext.empty()) env.ciphertext[bit / 8] ^= static_cast<std::uint8_t>(0x80 >> (bit % 8));
      transcript_.log(p.depart_ms, "attack").kv("kind", "bit-flip").kv("from", party::name(from)).kv("to", party::name(to));
    }
    p.wire = env.serialize();
    const auto digest = cr_hash(p.wire);
    transcript_.log(p.depart_ms, "send")
        .kv("from", party::name(from))
        .kv("to", party::name(to))
        .kv("phase", to_string(ph))
        .kv("kind", static_cast<unsigned>(kind))
        .kv("bytes", static_cast<std::uint64_t>(p.wire.size()))
        .kv("digest", to_hex(ByteView(digest.data(), 8)))
        .kv("key_bits", channels_.key_cost(env.ciphertext.size()))
        .ms("key_wait_ms", waited);
    return p;
  }

  void post(Prepared p) {
    if (party::is_holder(p.to) && offline_.contains(party::holder_index(p.to))) {
      transcript_.log(p.depart_ms, "lost").kv("to", party::name(p.to)).kv("reason", "offline");
      return;
    }
    queue_.at(p.arrive_ms, [this, p = std::move(p)](double now) mutable { arrive(now, p); });
  }

  void send(double now, std::uint16_t from, std::uint16_t to, Phase ph, MsgKind kind, ByteView body) {
    post(prepare(now, from, to, ph, kind, body));
  }

  struct WallTimer {
    Deployment& d;
    Phase ph;
    Phase saved;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    WallTimer(Deployment& dep, Phase p) : d(dep), ph(p), saved(dep.cur_phase_) { d.cur_phase_ = p; }
    ~WallTimer() {
      d.wall_ms_[ph] += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      d.cur_phase_ = saved;
    }
  };

  void arrive(double now, Prepared& p) {
    WallTimer wt(*this, p.phase);
    Bytes pt;
    if (p.local) {
      pt = std::move(p.plaintext);
      transcript_.log(now, "local").kv("from", party::name(p.from)).kv("to", party::name(p.to)).kv("phase", to_string(p.phase));
    } else {
      try {
        auto env = SecureEnvelope::deserialize(p.wire);
        pt = channels_.open(node_of(p.from), node_of(p.to), env);
      } catch (const ProtocolError& e) {
        transcript_.log(now, "reject").kv("from", party::name(p.from)).kv("to", party::name(p.to)).kv("reason", quote(e.what()));
        return;
      }
    }
    if (pt.empty()) return;
    const auto kind = static_cast<MsgKind>(pt[0]);
    const ByteView body(pt.data() + 1, pt.size() - 1);
    SecretId id = 0;
    if (body.size() >= 8) id = ByteReader(body).u64();
    received_bytes_[{p.to, id, static_cast<int>(p.phase)}] += body.size() >= 8 ? body.size() - 8 : body.size();
    auto handler = [&](double t) { dispatch(t, p.from, p.to, kind, body); };
    guarded(now, p.phase, id, handler);
    secure_wipe(pt);
  }

  void dispatch(double now, std::uint16_t from, std::uint16_t to, MsgKind kind, ByteView body) {
    if (party::is_holder(to)) return holder_handle(now, party::holder_index(to), from, kind, body);
    switch (to) {
      case party::owner: return owner_handle(now, kind, body);
      case party::calculator: return calc_handle(now, from, kind, body);
      case party::verifier: return verifier_handle(now, kind, body);
      case party::end_user: return end_user_handle(now, kind, body);
      default: throw ProtocolError("message for unknown party");
    }
  }

  void timer(double at, std::function<void(double)> f) {
    queue_.at(at, [this, ph = cur_phase_, f = std::move(f)](double now) {
      WallTimer w(*this, ph);
      f(now);
    });
  }

  void verdict(double now, SecretId id, Phase ph, Outcome o, const std::string& detail) {
    verdicts_.push_back(VerdictEvent{id, ph, o, detail, now});
    auto line = transcript_.log(now, "verdict");
    line.kv("id", id).kv("phase", to_string(ph)).kv("outcome", to_string(o));
    if (!detail.empty()) line.kv("detail", quote(detail));
  }

  void fail_session(double now, SecretId id, Phase ph, Outcome o, const std::string& detail) {
    if (ph == Phase::Reconstruction || ph == Phase::Precompute) {
      auto it = rec_.find(id);
      if (it != rec_.end()) {
        if (it->second.done) return;
        it->second.done = true;
      }
      ph = Phase::Reconstruction;
    }
    if (ph == Phase::Renewal) {
      auto it = ren_.find(id);
      if (it != ren_.end()) {
        if (it->second.done) return;
        it->second.done = true;
      }
    }
    verdict(now, id, ph, o, detail);
  }

  static std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) out += (c == '"' || c == '\n') ? '\'' : c;
    return out + "\"";
  }

  bool flip_matches(std::uint16_t from, std::uint16_t to, Phase ph) {
    const auto& bf = cfg_.attacks.bit_flip;
    if (!bf || flips_done_ >= bf->count) return false;
    if (party::parse(bf->from) != from || party::parse(bf->to) != to || bf->phase != ph) return false;
    ++flips_done_;
    return true;
  }

  void flip_random_byte(Bytes& b, std::string_view label, SecretId id) {
    if (b.empty()) {
      b.push_back(1);
      return;
    }
    const auto r = derive_seed(cfg_.seed, std::string(label) + "/" + std::to_string(id));
    b[r % b.size()] ^= static_cast<std::uint8_t>(1u << ((r >> 32) % 8));
  }

  static Bytes tag_bytes(const BitString& bits) { return bits.bytes(); }
  static BitString read_bits(ByteReader& r, std::size_t nbits) { return BitString::from_bytes(r.raw((nbits + 7) / 8), nbits); }
  std::size_t verifier_tag_bits() const { return cfg_.cs.enabled ? cfg_.cs.digest_bits : cfg_.mac.k; }

  // ---- data owner ----

  void owner_handle(double now, MsgKind kind, ByteView body) {
    ByteReader r(body);
    const SecretId id = r.u64();
    switch (kind) {
      case MsgKind::RegAck: {
        const std::uint64_t t1 = r.u64();
        owner_[id] = OwnerRecord{t1};
        transcript_.log(now, "owner-ack").kv("id", id).kv("t1", t1);
        if (cfg_.cs.enabled) {
          ByteWriter w;
          w.u64(id).u64(t1).raw(cs_digest(t1, pending_registration_, cfg_.cs.digest_bits).bytes());
          send(now, party::owner, party::verifier, Phase::Registration, MsgKind::CsTag, w.take());
        }
        secure_wipe(pending_registration_);
        pending_registration_.clear();
        return verdict(now, id, Phase::Registration, Outcome::Success, "");
      }
      case MsgKind::Release: {
        const bool ok = r.u8() != 0;
        Bytes data = r.blob();
        if (!ok) return;
        auto rec = owner_.find(id);
        if (rec == owner_.end()) throw ProtocolError("owner has no registration time for this secret");
        if (cfg_.attacks.tamper_owner) {
          flip_random_byte(data, "tamper-owner", id);
          transcript_.log(now, "attack").kv("kind", "tamper-owner").kv("id", id);
        }
        ByteWriter w;
        w.u64(id).u64(rec->second.t1).blob(data);
        secure_wipe(data);
        return send(now, party::owner, party::end_user, Phase::Reconstruction, MsgKind::Deliver, w.take());
      }
      case MsgKind::Verdict:
      case MsgKind::RefuteVerdict:
        transcript_.log(now, "owner-informed").kv("id", id).kv("outcome", to_string(static_cast<Outcome>(r.u8())));
        return;
      case MsgKind::Claim: {
        const std::uint64_t t1 = r.u64();
        Bytes claim = r.blob();
        transcript_.log(now, "claim").kv("id", id).kv("t1", t1).kv("bytes", static_cast<std::uint64_t>(claim.size()));
        ByteWriter w;
        if (cfg_.cs.enabled) {
          w.u64(id).u64(t1).raw(cs_digest(t1, claim, cfg_.cs.digest_bits).bytes());
          return send(now, party::owner, party::verifier, Phase::Refutation, MsgKind::CsRefute, w.take());
        }
        w.u64(id).u64(t1).blob(claim);
        return send(now, party::owner, party::calculator, Phase::Refutation, MsgKind::RefuteRequest, w.take());
      }
      default:
        throw ProtocolError("owner received an unexpected message");
    }
  }

  // ---- end user ----

  void end_user_handle(double now, MsgKind kind, ByteView body) {
    ByteReader r(body);
    const SecretId id = r.u64();
    switch (kind) {
      case MsgKind::Deliver: {
        Received rec;
        rec.t1 = r.u64();
        rec.data = r.blob();
        transcript_.log(now, "end-user-received").kv("id", id).kv("t1", rec.t1).kv("bytes", static_cast<std::uint64_t>(rec.data.size()));
        received_[id] = std::move(rec);
        return;
      }
      case MsgKind::Verdict:
      case MsgKind::RefuteVerdict:
        transcript_.log(now, "end-user-informed").kv("id", id).kv("outcome", to_string(static_cast<Outcome>(r.u8())));
        return;
      default:
        throw ProtocolError("end user received an unexpected message");
    }
  }

  // ---- verifier ----

  void verifier_handle(double now, MsgKind kind, ByteView body) {
    ByteReader r(body);
    const SecretId id = r.u64();
    const std::uint64_t t1 = r.u64();
    const std::size_t bits = verifier_tag_bits();
    switch (kind) {
      case MsgKind::RegTag:
      case MsgKind::CsTag: {
        const std::uint64_t t2 = clocks_.local_ms(node_of(party::verifier), now);
        verifier_.append(VerifierRecord{id, t1, read_bits(r, bits), t2});
        transcript_.log(now, "verifier-record").kv("id", id).kv("t1", t1).kv("t2", t2);
        return;
      }
      case MsgKind::TagCheck:
      case MsgKind::CsCheck: {
        bool valid = true;
        if (kind == MsgKind::TagCheck) valid = r.u8() != 0;
        BitString tag = valid ? read_bits(r, bits) : BitString(0);
        auto rec = verifier_.find(id, t1);
        Outcome o = Outcome::Fail;
        std::string detail;
        if (!rec)
          detail = "verifier holds no record for (id, t1)";
        else if (!valid)
          detail = "tag could not be recomputed for the received data";
        else if (!(tag == rec->sigma))
          detail = "tag mismatch";
        else if (!(t1 <= rec->t2))
          detail = "t1 later than t2";
        else
          o = Outcome::Success;
        verdict(now, id, Phase::IntegrityCheck, o, detail);
        ByteWriter w;
        w.u64(id).u8(static_cast<std::uint8_t>(o));
        send(now, party::verifier, party::owner, Phase::IntegrityCheck, MsgKind::Verdict, w.bytes());
        send(now, party::verifier, party::end_user, Phase::IntegrityCheck, MsgKind::Verdict, w.bytes());
        return;
      }
      case MsgKind::RefuteCheck:
      case MsgKind::CsRefute: {
        bool valid = true;
        if (kind == MsgKind::RefuteCheck) valid = r.u8() != 0;
        BitString tag = valid ? read_bits(r, bits) : BitString(0);
        auto rec = verifier_.find(id, t1);
        Outcome o;
        if (!rec)
          o = Outcome::CannotAdjudicate;
        else if (!valid || !(tag == rec->sigma))
          o = Outcome::RefutationSuccess;
        else
          o = Outcome::RefutationFail;
        verdict(now, id, Phase::Refutation, o, rec ? "" : "verifier holds no record for (id, t1)");
        ByteWriter w;
        w.u64(id).u8(static_cast<std::uint8_t>(o));
        send(now, party::verifier, party::owner, Phase::Refutation, MsgKind::RefuteVerdict, w.bytes());
        send(now, party::verifier, party::end_user, Phase::Refutation, MsgKind::RefuteVerdict, w.bytes());
        return;
      }
      default:
        throw ProtocolError("verifier received an unexpected message");
    }
  }

  // ---- share calculator ----

  struct RecSession {
    SecretId id = 0;
    FieldElement password;
    std::uint64_t nonce = 0;
    int stage = 0;  // 0 ping, 1 precompute, 2 collect
    bool done = false;
    std::vector<HolderIndex> live, subset;
    std::set<HolderIndex> ready;
    std::uint32_t tuple_count = 0;
    std::vector<MaskedResponse> responses;
  };
  struct RenSession {
    SecretId id = 0;
    std::uint64_t round = 0;
    bool done = false;
    std::vector<HolderIndex> participants;
    std::set<HolderIndex> finished;
    std::set<HolderIndex> applied;
    std::vector<Accusation> accusations;
  };

  void calc_handle(double now, std::uint16_t from, MsgKind kind, ByteView body) {
    ByteReader r(body);
    const SecretId id = r.u64();
    switch (kind) {
      case MsgKind::RegData: return calc_register(now, r);
      case MsgKind::RecRequest: return calc_start_reconstruction(now, id, r.blob());
      case MsgKind::Pong: {
        auto& s = rec_.at(id);
        const HolderIndex j = party::holder_index(from);
        if (s.done || s.stage != 0 || std::find(s.live.begin(), s.live.end(), j) != s.live.end()) return;
        s.live.push_back(j);
        if (s.live.size() == cfg_.spss.holders) calc_after_liveness(now, id);
        return;
      }
      case MsgKind::PrecomputeDone: {
        auto& s = rec_.at(id);
        if (s.done || s.stage != 1 || r.u64() != s.nonce) return;
        const std::uint32_t count = r.u32();
        if (s.ready.empty()) s.tuple_count = count;
        if (count != s.tuple_count) throw ProtocolError("holders disagree on the number of blocks");
        s.ready.insert(party::holder_index(from));
        if (s.ready.size() == s.live.size()) calc_request_shares(now, s);
        return;
      }
      case MsgKind::ShareResponse: {
        auto& s = rec_.at(id);
        if (s.done || s.stage != 2) return;
        auto resp = wire::decode_response(body, *cfg_.spss.field);
        if (resp.holder != party::holder_index(from)) throw ProtocolError("response holder index does not match its sender");
        s.responses.push_back(std::move(resp));
        if (s.responses.size() == cfg_.spss.threshold) calc_recover(now, s);
        return;
      }
      case MsgKind::VerifyRequest:
      case MsgKind::RefuteRequest: return calc_tag_check(now, id, kind, r);
      case MsgKind::RenewVote: {
        auto& s = ren_.at(id);
        if (s.done || r.u64() != s.round) return;
        const bool accept = r.u8() != 0;
        const std::uint32_t n = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) s.accusations.push_back({party::holder_index(from), r.u32()});
        if (!accept) transcript_.log(now, "accusation-received").kv("id", id).kv("from", party::name(from));
        return;
      }
      case MsgKind::RenewDone: {
        auto& s = ren_.at(id);
        if (s.done || r.u64() != s.round) return;
        const bool applied = r.u8() != 0;
        s.finished.insert(party::holder_index(from));
        if (applied) s.applied.insert(party::holder_index(from));
        if (s.finished.size() == s.participants.size()) calc_finish_renewal(now, s);
        return;
      }
      default:
        throw ProtocolError("calculator received an unexpected message");
    }
  }

  void calc_register(double now, ByteReader& r) {
    Bytes pw = r.blob();
    Bytes data = r.blob();
    const SecretId id = next_id_++;
    const std::uint64_t t1 = clocks_.local_ms(node_of(party::calculator), now);
    transcript_.log(now, "calc-received").kv("id", id).kv("t1", t1).kv("bytes", static_cast<std::uint64_t>(data.size()));
    try {
      KsaRandom rng(net_, node_of(party::calculator), "calc:register:" + std::to_string(id));
      const auto& f = *cfg_.spss.field;
      auto reg = spss_register(id, data, password_from_bytes(pw, f), cfg_.spss, rng);
      secure_wipe(pw);
      std::optional<MacSeed> seed;
      BitString sigma;
      if (!cfg_.cs.enabled) {
        Bytes msg = timestamped(t1, data);
        seed = MacSeed::draw(cfg_.mac.scheme, cfg_.mac.k, msg.size() * 8, rng);
        sigma = mac_tag(*seed, msg).bits;
        secure_wipe(msg);
      }
      now = std::max(now, net_.now_ms());
      // Every envelope is sealed before any leaves, so key exhaustion releases nothing.
      std::vector<Prepared> out;
      for (auto& frag : reg.fragments) {
        out.push_back(prepare(now, party::calculator, party::holder(frag.holder), Phase::Registration, MsgKind::ShareFragment,
                              wire::encode(frag)));
        for (auto& e : frag.data_shares) e = FieldElement::zero(f);
      }
      if (!cfg_.cs.enabled) {
        ByteWriter w;
        w.u64(id).u64(t1).raw(tag_bytes(sigma));
        out.push_back(prepare(now, party::calculator, party::verifier, Phase::Registration, MsgKind::RegTag, w.bytes()));
      }
      ByteWriter ack;
      ack.u64(id).u64(t1);
      out.push_back(prepare(now, party::calculator, party::owner, Phase::Registration, MsgKind::RegAck, ack.bytes()));
      calc_store_.put(CalculatorRecord{id, t1, seed});
      sigma.wipe();
      secure_wipe(data);
      transcript_.log(now, "calc-erased").kv("id", id).kv("retained_bytes", calc_store_.persistent_bytes(id));
      for (auto& p : out) post(std::move(p));
    } catch (const KeySupplyError& e) {
      secure_wipe(data);
      verdict(now, id, Phase::Registration, Outcome::Abort, e.what());
    }
  }

  void calc_start_reconstruction(double now, SecretId id, Bytes pw) {
    auto& s = rec_[id];
    s = RecSession{};
    s.id = id;
    s.password = password_from_bytes(pw, *cfg_.spss.field);
    secure_wipe(pw);
    s.nonce = next_nonce_++;
    for (HolderIndex j = 1; j <= cfg_.spss.holders; ++j) {
      ByteWriter w;
      w.u64(id).u64(s.nonce);
      send(now, party::calculator, party::holder(j), Phase::Reconstruction, MsgKind::Ping, w.bytes());
    }
    const std::uint64_t nonce = s.nonce;
    timer(now + cfg_.sim.timeout_ms, [this, id, nonce](double t) {
      auto& s = rec_.at(id);
      if (s.done || s.nonce != nonce || s.stage != 0) return;
      calc_after_liveness(t, id);
    });
  }

  void calc_after_liveness(double t, SecretId id) {
    auto& s = rec_.at(id);
    const std::uint64_t nonce = s.nonce;
    {
      std::sort(s.live.begin(), s.live.end());
      transcript_.log(t, "liveness").kv("id", id).kv("live", static_cast<std::uint64_t>(s.live.size()));
      if (s.live.size() < cfg_.spss.threshold) {
        s.done = true;
        return verdict(t, id, Phase::Reconstruction, Outcome::Abort,
                       "only " + std::to_string(s.live.size()) + " share holders reachable");
      }
      s.subset.assign(s.live.begin(), s.live.begin() + static_cast<std::ptrdiff_t>(cfg_.spss.threshold));
      s.stage = 1;
      auto step = [&](double at) {
        for (HolderIndex j : s.live) {
          ByteWriter w;
          w.u64(id).u64(s.nonce).u32(static_cast<std::uint32_t>(s.live.size()));
          for (HolderIndex m : s.live) w.u32(m);
          send(at, party::calculator, party::holder(j), Phase::Precompute, MsgKind::PrecomputeStart, w.bytes());
        }
        arm_stage_timer(at, id, nonce, 1, "precomputation incomplete");
      };
      guarded(t, Phase::Reconstruction, id, step);
    }
  }

  void arm_stage_timer(double now, SecretId id, std::uint64_t nonce, int stage, std::string what) {
    timer(now + cfg_.sim.timeout_ms, [this, id, nonce, stage, what](double t) {
      auto& s = rec_.at(id);
      if (s.done || s.nonce != nonce || s.stage != stage) return;
      s.done = true;
      verdict(t, id, Phase::Reconstruction, Outcome::Abort, what);
    });
  }

  void calc_request_shares(double now, RecSession& s) {
    s.stage = 2;
    KsaRandom rng(net_, node_of(party::calculator), "calc:request:" + std::to_string(s.id));
    std::vector<TupleId> ids;
    for (std::uint32_t c = 0; c < s.tuple_count; ++c) ids.push_back(s.nonce << 32 | c);
    auto reqs = spss_request(s.id, s.password, s.subset, ids, cfg_.spss, rng);
    now = std::max(now, net_.now_ms());
    for (const auto& q : reqs)
      send(now, party::calculator, party::holder(q.holder), Phase::Reconstruction, MsgKind::ShareRequest, wire::encode(q));
    arm_stage_timer(now, s.id, s.nonce, 2, "fewer than threshold share responses");
  }

  void calc_recover(double now, RecSession& s) {
    s.done = true;
    auto result = spss_recover(s.responses, s.password, cfg_.spss);
    ByteWriter w;
    w.u64(s.id).u8(result.accepted ? 1 : 0).blob(result.data);
    if (result.accepted)
      verdict(now, s.id, Phase::Reconstruction, Outcome::Success, "");
    else
      verdict(now, s.id, Phase::Reconstruction, Outcome::Fail, "recovered data failed the password MAC check; nothing released");
    secure_wipe(result.data);
    send(now, party::calculator, party::owner, Phase::Reconstruction, MsgKind::Release, w.take());
  }

  void calc_tag_check(double now, SecretId id, MsgKind kind, ByteReader& r) {
    const std::uint64_t t1 = r.u64();
    Bytes data = r.blob();
    const Phase ph = kind == MsgKind::VerifyRequest ? Phase::IntegrityCheck : Phase::Refutation;
    const auto* rec = calc_store_.find(id);
    if (!rec || rec->t1 != t1 || !rec->seed) {
      secure_wipe(data);
      return verdict(now, id, ph, ph == Phase::Refutation ? Outcome::CannotAdjudicate : Outcome::Abort,
                     "calculator holds no MAC key for (id, t1)");
    }
    ByteWriter w;
    w.u64(id).u64(t1);
    try {
      auto tag = recompute_tag(*rec->seed, timestamped(t1, data));
      w.u8(1).raw(tag_bytes(tag.bits));
    } catch (const ConfigError&) {
      w.u8(0);
    }
    secure_wipe(data);
    send(now, party::calculator, party::verifier, ph, ph == Phase::IntegrityCheck ? MsgKind::TagCheck : MsgKind::RefuteCheck,
         w.take());
  }

  void calc_start_renewal(double now, SecretId id) {
    auto& s = ren_[id];
    s = RenSession{};
    s.id = id;
    s.round = next_round_++;
    for (HolderIndex j = 1; j <= cfg_.spss.holders; ++j) s.participants.push_back(j);
    if (!(*cfg_.spss.field == *group().share_field()))
      throw ProtocolError("share field differs from the renewal group order");
    for (HolderIndex j : s.participants) {
      ByteWriter w;
      w.u64(id).u64(s.round);
      send(now, party::calculator, party::holder(j), Phase::Renewal, MsgKind::RenewStart, w.bytes());
    }
    const std::uint64_t round = s.round;
    timer(now + cfg_.sim.timeout_ms, [this, id, round](double t) {
      auto& s = ren_.at(id);
      if (s.done || s.round != round) return;
      s.done = true;
      verdict(t, id, Phase::Renewal, Outcome::Abort,
              "renewal round incomplete; " + std::to_string(s.applied.size()) + " holders updated");
    });
  }

  void calc_finish_renewal(double now, RenSession& s) {
    s.done = true;
    if (!s.accusations.empty()) {
      std::string d;
      for (const auto& a : s.accusations)
        d += (d.empty() ? "" : ", ") + party::name(party::holder(a.accuser)) + " accused " + party::name(party::holder(a.accused));
      return verdict(now, s.id, Phase::Renewal, Outcome::Fail, d);
    }
    if (s.applied.size() != s.participants.size()) return verdict(now, s.id, Phase::Renewal, Outcome::Abort, "not every holder updated");
    verdict(now, s.id, Phase::Renewal, Outcome::Success, "");
  }

  // ---- share holders ----

  struct PrePending {
    std::vector<HolderIndex> participants;
    std::uint32_t count = 0;
    std::map<HolderIndex, std::vector<PrecomputeContribution>> from;
  };
  struct RenPending {
    std::vector<HolderIndex> participants;
    std::map<HolderIndex, RenewalBroadcast> broadcasts;
    std::map<HolderIndex, RenewalSharePair> pairs;
    std::map<HolderIndex, bool> votes;
    bool voted = false;
  };

  void holder_handle(double now, HolderIndex j, std::uint16_t from, MsgKind kind, ByteView body) {
    auto& store = holders_.at(j);
    const auto& f = *cfg_.spss.field;
    ByteReader r(body);
    const SecretId id = r.u64();
    const std::uint16_t self = party::holder(j);
    switch (kind) {
      case MsgKind::ShareFragment: {
        auto set = wire::decode_share_set(body, f);
        if (set.holder != j) throw ProtocolError("share fragment addressed to another holder");
        store.put(std::move(set));
        transcript_.log(now, "holder-stored").kv("holder", j).kv("id", id);
        return;
      }
      case MsgKind::Ping: {
        if (!store.has(id)) return;
        ByteWriter w;
        w.u64(id);
        return send(now, self, party::calculator, Phase::Reconstruction, MsgKind::Pong, w.bytes());
      }
      case MsgKind::PrecomputeStart: {
        const std::uint64_t nonce = r.u64();
        std::vector<HolderIndex> parts(r.u32());
        for (auto& m : parts) m = r.u32();
        auto& p = pre_[{j, id, nonce}];
        p.participants = parts;
        p.count = static_cast<std::uint32_t>(store.get(id).data_shares.size());
        KsaRandom rng(net_, node_of(self), "holder:precompute:" + std::to_string(j));
        std::vector<PrecomputeContribution> mine;
        for (std::uint32_t c = 0; c < p.count; ++c)
          mine.push_back(make_precompute_contribution(j, nonce << 32 | c, parts, cfg_.spss, rng));
        now = std::max(now, net_.now_ms());
        for (HolderIndex m : parts) {
          if (m == j) continue;
          ByteWriter w;
          w.u64(id).u64(nonce).u32(p.count);
          for (const auto& c : mine) {
            const auto& [rv, zv] = c.to.at(m);
            wire::put(w, rv);
            wire::put(w, zv);
          }
          send(now, self, party::holder(m), Phase::Precompute, MsgKind::PrecomputeShare, w.bytes());
        }
        p.from[j] = std::move(mine);
        return holder_try_assemble(now, j, id, nonce);
      }
      case MsgKind::PrecomputeShare: {
        const std::uint64_t nonce = r.u64();
        const std::uint32_t count = r.u32();
        std::vector<PrecomputeContribution> got;
        for (std::uint32_t c = 0; c < count; ++c) {
          PrecomputeContribution pc;
          pc.from = party::holder_index(from);
          pc.tuple = nonce << 32 | c;
          auto rv = wire::get(r, f);
          auto zv = wire::get(r, f);
          pc.to.emplace(j, std::pair{rv, zv});
          got.push_back(std::move(pc));
        }
        pre_[{j, id, nonce}].from[party::holder_index(from)] = std::move(got);
        return holder_try_assemble(now, j, id, nonce);
      }
      case MsgKind::ShareRequest: {
        auto req = wire::decode_request(body, f);
        if (req.holder != j) throw ProtocolError("share request addressed to another holder");
        check_subset(req.subset, cfg_.spss);
        auto tuples = store.consume_tuples(id, req.tuples);
        auto resp = compute_masked_response(store.get(id), req, tuples);
        for (auto& t : tuples) t.wipe(f);
        if (cfg_.attacks.corrupt_holder == j) {
          resp.values.front() += FieldElement::one(f);
          transcript_.log(now, "attack").kv("kind", "corrupt-holder").kv("holder", j);
        }
        return send(now, self, party::calculator, Phase::Reconstruction, MsgKind::ShareResponse, wire::encode(resp));
      }
      case MsgKind::RenewStart: return holder_renew_start(now, j, id, r.u64());
      case MsgKind::RenewPacket: {
        const std::uint64_t round = r.u64();
        auto b = wire::decode_broadcast(r.blob(), group());
        auto pair = wire::decode_share_pair(r.blob(), group());
        const HolderIndex d = party::holder_index(from);
        if (b.sender != d || pair.sender != d) throw ProtocolError("renewal packet sender mismatch");
        auto& p = ren_pending_[{j, id, round}];
        p.broadcasts[d] = std::move(b);
        p.pairs[d] = std::move(pair);
        return holder_try_vote(now, j, id, round);
      }
      case MsgKind::RenewVote: {
        const std::uint64_t round = r.u64();
        const bool accept = r.u8() != 0;
        ren_pending_[{j, id, round}].votes[party::holder_index(from)] = accept;
        return holder_try_apply(now, j, id, round);
      }
      default:
        throw ProtocolError("holder received an unexpected message");
    }
  }

  void holder_try_assemble(double now, HolderIndex j, SecretId id, std::uint64_t nonce) {
    auto it = pre_.find({j, id, nonce});
    auto& p = it->second;
    if (p.participants.empty() || p.from.size() < p.participants.size()) return;
    std::vector<PrecomputedTuple> tuples;
    for (std::uint32_t c = 0; c < p.count; ++c) {
      std::vector<PrecomputeContribution> cs;
      for (HolderIndex m : p.participants) {
        auto& v = p.from.at(m);
        if (v.size() != p.count) throw ProtocolError("precompute contribution count mismatch");
        cs.push_back(v[c]);
      }
      tuples.push_back(assemble_tuple(j, nonce << 32 | c, cs, p.participants));
    }
    holders_.at(j).add_tuples(id, std::move(tuples));
    pre_.erase(it);
    ByteWriter w;
    w.u64(id).u64(nonce).u32(static_cast<std::uint32_t>(holders_.at(j).get(id).data_shares.size()));
    transcript_.log(now, "holder-precomputed").kv("holder", j).kv("id", id).kv("unconsumed", static_cast<std::uint64_t>(holders_.at(j).unconsumed(id)));
    send(now, party::holder(j), party::calculator, Phase::Precompute, MsgKind::PrecomputeDone, w.bytes());
  }

  void holder_renew_start(double now, HolderIndex j, SecretId id, std::uint64_t round) {
    const auto& g = group();
    const auto& set = holders_.at(j).get(id);
    auto& p = ren_pending_[{j, id, round}];
    for (HolderIndex m = 1; m <= cfg_.spss.holders; ++m) p.participants.push_back(m);
    const auto degrees = spss_track_degrees(set, cfg_.spss);
    KsaRandom rng(net_, node_of(party::holder(j)), "holder:renewal:" + std::to_string(j));
    auto pkt = gen_renewal(j, round, degrees, p.participants, g, rng);
    if (cfg_.attacks.corrupt_holder == j) {
      const HolderIndex victim = j == 1 ? 2 : 1;
      auto& v = pkt.shares.at(victim).values.at(0).first;
      v = (v + 1) % g.q();
      transcript_.log(now, "attack").kv("kind", "corrupt-holder").kv("holder", j).kv("victim", victim);
    }
    now = std::max(now, net_.now_ms());
    const Bytes bcast = wire::encode(pkt.broadcast, g);
    for (HolderIndex m : p.participants) {
      if (m == j) continue;
      ByteWriter w;
      w.u64(id).u64(round).blob(bcast).blob(wire::encode(pkt.shares.at(m), g));
      send(now, party::holder(j), party::holder(m), Phase::Renewal, MsgKind::RenewPacket, w.take());
    }
    p.broadcasts[j] = pkt.broadcast;
    p.pairs[j] = pkt.shares.at(j);
    holder_try_vote(now, j, id, round);
  }

  void holder_try_vote(double now, HolderIndex j, SecretId id, std::uint64_t round) {
    auto& p = ren_pending_[{j, id, round}];
    if (p.voted || p.participants.empty() || p.pairs.size() < p.participants.size()) return;
    p.voted = true;
    const auto degrees = spss_track_degrees(holders_.at(j).get(id), cfg_.spss);
    std::vector<HolderIndex> accused;
    for (HolderIndex d : p.participants)
      if (!verify_renewal_share(j, p.broadcasts.at(d), p.pairs.at(d), group(), degrees)) accused.push_back(d);
    p.votes[j] = accused.empty();
    ByteWriter w;
    w.u64(id).u64(round).u8(accused.empty() ? 1 : 0).u32(static_cast<std::uint32_t>(accused.size()));
    for (auto d : accused) w.u32(d);
    auto line = transcript_.log(now, accused.empty() ? "renewal-accept" : "renewal-accuse");
    line.kv("holder", j).kv("id", id);
    for (auto d : accused) line.kv("accused", d);
    for (HolderIndex m : p.participants)
      if (m != j) send(now, party::holder(j), party::holder(m), Phase::Renewal, MsgKind::RenewVote, w.bytes());
    send(now, party::holder(j), party::calculator, Phase::Renewal, MsgKind::RenewVote, w.bytes());
    holder_try_apply(now, j, id, round);
  }

  void holder_try_apply(double now, HolderIndex j, SecretId id, std::uint64_t round) {
    auto it = ren_pending_.find({j, id, round});
    auto& p = it->second;
    if (!p.voted || p.votes.size() < p.participants.size()) return;
    const bool all = std::all_of(p.votes.begin(), p.votes.end(), [](const auto& kv) { return kv.second; });
    if (all) {
      auto set = holders_.at(j).get(id);
      std::vector<RenewalSharePair> received;
      for (const auto& [d, pair] : p.pairs) received.push_back(pair);
      auto tracks = spss_tracks(set);
      apply_renewal(tracks, received);
      holders_.at(j).replace_shares(id, set.data_shares, set.password_share);
    }
    transcript_.log(now, all ? "renewal-applied" : "renewal-discarded").kv("holder", j).kv("id", id);
    ren_pending_.erase(it);
    ByteWriter w;
    w.u64(id).u64(round).u8(all ? 1 : 0);
    send(now, party::holder(j), party::calculator, Phase::Renewal, MsgKind::RenewDone, w.bytes());
  }

  DeploymentConfig cfg_;
  KeyNetwork net_;
  SecureChannels channels_;
  NodeClocks clocks_;
  fs::path dir_;
  VerifierStore verifier_;
  CalculatorStore calc_store_;
  std::map<HolderIndex, HolderStore> holders_;
  std::optional<RenewalGroupConfig> group_;
  EventQueue queue_;
  Transcript transcript_;
  std::vector<VerdictEvent> verdicts_;
  std::set<HolderIndex> offline_;
  std::size_t flips_done_ = 0;

  std::uint64_t next_id_ = 1, next_nonce_ = 1, next_round_ = 1;
  Bytes pending_registration_;
  std::map<SecretId, OwnerRecord> owner_;
  std::map<SecretId, Received> received_;
  std::map<SecretId, RecSession> rec_;
  std::map<SecretId, RenSession> ren_;
  std::map<std::tuple<HolderIndex, SecretId, std::uint64_t>, PrePending> pre_;
  std::map<std::tuple<HolderIndex, SecretId, std::uint64_t>, RenPending> ren_pending_;
  std::map<std::tuple<std::uint16_t, SecretId, int>, std::uint64_t> received_bytes_;
  std::map<Phase, double> wall_ms_;
  Phase cur_phase_ = Phase::Registration;
};

}  // namespace qss
