#pragma once

// Simulated QKD key supply: per-link key generation, key relay between trusted nodes,
// node-local KSA randomness, a consume-once ledger, and OTP + Wegman-Carter channels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qss/bytes.hpp"
#include "qss/error.hpp"
#include "qss/random.hpp"
#include "qss/uhash.hpp"

namespace qss {

struct LinkSpec {
  std::string name;
  std::string a, b;
  double length_km = 0;
  double loss_db = 0;
  double rate_bps = 0;
  std::uint64_t capacity_bits = 0;
  bool up = true;
};

struct NetworkTopology {
  std::vector<std::string> nodes;
  std::vector<LinkSpec> links;

  // Simulation default: 2 Mb/s scaled by channel transmittance.
  static double default_rate(double loss_db) { return 2e6 * std::pow(10.0, -loss_db / 10.0); }

  // Five nodes, six links with the length/loss figures of the Tokyo QKD Network systems.
  static NetworkTopology tokyo() {
    NetworkTopology t;
    t.nodes = {"Ohtemachi-1", "Koganei-1", "Koganei-2", "Koganei-3", "Koganei-4"};
    auto add = [&](const char* name, const char* a, const char* b, double km, double db) {
      t.links.push_back(LinkSpec{name, a, b, km, db, default_rate(db), std::uint64_t{1} << 28, true});
    };
    add("NEC-0", "Koganei-1", "Koganei-3", 50, 10);
    add("NEC-1", "Koganei-2", "Ohtemachi-1", 22, 13);
    add("Toshiba", "Koganei-1", "Ohtemachi-1", 45, 14.5);
    add("NTT-NICT", "Koganei-4", "Ohtemachi-1", 90, 29.35);
    add("Gakushuin", "Koganei-1", "Koganei-2", 2, 2);
    add("SeQureNet", "Koganei-3", "Koganei-4", 2, 2);
    return t;
  }

  bool has_node(const std::string& n) const { return std::find(nodes.begin(), nodes.end(), n) != nodes.end(); }

  void validate() const {
    if (nodes.empty()) throw ConfigError("topology.nodes: at least one node required");
    for (std::size_t i = 0; i < nodes.size(); ++i)
      for (std::size_t j = i + 1; j < nodes.size(); ++j)
        if (nodes[i] == nodes[j]) throw ConfigError("topology.nodes: duplicate node " + nodes[i]);
    for (std::size_t i = 0; i < links.size(); ++i) {
      const auto& l = links[i];
      const std::string where = "topology.links[" + std::to_string(i) + "]";
      if (!has_node(l.a) || !has_node(l.b)) throw ConfigError(where + ": unknown endpoint");
      if (l.a == l.b) throw ConfigError(where + ": self loop");
      if (!(l.rate_bps > 0)) throw ConfigError(where + ".rate_bps: must be positive");
      if (l.capacity_bits == 0) throw ConfigError(where + ".capacity_bits: must be positive");
    }
    for (const auto& n : nodes)
      if (!path(nodes.front(), n, true)) throw ConfigError("topology: graph is not connected (" + n + ")");
  }

  // Shortest path by hop count as link indices; neighbors explored in link order.
  std::optional<std::vector<std::size_t>> path(const std::string& from, const std::string& to,
                                               bool include_down = false) const {
    if (from == to) return std::vector<std::size_t>{};
    std::map<std::string, std::pair<std::string, std::size_t>> prev;
    std::deque<std::string> frontier{from};
    prev[from] = {"", SIZE_MAX};
    while (!frontier.empty()) {
      auto cur = frontier.front();
      frontier.pop_front();
      for (std::size_t i = 0; i < links.size(); ++i) {
        const auto& l = links[i];
        if (!l.up && !include_down) continue;
        std::string next;
        if (l.a == cur)
          next = l.b;
        else if (l.b == cur)
          next = l.a;
        else
          continue;
        if (prev.contains(next)) continue;
        prev[next] = {cur, i};
        if (next == to) {
          std::vector<std::size_t> out;
          for (std::string n = to; n != from; n = prev[n].first) out.push_back(prev[n].second);
          std::reverse(out.begin(), out.end());
          return out;
        }
        frontier.push_back(next);
      }
    }
    return std::nullopt;
  }
};

// Bits [offset, offset + n) of a stream whose content is a pure function of its seed.
inline BitString stream_bits(std::uint64_t seed, std::uint64_t offset, std::size_t n) {
  if (n == 0) return BitString(0);
  const std::uint64_t first = offset / 64, last = (offset + n - 1) / 64;
  std::vector<std::uint64_t> words(last - first + 2, 0);
  for (std::uint64_t w = first; w <= last; ++w) words[w - first] = splitmix64(seed ^ splitmix64(w + 0x5157ULL));
  BitString all = BitString::from_words(words, (last - first + 1) * 64);
  return all.slice(offset % 64, n);
}

// One buffer of key bits: a QKD link, an end-to-end relayed stream or a KSA entropy pool.
struct KeyPool {
  std::string id;
  std::uint64_t seed = 0;
  double rate_bps = 0;
  std::uint64_t capacity = UINT64_MAX;
  std::uint64_t head = 0;  // next unissued bit index
  std::uint64_t tail = 0;  // end of generated/credited bits
  std::uint64_t generated = 0;
  std::uint64_t credited = 0;
  std::uint64_t consumed = 0;
  std::uint64_t relayed_out = 0;
  std::uint64_t discarded = 0;
  double produced_until_s = 0;

  std::uint64_t buffered() const { return tail - head; }

  void generate_until(double t) {
    if (rate_bps <= 0 || t <= produced_until_s) return;
    auto total_then = static_cast<std::uint64_t>(std::floor(rate_bps * produced_until_s));
    auto total_now = static_cast<std::uint64_t>(std::floor(rate_bps * t));
    produced_until_s = t;
    std::uint64_t add = total_now - total_then;
    std::uint64_t room = capacity > buffered() ? capacity - buffered() : 0;
    std::uint64_t kept = std::min(add, room);
    discarded += add - kept;
    generated += kept;
    tail += kept;
  }

  // Seconds until `need` bits are buffered, or infinity when capacity or rate rules it out.
  double seconds_until(std::uint64_t need) const {
    if (buffered() >= need) return 0;
    if (rate_bps <= 0 || need > capacity) return INFINITY;
    return static_cast<double>(need - buffered()) / rate_bps + 1e-9;
  }
};

struct KeyUse {
  std::string stream;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  std::string purpose;
};

struct KeynetConfig {
  double warmup_s = 600;
  double ksa_rate_bps = 10e6;
  std::uint64_t ksa_capacity_bits = std::uint64_t{1} << 32;
  std::uint64_t relay_chunk_bits = std::uint64_t{1} << 20;
  double max_key_wait_ms = 3.6e6;  // 0 refuses any send that would have to wait for key
};

struct ConservationReport {
  std::uint64_t generated = 0, buffered = 0, consumed = 0, overhead = 0;
  bool holds() const { return generated == buffered + consumed + overhead; }
};

class KeyNetwork {
 public:
  KeyNetwork(NetworkTopology topo, KeynetConfig cfg, std::uint64_t seed) : topo_(std::move(topo)), cfg_(cfg), seed_(seed) {
    topo_.validate();
    for (const auto& l : topo_.links) {
      KeyPool p;
      p.id = "link:" + l.name;
      p.seed = derive_seed(seed_, p.id);
      p.rate_bps = l.rate_bps;
      p.capacity = l.capacity_bits;
      links_.push_back(p);
    }
    for (const auto& n : topo_.nodes) {
      KeyPool p;
      p.id = "ksa:" + n;
      p.seed = derive_seed(seed_, p.id);
      p.rate_bps = cfg_.ksa_rate_bps;
      p.capacity = cfg_.ksa_capacity_bits;
      ksa_.emplace(n, p);
    }
    advance_to(cfg_.warmup_s);
  }

  const NetworkTopology& topology() const { return topo_; }
  const KeynetConfig& config() const { return cfg_; }
  double now_s() const { return now_s_; }
  double now_ms() const { return now_s_ * 1000.0; }

  void advance_to(double t_s) {
    if (t_s <= now_s_) return;
    now_s_ = t_s;
    for (auto& l : links_) l.generate_until(t_s);
    for (auto& [n, p] : ksa_) p.generate_until(t_s);
  }
  void advance_ms(double ms) { advance_to(now_s_ + ms / 1000.0); }

  void set_link_up(const std::string& name, bool up) {
    for (auto& l : topo_.links)
      if (l.name == name) {
        l.up = up;
        return;
      }
    throw ConfigError("unknown link " + name);
  }

  // Moves `amount` bits onto the end-to-end stream a<->b, debiting every hop. All-or-nothing.
  void relay(const std::string& a, const std::string& b, std::uint64_t amount) {
    auto hops = topo_.path(a, b);
    if (!hops) throw KeySupplyError("relay failure: no path between " + a + " and " + b);
    if (hops->empty()) throw ConfigError("relay endpoints coincide");
    for (auto h : *hops)
      if (links_[h].buffered() < amount) throw KeySupplyError("relay failure: insufficient key on " + links_[h].id);
    auto& e2e = pair_pool(a, b);
    for (std::size_t i = 0; i < hops->size(); ++i) {
      auto& l = links_[(*hops)[i]];
      record(l, amount, i == 0 ? "relay-transfer:" + e2e.id : "relay-otp:" + e2e.id);
      l.head += amount;
      l.relayed_out += amount;
      if (i > 0) overhead_ += amount;
    }
    e2e.tail += amount;
    e2e.credited += amount;
  }

  // Ensures `n` bits on a<->b, relaying and waiting for generation as allowed. Returns ms waited.
  double ensure_pair_key(const std::string& a, const std::string& b, std::uint64_t n) {
    auto& e2e = pair_pool(a, b);
    double waited_ms = 0;
    while (e2e.buffered() < n) {
      auto hops = topo_.path(a, b);
      if (!hops) throw KeySupplyError("relay failure: no path between " + a + " and " + b);
      const std::uint64_t deficit = n - e2e.buffered();
      std::uint64_t avail = UINT64_MAX;
      for (auto h : *hops) avail = std::min(avail, links_[h].buffered());
      std::uint64_t want = std::max(deficit, cfg_.relay_chunk_bits);
      std::uint64_t amount = std::min(want, avail);
      if (amount > 0) {
        relay(a, b, amount);
        continue;
      }
      double wait_s = 0;
      const std::uint64_t step = std::min<std::uint64_t>(deficit, min_capacity(*hops));
      for (auto h : *hops) wait_s = std::max(wait_s, links_[h].seconds_until(step));
      wait(wait_s, waited_ms, "end-to-end key " + a + "<->" + b);
    }
    return waited_ms;
  }

  struct Grant {
    std::string stream;
    std::uint64_t offset = 0;
    BitString bits;
    double waited_ms = 0;
  };

  // Issues the next `n` bits of the a<->b stream; both endpoints hold the same bits.
  Grant take_pair_key(const std::string& a, const std::string& b, std::uint64_t n, const std::string& purpose) {
    Grant g;
    g.waited_ms = ensure_pair_key(a, b, n);
    auto& p = pair_pool(a, b);
    g.stream = p.id;
    g.offset = p.head;
    g.bits = stream_bits(p.seed, p.head, n);
    record(p, n, purpose);
    p.head += n;
    p.consumed += n;
    return g;
  }

  // Receiver-side view of bits already issued to the sender.
  BitString pair_key_at(const std::string& a, const std::string& b, std::uint64_t offset, std::uint64_t n) const {
    auto it = pairs_.find(pair_id(a, b));
    if (it == pairs_.end() || offset + n > it->second.head) throw ReplayFailure("key range was never issued");
    return stream_bits(it->second.seed, offset, n);
  }

  Grant take_ksa(const std::string& node, std::uint64_t n, const std::string& purpose) {
    auto it = ksa_.find(node);
    if (it == ksa_.end()) throw ConfigError("no KSA at node " + node);
    auto& p = it->second;
    Grant g;
    if (p.buffered() < n) {
      double wait_s = p.seconds_until(n);
      wait(wait_s, g.waited_ms, "KSA randomness at " + node);
    }
    g.stream = p.id;
    g.offset = p.head;
    g.bits = stream_bits(p.seed, p.head, n);
    if (n > 0) record(p, n, purpose);
    p.head += n;
    p.consumed += n;
    return g;
  }

  ConservationReport conservation() const {
    ConservationReport r;
    for (const auto& l : links_) {
      r.generated += l.generated;
      r.buffered += l.buffered();
    }
    for (const auto& [n, p] : ksa_) {
      r.generated += p.generated;
      r.buffered += p.buffered();
      r.consumed += p.consumed;
    }
    for (const auto& [id, p] : pairs_) {
      r.buffered += p.buffered();
      r.consumed += p.consumed;
    }
    r.overhead = overhead_;
    return r;
  }

  // True when no stream ever issued a bit index twice.
  bool no_reuse() const {
    std::map<std::string, std::vector<std::pair<std::uint64_t, std::uint64_t>>> by_stream;
    for (const auto& u : uses_) by_stream[u.stream].emplace_back(u.offset, u.length);
    for (auto& [s, v] : by_stream) {
      std::sort(v.begin(), v.end());
      for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i - 1].first + v[i - 1].second > v[i].first) return false;
    }
    return true;
  }

  const std::vector<KeyUse>& uses() const { return uses_; }
  const std::vector<KeyPool>& links() const { return links_; }
  const std::map<std::string, KeyPool>& ksa() const { return ksa_; }
  const std::map<std::string, KeyPool>& pairs() const { return pairs_; }

  std::string ledger_text() const {
    std::ostringstream os;
    auto row = [&](const KeyPool& p) {
      os << p.id << " generated=" << p.generated << " credited=" << p.credited << " buffered=" << p.buffered()
         << " consumed=" << p.consumed << " relayed_out=" << p.relayed_out << " discarded=" << p.discarded << "\n";
    };
    for (const auto& l : links_) row(l);
    for (const auto& [id, p] : pairs_) row(p);
    for (const auto& [n, p] : ksa_) row(p);
    auto c = conservation();
    os << "total generated=" << c.generated << " buffered=" << c.buffered << " consumed=" << c.consumed
       << " relay_overhead=" << c.overhead << " conserved=" << (c.holds() ? "yes" : "no")
       << " reuse=" << (no_reuse() ? "none" : "DETECTED") << "\n";
    return os.str();
  }

  // Counters only: bit content is re-derivable from the seeds.
  struct PoolState {
    std::string id;
    std::uint64_t head, tail, generated, credited, consumed, relayed_out, discarded;
    double produced_until_s;
  };
  std::vector<PoolState> export_state() const {
    std::vector<PoolState> out;
    auto put = [&](const KeyPool& p) {
      out.push_back({p.id, p.head, p.tail, p.generated, p.credited, p.consumed, p.relayed_out, p.discarded, p.produced_until_s});
    };
    for (const auto& l : links_) put(l);
    for (const auto& [n, p] : ksa_) put(p);
    for (const auto& [id, p] : pairs_) put(p);
    return out;
  }
  void import_state(const std::vector<PoolState>& st, double now_s, std::uint64_t overhead, std::vector<KeyUse> uses) {
    now_s_ = now_s;
    overhead_ = overhead;
    uses_ = std::move(uses);
    for (const auto& s : st) {
      KeyPool* p = nullptr;
      for (auto& l : links_)
        if (l.id == s.id) p = &l;
      for (auto& [n, k] : ksa_)
        if (k.id == s.id) p = &k;
      if (!p && s.id.rfind("e2e:", 0) == 0) {
        KeyPool np;
        np.id = s.id;
        np.seed = derive_seed(seed_, s.id);
        p = &pairs_.emplace(s.id, np).first->second;
      }
      if (!p) throw ConfigError("saved key state names unknown stream " + s.id);
      p->head = s.head;
      p->tail = s.tail;
      p->generated = s.generated;
      p->credited = s.credited;
      p->consumed = s.consumed;
      p->relayed_out = s.relayed_out;
      p->discarded = s.discarded;
      p->produced_until_s = s.produced_until_s;
    }
  }
  std::uint64_t overhead() const { return overhead_; }

 private:
  static std::string pair_id(const std::string& a, const std::string& b) {
    return a < b ? "e2e:" + a + "|" + b : "e2e:" + b + "|" + a;
  }
  KeyPool& pair_pool(const std::string& a, const std::string& b) {
    auto id = pair_id(a, b);
    auto it = pairs_.find(id);
    if (it != pairs_.end()) return it->second;
    KeyPool p;
    p.id = id;
    p.seed = derive_seed(seed_, id);
    return pairs_.emplace(id, p).first->second;
  }
  std::uint64_t min_capacity(const std::vector<std::size_t>& hops) const {
    std::uint64_t c = UINT64_MAX;
    for (auto h : hops) c = std::min(c, links_[h].capacity);
    return c;
  }
  void wait(double wait_s, double& waited_ms, const std::string& what) {
    if (!std::isfinite(wait_s)) throw KeySupplyError("key exhausted: " + what + " cannot be supplied");
    const double ms = wait_s * 1000.0;
    if (waited_ms + ms > cfg_.max_key_wait_ms) throw KeySupplyError("key exhausted: " + what + " (send refused)");
    waited_ms += ms;
    advance_to(now_s_ + wait_s);
  }
  void record(const KeyPool& p, std::uint64_t n, const std::string& purpose) {
    if (n > 0) uses_.push_back(KeyUse{p.id, p.head, n, purpose});
  }

  NetworkTopology topo_;
  KeynetConfig cfg_;
  std::uint64_t seed_;
  double now_s_ = 0;
  std::vector<KeyPool> links_;
  std::map<std::string, KeyPool> ksa_;
  std::map<std::string, KeyPool> pairs_;
  std::uint64_t overhead_ = 0;
  std::vector<KeyUse> uses_;
};

// RandomSource view of a node's KSA; waits are accumulated for the caller to apply.
class KsaRandom final : public RandomSource {
 public:
  KsaRandom(KeyNetwork& net, std::string node, std::string purpose)
      : net_(net), node_(std::move(node)), purpose_(std::move(purpose)) {}
  BitString bits(std::size_t n) override {
    auto g = net_.take_ksa(node_, n, purpose_);
    waited_ms_ += g.waited_ms;
    drawn_ += n;
    return std::move(g.bits);
  }
  double waited_ms() const { return waited_ms_; }
  std::uint64_t drawn() const { return drawn_; }

 private:
  KeyNetwork& net_;
  std::string node_, purpose_;
  double waited_ms_ = 0;
  std::uint64_t drawn_ = 0;
};

struct ChannelConfig {
  HashScheme scheme = HashScheme::Toeplitz;
  std::size_t k = 256;
};

struct SecureEnvelope {
  std::uint16_t sender = 0;
  std::uint16_t receiver = 0;
  std::uint64_t seq = 0;
  std::uint64_t key_offset = 0;
  std::uint8_t phase = 0;
  Bytes ciphertext;
  MacTag tag;

  static constexpr std::size_t header_size = 2 + 2 + 8 + 8 + 1;

  Bytes authenticated_bytes() const {
    ByteWriter w;
    w.u16(sender).u16(receiver).u64(seq).u64(key_offset).u8(phase).raw(ciphertext);
    return w.take();
  }
  Bytes serialize() const {
    ByteWriter w;
    w.u16(sender).u16(receiver).u64(seq).u64(key_offset).u8(phase).blob(ciphertext);
    w.u16(static_cast<std::uint16_t>(tag.k())).blob(tag.serialize());
    return w.take();
  }
  static SecureEnvelope deserialize(ByteView b) {
    ByteReader r(b);
    SecureEnvelope e;
    e.sender = r.u16();
    e.receiver = r.u16();
    e.seq = r.u64();
    e.key_offset = r.u64();
    e.phase = r.u8();
    e.ciphertext = r.blob();
    const std::size_t k = r.u16();
    e.tag = MacTag::deserialize(r.blob(), k);
    return e;
  }
};

// OTP + Wegman-Carter channels between endpoints placed at network nodes.
class SecureChannels {
 public:
  SecureChannels(KeyNetwork& net, ChannelConfig cfg) : net_(net), cfg_(cfg) {}

  const ChannelConfig& config() const { return cfg_; }

  std::uint64_t key_cost(std::size_t plaintext_bytes) const {
    const std::size_t auth_bits = (SecureEnvelope::header_size + plaintext_bytes) * 8;
    return plaintext_bytes * 8 + WcKey::key_bits(cfg_.scheme, cfg_.k, auth_bits);
  }

  // Seals `plaintext`; returns the envelope and how long the sender waited for key.
  std::pair<SecureEnvelope, double> seal(std::uint16_t from, const std::string& from_node, std::uint16_t to,
                                         const std::string& to_node, std::uint8_t phase, ByteView plaintext) {
    if (from_node == to_node) throw ConfigError("co-located endpoints do not use QKD channels");
    const std::uint64_t cost = key_cost(plaintext.size());
    auto grant = net_.take_pair_key(from_node, to_node, cost,
                                    "channel:" + std::to_string(from) + ">" + std::to_string(to));
    SecureEnvelope e;
    e.sender = from;
    e.receiver = to;
    e.seq = ++send_seq_[{from, to}];
    e.key_offset = grant.offset;
    e.phase = phase;
    const std::size_t pad_bits = plaintext.size() * 8;
    BitString pt = BitString::from_bytes(plaintext);
    e.ciphertext = (pt ^ grant.bits.slice(0, pad_bits)).bytes();
    WcKey key(cfg_.scheme, cfg_.k, e.authenticated_bytes().size() * 8, grant.bits.slice(pad_bits, cost - pad_bits));
    e.tag = wc_tag(key, e.authenticated_bytes());
    grant.bits.wipe();
    return {std::move(e), grant.waited_ms};
  }

  // Verifies then decrypts. Each (sender, receiver) sequence number is accepted once, in increasing order.
  Bytes open(const std::string& from_node, const std::string& to_node, const SecureEnvelope& e) {
    auto& last = recv_seq_[{e.sender, e.receiver}];
    if (e.seq <= last) throw ReplayFailure("sequence regression on channel " + std::to_string(e.sender) + ">" +
                                           std::to_string(e.receiver));
    const std::uint64_t cost = key_cost(e.ciphertext.size());
    BitString key_bits = net_.pair_key_at(from_node, to_node, e.key_offset, cost);
    const std::size_t pad_bits = e.ciphertext.size() * 8;
    Bytes auth = e.authenticated_bytes();
    WcKey key(cfg_.scheme, cfg_.k, auth.size() * 8, key_bits.slice(pad_bits, cost - pad_bits));
    if (!wc_verify(key, auth, e.tag)) throw IntegrityFailure("envelope failed Wegman-Carter verification");
    last = e.seq;
    BitString pt = BitString::from_bytes(e.ciphertext) ^ key_bits.slice(0, pad_bits);
    key_bits.wipe();
    return pt.bytes();
  }

  std::map<std::pair<std::uint16_t, std::uint16_t>, std::uint64_t> send_sequences() const { return send_seq_; }
  std::map<std::pair<std::uint16_t, std::uint16_t>, std::uint64_t> recv_sequences() const { return recv_seq_; }
  void restore_sequences(std::map<std::pair<std::uint16_t, std::uint16_t>, std::uint64_t> s,
                         std::map<std::pair<std::uint16_t, std::uint16_t>, std::uint64_t> r) {
    send_seq_ = std::move(s);
    recv_seq_ = std::move(r);
  }

 private:
  KeyNetwork& net_;
  ChannelConfig cfg_;
  std::map<std::pair<std::uint16_t, std::uint16_t>, std::uint64_t> send_seq_, recv_seq_;
};

}  // namespace qss
