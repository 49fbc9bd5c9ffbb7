#pragma once

// Pedersen-commitment share renewal: zero-constant renewal polynomials, commitments,
// recipient-side verification, accusation and share update.

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "qss/bytes.hpp"
#include "qss/error.hpp"
#include "qss/field.hpp"
#include "qss/random.hpp"
#include "qss/spss.hpp"
#include "qss/uhash.hpp"

namespace qss {

// Precomputed powers base^(v * 2^(w*k)) mod p for fixed-base exponentiation.
class FixedBaseTable {
 public:
  FixedBaseTable(BigInt base, BigInt modulus, std::size_t exponent_bits, unsigned window = 8)
      : modulus_(std::move(modulus)), window_(window) {
    const std::size_t windows = (exponent_bits + window - 1) / window;
    const std::size_t span = std::size_t{1} << window;
    table_.resize(windows);
    BigInt step = base % modulus_;
    for (std::size_t k = 0; k < windows; ++k) {
      auto& row = table_[k];
      row.resize(span);
      row[0] = 1;
      for (std::size_t v = 1; v < span; ++v) row[v] = row[v - 1] * step % modulus_;
      step = row[span - 1] * step % modulus_;
    }
  }

  BigInt pow(const BigInt& exponent) const {
    if (sgn(exponent) < 0) throw ConfigError("negative exponent");
    if (bigint::bit_length(exponent) > table_.size() * window_) throw ConfigError("exponent exceeds table range");
    BigInt acc = 1;
    const std::size_t bits = bigint::bit_length(exponent);
    for (std::size_t k = 0; k * window_ < bits; ++k) {
      unsigned v = 0;
      for (unsigned b = 0; b < window_; ++b)
        if (mpz_tstbit(exponent.get_mpz_t(), k * window_ + b)) v |= 1u << b;
      if (v != 0) acc = acc * table_[k][v] % modulus_;
    }
    return acc;
  }

 private:
  BigInt modulus_;
  unsigned window_;
  std::vector<std::vector<BigInt>> table_;
};

class RenewalGroupConfig {
 public:
  RenewalGroupConfig(std::string name, BigInt p, BigInt q, BigInt g, BigInt h)
      : name_(std::move(name)), p_(std::move(p)), q_(std::move(q)), g_(std::move(g)), h_(std::move(h)) {
    validate();
  }

  // p = 23, q = 11, g = 2, h = 8.
  static RenewalGroupConfig toy() { return RenewalGroupConfig("toy-23", 23, 11, 2, 8); }

  static RenewalGroupConfig modp_1024_160() {
    return with_derived_h(
        "modp-1024-160",
        "B10B8F96A080E01DDE92DE5EAE5D54EC52C99FBCFB06A3C69A6A9DCA52D23B616073E28675A23D189838EF1E2EE652C013ECB4AEA9061123"
        "24975C3CD49B83BFACCBDD7D90C4BD7098488E9C219A73724EFFD6FAE5644738FAA31A4FF55BCCC0A151AF5F0DC8B4BD45BF37DF365C1A65"
        "E68CFDA76D4DA708DF1FB2BC2E4A4371",
        "F518AA8781A8DF278ABA4E7D64B7CB9D49462353",
        "A4D1CBD5C3FD34126765A442EFB99905F8104DD258AC507FD6406CFF14266D31266FEA1E5C41564B777E690F5504F213160217B4B01B886A"
        "5E91547F9E2749F4D7FBD7D3B9A92EE1909D0D2263F80A76A6A24C087A091F531DBF0A0169B6A28AD662A4D18E73AFA32D779D5918D08BC8"
        "858F4DCEF97C2A24855E6EEB22B3B2E5");
  }

  static RenewalGroupConfig modp_2048_224() {
    return with_derived_h(
        "modp-2048-224",
        "AD107E1E9123A9D0D660FAA79559C51FA20D64E5683B9FD1B54B1597B61D0A75E6FA141DF95A56DBAF9A3C407BA1DF15EB3D688A309C180E"
        "1DE6B85A1274A0A66D3F8152AD6AC2129037C9EDEFDA4DF8D91E8FEF55B7394B7AD5B7D0B6C12207C9F98D11ED34DBF6C6BA0B2C8BBC27BE"
        "6A00E0A0B9C49708B3BF8A317091883681286130BC8985DB1602E714415D9330278273C7DE31EFDC7310F7121FD5A07415987D9ADC0A486D"
        "CDF93ACC44328387315D75E198C641A480CD86A1B9E587E8BE60E69CC928B2B9C52172E413042E9B23F10B0E16E79763C9B53DCF4BA80A29"
        "E3FB73C16B8E75B97EF363E2FFA31F71CF9DE5384E71B81C0AC4DFFE0C10E64F",
        "801C0D34C58D93FE997177101F80535A4738CEBCBF389A99B36371EB",
        "AC4032EF4F2D9AE39DF30B5C8FFDAC506CDEBE7B89998CAF74866A08CFE4FFE3A6824A4E10B9A6F0DD921F01A70C4AFAAB739D7700C29F52"
        "C57DB17C620A8652BE5E9001A8D66AD7C17669101999024AF4D027275AC1348BB8A762D0521BC98AE247150422EA1ED409939D54DA7460CD"
        "B5F6C6B250717CBEF180EB34118E98D119529A45D6F834566E3025E316A330EFBB77A86F0C1AB15B051AE3D428C8F8ACB70A8137150B8EEB"
        "10E183EDD19963DDD9E263E4770589EF6AA21E7F5F2FF381B539CCE3409D13CD566AFBB48D6C019181E1BCFE94B30269EDFE72FE9B6AA4BD"
        "7B5A0F1C71CFFF4C19C418E1F6EC017981BC087F2A7065B384B890D3191F2BFA");
  }

  static RenewalGroupConfig modp_2048_256() {
    return with_derived_h(
        "modp-2048-256",
        "87A8E61DB4B6663CFFBBD19C651959998CEEF608660DD0F25D2CEED4435E3B00E00DF8F1D61957D4FAF7DF4561B2AA3016C3D91134096FAA"
        "3BF4296D830E9A7C209E0C6497517ABD5A8A9D306BCF67ED91F9E6725B4758C022E0B1EF4275BF7B6C5BFC11D45F9088B941F54EB1E59BB8"
        "BC39A0BF12307F5C4FDB70C581B23F76B63ACAE1CAA6B7902D52526735488A0EF13C6D9A51BFA4AB3AD8347796524D8EF6A167B5A41825D9"
        "67E144E5140564251CCACB83E6B486F6B3CA3F7971506026C0B857F689962856DED4010ABD0BE621C3A3960A54E710C375F26375D7014103"
        "A4B54330C198AF126116D2276E11715F693877FAD7EF09CADB094AE91E1A1597",
        "8CF83642A709A097B447997640129DA299B1A47D1EB3750BA308B0FE64F5FBD3",
        "3FB32C9B73134D0B2E77506660EDBD484CA7B18F21EF205407F4793A1A0BA12510DBC15077BE463FFF4FED4AAC0BB555BE3A6C1B0C6B47B1"
        "BC3773BF7E8C6F62901228F8C28CBB18A55AE31341000A650196F931C77A57F2DDF463E5E9EC144B777DE62AAAB8A8628AC376D282D6ED38"
        "64E67982428EBC831D14348F6F2F9193B5045AF2767164E1DFC967C1FB3F2E55A4BD1BFFE83B9C80D052B985D182EA0ADB2A3B7313D3FE14"
        "C8484B1E052588B9B7D2BBD2DF016199ECD06E1557CD0915B3353BBB64E0EC377FD028370DF92B52C7891428CDC67EB6184B523D1DB246C3"
        "2F63078490F00EF8D647D148D47954515E2327CFEF98C582664B4C0F6CC41659");
  }

  static RenewalGroupConfig by_name(const std::string& name) {
    if (name == "toy-23") return toy();
    if (name == "modp-1024-160") return modp_1024_160();
    if (name == "modp-2048-224") return modp_2048_224();
    if (name == "modp-2048-256") return modp_2048_256();
    throw ConfigError("unknown renewal group: " + name);
  }

  // h = x^((p-1)/q) mod p with x hashed from a public nonce.
  static BigInt derive_h(const BigInt& p, const BigInt& q, std::string_view nonce) {
    const BigInt cofactor = (p - 1) / q;
    for (std::uint32_t counter = 0;; ++counter) {
      ByteWriter w;
      w.str(nonce).u32(counter);
      BigInt x;
      Bytes stream;
      for (std::uint32_t block = 0; stream.size() * 8 < bigint::bit_length(p) + 64; ++block) {
        ByteWriter b;
        b.raw(w.bytes()).u32(block);
        auto d = cr_hash(b.bytes());
        stream.insert(stream.end(), d.begin(), d.end());
      }
      x = bigint::from_bytes(stream) % p;
      if (x < 2) continue;
      BigInt h = bigint::mod_exp(x, cofactor, p);
      if (h != 1) return h;
    }
  }

  const std::string& name() const { return name_; }
  const BigInt& p() const { return p_; }
  const BigInt& q() const { return q_; }
  const BigInt& g() const { return g_; }
  const BigInt& h() const { return h_; }
  std::size_t element_bytes() const { return (bigint::bit_length(p_) + 7) / 8; }

  FieldPtr share_field() const {
    std::call_once(tables_->field_once, [&] { tables_->field = PrimeFieldConfig::from_modulus(q_); });
    return tables_->field;
  }

  bool in_subgroup(const BigInt& x) const {
    return x > 0 && x < p_ && bigint::mod_exp(x, q_, p_) == 1;
  }

  BigInt pow_g(const BigInt& e) const { return table(0).pow(reduce_exponent(e)); }
  BigInt pow_h(const BigInt& e) const { return table(1).pow(reduce_exponent(e)); }

  // g^a h^b mod p.
  BigInt commit(const BigInt& a, const BigInt& b) const { return pow_g(a) * pow_h(b) % p_; }

  void validate() const {
    if (!bigint::is_probable_prime(p_) || !bigint::is_probable_prime(q_)) throw ConfigError("renewal group: p and q must be prime");
    if ((p_ - 1) % q_ != 0) throw ConfigError("renewal group: q must divide p-1");
    for (const BigInt* e : {&g_, &h_}) {
      if (*e <= 1 || *e >= p_) throw ConfigError("renewal group: generator out of range");
      if (bigint::mod_exp(*e, q_, p_) != 1) throw ConfigError("renewal group: generator outside the order-q subgroup");
    }
    if (g_ == h_) throw ConfigError("renewal group: g and h must differ");
  }

 private:
  static RenewalGroupConfig with_derived_h(std::string name, const char* p_hex, const char* q_hex, const char* g_hex) {
    BigInt p(p_hex, 16), q(q_hex, 16), g(g_hex, 16);
    BigInt h = derive_h(p, q, "qss renewal h/" + name);
    return RenewalGroupConfig(std::move(name), std::move(p), std::move(q), std::move(g), std::move(h));
  }

  BigInt reduce_exponent(const BigInt& e) const {
    BigInt r = e % q_;
    if (sgn(r) < 0) r += q_;
    return r;
  }

  struct Tables {
    std::once_flag g_once, h_once, field_once;
    std::unique_ptr<FixedBaseTable> g, h;
    FieldPtr field;
  };

  const FixedBaseTable& table(int which) const {
    const std::size_t bits = bigint::bit_length(q_);
    if (which == 0) {
      std::call_once(tables_->g_once, [&] { tables_->g = std::make_unique<FixedBaseTable>(g_, p_, bits); });
      return *tables_->g;
    }
    std::call_once(tables_->h_once, [&] { tables_->h = std::make_unique<FixedBaseTable>(h_, p_, bits); });
    return *tables_->h;
  }

  std::string name_;
  BigInt p_, q_, g_, h_;
  std::shared_ptr<Tables> tables_ = std::make_shared<Tables>();
};

// Commitments for one share track: eps_j = g^{a_j} h^{b_j}, j = 1..degree.
struct TrackCommitments {
  std::vector<BigInt> eps;
};

struct RenewalBroadcast {
  HolderIndex sender = 0;
  std::uint64_t round = 0;
  std::vector<TrackCommitments> tracks;
};

// (P_{i1}(c), P_{i2}(c)) for every track, destined for recipient c.
struct RenewalSharePair {
  HolderIndex sender = 0;
  HolderIndex recipient = 0;
  std::uint64_t round = 0;
  std::vector<std::pair<BigInt, BigInt>> values;
};

struct RenewalPacket {
  RenewalBroadcast broadcast;
  std::map<HolderIndex, RenewalSharePair> shares;
};

// A coefficient overridden after commitments are fixed; used for fault injection.
struct CoefficientPerturbation {
  std::size_t track = 0;
  int which = 1;          // 1 for P_{i1}, 2 for P_{i2}
  std::size_t index = 1;  // coefficient index, 1..degree
  BigInt delta;
};

inline BigInt eval_exponent_poly(const std::vector<BigInt>& coeffs, const BigInt& x, const BigInt& q) {
  BigInt acc = 0;
  for (std::size_t k = coeffs.size(); k-- > 0;) acc = (acc * x + coeffs[k]) % q;
  return acc;
}

// Draws P_{i1}, P_{i2} per track (zero constant term, given degree) and commits to their coefficients.
inline RenewalPacket gen_renewal(HolderIndex sender, std::uint64_t round, const std::vector<std::size_t>& track_degrees,
                                 const std::vector<HolderIndex>& recipients, const RenewalGroupConfig& group,
                                 RandomSource& rng, const std::optional<CoefficientPerturbation>& perturb = std::nullopt) {
  RenewalPacket pkt;
  pkt.broadcast.sender = sender;
  pkt.broadcast.round = round;
  std::vector<std::vector<BigInt>> p1(track_degrees.size()), p2(track_degrees.size());
  for (std::size_t t = 0; t < track_degrees.size(); ++t) {
    const std::size_t d = track_degrees[t];
    p1[t].assign(d + 1, BigInt(0));
    p2[t].assign(d + 1, BigInt(0));
    TrackCommitments tc;
    for (std::size_t j = 1; j <= d; ++j) {
      p1[t][j] = bigint::uniform_below(group.q(), rng);
      p2[t][j] = bigint::uniform_below(group.q(), rng);
      tc.eps.push_back(group.commit(p1[t][j], p2[t][j]));
    }
    pkt.broadcast.tracks.push_back(std::move(tc));
  }
  if (perturb) {
    auto& poly = perturb->which == 1 ? p1.at(perturb->track) : p2.at(perturb->track);
    if (perturb->index == 0 || perturb->index >= poly.size()) throw ConfigError("perturbation index out of range");
    poly[perturb->index] = ((poly[perturb->index] + perturb->delta) % group.q() + group.q()) % group.q();
  }
  for (HolderIndex c : recipients) {
    RenewalSharePair sp{sender, c, round, {}};
    const BigInt x(static_cast<unsigned long>(c));
    for (std::size_t t = 0; t < track_degrees.size(); ++t)
      sp.values.emplace_back(eval_exponent_poly(p1[t], x, group.q()), eval_exponent_poly(p2[t], x, group.q()));
    pkt.shares.emplace(c, std::move(sp));
  }
  return pkt;
}

// g^{s1} h^{s2} == prod_j eps_j^{i^j} (mod p).
inline bool verify_renewal_pair(HolderIndex recipient, const TrackCommitments& tc, const BigInt& s1, const BigInt& s2,
                                const RenewalGroupConfig& group) {
  const BigInt& p = group.p();
  BigInt rhs = 1, ipow = 1;
  const BigInt i(static_cast<unsigned long>(recipient));
  for (const auto& e : tc.eps) {
    ipow = ipow * i % group.q();
    rhs = rhs * bigint::mod_exp(e, ipow, p) % p;
  }
  return group.commit(s1, s2) == rhs;
}

inline bool verify_renewal_share(HolderIndex recipient, const RenewalBroadcast& b, const RenewalSharePair& pair,
                                 const RenewalGroupConfig& group, const std::vector<std::size_t>& track_degrees) {
  if (pair.sender != b.sender || pair.recipient != recipient || pair.round != b.round) return false;
  if (b.tracks.size() != track_degrees.size() || pair.values.size() != track_degrees.size()) return false;
  for (std::size_t t = 0; t < b.tracks.size(); ++t) {
    if (b.tracks[t].eps.size() != track_degrees[t]) return false;
    for (const auto& e : b.tracks[t].eps)
      if (e <= 0 || e >= group.p()) return false;
    if (!verify_renewal_pair(recipient, b.tracks[t], pair.values[t].first, pair.values[t].second, group)) return false;
  }
  return true;
}

struct Accusation {
  HolderIndex accuser = 0;
  HolderIndex accused = 0;
};

struct RenewalOutcome {
  bool accepted = false;
  std::uint64_t round = 0;
  std::vector<Accusation> accusations;
};

// Adds sum_d (P_{d1}(i) + P_{d2}(i)) to every track share.
inline void apply_renewal(std::vector<FieldElement*>& tracks, const std::vector<RenewalSharePair>& received) {
  for (const auto& pair : received) {
    if (pair.values.size() != tracks.size()) throw ProtocolError("renewal pair track count mismatch");
    for (std::size_t t = 0; t < tracks.size(); ++t) {
      const auto& f = tracks[t]->field();
      *tracks[t] += FieldElement(f, pair.values[t].first) + FieldElement(f, pair.values[t].second);
    }
  }
}

// Share tracks of an SPSS fragment: data blocks at degree t-1, then the password at degree t-2.
inline std::vector<std::size_t> spss_track_degrees(const HolderShareSet& s, const SpssParams& params) {
  std::vector<std::size_t> d(s.data_shares.size(), params.data_degree());
  d.push_back(params.password_degree());
  return d;
}

inline std::vector<FieldElement*> spss_tracks(HolderShareSet& s) {
  std::vector<FieldElement*> out;
  for (auto& e : s.data_shares) out.push_back(&e);
  out.push_back(&s.password_share);
  return out;
}

struct RenewalFault {
  HolderIndex sender = 0;
  HolderIndex recipient = 0;  // 0 = perturb the polynomial itself (all recipients see it)
  std::optional<CoefficientPerturbation> perturb;
};

// Local synchronous round: all packets, then all verifications, then unanimous update.
inline RenewalOutcome renewal_round(std::map<HolderIndex, HolderShareSet*>& holders, std::uint64_t round,
                                    const SpssParams& params, const RenewalGroupConfig& group,
                                    std::map<HolderIndex, RandomSource*>& rngs,
                                    const std::optional<RenewalFault>& fault = std::nullopt) {
  RenewalOutcome out;
  out.round = round;
  if (holders.empty()) {
    out.accepted = true;
    return out;
  }
  if (!(*params.field == *group.share_field())) throw ConfigError("renewal needs the share field to equal the group order");
  std::vector<HolderIndex> ids;
  for (const auto& [h, s] : holders) ids.push_back(h);
  const auto degrees = spss_track_degrees(*holders.begin()->second, params);
  for (const auto& [h, s] : holders)
    if (spss_track_degrees(*s, params) != degrees) throw ProtocolError("holders disagree on share layout");

  std::map<HolderIndex, RenewalPacket> packets;
  for (HolderIndex h : ids) {
    std::optional<CoefficientPerturbation> perturb;
    if (fault && fault->sender == h && fault->recipient == 0) perturb = fault->perturb;
    packets.emplace(h, gen_renewal(h, round, degrees, ids, group, *rngs.at(h), perturb));
  }
  if (fault && fault->recipient != 0) {
    auto& v = packets.at(fault->sender).shares.at(fault->recipient).values.at(0).first;
    v = (v + 1) % group.q();
  }
  for (HolderIndex i : ids)
    for (HolderIndex d : ids)
      if (!verify_renewal_share(i, packets.at(d).broadcast, packets.at(d).shares.at(i), group, degrees))
        out.accusations.push_back({i, d});
  if (!out.accusations.empty()) return out;

  for (HolderIndex i : ids) {
    std::vector<RenewalSharePair> received;
    for (HolderIndex d : ids) received.push_back(packets.at(d).shares.at(i));
    auto tracks = spss_tracks(*holders.at(i));
    apply_renewal(tracks, received);
  }
  out.accepted = true;
  return out;
}

namespace wire {

inline Bytes encode(const RenewalBroadcast& b, const RenewalGroupConfig& g) {
  ByteWriter w;
  w.u32(b.sender).u64(b.round).u32(static_cast<std::uint32_t>(b.tracks.size()));
  for (const auto& t : b.tracks) {
    w.u32(static_cast<std::uint32_t>(t.eps.size()));
    for (const auto& e : t.eps) w.raw(bigint::to_bytes(e, g.element_bytes()));
  }
  return w.take();
}
inline RenewalBroadcast decode_broadcast(ByteView bytes, const RenewalGroupConfig& g) {
  ByteReader r(bytes);
  RenewalBroadcast b;
  b.sender = r.u32();
  b.round = r.u64();
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    TrackCommitments t;
    std::uint32_t k = r.u32();
    for (std::uint32_t j = 0; j < k; ++j) t.eps.push_back(bigint::from_bytes(r.raw(g.element_bytes())));
    b.tracks.push_back(std::move(t));
  }
  return b;
}

inline Bytes encode(const RenewalSharePair& s, const RenewalGroupConfig& g) {
  const std::size_t qb = (bigint::bit_length(g.q()) + 7) / 8;
  ByteWriter w;
  w.u32(s.sender).u32(s.recipient).u64(s.round).u32(static_cast<std::uint32_t>(s.values.size()));
  for (const auto& [a, b] : s.values) {
    w.raw(bigint::to_bytes(a, qb));
    w.raw(bigint::to_bytes(b, qb));
  }
  return w.take();
}
inline RenewalSharePair decode_share_pair(ByteView bytes, const RenewalGroupConfig& g) {
  const std::size_t qb = (bigint::bit_length(g.q()) + 7) / 8;
  ByteReader r(bytes);
  RenewalSharePair s;
  s.sender = r.u32();
  s.recipient = r.u32();
  s.round = r.u64();
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    BigInt a = bigint::from_bytes(r.raw(qb));
    BigInt b = bigint::from_bytes(r.raw(qb));
    s.values.emplace_back(std::move(a), std::move(b));
  }
  return s;
}

}  // namespace wire

}  // namespace qss
