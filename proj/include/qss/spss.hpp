#pragma once

// Single-password-authenticated secret sharing: share generation with a password MAC block,
// precomputed random/zero share tuples, and masked reconstruction gated by the password.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

#include "qss/bytes.hpp"
#include "qss/error.hpp"
#include "qss/field.hpp"
#include "qss/random.hpp"

namespace qss {

using HolderIndex = std::uint32_t;
using SecretId = std::uint64_t;
using TupleId = std::uint64_t;

struct SpssParams {
  std::size_t threshold = 3;
  std::size_t holders = 4;
  FieldPtr field;

  void validate() const {
    if (!field) throw ConfigError("spss: field not configured");
    if (threshold < 2 || threshold > holders) throw ConfigError("spss: need 1 < threshold <= holders");
    if (2 * (threshold - 2) > threshold - 1) throw ConfigError("spss: masked reconstruction supports threshold <= 3");
    if (BigInt(static_cast<unsigned long>(holders)) >= field->modulus())
      throw ConfigError("spss: holder indices must be distinct nonzero field elements");
  }
  std::size_t block_bits() const { return field->block_bits(); }
  std::size_t data_degree() const { return threshold - 1; }
  std::size_t password_degree() const { return threshold - 2; }
};

// Data split into (m-1)-bit blocks, last block zero-padded.
inline std::vector<FieldElement> split_blocks(ByteView data, const PrimeFieldConfig& f) {
  const std::size_t w = f.block_bits();
  BitString bits = BitString::from_bytes(data);
  std::vector<FieldElement> out;
  out.reserve(bits.size() / w + 1);
  for (std::size_t start = 0; start < bits.size(); start += w) {
    std::size_t len = std::min(w, bits.size() - start);
    BigInt v = bigint::from_bits(bits.slice(start, len));
    v <<= static_cast<mp_bitcnt_t>(w - len);
    out.emplace_back(f, std::move(v));
  }
  return out;
}

inline Bytes join_blocks(const std::vector<FieldElement>& blocks, std::size_t byte_length, const PrimeFieldConfig& f) {
  const std::size_t w = f.block_bits();
  BitString bits;
  for (const auto& b : blocks) {
    if (bigint::bit_length(b.value()) > w) throw ProtocolError("reconstructed block exceeds block width");
    bits.append(bigint::to_bits(b.value(), w));
  }
  if (bits.size() < byte_length * 8) throw ProtocolError("reconstructed data shorter than recorded length");
  Bytes out = bits.bytes();
  out.resize(byte_length);
  return out;
}

// Password bytes read as a big-endian integer of at most m-1 bits; zero is rejected.
inline FieldElement password_from_bytes(ByteView password, const PrimeFieldConfig& f) {
  BigInt v = bigint::from_bytes(password);
  if (bigint::bit_length(v) > f.block_bits()) throw ConfigError("password longer than m-1 bits");
  FieldElement p(f, v);
  if (p.is_zero()) throw ConfigError("password must not be zero");
  return p;
}

// sum_{i=1..l} D_i P^i.
inline FieldElement password_mac(const std::vector<FieldElement>& blocks, const FieldElement& password) {
  FieldElement acc = FieldElement::zero(password.field());
  for (std::size_t i = blocks.size(); i-- > 0;) {
    acc += blocks[i];
    acc *= password;
  }
  return acc;
}

struct RegisteredSecret {
  std::vector<FieldElement> blocks;
  FieldElement mac_block;
  std::uint64_t byte_length = 0;
  std::uint64_t t1 = 0;
};

// One precomputation round as seen by one holder: f_{R_m}(j) and f_{0_m}(j) from every participant m.
struct PrecomputedTuple {
  TupleId id = 0;
  std::map<HolderIndex, FieldElement> r_shares;
  std::map<HolderIndex, FieldElement> zero_shares;
  bool consumed = false;

  std::vector<HolderIndex> participants() const {
    std::vector<HolderIndex> out;
    for (const auto& [m, v] : r_shares) out.push_back(m);
    return out;
  }
  void wipe(const PrimeFieldConfig& f) {
    for (auto& [m, v] : r_shares) v = FieldElement::zero(f);
    for (auto& [m, v] : zero_shares) v = FieldElement::zero(f);
    r_shares.clear();
    zero_shares.clear();
  }
};

struct HolderShareSet {
  SecretId secret = 0;
  HolderIndex holder = 0;
  std::uint64_t byte_length = 0;
  std::vector<FieldElement> data_shares;  // f_{D_i}(j), i = 1..l+1
  FieldElement password_share;            // f_P(j)
  std::vector<PrecomputedTuple> tuples;

  std::size_t unconsumed() const {
    return static_cast<std::size_t>(std::count_if(tuples.begin(), tuples.end(), [](const auto& t) { return !t.consumed; }));
  }
  PrecomputedTuple* find_tuple(TupleId id) {
    for (auto& t : tuples)
      if (t.id == id) return &t;
    return nullptr;
  }
  std::unordered_map<TupleId, PrecomputedTuple*> tuple_index() {
    std::unordered_map<TupleId, PrecomputedTuple*> out;
    out.reserve(tuples.size());
    for (auto& t : tuples) out.emplace(t.id, &t);
    return out;
  }
};

struct SpssRegistration {
  RegisteredSecret secret;
  std::vector<HolderShareSet> fragments;  // index h-1 goes to holder h
};

// Splits `data`, appends the password MAC block, and shares every block and the password.
inline SpssRegistration spss_register(SecretId id, ByteView data, const FieldElement& password, const SpssParams& params,
                                      RandomSource& rng) {
  params.validate();
  const auto& f = *params.field;
  if (data.empty()) throw ConfigError("spss: data must be non-empty");
  if (!(password.field() == f)) throw ConfigError("spss: password from another field");
  if (password.is_zero()) throw ConfigError("spss: password must not be zero");

  SpssRegistration reg;
  reg.secret.blocks = split_blocks(data, f);
  reg.secret.mac_block = password_mac(reg.secret.blocks, password);
  reg.secret.byte_length = data.size();

  reg.fragments.resize(params.holders);
  for (std::size_t h = 0; h < params.holders; ++h) {
    reg.fragments[h].secret = id;
    reg.fragments[h].holder = static_cast<HolderIndex>(h + 1);
    reg.fragments[h].byte_length = data.size();
    reg.fragments[h].data_shares.reserve(reg.secret.blocks.size() + 1);
  }
  std::vector<FieldElement> xs;
  for (std::size_t h = 1; h <= params.holders; ++h) xs.emplace_back(f, static_cast<long>(h));

  auto share_block = [&](const FieldElement& block) {
    auto poly = random_polynomial(params.data_degree(), block, rng);
    for (std::size_t h = 0; h < params.holders; ++h) reg.fragments[h].data_shares.push_back(poly(xs[h]));
  };
  for (const auto& b : reg.secret.blocks) share_block(b);
  share_block(reg.secret.mac_block);

  auto pw_poly = random_polynomial(params.password_degree(), password, rng);
  for (std::size_t h = 0; h < params.holders; ++h) reg.fragments[h].password_share = pw_poly(xs[h]);
  return reg;
}

// Holder m's contribution to one precomputation round: shares of a fresh random R_m (degree t-2)
// and of zero (degree t-1) for every participant.
struct PrecomputeContribution {
  HolderIndex from = 0;
  TupleId tuple = 0;
  std::map<HolderIndex, std::pair<FieldElement, FieldElement>> to;  // recipient -> (f_Rm(c), f_0m(c))
};

inline PrecomputeContribution make_precompute_contribution(HolderIndex from, TupleId tuple,
                                                           const std::vector<HolderIndex>& participants,
                                                           const SpssParams& params, RandomSource& rng) {
  const auto& f = *params.field;
  auto r_poly = random_polynomial(params.password_degree(), FieldElement::random(f, rng), rng);
  auto z_poly = random_polynomial(params.data_degree(), FieldElement::zero(f), rng);
  PrecomputeContribution c;
  c.from = from;
  c.tuple = tuple;
  for (HolderIndex m : participants) {
    FieldElement x(f, static_cast<long>(m));
    c.to.emplace(m, std::pair{r_poly(x), z_poly(x)});
  }
  return c;
}

// Assembles holder j's tuple from every participant's contribution; all-or-nothing.
inline PrecomputedTuple assemble_tuple(HolderIndex j, TupleId tuple, const std::vector<PrecomputeContribution>& contributions,
                                       const std::vector<HolderIndex>& participants) {
  PrecomputedTuple t;
  t.id = tuple;
  for (HolderIndex m : participants) {
    auto it = std::find_if(contributions.begin(), contributions.end(), [&](const auto& c) { return c.from == m; });
    if (it == contributions.end() || it->tuple != tuple) throw ProtocolError("precompute round missing a participant");
    auto share = it->to.find(j);
    if (share == it->to.end()) throw ProtocolError("precompute contribution lacks this holder's share");
    t.r_shares.emplace(m, share->second.first);
    t.zero_shares.emplace(m, share->second.second);
  }
  return t;
}

// Runs one round locally among `participants`, appending one tuple to each of their share sets.
inline void precompute_round(std::map<HolderIndex, HolderShareSet*>& sets, const std::vector<HolderIndex>& participants,
                             TupleId tuple, const SpssParams& params, std::map<HolderIndex, RandomSource*>& rngs) {
  std::vector<PrecomputeContribution> contributions;
  for (HolderIndex m : participants) {
    if (!sets.contains(m) || !rngs.contains(m)) throw ProtocolError("precompute participant unavailable");
    contributions.push_back(make_precompute_contribution(m, tuple, participants, params, *rngs.at(m)));
  }
  std::vector<PrecomputedTuple> built;
  for (HolderIndex j : participants) built.push_back(assemble_tuple(j, tuple, contributions, participants));
  for (std::size_t i = 0; i < participants.size(); ++i) sets.at(participants[i])->tuples.push_back(std::move(built[i]));
}

struct ReconstructionRequest {
  SecretId secret = 0;
  HolderIndex holder = 0;
  std::vector<HolderIndex> subset;  // L
  FieldElement password_share;      // f_P'(j)
  std::vector<TupleId> tuples;      // one per block, l+1 entries
};

inline void check_subset(const std::vector<HolderIndex>& subset, const SpssParams& params) {
  if (subset.size() != params.threshold) throw ProtocolError("improper request: |L| must equal the threshold");
  std::set<HolderIndex> seen;
  for (HolderIndex j : subset) {
    if (j == 0 || j > params.holders) throw ProtocolError("improper request: unknown holder index");
    if (!seen.insert(j).second) throw ProtocolError("improper request: duplicate holder index");
  }
}

// Shares P' with a fresh degree-(t-2) polynomial, one request per holder in L.
inline std::vector<ReconstructionRequest> spss_request(SecretId id, const FieldElement& password_attempt,
                                                       const std::vector<HolderIndex>& subset,
                                                       const std::vector<TupleId>& tuples, const SpssParams& params,
                                                       RandomSource& rng) {
  params.validate();
  check_subset(subset, params);
  auto poly = random_polynomial(params.password_degree(), password_attempt, rng);
  std::vector<ReconstructionRequest> out;
  for (HolderIndex j : subset)
    out.push_back(ReconstructionRequest{id, j, subset, poly(static_cast<long>(j)), tuples});
  return out;
}

struct MaskedResponse {
  SecretId secret = 0;
  HolderIndex holder = 0;
  std::uint64_t byte_length = 0;
  std::vector<FieldElement> values;  // F_{j,1..l+1}
};

// F_{ji} = (f_P(j) - f_P'(j)) R + Z + f_{D_i}(j), with R and Z summed over m in L from tuple i.
inline MaskedResponse compute_masked_response(const HolderShareSet& set, const ReconstructionRequest& req,
                                              const std::vector<PrecomputedTuple>& tuples) {
  if (tuples.size() != set.data_shares.size()) throw PrecomputationExhausted("one precomputed tuple per block required");
  const auto& f = set.password_share.field();
  MaskedResponse resp{set.secret, set.holder, set.byte_length, {}};
  resp.values.reserve(set.data_shares.size());
  const FieldElement diff = set.password_share - req.password_share;
  for (std::size_t i = 0; i < set.data_shares.size(); ++i) {
    FieldElement r = FieldElement::zero(f), z = FieldElement::zero(f);
    for (HolderIndex m : req.subset) {
      auto ri = tuples[i].r_shares.find(m);
      auto zi = tuples[i].zero_shares.find(m);
      if (ri == tuples[i].r_shares.end() || zi == tuples[i].zero_shares.end())
        throw PrecomputationExhausted("precomputed tuple does not cover the requested subset");
      r += ri->second;
      z += zi->second;
    }
    resp.values.push_back(diff * r + z + set.data_shares[i]);
  }
  return resp;
}

// Picks the tuples named in the request (or the oldest covering ones), marks them consumed and wipes them.
inline std::vector<PrecomputedTuple> take_tuples(HolderShareSet& set, const ReconstructionRequest& req) {
  const std::size_t need = set.data_shares.size();
  std::vector<PrecomputedTuple*> chosen;
  if (!req.tuples.empty()) {
    if (req.tuples.size() != need) throw ProtocolError("request names the wrong number of tuples");
    const auto index = set.tuple_index();
    for (TupleId id : req.tuples) {
      auto it = index.find(id);
      auto* t = it == index.end() ? nullptr : it->second;
      if (t == nullptr || t->consumed) throw PrecomputationExhausted("requested tuple unavailable");
      chosen.push_back(t);
    }
  } else {
    for (auto& t : set.tuples) {
      if (chosen.size() == need) break;
      auto parts = t.participants();
      bool covers = std::all_of(req.subset.begin(), req.subset.end(),
                                [&](HolderIndex m) { return std::find(parts.begin(), parts.end(), m) != parts.end(); });
      if (!t.consumed && covers) chosen.push_back(&t);
    }
    if (chosen.size() != need) throw PrecomputationExhausted("not enough precomputed tuples for reconstruction");
  }
  std::vector<PrecomputedTuple> out;
  for (auto* t : chosen) {
    out.push_back(*t);
    t->consumed = true;
    t->wipe(set.password_share.field());
  }
  return out;
}

inline MaskedResponse holder_respond(HolderShareSet& set, const ReconstructionRequest& req) {
  if (req.secret != set.secret || req.holder != set.holder) throw ProtocolError("request addressed to another share set");
  auto tuples = take_tuples(set, req);
  auto resp = compute_masked_response(set, req, tuples);
  for (auto& t : tuples) t.wipe(set.password_share.field());
  return resp;
}

struct RecoveryResult {
  bool accepted = false;
  std::vector<FieldElement> blocks;  // D_1..D_l when accepted
  Bytes data;
};

// Interpolates every F_i at 0 and accepts iff F_{l+1}(0) = sum_i F_i(0) P'^i.
inline RecoveryResult spss_recover(const std::vector<MaskedResponse>& responses, const FieldElement& password_attempt,
                                   const SpssParams& params) {
  params.validate();
  if (responses.size() != params.threshold) throw ProtocolError("abort: exactly threshold responses required");
  std::vector<HolderIndex> subset;
  for (const auto& r : responses) subset.push_back(r.holder);
  check_subset(subset, params);
  const auto& f = *params.field;
  const std::size_t n_blocks = responses.front().values.size();
  const std::uint64_t byte_length = responses.front().byte_length;
  for (const auto& r : responses)
    if (r.values.size() != n_blocks || r.byte_length != byte_length || r.secret != responses.front().secret)
      throw ProtocolError("inconsistent responses");
  if (n_blocks < 2) throw ProtocolError("response carries no data blocks");

  std::vector<FieldElement> xs;
  for (HolderIndex j : subset) xs.emplace_back(f, static_cast<long>(j));
  auto w = lagrange_coefficients_at_zero(xs);

  std::vector<FieldElement> recovered;
  recovered.reserve(n_blocks);
  for (std::size_t i = 0; i < n_blocks; ++i) {
    FieldElement acc = FieldElement::zero(f);
    for (std::size_t j = 0; j < responses.size(); ++j) acc += w[j] * responses[j].values[i];
    recovered.push_back(std::move(acc));
  }
  FieldElement mac = recovered.back();
  recovered.pop_back();

  RecoveryResult out;
  if (!(password_mac(recovered, password_attempt) == mac)) return out;
  const std::size_t width = f.block_bits();
  for (const auto& b : recovered)
    if (bigint::bit_length(b.value()) > width) return out;
  if (recovered.size() * width < byte_length * 8) return out;
  out.accepted = true;
  out.data = join_blocks(recovered, byte_length, f);
  out.blocks = std::move(recovered);
  return out;
}

// Wire codecs. Field elements are fixed-width big-endian at the field's byte width.
namespace wire {

inline void put(ByteWriter& w, const FieldElement& e) { w.raw(e.to_bytes()); }
inline FieldElement get(ByteReader& r, const PrimeFieldConfig& f) {
  auto b = r.raw(f.byte_width());
  BigInt v = bigint::from_bytes(b);
  if (v >= f.modulus()) throw ProtocolError("field element out of range");
  return FieldElement(f, v);
}

inline void put_elements(ByteWriter& w, const std::vector<FieldElement>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (const auto& e : v) put(w, e);
}
inline std::vector<FieldElement> get_elements(ByteReader& r, const PrimeFieldConfig& f) {
  std::uint32_t n = r.u32();
  if (static_cast<std::size_t>(n) * f.byte_width() > r.remaining()) throw ProtocolError("truncated element list");
  std::vector<FieldElement> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(get(r, f));
  return out;
}

inline void put_tuple(ByteWriter& w, const PrecomputedTuple& t) {
  w.u64(t.id).u8(t.consumed ? 1 : 0).u32(static_cast<std::uint32_t>(t.r_shares.size()));
  for (const auto& [m, v] : t.r_shares) {
    w.u32(m);
    put(w, v);
    put(w, t.zero_shares.at(m));
  }
}
inline PrecomputedTuple get_tuple(ByteReader& r, const PrimeFieldConfig& f) {
  PrecomputedTuple t;
  t.id = r.u64();
  t.consumed = r.u8() != 0;
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    HolderIndex m = r.u32();
    t.r_shares.emplace(m, get(r, f));
    t.zero_shares.emplace(m, get(r, f));
  }
  return t;
}

// Share fragment: secret id, holder index, byte length, data shares, password share, tuples.
inline Bytes encode(const HolderShareSet& s) {
  ByteWriter w;
  w.u64(s.secret).u32(s.holder).u64(s.byte_length);
  put_elements(w, s.data_shares);
  put(w, s.password_share);
  w.u32(static_cast<std::uint32_t>(s.tuples.size()));
  for (const auto& t : s.tuples) put_tuple(w, t);
  return w.take();
}
inline HolderShareSet decode_share_set(ByteView b, const PrimeFieldConfig& f) {
  ByteReader r(b);
  HolderShareSet s;
  s.secret = r.u64();
  s.holder = r.u32();
  s.byte_length = r.u64();
  s.data_shares = get_elements(r, f);
  s.password_share = get(r, f);
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) s.tuples.push_back(get_tuple(r, f));
  if (!r.done()) throw ProtocolError("trailing bytes in share set");
  return s;
}

inline Bytes encode(const PrecomputeContribution& c, HolderIndex recipient) {
  ByteWriter w;
  const auto& [r, z] = c.to.at(recipient);
  w.u32(c.from).u64(c.tuple);
  put(w, r);
  put(w, z);
  return w.take();
}

inline Bytes encode(const ReconstructionRequest& q) {
  ByteWriter w;
  w.u64(q.secret).u32(q.holder).u32(static_cast<std::uint32_t>(q.subset.size()));
  for (auto j : q.subset) w.u32(j);
  put(w, q.password_share);
  w.u32(static_cast<std::uint32_t>(q.tuples.size()));
  for (auto t : q.tuples) w.u64(t);
  return w.take();
}
inline ReconstructionRequest decode_request(ByteView b, const PrimeFieldConfig& f) {
  ByteReader r(b);
  ReconstructionRequest q;
  q.secret = r.u64();
  q.holder = r.u32();
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) q.subset.push_back(r.u32());
  q.password_share = get(r, f);
  std::uint32_t nt = r.u32();
  for (std::uint32_t i = 0; i < nt; ++i) q.tuples.push_back(r.u64());
  return q;
}

inline Bytes encode(const MaskedResponse& m) {
  ByteWriter w;
  w.u64(m.secret).u32(m.holder).u64(m.byte_length);
  put_elements(w, m.values);
  return w.take();
}
inline MaskedResponse decode_response(ByteView b, const PrimeFieldConfig& f) {
  ByteReader r(b);
  MaskedResponse m;
  m.secret = r.u64();
  m.holder = r.u32();
  m.byte_length = r.u64();
  m.values = get_elements(r, f);
  return m;
}

}  // namespace wire

}  // namespace qss
