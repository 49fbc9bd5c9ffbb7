#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "qss/spss.hpp"

using namespace qss;

namespace {

std::int64_t pmod(std::int64_t a, std::int64_t q) { return ((a % q) + q) % q; }

std::int64_t oracle_inverse(std::int64_t a, std::int64_t q) {
  for (std::int64_t x = 1; x < q; ++x)
    if (pmod(a * x, q) == 1) return x;
  return 0;
}

// Lagrange at zero on machine integers, small q only.
std::int64_t oracle_interp0(const std::vector<std::pair<std::int64_t, std::int64_t>>& pts, std::int64_t q) {
  std::int64_t acc = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::int64_t num = 1, den = 1;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i == j) continue;
      num = pmod(num * -pts[j].first, q);
      den = pmod(den * (pts[i].first - pts[j].first), q);
    }
    acc = pmod(acc + pts[i].second * num % q * oracle_inverse(den, q), q);
  }
  return acc;
}

SpssParams params_for(unsigned long q, std::size_t t = 3, std::size_t n = 4) {
  SpssParams p;
  p.threshold = t;
  p.holders = n;
  p.field = PrimeFieldConfig::from_modulus(BigInt(q));
  return p;
}

std::vector<std::vector<HolderIndex>> subsets_of_three() { return {{1, 2, 3}, {1, 2, 4}, {1, 3, 4}, {2, 3, 4}}; }

struct Harness {
  SpssParams params;
  SpssRegistration reg;
  std::map<HolderIndex, SeededRandom> holder_rng;
  TupleId next_tuple = 1;

  Harness(SpssParams p, ByteView data, const FieldElement& pw, std::uint64_t seed) : params(std::move(p)) {
    SeededRandom rng(seed);
    reg = spss_register(1, data, pw, params, rng);
    for (HolderIndex h = 1; h <= params.holders; ++h) holder_rng.emplace(h, SeededRandom(derive_seed(seed, "holder" + std::to_string(h))));
  }

  std::vector<HolderIndex> everyone() const {
    std::vector<HolderIndex> out;
    for (HolderIndex h = 1; h <= params.holders; ++h) out.push_back(h);
    return out;
  }

  std::vector<TupleId> precompute(std::size_t rounds) {
    std::map<HolderIndex, HolderShareSet*> sets;
    std::map<HolderIndex, RandomSource*> rngs;
    for (auto& f : reg.fragments) sets[f.holder] = &f;
    for (auto& [h, r] : holder_rng) rngs[h] = &r;
    std::vector<TupleId> ids;
    for (std::size_t i = 0; i < rounds; ++i) {
      precompute_round(sets, everyone(), next_tuple, params, rngs);
      ids.push_back(next_tuple++);
    }
    return ids;
  }

  RecoveryResult reconstruct(const FieldElement& attempt, const std::vector<HolderIndex>& subset, RandomSource& rng) {
    auto ids = precompute(reg.fragments.front().data_shares.size());
    auto reqs = spss_request(1, attempt, subset, ids, params, rng);
    std::vector<MaskedResponse> responses;
    for (const auto& r : reqs) responses.push_back(holder_respond(reg.fragments[r.holder - 1], r));
    return spss_recover(responses, attempt, params);
  }
};

}  // namespace

TEST(Spss, MacBlockExample) {
  auto p = params_for(31);
  const auto& f = *p.field;
  EXPECT_EQ(password_mac({FieldElement(f, 12L)}, FieldElement(f, 5L)).value(), 29);
  EXPECT_EQ(pmod(12 * 5, 31), 29);
}

TEST(Spss, RegisteredSharesInterpolateToBlocksAndMac) {
  auto p = params_for(31);
  const auto& f = *p.field;
  // 0xC0 splits into 4-bit blocks 12 and 0.
  Bytes data{0xC0};
  SeededRandom rng(11);
  auto reg = spss_register(7, data, FieldElement(f, 5L), p, rng);
  ASSERT_EQ(reg.secret.blocks.size(), 2u);
  EXPECT_EQ(reg.secret.blocks[0].value(), 12);
  EXPECT_EQ(reg.secret.blocks[1].value(), 0);
  EXPECT_EQ(reg.secret.mac_block.value(), 29);
  std::vector<std::int64_t> expected{12, 0, 29};
  for (const auto& subset : subsets_of_three()) {
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<std::pair<std::int64_t, std::int64_t>> pts;
      for (auto j : subset) pts.emplace_back(j, reg.fragments[j - 1].data_shares[i].value().get_si());
      EXPECT_EQ(oracle_interp0(pts, 31), expected[i]);
    }
  }
  // Password polynomial has degree 1: any two shares give P.
  for (HolderIndex a = 1; a <= 4; ++a)
    for (HolderIndex b = a + 1; b <= 4; ++b)
      EXPECT_EQ(oracle_interp0({{a, reg.fragments[a - 1].password_share.value().get_si()},
                                {b, reg.fragments[b - 1].password_share.value().get_si()}},
                               31),
                5);
}

TEST(Spss, AllZeroDataGivesZeroMac) {
  auto p = params_for(31);
  SeededRandom rng(3);
  Bytes zeros(5, 0);
  auto reg = spss_register(1, zeros, FieldElement(*p.field, 17L), p, rng);
  EXPECT_TRUE(reg.secret.mac_block.is_zero());
}

TEST(Spss, RoundTripAllSubsets) {
  for (unsigned long q : {31ul, 2147483647ul}) {
    auto p = params_for(q);
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
      SeededRandom rng(100 + trial);
      Bytes data = rng.bytes(1 + trial * 3);
      FieldElement pw = password_from_bytes(Bytes{static_cast<std::uint8_t>(1 + trial % 7)}, *p.field);
      Harness h(p, data, pw, 1000 + trial);
      for (const auto& subset : subsets_of_three()) {
        auto res = h.reconstruct(pw, subset, rng);
        ASSERT_TRUE(res.accepted);
        EXPECT_EQ(res.data, data);
      }
    }
  }
}

TEST(Spss, ThresholdTwoRoundTrip) {
  auto p = params_for(2147483647ul, 2, 3);
  SeededRandom rng(5);
  Bytes data = to_bytes("threshold two");
  FieldElement pw(*p.field, 99L);
  Harness h(p, data, pw, 77);
  for (std::vector<HolderIndex> s : {std::vector<HolderIndex>{1, 2}, {1, 3}, {2, 3}}) {
    auto res = h.reconstruct(pw, s, rng);
    ASSERT_TRUE(res.accepted);
    EXPECT_EQ(res.data, data);
  }
}

TEST(Spss, ParamsValidation) {
  EXPECT_THROW(params_for(31, 1, 4).validate(), ConfigError);
  EXPECT_THROW(params_for(31, 5, 4).validate(), ConfigError);
  EXPECT_THROW(params_for(31, 4, 5).validate(), ConfigError);
  EXPECT_THROW(params_for(5, 3, 5).validate(), ConfigError);
  EXPECT_NO_THROW(params_for(31).validate());
}

TEST(Spss, PasswordEncoding) {
  auto f = PrimeFieldConfig::from_modulus(BigInt(2147483647ul));
  EXPECT_EQ(password_from_bytes(Bytes{0x01, 0x00}, *f).value(), 256);
  EXPECT_THROW(password_from_bytes(Bytes{0, 0}, *f), ConfigError);
  EXPECT_THROW(password_from_bytes(Bytes{0x40, 0, 0, 0}, *f), ConfigError);
  EXPECT_NO_THROW(password_from_bytes(Bytes{0x3f, 0xff, 0xff, 0xff}, *f));
  auto p = params_for(31);
  SeededRandom rng(1);
  EXPECT_THROW(spss_register(1, Bytes{1}, FieldElement::zero(*p.field), p, rng), ConfigError);
  EXPECT_THROW(spss_register(1, Bytes{}, FieldElement(*p.field, 3L), p, rng), ConfigError);
}

TEST(Spss, BlockSplitAndJoin) {
  auto f = PrimeFieldConfig::from_modulus(BigInt(2147483647ul));
  SeededRandom rng(9);
  for (std::size_t len : {1u, 3u, 4u, 15u, 64u}) {
    Bytes d = rng.bytes(len);
    auto blocks = split_blocks(d, *f);
    EXPECT_EQ(blocks.size(), (len * 8 + 29) / 30);
    EXPECT_EQ(join_blocks(blocks, len, *f), d);
  }
}

TEST(Spss, RequestSubsetRules) {
  auto p = params_for(31);
  SeededRandom rng(2);
  FieldElement pw(*p.field, 4L);
  EXPECT_EQ(spss_request(1, pw, {1, 2, 3}, {}, p, rng).size(), 3u);
  EXPECT_THROW(spss_request(1, pw, {1, 2}, {}, p, rng), ProtocolError);
  EXPECT_THROW(spss_request(1, pw, {1, 2, 3, 4}, {}, p, rng), ProtocolError);
  EXPECT_THROW(spss_request(1, pw, {1, 1, 2}, {}, p, rng), ProtocolError);
  EXPECT_THROW(spss_request(1, pw, {1, 2, 5}, {}, p, rng), ProtocolError);
}

TEST(Spss, PrecomputeAccountingAndZeroShares) {
  auto p = params_for(31);
  FieldElement pw(*p.field, 6L);
  Harness h(p, Bytes{0x5a}, pw, 8);
  h.precompute(1);
  for (const auto& frag : h.reg.fragments) EXPECT_EQ(frag.unconsumed(), 1u);
  for (HolderIndex m = 1; m <= 4; ++m) {
    for (const auto& subset : subsets_of_three()) {
      std::vector<std::pair<std::int64_t, std::int64_t>> pts;
      for (auto j : subset) pts.emplace_back(j, h.reg.fragments[j - 1].tuples[0].zero_shares.at(m).value().get_si());
      EXPECT_EQ(oracle_interp0(pts, 31), 0);
    }
    // R-shares lie on a degree-1 polynomial: any three are collinear.
    std::vector<std::int64_t> r;
    for (HolderIndex j = 1; j <= 4; ++j) r.push_back(h.reg.fragments[j - 1].tuples[0].r_shares.at(m).value().get_si());
    EXPECT_EQ(pmod(r[2] - 2 * r[1] + r[0], 31), 0);
  }
  h.precompute(2);
  for (const auto& frag : h.reg.fragments) EXPECT_EQ(frag.unconsumed(), 3u);
}

TEST(Spss, ReconstructionNeedsOneTuplePerBlock) {
  auto p = params_for(31);
  FieldElement pw(*p.field, 6L);
  Harness h(p, Bytes{0x5a}, pw, 8);
  const std::size_t blocks = h.reg.fragments[0].data_shares.size();
  ASSERT_EQ(blocks, 3u);
  h.precompute(blocks - 1);
  SeededRandom rng(4);
  auto reqs = spss_request(1, pw, {1, 2, 3}, {}, p, rng);
  EXPECT_THROW(holder_respond(h.reg.fragments[0], reqs[0]), PrecomputationExhausted);
}

TEST(Spss, TuplesAreSingleUse) {
  auto p = params_for(31);
  FieldElement pw(*p.field, 6L);
  Harness h(p, Bytes{0x5a}, pw, 8);
  auto ids = h.precompute(3);
  SeededRandom rng(4);
  auto reqs = spss_request(1, pw, {1, 2, 3}, ids, p, rng);
  holder_respond(h.reg.fragments[0], reqs[0]);
  for (const auto& t : h.reg.fragments[0].tuples) {
    EXPECT_TRUE(t.consumed);
    EXPECT_TRUE(t.r_shares.empty());
  }
  EXPECT_THROW(holder_respond(h.reg.fragments[0], reqs[0]), PrecomputationExhausted);
}

TEST(Spss, TooFewResponsesAbort) {
  auto p = params_for(31);
  FieldElement pw(*p.field, 6L);
  Harness h(p, Bytes{0x5a}, pw, 8);
  auto ids = h.precompute(3);
  SeededRandom rng(4);
  auto reqs = spss_request(1, pw, {1, 2, 3}, ids, p, rng);
  std::vector<MaskedResponse> rs{holder_respond(h.reg.fragments[0], reqs[0]), holder_respond(h.reg.fragments[1], reqs[1])};
  EXPECT_THROW(spss_recover(rs, pw, p), ProtocolError);
  rs.push_back(rs[0]);
  EXPECT_THROW(spss_recover(rs, pw, p), ProtocolError);
}

TEST(Spss, WrongPasswordMostlyFails) {
  auto p = params_for(31);
  const auto& f = *p.field;
  const int trials = 5000;
  int accepted = 0;
  SeededRandom rng(21);
  for (int i = 0; i < trials; ++i) {
    FieldElement pw(f, static_cast<long>(1 + i % 15));
    FieldElement wrong = pw + FieldElement(f, static_cast<long>(1 + i % 29));
    Harness h(p, Bytes{static_cast<std::uint8_t>(i)}, pw, 5000 + i);
    if (h.reconstruct(wrong, {1, 2, 3}, rng).accepted) ++accepted;
  }
  const double l = 2, bound = l / 31.0;
  const double sigma = std::sqrt(bound * (1 - bound) / trials);
  EXPECT_LE(static_cast<double>(accepted) / trials, bound + 4 * sigma);
}

TEST(Spss, WrongPasswordOffsetIsUniform) {
  auto p = params_for(31);
  const auto& f = *p.field;
  FieldElement pw(f, 9L), wrong(f, 10L);
  std::vector<int> counts(31, 0);
  SeededRandom rng(31);
  const int trials = 3100;
  for (int i = 0; i < trials; ++i) {
    Harness h(p, Bytes{0xC0}, pw, 9000 + i);
    auto ids = h.precompute(3);
    auto reqs = spss_request(1, wrong, {2, 3, 4}, ids, p, rng);
    std::vector<MaskedResponse> rs;
    for (const auto& r : reqs) rs.push_back(holder_respond(h.reg.fragments[r.holder - 1], r));
    std::vector<std::pair<std::int64_t, std::int64_t>> pts;
    for (const auto& r : rs) pts.emplace_back(r.holder, r.values[0].value().get_si());
    ++counts[oracle_interp0(pts, 31)];
  }
  double chi = 0, e = trials / 31.0;
  for (int c : counts) chi += (c - e) * (c - e) / e;
  // 30 degrees of freedom.
  EXPECT_LT(chi, 30 + 4 * std::sqrt(60.0));
}

TEST(Spss, WireCodecsRoundTrip) {
  auto p = params_for(2147483647ul);
  FieldElement pw(*p.field, 1234L);
  Harness h(p, to_bytes("wire format"), pw, 12);
  h.precompute(2);
  const auto& f = *p.field;
  for (const auto& frag : h.reg.fragments) {
    auto back = wire::decode_share_set(wire::encode(frag), f);
    EXPECT_EQ(back.holder, frag.holder);
    EXPECT_EQ(back.data_shares, frag.data_shares);
    EXPECT_EQ(back.password_share, frag.password_share);
    ASSERT_EQ(back.tuples.size(), 2u);
    EXPECT_EQ(back.tuples[1].r_shares, frag.tuples[1].r_shares);
  }
  SeededRandom rng(1);
  auto req = spss_request(1, pw, {1, 3, 4}, {5, 6, 7}, p, rng)[1];
  auto rb = wire::decode_request(wire::encode(req), f);
  EXPECT_EQ(rb.subset, req.subset);
  EXPECT_EQ(rb.tuples, req.tuples);
  EXPECT_EQ(rb.password_share, req.password_share);
  Bytes bad = wire::encode(h.reg.fragments[0]);
  bad.pop_back();
  EXPECT_THROW(wire::decode_share_set(bad, f), ProtocolError);
}
