#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <vector>

#include "qss/stores.hpp"

using namespace qss;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / ("qss_" + std::string(info->test_suite_name()) + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

SpssParams params() {
  static const FieldPtr field = PrimeFieldConfig::mersenne(31);
  SpssParams p;
  p.field = field;
  return p;
}

// Registers `secrets` secrets and gives holder 1 `tuples_each` tuples per secret.
std::vector<HolderShareSet> make_sets(std::size_t secrets, std::size_t tuples_each, std::uint64_t seed) {
  auto p = params();
  SeededRandom rng(seed);
  std::vector<HolderShareSet> out;
  TupleId next = 1;
  for (SecretId id = 1; id <= secrets; ++id) {
    auto reg = spss_register(id, rng.bytes(5 + id), FieldElement(*p.field, 77L), p, rng);
    std::map<HolderIndex, HolderShareSet*> sets;
    std::map<HolderIndex, RandomSource*> rngs;
    for (auto& f : reg.fragments) {
      sets[f.holder] = &f;
      rngs[f.holder] = &rng;
    }
    for (std::size_t t = 0; t < tuples_each; ++t) precompute_round(sets, {1, 2, 3, 4}, next++, p, rngs);
    out.push_back(reg.fragments[0]);
  }
  return out;
}

bool contains(const Bytes& hay, const Bytes& needle) {
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

}  // namespace

TEST(Stores, EmptyRoundTrips) {
  TempDir d;
  auto p = params();
  HolderStore h(1, p.field, d.path() / "h1");
  auto h2 = HolderStore::load(1, p.field, d.path() / "h1");
  EXPECT_TRUE(h2.secrets().empty());
  EXPECT_TRUE(h == h2);
  VerifierStore v(d.path() / "v");
  EXPECT_TRUE(VerifierStore::load(d.path() / "v").records().empty());
  CalculatorStore c(HashScheme::Toeplitz, 256, d.path() / "c");
  EXPECT_TRUE(CalculatorStore::load(HashScheme::Toeplitz, 256, d.path() / "c").records().empty());
}

TEST(Stores, HolderStoreRoundTripWithJournal) {
  TempDir d;
  auto p = params();
  HolderStore h(1, p.field, d.path());
  // 3 secrets with 3 + 2 + 2 = 7 tuples.
  auto sets = make_sets(3, 2, 5);
  sets[0].tuples.push_back(make_sets(1, 3, 9)[0].tuples[2]);
  sets[0].tuples.back().id = 99;
  for (auto& s : sets) h.put(s);
  h.consume_tuples(1, {sets[0].tuples[0].id});
  h.consume_tuple(3);
  auto back = HolderStore::load(1, p.field, d.path());
  EXPECT_TRUE(back == h);
  EXPECT_EQ(back.unconsumed(1), 2u);
  EXPECT_EQ(back.unconsumed(2), 2u);
  EXPECT_EQ(back.unconsumed(3), 1u);
  EXPECT_EQ(back.journal().size(), 2u);
}

TEST(Stores, ConsumeSemantics) {
  auto p = params();
  HolderStore h(1, p.field);
  h.put(make_sets(1, 2, 6)[0]);
  auto a = h.consume_tuple(1);
  auto b = h.consume_tuple(1);
  EXPECT_NE(a.id, b.id);
  EXPECT_FALSE(a.r_shares.empty());
  EXPECT_THROW(h.consume_tuple(1), PrecomputationExhausted);
  EXPECT_THROW(h.consume_tuples(1, {a.id}), PrecomputationExhausted);
  EXPECT_THROW(h.consume_tuple(2), ProtocolError);
}

TEST(Stores, ConsumedTupleValuesLeaveTheDisk) {
  TempDir d;
  auto p = params();
  HolderStore h(1, p.field, d.path());
  auto s = make_sets(1, 1, 7)[0];
  h.put(s);
  Bytes encoded_tuple;
  {
    ByteWriter w;
    wire::put_tuple(w, s.tuples[0]);
    encoded_tuple = w.take();
  }
  Bytes values(encoded_tuple.begin() + 13, encoded_tuple.end());
  EXPECT_TRUE(contains(io::read_file(h.shares_path()), values));
  h.consume_tuple(1);
  EXPECT_FALSE(contains(io::read_file(h.shares_path()), values));
}

TEST(Stores, CrashAfterJournalNeverReissues) {
  TempDir d;
  auto p = params();
  TupleId taken = 0;
  {
    HolderStore h(1, p.field, d.path());
    h.put(make_sets(1, 3, 8)[0]);
    taken = h.get(1).tuples[0].id;
    h.set_crash_point(CrashPoint::AfterJournal);
    EXPECT_THROW(h.consume_tuples(1, {taken}), SimulatedCrash);
  }
  auto back = HolderStore::load(1, p.field, d.path());
  EXPECT_EQ(back.unconsumed(1), 2u);
  EXPECT_THROW(back.consume_tuples(1, {taken}), PrecomputationExhausted);
  EXPECT_NE(back.consume_tuple(1).id, taken);
}

TEST(Stores, CrashAfterSnapshotEraseRecoversNewState) {
  TempDir d;
  auto p = params();
  auto s = make_sets(1, 2, 10)[0];
  FieldElement old_pw = s.password_share;
  {
    HolderStore h(1, p.field, d.path());
    h.put(s);
    h.set_crash_point(CrashPoint::AfterSnapshotErase);
    auto shares = s.data_shares;
    for (auto& e : shares) e += FieldElement::one(*p.field);
    EXPECT_THROW(h.replace_shares(1, shares, old_pw + FieldElement::one(*p.field)), SimulatedCrash);
  }
  auto back = HolderStore::load(1, p.field, d.path());
  EXPECT_EQ(back.get(1).password_share, old_pw + FieldElement::one(*p.field));
  EXPECT_EQ(back.unconsumed(1), 2u);
}

TEST(Stores, RenewedSharesOverwriteOldValues) {
  TempDir d;
  auto p = params();
  HolderStore h(1, p.field, d.path());
  auto s = make_sets(1, 0, 11)[0];
  h.put(s);
  ByteWriter w;
  wire::put_elements(w, s.data_shares);
  Bytes old_bytes = w.take();
  EXPECT_TRUE(contains(io::read_file(h.shares_path()), old_bytes));
  auto shares = s.data_shares;
  for (auto& e : shares) e += FieldElement(*p.field, 12345L);
  h.replace_shares(1, shares, s.password_share);
  EXPECT_FALSE(contains(io::read_file(h.shares_path()), old_bytes));
  EXPECT_FALSE(fs::exists(d.path() / "shares.bin.tmp"));
}

TEST(Stores, VerifierLogTamperDetection) {
  TempDir d;
  {
    VerifierStore v(d.path());
    v.append(VerifierRecord{1, 1000, BitString::from_bytes(Bytes{1, 2, 3, 4}), 1005});
    v.append(VerifierRecord{2, 2000, BitString::from_bytes(Bytes{5, 6, 7, 8}), 2003});
    EXPECT_THROW(v.append(VerifierRecord{2, 2000, BitString(8), 1}), ProtocolError);
  }
  auto v = VerifierStore::load(d.path());
  ASSERT_EQ(v.records().size(), 2u);
  EXPECT_EQ(v.find(2, 2000)->t2, 2003u);
  EXPECT_FALSE(v.find(2, 2001).has_value());
  const Bytes good = io::read_file(v.log_path());
  for (std::size_t i = 8; i < good.size(); i += 7) {
    Bytes bad = good;
    bad[i] ^= 0x01;
    io::write_file(v.log_path(), bad);
    EXPECT_THROW(VerifierStore::load(d.path()), TamperDetected) << "offset " << i;
  }
  Bytes cut(good.begin(), good.end() - 3);
  io::write_file(v.log_path(), cut);
  EXPECT_THROW(VerifierStore::load(d.path()), TamperDetected);
}

TEST(Stores, VerifierLogIsPrefixImmutable) {
  TempDir d;
  VerifierStore v(d.path());
  v.append(VerifierRecord{1, 10, BitString::from_bytes(Bytes{9}), 11});
  Bytes before = io::read_file(v.log_path());
  v.append(VerifierRecord{2, 20, BitString::from_bytes(Bytes{8}), 21});
  Bytes after = io::read_file(v.log_path());
  ASSERT_GT(after.size(), before.size());
  EXPECT_TRUE(std::equal(before.begin(), before.end(), after.begin()));
}

TEST(Stores, CalculatorRecordsFitTheBudget) {
  TempDir d;
  SeededRandom rng(12);
  Bytes data = rng.bytes(300);
  auto seed = MacSeed::draw_toeplitz(256, (8 + data.size()) * 8, rng);
  Bytes msg(8, 0);
  msg.insert(msg.end(), data.begin(), data.end());
  mac_tag(seed, msg);
  {
    CalculatorStore c(HashScheme::Toeplitz, 256, d.path());
    c.put(CalculatorRecord{7, 123456, seed});
    EXPECT_LE(c.persistent_bytes(7), seed.bits().byte_size() + 8 + 8);
    EXPECT_THROW(c.put(CalculatorRecord{7, 1, seed}), ProtocolError);
  }
  auto back = CalculatorStore::load(HashScheme::Toeplitz, 256, d.path());
  const auto* r = back.find(7);
  ASSERT_NE(r, nullptr);
  EXPECT_EQ(r->t1, 123456u);
  EXPECT_EQ(r->seed->bits(), seed.bits());
  EXPECT_EQ(r->seed->message_bits(), seed.message_bits());
  EXPECT_EQ(recompute_tag(*r->seed, msg).bits, recompute_tag(seed, msg).bits);

  auto pe = MacSeed::draw_polyeval(64, rng);
  mac_tag(pe, msg);
  CalculatorStore c2(HashScheme::PolyEval, 64, d.path() / "pe");
  c2.put(CalculatorRecord{3, 5, pe});
  EXPECT_EQ(c2.persistent_bytes(3), 8u + 8u + 8u);
  auto back2 = CalculatorStore::load(HashScheme::PolyEval, 64, d.path() / "pe");
  EXPECT_EQ(recompute_tag(*back2.find(3)->seed, msg).bits, recompute_tag(pe, msg).bits);
}
