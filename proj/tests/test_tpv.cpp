#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "qss/tpv.hpp"

using namespace qss;

namespace {

DeploymentConfig base_config(std::uint64_t seed = 3) {
  DeploymentConfig c;
  c.seed = seed;
  c.renewal_group = "modp-1024-160";
  c.spss.field = RenewalGroupConfig::by_name(c.renewal_group).share_field();
  c.keynet.warmup_s = 60;
  return c;
}

Bytes sample(std::size_t n, std::uint64_t seed = 9) {
  SeededRandom r(seed);
  return r.bytes(n);
}

bool contains(const Bytes& hay, const Bytes& needle) {
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / ("qss_tpv_" + std::string(info->name()));
    fs::remove_all(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

}  // namespace

TEST(Tpv, HonestFlowSucceedsEndToEnd) {
  Deployment d(base_config());
  const Bytes data = sample(300);
  SecretId id = d.register_data(data, "correct horse");
  ASSERT_NE(id, 0u);
  ASSERT_EQ(d.verifier_store().records().size(), 1u);
  const auto& rec = d.verifier_store().records().front();
  EXPECT_LE(rec.t1, rec.t2);
  EXPECT_EQ(d.reconstruct(id, "correct horse").outcome, Outcome::Success);
  ASSERT_TRUE(d.end_user_received().contains(id));
  EXPECT_EQ(d.end_user_received().at(id).data, data);
  EXPECT_EQ(d.verify(id).outcome, Outcome::Success);
  EXPECT_TRUE(d.network().no_reuse());
  EXPECT_TRUE(d.network().conservation().holds());
}

TEST(Tpv, MessageAccountingMatchesSecrecyBudget) {
  auto cfg = base_config();
  Deployment d(cfg);
  SecretId id = d.register_data(sample(1000), "pw");
  ASSERT_NE(id, 0u);
  EXPECT_EQ(d.bytes_received(party::verifier, id, Phase::Registration), 8u + cfg.mac.k / 8);
  EXPECT_EQ(d.bytes_received(party::end_user), 0u);
  d.reconstruct(id, "pw");
  EXPECT_GT(d.bytes_received(party::end_user, Phase::Reconstruction), 0u);
}

TEST(Tpv, CalculatorRetainsOnlySeedTimeAndId) {
  TempDir dir;
  Deployment d(base_config(), dir.path());
  const Bytes data = sample(500, 77);
  SecretId id = d.register_data(data, "pw");
  ASSERT_NE(id, 0u);
  const auto* rec = d.calculator_store().find(id);
  ASSERT_NE(rec, nullptr);
  ASSERT_TRUE(rec->seed.has_value());
  EXPECT_LE(d.calculator_store().persistent_bytes(id), rec->seed->byte_size() + 8 + 8);
  const Bytes sigma = d.verifier_store().records().front().sigma.bytes();
  for (const auto& e : fs::recursive_directory_iterator(dir.path() / "calculator")) {
    if (!e.is_regular_file()) continue;
    auto bytes = io::read_file(e.path());
    EXPECT_FALSE(contains(bytes, Bytes(data.begin(), data.begin() + 16)));
    EXPECT_FALSE(contains(bytes, sigma));
  }
}

TEST(Tpv, TamperingOwnerIsCaught) {
  auto cfg = base_config();
  cfg.attacks.tamper_owner = true;
  Deployment d(cfg);
  const Bytes data = sample(200);
  SecretId id = d.register_data(data, "pw");
  EXPECT_EQ(d.reconstruct(id, "pw").outcome, Outcome::Success);
  EXPECT_NE(d.end_user_received().at(id).data, data);
  auto v = d.verify(id);
  EXPECT_EQ(v.outcome, Outcome::Fail);
  EXPECT_EQ(v.detail, "tag mismatch");
}

TEST(Tpv, RefutationOutcomes) {
  auto cfg = base_config();
  cfg.attacks.false_claim_user = true;
  Deployment liar(cfg);
  SecretId id = liar.register_data(sample(64), "pw");
  liar.reconstruct(id, "pw");
  EXPECT_EQ(liar.refute(id).outcome, Outcome::RefutationSuccess);
  EXPECT_EQ(liar.refute(id, 12345).outcome, Outcome::CannotAdjudicate);

  Deployment honest(base_config());
  id = honest.register_data(sample(64), "pw");
  honest.reconstruct(id, "pw");
  EXPECT_EQ(honest.refute(id).outcome, Outcome::RefutationFail);
}

TEST(Tpv, ThresholdGovernsReconstruction) {
  auto cfg = base_config();
  cfg.attacks.drop_holders = {2, 4};
  Deployment two_down(cfg);
  SecretId id = two_down.register_data(sample(50), "pw");
  ASSERT_NE(id, 0u);
  auto v = two_down.reconstruct(id, "pw");
  EXPECT_EQ(v.outcome, Outcome::Abort);
  EXPECT_FALSE(two_down.end_user_received().contains(id));
  EXPECT_EQ(two_down.verifier_store().records().size(), 1u);

  cfg.attacks.drop_holders = {1};
  Deployment one_down(cfg);
  id = one_down.register_data(sample(50), "pw");
  EXPECT_EQ(one_down.reconstruct(id, "pw").outcome, Outcome::Success);
  EXPECT_EQ(one_down.verify(id).outcome, Outcome::Success);
}

TEST(Tpv, WrongPasswordReleasesNothing) {
  Deployment d(base_config());
  SecretId id = d.register_data(sample(80), "right");
  EXPECT_EQ(d.reconstruct(id, "wrong").outcome, Outcome::Fail);
  EXPECT_FALSE(d.end_user_received().contains(id));
  EXPECT_EQ(d.reconstruct(id, "right").outcome, Outcome::Success);
}

TEST(Tpv, CorruptHolderResponseFailsTheMacCheck) {
  auto cfg = base_config();
  cfg.attacks.corrupt_holder = 1;
  Deployment d(cfg);
  SecretId id = d.register_data(sample(80), "pw");
  EXPECT_EQ(d.reconstruct(id, "pw").outcome, Outcome::Fail);
}

TEST(Tpv, ChannelBitFlipLeadsToAbort) {
  auto cfg = base_config();
  cfg.attacks.bit_flip = BitFlipAttack{"holder-1", "holder-3", Phase::Precompute, 1};
  Deployment d(cfg);
  SecretId id = d.register_data(sample(80), "pw");
  EXPECT_EQ(d.reconstruct(id, "pw").outcome, Outcome::Abort);
  const auto& lines = d.transcript().lines();
  EXPECT_TRUE(std::any_of(lines.begin(), lines.end(), [](const std::string& l) { return l.find(" reject ") != std::string::npos; }));
  EXPECT_EQ(d.reconstruct(id, "pw").outcome, Outcome::Success);
}

TEST(Tpv, LostLivenessReplyOnlyShrinksTheLiveSet) {
  auto cfg = base_config();
  cfg.attacks.bit_flip = BitFlipAttack{"holder-1", "calculator", Phase::Reconstruction, 1};
  Deployment d(cfg);
  SecretId id = d.register_data(sample(80), "pw");
  EXPECT_EQ(d.reconstruct(id, "pw").outcome, Outcome::Success);
  EXPECT_EQ(d.verify(id).outcome, Outcome::Success);
}

TEST(Tpv, RenewalPreservesDataAndRejectsCorruptHolder) {
  Deployment d(base_config());
  const Bytes data = sample(120);
  SecretId id = d.register_data(data, "pw");
  const auto before = d.holder_store(1).get(id).data_shares;
  EXPECT_EQ(d.renew(id).outcome, Outcome::Success);
  EXPECT_NE(d.holder_store(1).get(id).data_shares, before);
  EXPECT_EQ(d.reconstruct(id, "pw").outcome, Outcome::Success);
  EXPECT_EQ(d.end_user_received().at(id).data, data);
  EXPECT_EQ(d.verify(id).outcome, Outcome::Success);

  auto cfg = base_config();
  cfg.attacks.corrupt_holder = 3;
  Deployment bad(cfg);
  id = bad.register_data(data, "pw");
  const auto kept = bad.holder_store(2).get(id).data_shares;
  auto v = bad.renew(id);
  EXPECT_EQ(v.outcome, Outcome::Fail);
  EXPECT_NE(v.detail.find("holder-1 accused holder-3"), std::string::npos) << v.detail;
  EXPECT_EQ(bad.holder_store(2).get(id).data_shares, kept);
}

TEST(Tpv, RenewalWithAnOfflineHolderAbortsWithoutChange) {
  auto cfg = base_config();
  Deployment d(cfg);
  SecretId id = d.register_data(sample(40), "pw");
  d.set_offline(4, true);
  const auto kept = d.holder_store(1).get(id).data_shares;
  EXPECT_EQ(d.renew(id).outcome, Outcome::Abort);
  EXPECT_EQ(d.holder_store(1).get(id).data_shares, kept);
}

TEST(Tpv, ComputationalSecurityOption) {
  auto cfg = base_config();
  cfg.cs.enabled = true;
  cfg.cs.digest_bits = 64;
  Deployment d(cfg);
  SecretId id = d.register_data(sample(90), "pw");
  ASSERT_NE(id, 0u);
  EXPECT_EQ(d.verifier_store().records().front().sigma.size(), 64u);
  EXPECT_FALSE(d.calculator_store().find(id)->seed.has_value());
  EXPECT_EQ(d.bytes_received(party::verifier, id, Phase::Registration), 8u + 8u);
  d.reconstruct(id, "pw");
  EXPECT_EQ(d.verify(id).outcome, Outcome::Success);

  cfg.attacks.tamper_owner = true;
  Deployment t(cfg);
  id = t.register_data(sample(90), "pw");
  t.reconstruct(id, "pw");
  EXPECT_EQ(t.verify(id).outcome, Outcome::Fail);
}

TEST(Tpv, KeyExhaustionAbortsRegistrationAtomically) {
  auto cfg = base_config();
  cfg.keynet.warmup_s = 0.001;
  cfg.keynet.max_key_wait_ms = 0;
  Deployment d(cfg);
  EXPECT_EQ(d.register_data(sample(2000), "pw"), 0u);
  EXPECT_EQ(d.verdicts().back().outcome, Outcome::Abort);
  for (HolderIndex j = 1; j <= 4; ++j) EXPECT_TRUE(d.holder_store(j).secrets().empty());
  EXPECT_TRUE(d.verifier_store().records().empty());
  EXPECT_TRUE(d.network().no_reuse());
  EXPECT_TRUE(d.network().conservation().holds());
}

TEST(Tpv, VerifierClockBehindCalculatorFailsTimeOrder) {
  auto cfg = base_config();
  cfg.sim.clock_skew_ms["Koganei-1"] = -60000;
  Deployment d(cfg);
  SecretId id = d.register_data(sample(30), "pw");
  d.reconstruct(id, "pw");
  auto v = d.verify(id);
  EXPECT_EQ(v.outcome, Outcome::Fail);
  EXPECT_EQ(v.detail, "t1 later than t2");
}

TEST(Tpv, IdenticalDataGetsIndependentTags) {
  Deployment d(base_config());
  const Bytes data = sample(40);
  d.register_data(data, "pw");
  d.register_data(data, "pw");
  const auto& r = d.verifier_store().records();
  ASSERT_EQ(r.size(), 2u);
  EXPECT_NE(r[0].sigma, r[1].sigma);
}

TEST(Tpv, DeterministicTranscripts) {
  auto run = [] {
    Deployment d(base_config(11));
    SecretId id = d.register_data(sample(256), "pw");
    d.reconstruct(id, "pw");
    d.verify(id);
    d.renew(id);
    return d.transcript().text();
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_GT(a.size(), 1000u);
}

TEST(Tpv, StateSurvivesRestart) {
  TempDir dir;
  const Bytes data = sample(100);
  SecretId id;
  Deployment::State st;
  {
    Deployment d(base_config(), dir.path());
    id = d.register_data(data, "pw");
    st = d.export_state();
  }
  Deployment e(base_config(), dir.path());
  e.import_state(st);
  EXPECT_EQ(e.reconstruct(id, "pw").outcome, Outcome::Success);
  EXPECT_EQ(e.verify(id).outcome, Outcome::Success);
  EXPECT_TRUE(e.network().no_reuse());
  EXPECT_TRUE(e.network().conservation().holds());
}
