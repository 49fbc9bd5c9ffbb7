#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "qss/qss.hpp"

using namespace qss;

namespace {

struct Check {
  bool pass;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("qss_acceptance_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::vector<ScenarioConfig> shipped_scenarios() {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(QSS_SCENARIO_DIR))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<ScenarioConfig> out;
  for (const auto& f : files) out.push_back(parse_scenario(load_json_file(f)));
  return out;
}

// Exact collision fraction of the polynomial hash over every key in F_q.
double exact_collision_fraction(const PolyHashFamily& fam, const std::vector<FieldElement>& a,
                                const std::vector<FieldElement>& b) {
  const unsigned long q = fam.field().modulus().get_ui();
  unsigned long hits = 0;
  for (unsigned long r = 0; r < q; ++r) {
    FieldElement rr(fam.field(), BigInt(r));
    if (fam.hash_blocks(rr, a) == fam.hash_blocks(rr, b)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(q);
}

Check collision_census() {
  const auto& fam = PolyHashFamily::standard(8);
  const unsigned long q = fam.field().modulus().get_ui();
  const double log2_d = 4.0 * std::log2(static_cast<double>(q));
  const double bound = std::pow(2.0, -8) * log2_d;
  std::mt19937_64 rng(8);
  double worst = 0;
  int pairs = 0;
  auto elems = [&](const std::vector<unsigned long>& v) {
    std::vector<FieldElement> out;
    for (auto x : v) out.emplace_back(fam.field(), BigInt(x));
    return out;
  };
  auto census = [&](const std::vector<unsigned long>& a, const std::vector<unsigned long>& b) {
    worst = std::max(worst, exact_collision_fraction(fam, elems(a), elems(b)));
    ++pairs;
  };
  for (int i = 0; i < 200; ++i) {
    std::vector<unsigned long> a(4), b(4);
    do {
      for (auto& x : a) x = rng() % q;
      for (auto& x : b) x = rng() % q;
    } while (a == b);
    census(a, b);
  }
  // Pairs whose difference polynomial x(x-1)(x-2)(x-3) has the most roots a 4-block message allows.
  for (unsigned long base = 0; base < 50; ++base) {
    const long diff[4] = {-6, 11, -6, 1};
    std::vector<unsigned long> a(4), b(4);
    for (int i = 0; i < 4; ++i) {
      a[i] = (base * 7 + static_cast<unsigned long>(i) * 13) % q;
      b[i] = static_cast<unsigned long>(((static_cast<long>(a[i]) + diff[i]) % static_cast<long>(q) + static_cast<long>(q)) %
                                        static_cast<long>(q));
    }
    census(a, b);
  }
  return {worst <= bound, std::to_string(pairs) + " pairs, q_u=" + std::to_string(q) + ", worst fraction " + fmt(worst) +
                              " <= bound " + fmt(bound)};
}

struct RateCheck {
  int trials = 0, accepted = 0;
  double bound = 0;
  bool ok() const {
    const double sigma = std::sqrt(bound * (1 - bound) / trials);
    return static_cast<double>(accepted) / trials <= bound + 3 * sigma;
  }
  std::string str(const std::string& label) const {
    return label + " " + std::to_string(accepted) + "/" + std::to_string(trials) + " (bound " + fmt(bound) + ")";
  }
};

// The calculator binds a fresh MAC seed to t1||D; a later check of t1||D' passes only on a tag collision.
RateCheck tag_collision_rate(HashScheme scheme, int trials, std::uint64_t seed, bool substitute_block) {
  const std::size_t k = 16;
  SeededRandom rng(seed);
  std::mt19937_64 pick(seed ^ 0x5eed);
  RateCheck rc;
  rc.trials = trials;
  for (int t = 0; t < trials; ++t) {
    const std::uint64_t t1 = 1700000000000ULL + static_cast<std::uint64_t>(t);
    Bytes data = rng.bytes(64);
    Bytes msg = timestamped(t1, data);
    if (t == 0) rc.bound = std::pow(2.0, -16) * static_cast<double>(msg.size() * 8);
    MacSeed mac = MacSeed::draw(scheme, k, msg.size() * 8, rng);
    const MacTag sigma = mac_tag(mac, msg);
    Bytes other = data;
    if (substitute_block) {
      std::size_t at = pick() % (other.size() - 7);
      for (std::size_t i = 0; i < 8; ++i) other[at + i] = static_cast<std::uint8_t>(pick());
      if (other == data) other[at] ^= 1;
    } else {
      std::size_t bit = pick() % (other.size() * 8);
      other[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    }
    if (recompute_tag(mac, timestamped(t1, other)) == sigma) ++rc.accepted;
  }
  return rc;
}

DeploymentConfig fast_config(std::uint64_t seed) {
  DeploymentConfig c = parse_scenario(json{{"renewal", {{"group", "modp-1024-160"}}}}).deploy;
  c.seed = seed;
  c.mac.k = 16;
  return c;
}

// Full protocol runs at k=16: a tampering owner, and an end user claiming altered data.
std::pair<RateCheck, RateCheck> protocol_rates(int runs) {
  RateCheck tamper, claim;
  tamper.trials = claim.trials = runs;
  const Bytes data(64, 0x5a);
  tamper.bound = claim.bound = std::pow(2.0, -16) * static_cast<double>((data.size() + 8) * 8);
  for (int i = 0; i < runs; ++i) {
    {
      auto c = fast_config(10000 + static_cast<std::uint64_t>(i));
      c.attacks.tamper_owner = true;
      Deployment d(c);
      SecretId id = d.register_data(data, "pw");
      if (id == 0 || d.reconstruct(id, "pw").outcome != Outcome::Success) throw std::runtime_error("tamper run did not deliver");
      if (d.verify(id).outcome == Outcome::Success) ++tamper.accepted;
    }
    {
      auto c = fast_config(20000 + static_cast<std::uint64_t>(i));
      c.attacks.false_claim_user = true;
      Deployment d(c);
      SecretId id = d.register_data(data, "pw");
      if (id == 0 || d.reconstruct(id, "pw").outcome != Outcome::Success) throw std::runtime_error("claim run did not deliver");
      if (d.refute(id).outcome != Outcome::RefutationSuccess) ++claim.accepted;
    }
  }
  return {tamper, claim};
}

Check statistical_tags() {
  const int n = 100000;
  std::vector<std::pair<std::string, RateCheck>> rows = {
      {"tamper polyeval", tag_collision_rate(HashScheme::PolyEval, n, 1, false)},
      {"claim polyeval", tag_collision_rate(HashScheme::PolyEval, n, 2, true)},
      {"tamper toeplitz", tag_collision_rate(HashScheme::Toeplitz, n, 3, false)},
      {"claim toeplitz", tag_collision_rate(HashScheme::Toeplitz, n, 4, true)},
  };
  auto [tamper, claim] = protocol_rates(200);
  rows.emplace_back("protocol tamper", tamper);
  rows.emplace_back("protocol claim", claim);
  bool ok = true;
  std::string detail;
  for (const auto& [label, rc] : rows) {
    ok = ok && rc.ok();
    detail += (detail.empty() ? "" : ", ") + rc.str(label);
  }
  return {ok, detail};
}

struct SpssHarness {
  SpssParams params;
  SpssRegistration reg;
  std::map<HolderIndex, SeededRandom> holder_rng;
  TupleId next_tuple = 1;

  SpssHarness(SpssParams p, ByteView data, const FieldElement& pw, std::uint64_t seed) : params(std::move(p)) {
    SeededRandom rng(seed);
    reg = spss_register(1, data, pw, params, rng);
    for (HolderIndex h = 1; h <= params.holders; ++h) holder_rng.emplace(h, SeededRandom(derive_seed(seed, "holder" + std::to_string(h))));
  }

  RecoveryResult reconstruct(const FieldElement& attempt, const std::vector<HolderIndex>& subset, RandomSource& rng) {
    std::map<HolderIndex, HolderShareSet*> sets;
    std::map<HolderIndex, RandomSource*> rngs;
    for (auto& f : reg.fragments) sets[f.holder] = &f;
    for (auto& [h, r] : holder_rng) rngs[h] = &r;
    std::vector<TupleId> ids;
    for (std::size_t i = 0; i < reg.fragments.front().data_shares.size(); ++i) {
      precompute_round(sets, {1, 2, 3, 4}, next_tuple, params, rngs);
      ids.push_back(next_tuple++);
    }
    auto reqs = spss_request(1, attempt, subset, ids, params, rng);
    std::vector<MaskedResponse> responses;
    for (const auto& r : reqs) responses.push_back(holder_respond(reg.fragments[r.holder - 1], r));
    return spss_recover(responses, attempt, params);
  }
};

SpssParams spss_params(unsigned long q) {
  SpssParams p;
  p.field = PrimeFieldConfig::from_modulus(BigInt(q));
  return p;
}

Check spss_round_trips() {
  const std::vector<std::vector<HolderIndex>> subsets = {{1, 2, 3}, {1, 2, 4}, {1, 3, 4}, {2, 3, 4}};
  auto p = spss_params(2147483647ul);
  SeededRandom rng(3);
  std::mt19937_64 pick(33);
  int exact = 0, total = 0;
  for (std::uint64_t cycle = 0; cycle < 1000; ++cycle) {
    Bytes data = rng.bytes(1 + cycle % 97);
    FieldElement pw(*p.field, BigInt(static_cast<unsigned long>(1 + pick() % 1000000)));
    SpssHarness h(p, data, pw, 50000 + cycle);
    for (const auto& s : subsets) {
      auto res = h.reconstruct(pw, s, rng);
      ++total;
      if (res.accepted && res.data == data) ++exact;
    }
  }

  auto toy = spss_params(31);
  const auto& f = *toy.field;
  const int trials = 20000;
  int rejected = 0;
  std::size_t blocks = 0;
  for (int i = 0; i < trials; ++i) {
    const long pw_v = static_cast<long>(1 + pick() % 30);
    const long off = static_cast<long>(1 + pick() % 30);
    FieldElement pw(f, pw_v), wrong = pw + FieldElement(f, off);
    SpssHarness h(toy, Bytes{static_cast<std::uint8_t>(pick())}, pw, 90000 + static_cast<std::uint64_t>(i));
    blocks = std::max(blocks, h.reg.fragments.front().data_shares.size());
    if (!h.reconstruct(wrong, {1, 2, 3}, rng).accepted) ++rejected;
  }
  const double floor_rate = 1.0 - static_cast<double>(blocks) / 31.0;
  const double sigma = std::sqrt(floor_rate * (1 - floor_rate) / trials);
  const double rate = static_cast<double>(rejected) / trials;
  const bool ok = exact == total && rate >= floor_rate - 3 * sigma;
  return {ok, std::to_string(exact) + "/" + std::to_string(total) + " exact recoveries at q=2^31-1; wrong password rejected " +
                  fmt(rate) + " >= " + fmt(floor_rate) + " - 3 sigma at q=31, l=" + std::to_string(blocks)};
}

Check share_uniformity() {
  auto p = spss_params(31);
  const auto& f = *p.field;
  const int regs = 20000;
  const FieldElement pw(f, 7L);
  const Bytes data{0x2a};
  std::map<std::pair<int, int>, std::vector<int>> counts;
  for (int a = 1; a <= 4; ++a)
    for (int b = a + 1; b <= 4; ++b) counts[{a, b}].assign(31 * 31, 0);
  for (int i = 0; i < regs; ++i) {
    SeededRandom rng(derive_seed(4, "reg" + std::to_string(i)));
    auto reg = spss_register(1, data, pw, p, rng);
    for (auto& [pair, c] : counts) {
      const long x = reg.fragments[pair.first - 1].data_shares[0].value().get_si();
      const long y = reg.fragments[pair.second - 1].data_shares[0].value().get_si();
      ++c[static_cast<std::size_t>(x * 31 + y)];
    }
  }
  const double df = 31.0 * 31.0 - 1, e = static_cast<double>(regs) / (31.0 * 31.0);
  const double tol = 4 * std::sqrt(2 * df);
  double worst = 0;
  bool ok = true;
  for (const auto& [pair, c] : counts) {
    double chi = 0;
    for (int v : c) chi += (v - e) * (v - e) / e;
    worst = std::max(worst, std::abs(chi - df));
    ok = ok && std::abs(chi - df) <= tol;
  }
  return {ok, std::to_string(regs) + " registrations, 6 holder pairs, max |chi2 - " + fmt(df) + "| = " + fmt(worst) +
                  " <= " + fmt(tol)};
}

Check renewal_rounds() {
  auto group = RenewalGroupConfig::modp_1024_160();
  SpssParams params;
  params.field = group.share_field();
  const Bytes data = to_bytes("renewal keeps the secret across many rounds");
  SeededRandom r(5);
  auto reg = spss_register(1, data, FieldElement(*params.field, BigInt(424242)), params, r);
  const auto before = reg.secret.blocks;
  std::map<HolderIndex, SeededRandom> rng;
  for (HolderIndex h = 1; h <= 4; ++h) rng.emplace(h, SeededRandom(derive_seed(5, "renew" + std::to_string(h))));
  std::map<HolderIndex, HolderShareSet*> sets;
  std::map<HolderIndex, RandomSource*> rngs;
  for (auto& fr : reg.fragments) sets[fr.holder] = &fr;
  for (auto& [h, x] : rng) rngs[h] = &x;
  int accepted = 0, preserved = 0;
  const std::vector<std::vector<HolderIndex>> subsets = {{1, 2, 3}, {1, 2, 4}, {1, 3, 4}, {2, 3, 4}};
  for (std::uint64_t round = 1; round <= 100; ++round) {
    if (renewal_round(sets, round, params, group, rngs).accepted) ++accepted;
    bool same = true;
    for (const auto& s : subsets)
      for (std::size_t i = 0; i < before.size(); ++i) {
        std::vector<std::pair<FieldElement, FieldElement>> pts;
        for (auto j : s) pts.emplace_back(FieldElement(*params.field, static_cast<long>(j)), reg.fragments[j - 1].data_shares[i]);
        same = same && lagrange_at_zero(pts) == before[i];
      }
    if (same) ++preserved;
  }

  auto toy = RenewalGroupConfig::toy();
  int perturbed = 0, rejected = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    for (std::size_t degree : {1u, 2u})
      for (int which : {1, 2})
        for (std::size_t idx = 1; idx <= degree; ++idx)
          for (long delta = 1; delta < 11; ++delta) {
            SeededRandom g(seed);
            auto pkt = gen_renewal(1, 0, {degree}, {1, 2, 3, 4}, toy, g, CoefficientPerturbation{0, which, idx, delta});
            for (HolderIndex c = 1; c <= 4; ++c) {
              ++perturbed;
              if (!verify_renewal_share(c, pkt.broadcast, pkt.shares.at(c), toy, {degree})) ++rejected;
            }
          }
  const bool ok = accepted == 100 && preserved == 100 && rejected == perturbed;
  return {ok, std::to_string(accepted) + "/100 rounds accepted, " + std::to_string(preserved) +
                  "/100 preserved the secret; toy group rejected " + std::to_string(rejected) + "/" +
                  std::to_string(perturbed) + " perturbed shares"};
}

Check key_ledger() {
  int good = 0, total = 0;
  std::string bad;
  for (const auto& sc : shipped_scenarios()) {
    auto r = run_scenario(sc);
    ++total;
    if (r.conserved && r.no_reuse)
      ++good;
    else
      bad += " " + sc.name;
  }
  return {good == total, std::to_string(good) + "/" + std::to_string(total) + " scenarios conserved key bits with no pad reuse" +
                             (bad.empty() ? "" : "; failing:" + bad)};
}

bool contains_window(const Bytes& hay, const Bytes& needle, std::size_t w) {
  if (hay.size() < w || needle.size() < w) return false;
  std::unordered_set<std::string> windows;
  for (std::size_t i = 0; i + w <= hay.size(); ++i) windows.emplace(reinterpret_cast<const char*>(hay.data() + i), w);
  for (std::size_t i = 0; i + w <= needle.size(); ++i)
    if (windows.count(std::string(reinterpret_cast<const char*>(needle.data() + i), w))) return true;
  return false;
}

Check calculator_state() {
  int runs = 0, within = 0, clean = 0;
  std::size_t worst_excess = 0;
  for (auto scheme : {HashScheme::PolyEval, HashScheme::Toeplitz})
    for (std::size_t size : {64u, 1000u, 20000u}) {
      TempDir dir("calc_" + to_string(scheme) + "_" + std::to_string(size));
      auto c = fast_config(700 + size);
      c.mac.scheme = scheme;
      c.mac.k = 64;
      SeededRandom rng(size);
      const Bytes data = rng.bytes(size);
      bool ok_bytes = false, ok_scan = true;
      {
        Deployment d(c, dir.path());
        SecretId id = d.register_data(data, "pw");
        if (id == 0) throw std::runtime_error("registration aborted");
        d.reconstruct(id, "pw");
        const auto* rec = d.calculator_store().find(id);
        const std::size_t limit = rec->seed->byte_size() + 8 + 8;
        const std::size_t used = d.calculator_store().persistent_bytes(id);
        ok_bytes = used <= limit;
        if (used > limit) worst_excess = std::max(worst_excess, used - limit);
      }
      for (const auto& e : fs::recursive_directory_iterator(dir.path() / "calculator"))
        if (e.is_regular_file() && contains_window(io::read_file(e.path()), data, 8)) ok_scan = false;
      ++runs;
      within += ok_bytes;
      clean += ok_scan;
    }
  return {within == runs && clean == runs,
          std::to_string(within) + "/" + std::to_string(runs) + " records within |R_MAC|+16 bytes, " + std::to_string(clean) + "/" +
              std::to_string(runs) + " calculator stores free of any 8-byte run of the data" +
              (worst_excess ? "; excess " + std::to_string(worst_excess) : "")};
}

Check bench_scaling() {
  auto sc = parse_scenario(load_json_file(fs::path(QSS_SCENARIO_DIR) / "bench.json"));
  auto rep = run_bench(sc);
  std::string detail;
  double worst = 0;
  for (const auto& s : rep.scaling) worst = std::max(worst, s.factor_per_doubling);
  detail = "worst factor per doubling " + fmt(worst) + " <= " + fmt(sc.bench.max_factor_per_doubling);
  bool faster = rep.field && rep.field->mersenne_faster();
  if (rep.field)
    detail += "; mersenne " + fmt(rep.field->mersenne_ms.median) + " ms vs general " + fmt(rep.field->general_ms.median) + " ms";
  detail += rep.ledger_ok ? "" : "; key ledger violated";
  return {rep.scaling_ok() && faster && rep.ledger_ok, detail};
}

Check determinism() {
  int same = 0, total = 0;
  bool seed_matters = true;
  for (const auto& sc : shipped_scenarios()) {
    ++total;
    if (run_scenario(sc).transcript == run_scenario(sc).transcript) ++same;
  }
  auto sc = parse_scenario(load_json_file(fs::path(QSS_SCENARIO_DIR) / "honest.json"));
  auto other = sc;
  other.deploy.seed += 1;
  seed_matters = run_scenario(sc).transcript != run_scenario(other).transcript;
  return {same == total && seed_matters,
          std::to_string(same) + "/" + std::to_string(total) + " scenarios byte-identical on rerun; a different seed " +
              (seed_matters ? "changes" : "does not change") + " the transcript"};
}

}  // namespace

int main() {
  struct Criterion {
    int n;
    std::string name;
    std::function<Check()> run;
    double limit_s;
  };
  const std::vector<Criterion> criteria = {
      {1, "universal hash collisions, exhaustive at k=8", collision_census, 10},
      {2, "tampered data and false claims at k=16", statistical_tags, 60},
      {3, "share round trips and wrong passwords", spss_round_trips, 0},
      {4, "two shares are jointly uniform", share_uniformity, 0},
      {5, "verifiable renewal", renewal_rounds, 0},
      {6, "key pads conserved and never reused", key_ledger, 0},
      {7, "calculator retains only seed, time and id", calculator_state, 0},
      {8, "performance scaling and field choice", bench_scaling, 0},
      {9, "deterministic transcripts", determinism, 0},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Check r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && secs > c.limit_s) {
      r.pass = false;
      r.detail += "; exceeded " + fmt(c.limit_s) + " s";
    }
    failures += !r.pass;
    std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << c.n << ": " << c.name << " (" << r.detail << ", " << fmt(secs)
              << " s)" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
