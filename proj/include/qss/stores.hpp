#pragma once

// Persistent role state: holder share bundles with a tuple-consumption journal, the verifier's
// hash-chained append-only record log, and the share calculator's per-secret seed records.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "qss/bytes.hpp"
#include "qss/error.hpp"
#include "qss/field.hpp"
#include "qss/spss.hpp"
#include "qss/uhash.hpp"

namespace qss {

namespace fs = std::filesystem;

namespace io {

inline Bytes read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + p.string());
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const fs::path& p, ByteView b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  out.flush();
  if (!out) throw ConfigError("write failed for " + p.string());
}

inline void append_file(const fs::path& p, ByteView b) {
  std::ofstream out(p, std::ios::binary | std::ios::app);
  if (!out) throw ConfigError("cannot append to " + p.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  out.flush();
  if (!out) throw ConfigError("append failed for " + p.string());
}

// Zeroes the file's bytes in place, then truncates it to nothing.
inline void erase_file(const fs::path& p) {
  if (!fs::exists(p)) return;
  const auto size = fs::file_size(p);
  {
    std::fstream f(p, std::ios::binary | std::ios::in | std::ios::out);
    if (!f) throw ConfigError("cannot erase " + p.string());
    const std::vector<char> zeros(4096, 0);
    for (std::uintmax_t done = 0; done < size;) {
      auto n = static_cast<std::streamsize>(std::min<std::uintmax_t>(zeros.size(), size - done));
      f.write(zeros.data(), n);
      done += static_cast<std::uintmax_t>(n);
    }
    f.flush();
  }
  fs::resize_file(p, 0);
}

}  // namespace io

// Length-prefixed records, each followed by SHA-512(previous link || payload).
class HashChain {
 public:
  static constexpr std::size_t link_size = 64;

  static Digest512 next(const Digest512& prev, ByteView payload) {
    Bytes buf(prev.begin(), prev.end());
    buf.insert(buf.end(), payload.begin(), payload.end());
    return cr_hash(buf);
  }

  static Bytes frame(Digest512& head, ByteView payload) {
    head = next(head, payload);
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(payload.size())).raw(payload).raw(ByteView(head.data(), head.size()));
    return w.take();
  }

  // Splits a chained file into payloads, verifying every link.
  static std::vector<Bytes> parse(ByteView file, std::string_view magic, Digest512& head) {
    if (file.size() < magic.size() || !std::equal(magic.begin(), magic.end(), file.begin()))
      throw TamperDetected("bad file header");
    ByteReader r(file.subspan(magic.size()));
    head = Digest512{};
    std::vector<Bytes> out;
    while (!r.done()) {
      try {
        std::uint32_t n = r.u32();
        if (n > r.remaining()) throw TamperDetected("record length exceeds file");
        Bytes payload = r.raw(n);
        Bytes link = r.raw(link_size);
        Digest512 expect = next(head, payload);
        if (!std::equal(expect.begin(), expect.end(), link.begin())) throw TamperDetected("hash chain broken");
        head = expect;
        out.push_back(std::move(payload));
      } catch (const ProtocolError&) {
        throw TamperDetected("truncated record");
      }
    }
    return out;
  }
};

enum class CrashPoint { None, AfterJournal, AfterSnapshotErase };

class HolderStore {
 public:
  HolderStore(HolderIndex holder, FieldPtr field, fs::path dir = {})
      : holder_(holder), field_(std::move(field)), dir_(std::move(dir)) {
    if (!dir_.empty()) fs::create_directories(dir_);
  }

  static HolderStore load(HolderIndex holder, FieldPtr field, const fs::path& dir) {
    HolderStore s(holder, std::move(field), dir);
    const fs::path tmp = dir / "shares.bin.tmp";
    if (fs::exists(tmp)) {
      bool complete = true;
      try {
        Digest512 h;
        HashChain::parse(io::read_file(tmp), snapshot_magic, h);
      } catch (const TamperDetected&) {
        complete = false;
      }
      if (complete) {
        io::erase_file(s.shares_path());
        fs::rename(tmp, s.shares_path());
      } else {
        io::erase_file(tmp);
        fs::remove(tmp);
      }
    }
    if (fs::exists(s.shares_path())) {
      Digest512 head;
      auto records = HashChain::parse(io::read_file(s.shares_path()), snapshot_magic, head);
      if (records.empty()) throw TamperDetected("snapshot lacks its header record");
      ByteReader hr(records.front());
      if (hr.u32() != holder || bigint::from_bytes(hr.blob()) != s.field_->modulus())
        throw ConfigError("holder store belongs to another holder or field");
      for (std::size_t i = 1; i < records.size(); ++i) {
        auto set = wire::decode_share_set(records[i], *s.field_);
        s.sets_.emplace(set.secret, std::move(set));
      }
    }
    if (fs::exists(s.journal_path())) {
      auto entries = HashChain::parse(io::read_file(s.journal_path()), journal_magic, s.journal_head_);
      std::map<SecretId, std::unordered_map<TupleId, PrecomputedTuple*>> index;
      for (auto& [id, set] : s.sets_) index.emplace(id, set.tuple_index());
      for (const auto& e : entries) {
        ByteReader r(e);
        SecretId id = r.u64();
        TupleId t = r.u64();
        s.journal_.emplace_back(id, t);
        s.journal_index_.emplace(id, t);
        auto it = index.find(id);
        if (it == index.end()) continue;
        auto tuple = it->second.find(t);
        if (tuple != it->second.end()) {
          tuple->second->consumed = true;
          tuple->second->wipe(*s.field_);
        }
      }
    }
    return s;
  }

  HolderIndex holder() const { return holder_; }
  bool has(SecretId id) const { return sets_.contains(id); }
  std::vector<SecretId> secrets() const {
    std::vector<SecretId> out;
    for (const auto& [id, s] : sets_) out.push_back(id);
    return out;
  }
  const HolderShareSet& get(SecretId id) const {
    auto it = sets_.find(id);
    if (it == sets_.end()) throw ProtocolError("holder " + std::to_string(holder_) + " has no shares for secret " + std::to_string(id));
    return it->second;
  }
  std::size_t unconsumed(SecretId id) const { return get(id).unconsumed(); }
  const std::vector<std::pair<SecretId, TupleId>>& journal() const { return journal_; }

  void put(HolderShareSet set) {
    if (set.holder != holder_) throw ProtocolError("share set addressed to another holder");
    sets_[set.secret] = std::move(set);
    snapshot();
  }

  void add_tuples(SecretId id, std::vector<PrecomputedTuple> tuples) {
    auto& s = mutable_get(id);
    std::unordered_set<TupleId> known;
    for (const auto& t : s.tuples) known.insert(t.id);
    for (auto& t : tuples) {
      if (!known.insert(t.id).second || journaled(id, t.id)) throw ProtocolError("tuple id reused");
      s.tuples.push_back(std::move(t));
    }
    snapshot();
  }

  // Journals each tuple as consumed before handing it out; erased from the snapshot afterwards.
  std::vector<PrecomputedTuple> consume_tuples(SecretId id, const std::vector<TupleId>& ids) {
    auto& s = mutable_get(id);
    std::vector<PrecomputedTuple*> chosen;
    const auto index = s.tuple_index();
    std::unordered_set<TupleId> seen;
    for (TupleId t : ids) {
      auto it = index.find(t);
      if (it == index.end() || it->second->consumed) throw PrecomputationExhausted("tuple " + std::to_string(t) + " unavailable");
      if (!seen.insert(t).second) throw ProtocolError("tuple requested twice");
      chosen.push_back(it->second);
    }
    std::vector<PrecomputedTuple> out;
    for (auto* t : chosen) {
      journal_append(id, t->id);
      out.push_back(*t);
      t->consumed = true;
      t->wipe(*field_);
    }
    if (crash_ == CrashPoint::AfterJournal) throw SimulatedCrash("crash after journal commit");
    snapshot();
    return out;
  }

  PrecomputedTuple consume_tuple(SecretId id) {
    for (const auto& t : get(id).tuples)
      if (!t.consumed) return consume_tuples(id, {t.id}).front();
    throw PrecomputationExhausted("no unconsumed tuples for secret " + std::to_string(id));
  }

  // Replaces share values (renewal); the old values are overwritten on disk.
  void replace_shares(SecretId id, std::vector<FieldElement> data_shares, FieldElement password_share) {
    auto& s = mutable_get(id);
    if (data_shares.size() != s.data_shares.size()) throw ProtocolError("renewed share count mismatch");
    s.data_shares = std::move(data_shares);
    s.password_share = std::move(password_share);
    snapshot();
  }

  void set_crash_point(CrashPoint c) { crash_ = c; }

  std::string dump() const {
    std::ostringstream os;
    os << "holder " << holder_ << " secrets=" << sets_.size() << " journal=" << journal_.size() << "\n";
    for (const auto& [id, s] : sets_) {
      os << "  secret " << id << " bytes=" << s.byte_length << " blocks=" << s.data_shares.size()
         << " tuples=" << s.tuples.size() << " unconsumed=" << s.unconsumed() << "\n";
    }
    return os.str();
  }

  fs::path shares_path() const { return dir_ / "shares.bin"; }
  fs::path journal_path() const { return dir_ / "journal.bin"; }

  friend bool operator==(const HolderStore& a, const HolderStore& b) {
    if (a.holder_ != b.holder_ || a.journal_ != b.journal_ || a.sets_.size() != b.sets_.size()) return false;
    for (const auto& [id, s] : a.sets_) {
      auto it = b.sets_.find(id);
      if (it == b.sets_.end() || wire::encode(s) != wire::encode(it->second)) return false;
    }
    return true;
  }

 private:
  static constexpr std::string_view snapshot_magic = "QSSHOLD1";
  static constexpr std::string_view journal_magic = "QSSJRNL1";

  HolderShareSet& mutable_get(SecretId id) {
    auto it = sets_.find(id);
    if (it == sets_.end()) throw ProtocolError("holder " + std::to_string(holder_) + " has no shares for secret " + std::to_string(id));
    return it->second;
  }

  bool journaled(SecretId id, TupleId t) const {
    return journal_index_.contains({id, t});
  }

  void journal_append(SecretId id, TupleId t) {
    journal_.emplace_back(id, t);
    journal_index_.emplace(id, t);
    if (dir_.empty()) return;
    if (!fs::exists(journal_path()) || fs::file_size(journal_path()) == 0)
      io::write_file(journal_path(), Bytes(journal_magic.begin(), journal_magic.end()));
    ByteWriter w;
    w.u64(id).u64(t);
    io::append_file(journal_path(), HashChain::frame(journal_head_, w.bytes()));
  }

  // Rewrites the snapshot; the previous file is zeroed and truncated first.
  void snapshot() {
    if (dir_.empty()) return;
    Bytes out(snapshot_magic.begin(), snapshot_magic.end());
    Digest512 head{};
    ByteWriter hdr;
    hdr.u32(holder_).blob(bigint::to_bytes(field_->modulus(), field_->byte_width()));
    auto f = HashChain::frame(head, hdr.bytes());
    out.insert(out.end(), f.begin(), f.end());
    for (const auto& [id, s] : sets_) {
      auto rec = HashChain::frame(head, wire::encode(s));
      out.insert(out.end(), rec.begin(), rec.end());
    }
    const fs::path tmp = dir_ / "shares.bin.tmp";
    io::write_file(tmp, out);
    io::erase_file(shares_path());
    if (crash_ == CrashPoint::AfterSnapshotErase) throw SimulatedCrash("crash after snapshot erase");
    fs::rename(tmp, shares_path());
  }

  HolderIndex holder_;
  FieldPtr field_;
  fs::path dir_;
  std::map<SecretId, HolderShareSet> sets_;
  std::vector<std::pair<SecretId, TupleId>> journal_;
  std::set<std::pair<SecretId, TupleId>> journal_index_;
  Digest512 journal_head_{};
  CrashPoint crash_ = CrashPoint::None;
};

struct VerifierRecord {
  SecretId id = 0;
  std::uint64_t t1 = 0;
  BitString sigma;
  std::uint64_t t2 = 0;

  Bytes encode() const {
    ByteWriter w;
    w.u64(id).u64(t1).u32(static_cast<std::uint32_t>(sigma.size())).raw(sigma.bytes()).u64(t2);
    return w.take();
  }
  static VerifierRecord decode(ByteView b) {
    ByteReader r(b);
    VerifierRecord v;
    v.id = r.u64();
    v.t1 = r.u64();
    std::uint32_t bits = r.u32();
    v.sigma = BitString::from_bytes(r.raw((bits + 7) / 8), bits);
    v.t2 = r.u64();
    return v;
  }
};

class VerifierStore {
 public:
  explicit VerifierStore(fs::path dir = {}) : dir_(std::move(dir)) {
    if (!dir_.empty()) fs::create_directories(dir_);
  }

  static VerifierStore load(const fs::path& dir) {
    VerifierStore s(dir);
    if (fs::exists(s.log_path()) && fs::file_size(s.log_path()) > 0) {
      for (const auto& p : HashChain::parse(io::read_file(s.log_path()), magic, s.head_))
        s.records_.push_back(VerifierRecord::decode(p));
    }
    return s;
  }

  void append(const VerifierRecord& r) {
    if (find(r.id, r.t1)) throw ProtocolError("verifier already holds a record for this (id, t1)");
    records_.push_back(r);
    if (dir_.empty()) return;
    if (!fs::exists(log_path()) || fs::file_size(log_path()) == 0)
      io::write_file(log_path(), Bytes(magic.begin(), magic.end()));
    io::append_file(log_path(), HashChain::frame(head_, r.encode()));
  }

  std::optional<VerifierRecord> find(SecretId id, std::uint64_t t1) const {
    for (const auto& r : records_)
      if (r.id == id && r.t1 == t1) return r;
    return std::nullopt;
  }
  const std::vector<VerifierRecord>& records() const { return records_; }
  fs::path log_path() const { return dir_ / "records.log"; }

  std::string dump() const {
    std::ostringstream os;
    os << "verifier records=" << records_.size() << "\n";
    for (const auto& r : records_)
      os << "  id=" << r.id << " t1=" << r.t1 << " t2=" << r.t2 << " sigma=" << to_hex(r.sigma.bytes()) << "\n";
    return os.str();
  }

 private:
  static constexpr std::string_view magic = "QSSVLOG1";
  fs::path dir_;
  std::vector<VerifierRecord> records_;
  Digest512 head_{};
};

// One file per secret named by its id, holding t1 followed by the raw R_MAC bits.
struct CalculatorRecord {
  SecretId id = 0;
  std::uint64_t t1 = 0;
  std::optional<MacSeed> seed;  // absent in the computational-security mode
};

class CalculatorStore {
 public:
  CalculatorStore(HashScheme scheme, std::size_t k, fs::path dir = {}) : scheme_(scheme), k_(k), dir_(std::move(dir)) {
    if (scheme_ == HashScheme::Toeplitz && k_ % 8 != 0) throw ConfigError("toeplitz tag length must be a whole number of bytes");
    if (!dir_.empty()) fs::create_directories(dir_);
  }

  static CalculatorStore load(HashScheme scheme, std::size_t k, const fs::path& dir) {
    CalculatorStore s(scheme, k, dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() != ".rec") continue;
      SecretId id = std::stoull(entry.path().stem().string(), nullptr, 16);
      Bytes b = io::read_file(entry.path());
      if (b.size() < 8) throw TamperDetected("calculator record too short");
      ByteReader r(b);
      CalculatorRecord rec{id, r.u64(), std::nullopt};
      if (!r.done()) rec.seed = s.restore_seed(r.raw(r.remaining()));
      s.records_.emplace(id, std::move(rec));
    }
    return s;
  }

  void put(const CalculatorRecord& rec) {
    if (records_.contains(rec.id)) throw ProtocolError("calculator already holds secret " + std::to_string(rec.id));
    records_.emplace(rec.id, rec);
    if (!dir_.empty()) io::write_file(path_for(rec.id), encode(rec));
  }

  const CalculatorRecord* find(SecretId id) const {
    auto it = records_.find(id);
    return it == records_.end() ? nullptr : &it->second;
  }
  const std::map<SecretId, CalculatorRecord>& records() const { return records_; }

  // Bytes held for one secret: its file plus the 8-byte id that names it.
  std::size_t persistent_bytes(SecretId id) const {
    const auto* r = find(id);
    if (!r) return 0;
    return encode(*r).size() + sizeof(SecretId);
  }

  fs::path path_for(SecretId id) const {
    char name[32];
    std::snprintf(name, sizeof(name), "%016llx.rec", static_cast<unsigned long long>(id));
    return dir_ / name;
  }

  std::string dump() const {
    std::ostringstream os;
    os << "calculator records=" << records_.size() << "\n";
    for (const auto& [id, r] : records_)
      os << "  id=" << id << " t1=" << r.t1 << " seed_bits=" << (r.seed ? r.seed->bits().size() : 0) << "\n";
    return os.str();
  }

 private:
  static Bytes encode(const CalculatorRecord& r) {
    ByteWriter w;
    w.u64(r.t1);
    if (r.seed) w.raw(r.seed->bits().bytes());
    return w.take();
  }

  // PolyEval seeds are k bits; Toeplitz seeds are k + n - 1 bits with k and n multiples of 8.
  MacSeed restore_seed(ByteView b) const {
    if (scheme_ == HashScheme::PolyEval) return MacSeed::restore(scheme_, k_, 0, BitString::from_bytes(b, k_), true);
    const std::size_t total = b.size() * 8;
    if (total < k_) throw TamperDetected("calculator seed too short");
    const std::size_t n = total - k_;
    return MacSeed::restore(scheme_, k_, n, BitString::from_bytes(b, n == 0 ? k_ - 1 : k_ + n - 1), true);
  }

  HashScheme scheme_;
  std::size_t k_;
  fs::path dir_;
  std::map<SecretId, CalculatorRecord> records_;
};

}  // namespace qss
