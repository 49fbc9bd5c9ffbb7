#pragma once

// Deterministic discrete-event loop: events ordered by (simulated time, insertion sequence),
// per-node logical clocks with fixed skew, and a line-oriented transcript.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <queue>
#include <string>
#include <vector>

#include "qss/bytes.hpp"
#include "qss/uhash.hpp"

namespace qss {

class EventQueue {
 public:
  using Action = std::function<void(double now_ms)>;

  void at(double time_ms, Action a) { queue_.push(Event{time_ms, next_seq_++, std::move(a)}); }
  bool empty() const { return queue_.empty(); }
  double next_time() const { return queue_.top().time_ms; }
  std::size_t processed() const { return processed_; }

  // Pops the next event; `floor_ms` is the earliest time it may run (the key network clock).
  void run_one(double floor_ms) {
    Event e = queue_.top();
    queue_.pop();
    ++processed_;
    e.action(std::max(e.time_ms, floor_ms));
  }

 private:
  struct Event {
    double time_ms;
    std::uint64_t seq;
    Action action;
    bool operator>(const Event& o) const { return time_ms != o.time_ms ? time_ms > o.time_ms : seq > o.seq; }
  };
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
  std::uint64_t next_seq_ = 0;
  std::size_t processed_ = 0;
};

// Node clocks read epoch + simulated time + skew, in whole milliseconds.
class NodeClocks {
 public:
  NodeClocks(std::uint64_t epoch_ms, std::map<std::string, double> skew_ms) : epoch_ms_(epoch_ms), skew_(std::move(skew_ms)) {}

  std::uint64_t local_ms(const std::string& node, double sim_ms) const {
    auto it = skew_.find(node);
    const double t = static_cast<double>(epoch_ms_) + sim_ms + (it == skew_.end() ? 0.0 : it->second);
    return t <= 0 ? 0 : static_cast<std::uint64_t>(t);
  }
  std::uint64_t epoch_ms() const { return epoch_ms_; }
  const std::map<std::string, double>& skews() const { return skew_; }

 private:
  std::uint64_t epoch_ms_;
  std::map<std::string, double> skew_;
};

// Each line: "<sim ms> <event> key=value ...". Wall-clock time never appears.
class Transcript {
 public:
  class Line {
   public:
    Line(Transcript& t, double ms, std::string_view event) : t_(t) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", ms);
      text_ = std::string(buf) + " " + std::string(event);
    }
    Line(const Line&) = delete;
    ~Line() { t_.lines_.push_back(std::move(text_)); }

    Line& kv(std::string_view k, std::string_view v) {
      text_ += " ";
      text_ += k;
      text_ += "=";
      text_ += v;
      return *this;
    }
    Line& kv(std::string_view k, const char* v) { return kv(k, std::string_view(v)); }
    Line& kv(std::string_view k, const std::string& v) { return kv(k, std::string_view(v)); }
    Line& kv(std::string_view k, std::uint64_t v) { return kv(k, std::to_string(v)); }
    Line& kv(std::string_view k, int v) { return kv(k, std::to_string(v)); }
    Line& kv(std::string_view k, unsigned v) { return kv(k, std::to_string(v)); }
    Line& ms(std::string_view k, double v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", v);
      return kv(k, std::string(buf));
    }

   private:
    Transcript& t_;
    std::string text_;
  };

  Line log(double ms, std::string_view event) { return Line(*this, ms, event); }
  const std::vector<std::string>& lines() const { return lines_; }
  std::string text() const {
    std::string out;
    for (const auto& l : lines_) out += l + "\n";
    return out;
  }
  // First 16 hex digits of SHA-512 over the transcript text.
  std::string id() const {
    const auto t = text();
    auto d = cr_hash(ByteView(reinterpret_cast<const std::uint8_t*>(t.data()), t.size()));
    return to_hex(ByteView(d.data(), 8));
  }
  void clear() { lines_.clear(); }

 private:
  std::vector<std::string> lines_;
};

}  // namespace qss
