#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "qss/qss.hpp"

using namespace qss;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  bool tamper_owner = false;
  bool false_claim = false;
  std::optional<unsigned> corrupt_holder;
  std::vector<unsigned> drop_holders;
  std::optional<std::string> bit_flip;
  std::vector<std::string> skews;

  void add_seed(CLI::App* app) {
    app->add_option("--seed", seed, "Master seed (overrides QSS_SEED and the config)");
  }
  void add_sets(CLI::App* app) {
    app->add_option("--set", sets, "Config override key.path=value (repeatable)");
    app->add_option("--skew", skews, "Clock skew NODE=MS (repeatable)");
  }
  void add_attacks(CLI::App* app) {
    app->add_flag("--tamper-owner", tamper_owner, "Owner alters the data before forwarding it");
    app->add_flag("--false-claim", false_claim, "End user claims altered data");
    app->add_option("--corrupt-holder", corrupt_holder, "Holder index that returns wrong values");
    app->add_option("--drop-holder", drop_holders, "Holder index that is offline (repeatable)");
    app->add_option("--bit-flip", bit_flip, "Flip one ciphertext bit: FROM:TO[:PHASE]");
  }

  // Persistent settings: the seed and --set assignments.
  void apply_persistent(json& j) const {
    if (const char* env = std::getenv("QSS_SEED")) {
      try {
        j["seed"] = std::stoull(env);
      } catch (const std::exception&) {
        throw ConfigError("QSS_SEED: not an unsigned integer");
      }
    }
    if (seed) j["seed"] = *seed;
    for (const auto& s : sets) apply_override(j, s);
    for (const auto& s : skews) {
      const auto eq = s.rfind('=');
      if (eq == std::string::npos) throw ConfigError("--skew '" + s + "': expected NODE=MS");
      try {
        j["sim"]["clock_skew_ms"][s.substr(0, eq)] = std::stod(s.substr(eq + 1));
      } catch (const std::invalid_argument&) {
        throw ConfigError("--skew '" + s + "': bad milliseconds");
      }
    }
  }

  void apply_attacks(json& j) const {
    if (tamper_owner) j["attacks"]["tamper_owner"] = true;
    if (false_claim) j["attacks"]["false_claim_user"] = true;
    if (corrupt_holder) j["attacks"]["corrupt_holder"] = *corrupt_holder;
    if (!drop_holders.empty()) j["attacks"]["drop_holders"] = drop_holders;
    if (bit_flip) {
      std::vector<std::string> parts;
      std::stringstream ss(*bit_flip);
      for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
      if (parts.size() < 2 || parts.size() > 3) throw ConfigError("--bit-flip: expected FROM:TO[:PHASE]");
      json b = {{"from", parts[0]}, {"to", parts[1]}};
      if (parts.size() == 3) b["phase"] = parts[2];
      j["attacks"]["bit_flip"] = b;
    }
  }
};

json base_config(const std::string& path) { return path.empty() ? json::object() : load_json_file(path); }

void print_verdicts(const std::vector<VerdictEvent>& vs, std::size_t from) {
  for (std::size_t i = from; i < vs.size(); ++i) std::cout << format_verdict(vs[i]) << "\n";
}

// Opens (or creates, for registration) a state directory and runs one operation on it.
int with_state(const std::string& state, const std::string& config_path, const Overrides& o, bool may_create,
               const std::function<void(Deployment&, const ScenarioConfig&)>& op) {
  StateDir dir(state);
  if (!dir.exists()) {
    if (!may_create) throw ConfigError("--state: " + state + " is not an initialized state directory");
    json j = base_config(config_path);
    o.apply_persistent(j);
    dir.create(j);
  } else if (!config_path.empty() || !o.sets.empty() || o.seed || !o.skews.empty()) {
    throw ConfigError("--state: configuration is fixed once the state directory exists");
  }
  json j = dir.config_json();
  o.apply_attacks(j);
  const ScenarioConfig sc = parse_scenario(j);
  auto d = dir.open(sc);
  const std::size_t mark = d->verdicts().size();
  op(*d, sc);
  dir.save(*d);
  print_verdicts(d->verdicts(), mark);
  std::vector<VerdictEvent> mine(d->verdicts().begin() + static_cast<std::ptrdiff_t>(mark), d->verdicts().end());
  return exit_code_for(mine);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Information-theoretically secure data storage and integrity verification over a simulated QKD network"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "qss 1.0");

  Overrides o;
  std::string config_path, out_dir, state_dir, password = "open sesame";
  bool as_json = false;
  SecretId id = 0;

  auto* run = app.add_subcommand("run", "Run a full scenario");
  run->add_option("--config,-c", config_path, "Scenario JSON file")->check(CLI::ExistingFile);
  run->add_option("--out,-o", out_dir, "Directory for transcript, ledger, summary and stores");
  run->add_flag("--json", as_json, "Print the result as JSON");
  o.add_seed(run);
  o.add_sets(run);
  o.add_attacks(run);

  std::string text, hex, file;
  std::optional<std::size_t> size;
  auto* reg = app.add_subcommand("register", "Register data in a state directory");
  reg->add_option("--state,-s", state_dir, "State directory (created on first use)")->required();
  reg->add_option("--config,-c", config_path, "Scenario JSON used when creating the state")->check(CLI::ExistingFile);
  auto* g = reg->add_option_group("data");
  g->add_option("--text", text, "Data as text");
  g->add_option("--hex", hex, "Data as hex");
  g->add_option("--file", file, "Data from a file")->check(CLI::ExistingFile);
  g->add_option("--size", size, "Seeded random data of this many bytes");
  g->require_option(1);
  reg->add_option("--password,-p", password, "Password");
  o.add_seed(reg);
  o.add_sets(reg);
  o.add_attacks(reg);

  std::string recovered_out;
  auto* rec = app.add_subcommand("reconstruct", "Reconstruct a secret and deliver it to the end user");
  rec->add_option("--state,-s", state_dir, "State directory")->required();
  rec->add_option("--id", id, "Secret id")->required();
  rec->add_option("--password,-p", password, "Password");
  rec->add_option("--out,-o", recovered_out, "Write the delivered data to this file");
  o.add_attacks(rec);

  auto* ver = app.add_subcommand("verify", "End user asks for an integrity check");
  ver->add_option("--state,-s", state_dir, "State directory")->required();
  ver->add_option("--id", id, "Secret id")->required();
  o.add_attacks(ver);

  std::optional<std::uint64_t> t1;
  auto* ref = app.add_subcommand("refute", "End user claims receipt; the owner disputes through the verifier");
  ref->add_option("--state,-s", state_dir, "State directory")->required();
  ref->add_option("--id", id, "Secret id")->required();
  ref->add_option("--t1", t1, "Claimed registration time (ms since epoch)");
  o.add_attacks(ref);

  auto* ren = app.add_subcommand("renew", "Refresh the shares of a secret");
  ren->add_option("--state,-s", state_dir, "State directory")->required();
  ren->add_option("--id", id, "Secret id")->required();
  o.add_attacks(ren);

  std::optional<std::size_t> reps;
  std::vector<double> sizes;
  bool no_field = false, no_renewal = false;
  auto* bench = app.add_subcommand("bench", "Per-phase timing sweep over data sizes");
  bench->add_option("--config,-c", config_path, "Scenario JSON file")->check(CLI::ExistingFile);
  bench->add_option("--out,-o", out_dir, "Directory for bench.csv, bench.dat and bench.txt");
  bench->add_option("--reps", reps, "Repetitions per size");
  bench->add_option("--sizes", sizes, "Data sizes in KB")->delimiter(',');
  bench->add_flag("--no-field-compare", no_field, "Skip the Mersenne versus general prime comparison");
  bench->add_flag("--no-renewal", no_renewal, "Skip renewal timing");
  o.add_seed(bench);
  o.add_sets(bench);

  std::string inspect_target;
  auto* insp = app.add_subcommand("inspect", "Dump a state directory, store, record file or transcript");
  insp->add_option("path", inspect_target, "Path to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 64;
  }

  try {
    if (*run) {
      json j = base_config(config_path);
      o.apply_persistent(j);
      o.apply_attacks(j);
      if (!out_dir.empty()) j["output"]["dir"] = out_dir;
      const ScenarioConfig sc = parse_scenario(j);
      fs::path stores;
      if (!sc.output_dir.empty()) {
        stores = fs::path(sc.output_dir) / "stores";
        fs::remove_all(stores);
      }
      const auto r = run_scenario(sc, stores);
      if (!sc.output_dir.empty()) write_scenario_outputs(r, sc.output_dir);
      if (as_json) {
        json out = {{"name", r.name},
                    {"transcript_id", r.transcript_id},
                    {"conserved", r.conserved},
                    {"no_reuse", r.no_reuse},
                    {"expectation_failures", r.expectation_failures},
                    {"exit_code", r.exit_code}};
        out["verdicts"] = json::array();
        for (const auto& v : r.verdicts)
          out["verdicts"].push_back({{"id", v.id}, {"phase", to_string(v.phase)}, {"outcome", to_string(v.outcome)},
                                     {"detail", v.detail}, {"at_ms", v.at_ms}});
        std::cout << out.dump(2) << "\n";
      } else {
        std::cout << r.summary();
      }
      return r.exit_code;
    }
    if (*reg) {
      return with_state(state_dir, config_path, o, true, [&](Deployment& d, const ScenarioConfig& sc) {
        Bytes data;
        if (!text.empty()) data.assign(text.begin(), text.end());
        else if (!hex.empty()) data = from_hex(hex);
        else if (!file.empty()) data = io::read_file(file);
        else {
          SeededRandom rng(derive_seed(sc.deploy.seed, "cli-data/" + std::to_string(d.export_state().next_id)));
          data = rng.bytes(*size);
        }
        const SecretId got = d.register_data(data, password);
        if (got != 0) std::cout << "id=" << got << "\n";
      });
    }
    if (*rec) {
      return with_state(state_dir, "", o, false, [&](Deployment& d, const ScenarioConfig&) {
        auto v = d.reconstruct(id, password);
        if (v.outcome == Outcome::Success && !recovered_out.empty())
          io::write_file(recovered_out, d.end_user_received().at(id).data);
      });
    }
    if (*ver) return with_state(state_dir, "", o, false, [&](Deployment& d, const ScenarioConfig&) { d.verify(id); });
    if (*ref) return with_state(state_dir, "", o, false, [&](Deployment& d, const ScenarioConfig&) { d.refute(id, t1); });
    if (*ren) return with_state(state_dir, "", o, false, [&](Deployment& d, const ScenarioConfig&) { d.renew(id); });
    if (*bench) {
      json j = base_config(config_path);
      o.apply_persistent(j);
      if (reps) j["bench"]["repetitions"] = *reps;
      if (!sizes.empty()) j["bench"]["sizes_kb"] = sizes;
      if (no_field) j["bench"]["field_compare"] = false;
      if (no_renewal) j["bench"]["renewal"] = false;
      if (!out_dir.empty()) j["output"]["dir"] = out_dir;
      const ScenarioConfig sc = parse_scenario(j);
      const auto r = run_bench(sc);
      if (!sc.output_dir.empty()) write_bench_outputs(r, sc.output_dir);
      std::cout << r.table();
      const bool ok = r.scaling_ok() && r.ledger_ok && (!r.field || r.field->mersenne_faster());
      return ok ? 0 : 3;
    }
    if (*insp) {
      std::cout << inspect_path(inspect_target);
      return 0;
    }
  } catch (const TamperDetected& e) {
    std::cerr << "tamper detected: " << e.what() << "\n";
    return 65;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 64;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 70;
  }
  return 0;
}
