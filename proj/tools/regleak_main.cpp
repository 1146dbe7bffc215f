// Command line front end. Talks to the library exclusively through the C API
// so that it doubles as a living example of driving regleak from C.
#include <sched.h>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "regleak.h"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitEnvironment = 2;

struct BackendArgs {
  std::string backend = "sim";
  std::string profile;
  uint64_t seed = 0;
  int cpu = -1;
  bool force = false;
};

void add_backend_args(CLI::App* cmd, BackendArgs& args) {
  cmd->add_option("--backend", args.backend, "Execution backend")
      ->check(CLI::IsMember({"sim", "hw"}))
      ->capture_default_str();
  cmd->add_option("--profile", args.profile, "Leakage profile JSON (sim backend)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "Override the simulation seed (0 keeps the profile seed)");
  cmd->add_option("--cpu", args.cpu, "Pin to this CPU before hardware measurement");
  cmd->add_flag("--force", args.force,
                "Run on hardware even if mandatory environment checks fail");
}

struct Session {
  rl_session* handle = nullptr;
  ~Session() { rl_session_close(handle); }
};

struct OwnedString {
  char* text = nullptr;
  ~OwnedString() { rl_string_free(text); }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text << "\n";
}

int report_failure(rl_status status, const rl_session* session) {
  std::cerr << "error: " << rl_status_name(status);
  const char* detail = rl_session_last_error(session);
  if (detail && *detail) std::cerr << ": " << detail;
  std::cerr << "\n";
  return kExitError;
}

std::string render_env_table(const std::string& env_json) {
  json report = json::parse(env_json);
  std::ostringstream out;
  out << "| check | expected | observed | status |\n";
  out << "|-------|----------|----------|--------|\n";
  for (const json& check : report["checks"]) {
    bool pass = check["pass"].get<bool>();
    bool mandatory = check["mandatory"].get<bool>();
    out << "| " << check["name"].get<std::string>() << " | "
        << check["expected"].get<std::string>() << " | "
        << check["observed"].get<std::string>() << " | "
        << (pass ? "ok" : (mandatory ? "FAIL" : "warn")) << " |\n";
  }
  out << "\nmandatory checks "
      << (report["mandatory_pass"].get<bool>() ? "passed" : "FAILED");
  return out.str();
}

// Probes only leak what the kernel has restricted, so an unrestricted machine
// would produce a vacuous hardware report; refuse unless forced.
int guard_hardware_env(const BackendArgs& args) {
  if (args.backend != "hw" || args.force) return kExitOk;
  OwnedString env;
  rl_status status = rl_env_check(nullptr, &env.text);
  if (status != RL_OK) {
    std::cerr << "error: environment inspection failed: " << rl_status_name(status) << "\n";
    return kExitEnvironment;
  }
  json report = json::parse(env.text);
  for (const json& check : report["checks"]) {
    if (check["mandatory"].get<bool>() && !check["pass"].get<bool>()) {
      std::cerr << "error: environment check '" << check["name"].get<std::string>()
                << "' failed (expected " << check["expected"].get<std::string>()
                << ", observed " << check["observed"].get<std::string>() << "); "
                << check["hint"].get<std::string>()
                << ", or pass --force to proceed with skip annotations\n";
      return kExitEnvironment;
    }
  }
  return kExitOk;
}

int open_session(const BackendArgs& args, Session& session) {
  rl_status status;
  if (args.backend == "hw") {
    if (!args.profile.empty()) {
      std::cerr << "error: --profile applies to the sim backend only\n";
      return kExitEnvironment;
    }
    int guard = guard_hardware_env(args);
    if (guard != kExitOk) return guard;
    if (args.cpu >= 0) {
      cpu_set_t set;
      CPU_ZERO(&set);
      CPU_SET(args.cpu, &set);
      if (sched_setaffinity(0, sizeof(set), &set) != 0) {
        std::cerr << "error: cannot pin to cpu " << args.cpu << "\n";
        return kExitEnvironment;
      }
    }
    status = rl_session_open_hw(&session.handle);
  } else {
    if (args.profile.empty()) {
      std::cerr << "error: the sim backend needs --profile\n";
      return kExitEnvironment;
    }
    std::string profile = read_file(args.profile);
    status = rl_session_open_sim(profile.c_str(), args.seed, &session.handle);
  }
  if (status != RL_OK) return report_failure(status, session.handle);
  return kExitOk;
}

int run_scan(const BackendArgs& backend_args, const json& options, const std::string& out_path,
             const std::string& format) {
  Session session;
  int rc = open_session(backend_args, session);
  if (rc != kExitOk) return rc;

  OwnedString report;
  rl_status status = rl_scan(session.handle, options.dump().c_str(), &report.text);
  if (status != RL_OK) return report_failure(status, session.handle);

  if (format == "md") {
    OwnedString markdown;
    status = rl_report_markdown(session.handle, report.text, &markdown.text);
    if (status != RL_OK) return report_failure(status, session.handle);
    write_output(out_path, markdown.text);
  } else {
    write_output(out_path, report.text);
  }
  return kExitOk;
}

int run_counterleak(const BackendArgs& backend_args, const json& options,
                    const std::string& out_path) {
  Session session;
  int rc = open_session(backend_args, session);
  if (rc != kExitOk) return rc;

  OwnedString trace;
  rl_status status = rl_counterleak_trace(session.handle, options.dump().c_str(), &trace.text);
  if (status != RL_OK) return report_failure(status, session.handle);
  write_output(out_path, trace.text);
  return kExitOk;
}

int run_study(const BackendArgs& backend_args, const std::string& study, const json& options,
              const std::string& out_path) {
  Session session;
  int rc = open_session(backend_args, session);
  if (rc != kExitOk) return rc;

  OwnedString result;
  rl_status status =
      rl_study_run(session.handle, study.c_str(), options.dump().c_str(), &result.text);
  if (status != RL_OK) return report_failure(status, session.handle);
  write_output(out_path, result.text);
  return kExitOk;
}

int run_env(const std::string& root, bool as_json, const std::string& out_path) {
  OwnedString env;
  rl_status status = rl_env_check(root.c_str(), &env.text);
  if (status != RL_OK) {
    std::cerr << "error: " << rl_status_name(status) << "\n";
    return kExitOk;  // diagnostics never fail the invocation
  }
  write_output(out_path, as_json ? std::string(env.text) : render_env_table(env.text));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transient register and performance counter leakage toolkit"};
  app.set_version_flag("--version", rl_version());
  app.require_subcommand(1);

  BackendArgs backend_args;
  std::string out_path;

  auto* scan = app.add_subcommand("scan", "Probe the register catalog and report verdicts");
  add_backend_args(scan, backend_args);
  std::vector<std::string> probes;
  uint64_t rounds = 0;
  int stride = 0;
  std::string format = "json";
  std::string strategy;
  bool tsc_trap = false;
  bool sweep_operands = false;
  scan->add_option("--probes", probes, "Restrict the scan to these probes")->delimiter(',');
  scan->add_option("--rounds", rounds, "Transient rounds per bit offset");
  scan->add_option("--stride", stride, "Channel slot stride in bytes (1024, 2048 or 4096)");
  scan->add_option("--format", format, "Report format")
      ->check(CLI::IsMember({"json", "md"}))
      ->capture_default_str();
  scan->add_option("--strategy", strategy,
                   "Fault handling: signal_handler, transaction_abort or "
                   "speculative_suppression");
  scan->add_flag("--tsc-trap", tsc_trap, "Trap rdtsc via prctl for the rest of the process");
  scan->add_flag("--sweep-operands", sweep_operands, "Try every operand of multi-operand probes");
  scan->add_option("-o,--out", out_path, "Write the report here instead of stdout");

  auto* counterleak =
      app.add_subcommand("counterleak", "Transiently sample a performance counter");
  add_backend_args(counterleak, backend_args);
  std::string event;
  uint32_t counter_index = 0;
  int bytes = 1;
  int samples = 32;
  counterleak->add_option("--event", event, "Counter event name")->required();
  counterleak->add_option("--index", counter_index, "Hardware counter index for rdpmc");
  counterleak->add_option("--bytes", bytes, "Bytes to leak per read (1..4)");
  counterleak->add_option("--samples", samples, "Consecutive samples to capture");
  counterleak->add_option("-o,--out", out_path, "Write the trace JSON here instead of stdout");

  auto* study = app.add_subcommand("study", "Run a leakage case study");
  add_backend_args(study, backend_args);
  std::string study_name;
  std::string study_options;
  uint64_t traces = 0;
  double noise = -1.0;
  uint64_t candidates = 0;
  uint64_t trials = 0;
  uint64_t bits = 0;
  study->add_option("name", study_name, "spectre, kaslr, rsa or zigzagger")->required();
  study->add_option("--traces", traces, "rsa: traces to capture");
  study->add_option("--noise", noise, "sim: scale counter noise by this factor");
  study->add_option("--candidates", candidates, "kaslr: candidate addresses to probe");
  study->add_option("--trials", trials, "zigzagger: classification trials");
  study->add_option("--bits", bits, "rsa: exponent length");
  study->add_option("--options", study_options, "Additional study options as a JSON object");
  study->add_option("-o,--out", out_path, "Write the result JSON here instead of stdout");

  auto* env = app.add_subcommand("env", "Inspect host restrictions the probes depend on");
  std::string env_root = "/";
  bool env_json = false;
  env->add_option("--root", env_root, "Path prefix for /proc and /sys (for testing)");
  env->add_flag("--json", env_json, "Emit JSON instead of a table");
  env->add_option("-o,--out", out_path, "Write here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitEnvironment;
  }

  try {
    if (scan->parsed()) {
      json options = json::object();
      if (scan->count("--probes")) options["probes"] = probes;
      if (scan->count("--rounds")) options["rounds"] = rounds;
      if (scan->count("--stride")) options["stride_bytes"] = stride;
      if (scan->count("--strategy")) options["fault_strategy"] = strategy;
      if (tsc_trap) options["tsc_trap"] = true;
      if (sweep_operands) options["sweep_operands"] = true;
      return run_scan(backend_args, options, out_path, format);
    }
    if (counterleak->parsed()) {
      json options = {{"counter_event", event},
                      {"counter_index", counter_index},
                      {"bytes", bytes},
                      {"samples", samples}};
      return run_counterleak(backend_args, options, out_path);
    }
    if (study->parsed()) {
      json options = json::object();
      if (!study_options.empty()) {
        try {
          options = json::parse(study_options);
        } catch (const json::parse_error& e) {
          std::cerr << "error: --options is not valid JSON: " << e.what() << "\n";
          return kExitEnvironment;
        }
        if (!options.is_object()) {
          std::cerr << "error: --options must be a JSON object\n";
          return kExitEnvironment;
        }
      }
      if (study->count("--traces")) options["traces"] = traces;
      if (study->count("--noise")) options["noise_scale"] = noise;
      if (study->count("--candidates")) options["candidates"] = candidates;
      if (study->count("--trials")) options["trials"] = trials;
      if (study->count("--bits")) options["bits"] = bits;
      return run_study(backend_args, study_name, options, out_path);
    }
    if (env->parsed()) return run_env(env_root, env_json, out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitEnvironment;
}
