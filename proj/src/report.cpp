#include "report.hpp"

#include <sstream>

#include "json.hpp"

#include "errors.hpp"

namespace regleak {

using nlohmann::json;

namespace {

std::string hex_u64(uint64_t v) {
  std::ostringstream out;
  out << "0x" << std::hex << v;
  return out.str();
}

uint64_t parse_u64(const json& v, const std::string& where) {
  if (v.is_number_unsigned()) return v.get<uint64_t>();
  if (v.is_string()) {
    try {
      size_t pos = 0;
      uint64_t parsed = std::stoull(v.get<std::string>(), &pos, 0);
      if (pos != v.get<std::string>().size())
        raise(ErrorCode::InvalidArgument, where + ": trailing characters");
      return parsed;
    } catch (const std::logic_error&) {
      raise(ErrorCode::InvalidArgument, where + ": not a number");
    }
  }
  raise(ErrorCode::InvalidArgument, where + ": expected number or hex string");
}

}  // namespace

const char* row_status_name(RowStatus status) {
  switch (status) {
    case RowStatus::Leaks: return "leaks";
    case RowStatus::ZeroForward: return "zero_forward";
    case RowStatus::Unverified: return "unverified";
    case RowStatus::NoLeak: return "no_leak";
    case RowStatus::Skipped: return "skipped";
  }
  return "skipped";
}

RowStatus row_status_from_name(const std::string& name) {
  if (name == "leaks") return RowStatus::Leaks;
  if (name == "zero_forward") return RowStatus::ZeroForward;
  if (name == "unverified") return RowStatus::Unverified;
  if (name == "no_leak") return RowStatus::NoLeak;
  if (name == "skipped") return RowStatus::Skipped;
  raise(ErrorCode::InvalidArgument, "unknown row status: " + name);
}

std::string report_to_json(const MachineReport& report) {
  json rows = json::array();
  for (const ProbeResult& row : report.rows) {
    json evidence = json::array();
    for (const ValueEvidence& ev : row.evidence)
      evidence.push_back({{"value", hex_u64(ev.value)}, {"hits", ev.hits}});
    rows.push_back({{"probe", row.probe},
                    {"status", row_status_name(row.status)},
                    {"evidence", evidence},
                    {"rounds", row.rounds},
                    {"skip_reason", row.skip_reason}});
  }
  json root = {{"schema_version", report.schema_version},
               {"backend", report.backend},
               {"cpu_model", report.cpu_model},
               {"microcode", report.microcode},
               {"microarchitecture", report.microarchitecture},
               {"profile", report.profile},
               {"seed", report.seed},
               {"stride_bytes", report.stride_bytes},
               {"rounds", report.rounds},
               {"timestamp", report.timestamp},
               {"rows", rows}};
  return root.dump(2);
}

MachineReport report_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    raise(ErrorCode::InvalidArgument, std::string("report JSON parse error: ") + e.what());
  }
  if (!root.is_object()) raise(ErrorCode::InvalidArgument, "report must be a JSON object");

  MachineReport report;
  report.schema_version = root.value("schema_version", 1);
  if (report.schema_version != 1)
    raise(ErrorCode::InvalidArgument,
          "unsupported schema_version " + std::to_string(report.schema_version));
  report.backend = root.value("backend", "");
  report.cpu_model = root.value("cpu_model", "");
  report.microcode = root.value("microcode", "");
  report.microarchitecture = root.value("microarchitecture", "");
  report.profile = root.value("profile", "");
  if (root.contains("seed")) report.seed = parse_u64(root["seed"], "seed");
  report.stride_bytes = root.value("stride_bytes", 4096);
  if (root.contains("rounds")) report.rounds = parse_u64(root["rounds"], "rounds");
  report.timestamp = root.value("timestamp", "");

  if (root.contains("rows")) {
    if (!root["rows"].is_array()) raise(ErrorCode::InvalidArgument, "rows must be an array");
    for (const json& row_json : root["rows"]) {
      ProbeResult row;
      row.probe = row_json.value("probe", "");
      row.status = row_status_from_name(row_json.value("status", "skipped"));
      if (row_json.contains("rounds")) row.rounds = parse_u64(row_json["rounds"], "rows.rounds");
      row.skip_reason = row_json.value("skip_reason", "");
      if (row_json.contains("evidence")) {
        for (const json& ev_json : row_json["evidence"]) {
          ValueEvidence ev;
          ev.value = parse_u64(ev_json.at("value"), "evidence.value");
          ev.hits = parse_u64(ev_json.at("hits"), "evidence.hits");
          row.evidence.push_back(ev);
        }
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

std::string report_to_markdown(const MachineReport& report) {
  std::ostringstream out;
  out << "# Register leakage report\n\n";
  out << "- backend: " << report.backend << "\n";
  if (!report.profile.empty()) out << "- profile: " << report.profile << "\n";
  out << "- cpu_model: " << report.cpu_model << "\n";
  out << "- microcode: " << report.microcode << "\n";
  if (!report.microarchitecture.empty())
    out << "- microarchitecture: " << report.microarchitecture << "\n";
  out << "- seed: " << report.seed << "\n";
  out << "- stride_bytes: " << report.stride_bytes << "\n";
  out << "- rounds: " << report.rounds << "\n";
  out << "- timestamp: " << report.timestamp << "\n\n";

  out << "| probe | verdict | evidence | rounds |\n";
  out << "|-------|---------|----------|--------|\n";
  for (const ProbeResult& row : report.rows) {
    out << "| " << row.probe << " | " << row_status_name(row.status) << " | ";
    if (row.status == RowStatus::Skipped) {
      out << row.skip_reason;
    } else if (row.evidence.empty()) {
      out << "-";
    } else {
      for (size_t i = 0; i < row.evidence.size(); ++i) {
        if (i) out << ", ";
        out << hex_u64(row.evidence[i].value) << " (" << row.evidence[i].hits << " hits)";
      }
    }
    out << " | " << row.rounds << " |\n";
  }
  return out.str();
}

bool operator==(const ValueEvidence& a, const ValueEvidence& b) {
  return a.value == b.value && a.hits == b.hits;
}

bool operator==(const ProbeResult& a, const ProbeResult& b) {
  return a.probe == b.probe && a.status == b.status && a.evidence == b.evidence &&
         a.rounds == b.rounds && a.skip_reason == b.skip_reason;
}

bool operator==(const MachineReport& a, const MachineReport& b) {
  return a.schema_version == b.schema_version && a.backend == b.backend &&
         a.cpu_model == b.cpu_model && a.microcode == b.microcode &&
         a.microarchitecture == b.microarchitecture && a.profile == b.profile &&
         a.seed == b.seed && a.stride_bytes == b.stride_bytes && a.rounds == b.rounds &&
         a.timestamp == b.timestamp && a.rows == b.rows;
}

}  // namespace regleak
