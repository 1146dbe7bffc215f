#include "sim_backend.hpp"

#include <csignal>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "channel.hpp"
#include "errors.hpp"
#include "harness.hpp"
#include "probe_catalog.hpp"

namespace regleak {

using nlohmann::json;

namespace {

[[noreturn]] void bad_profile(const std::string& path, const std::string& why) {
  raise(ErrorCode::ProfileInvalid, path + ": " + why);
}

uint64_t parse_value_field(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<uint64_t>();
  if (v.is_number_integer()) {
    int64_t s = v.get<int64_t>();
    if (s < 0) bad_profile(path, "must be non-negative");
    return static_cast<uint64_t>(s);
  }
  if (v.is_string()) {
    const std::string& s = v.get<std::string>();
    try {
      size_t pos = 0;
      uint64_t parsed = std::stoull(s, &pos, 0);
      if (pos != s.size()) bad_profile(path, "trailing characters in '" + s + "'");
      return parsed;
    } catch (const std::invalid_argument&) {
      bad_profile(path, "not a number: '" + s + "'");
    } catch (const std::out_of_range&) {
      bad_profile(path, "out of range: '" + s + "'");
    }
  }
  bad_profile(path, "must be a number or numeric string");
}

ProbeBehaviorKind parse_kind(const std::string& s, const std::string& path) {
  if (s == "silent") return ProbeBehaviorKind::Silent;
  if (s == "leak_value") return ProbeBehaviorKind::LeakValue;
  if (s == "zero_forward") return ProbeBehaviorKind::ZeroForward;
  if (s == "timestamp") return ProbeBehaviorKind::Timestamp;
  if (s == "unverified_timestamp") return ProbeBehaviorKind::UnverifiedTimestamp;
  bad_profile(path, "unknown behavior '" + s + "'");
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

class SimCountingTimer : public CountingTimer {
 public:
  explicit SimCountingTimer(SimBackend& owner) : owner_(owner) {}
  void start() override {}
  void stop() override {}
  uint64_t read() override { return owner_.clock(); }
  double resolution() override { return 1.0; }
  bool degraded() override { return false; }

 private:
  SimBackend& owner_;
};

}  // namespace

class SimChannelMemory : public ChannelMemory {
 public:
  SimChannelMemory(SimBackend& owner, const ChannelConfig& config)
      : owner_(owner),
        config_(config),
        hot_(static_cast<size_t>(config.slot_count) * config.symbol_count, 0) {}

  void flush_slot(int symbol, int slot) override {
    hot_[index(symbol, slot)] = 0;
    owner_.advance(owner_.profile_.timing.flush_cycles);
  }

  void touch_slot(int symbol, int slot) override {
    hot_[index(symbol, slot)] = 1;
    owner_.advance(owner_.profile_.timing.miss_cycles);
  }

  uint64_t time_slot(int symbol, int slot) override {
    bool hot = hot_[index(symbol, slot)] != 0;
    hot_[index(symbol, slot)] = 1;  // the timed load itself warms the line
    uint64_t cycles = hot ? owner_.profile_.timing.hit_cycles : owner_.profile_.timing.miss_cycles;
    owner_.advance(cycles);
    return cycles;
  }

  void on_decode_pass(int symbol) override {
    double rate = owner_.profile_.spurious_hit_rate;
    if (rate > 0.0 && owner_.rng_.chance(rate)) {
      uint64_t slot = owner_.rng_.below(static_cast<uint64_t>(config_.slot_count));
      hot_[index(symbol, static_cast<int>(slot))] = 1;
    }
  }

 private:
  size_t index(int symbol, int slot) const {
    return static_cast<size_t>(symbol) * config_.slot_count + static_cast<size_t>(slot);
  }

  SimBackend& owner_;
  ChannelConfig config_;
  std::vector<uint8_t> hot_;
};

ProbeBehavior LeakageProfile::behavior_for(const std::string& probe) const {
  auto it = probes.find(probe);
  if (it == probes.end()) return {};
  return it->second;
}

const char* behavior_kind_name(ProbeBehaviorKind kind) {
  switch (kind) {
    case ProbeBehaviorKind::Silent: return "silent";
    case ProbeBehaviorKind::LeakValue: return "leak_value";
    case ProbeBehaviorKind::ZeroForward: return "zero_forward";
    case ProbeBehaviorKind::Timestamp: return "timestamp";
    case ProbeBehaviorKind::UnverifiedTimestamp: return "unverified_timestamp";
  }
  return "silent";
}

LeakageProfile profile_from_json_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    bad_profile("profile", std::string("JSON parse error: ") + e.what());
  }
  if (!root.is_object()) bad_profile("profile", "top level must be an object");

  LeakageProfile p;
  p.name = root.value("name", "");
  p.cpu_model = root.value("cpu_model", "");
  p.microcode = root.value("microcode", "");
  p.microarchitecture = root.value("microarchitecture", "");

  if (root.contains("spurious_hit_rate")) {
    if (!root["spurious_hit_rate"].is_number())
      bad_profile("spurious_hit_rate", "must be a number");
    p.spurious_hit_rate = root["spurious_hit_rate"].get<double>();
    if (p.spurious_hit_rate < 0.0 || p.spurious_hit_rate > 1.0)
      bad_profile("spurious_hit_rate", "must be within [0, 1]");
  }
  if (root.contains("seed")) p.seed = parse_value_field(root["seed"], "seed");

  if (root.contains("timing")) {
    const json& t = root["timing"];
    if (!t.is_object()) bad_profile("timing", "must be an object");
    p.timing.hit_cycles = t.contains("hit_cycles")
                              ? parse_value_field(t["hit_cycles"], "timing.hit_cycles")
                              : p.timing.hit_cycles;
    p.timing.miss_cycles = t.contains("miss_cycles")
                               ? parse_value_field(t["miss_cycles"], "timing.miss_cycles")
                               : p.timing.miss_cycles;
    p.timing.flush_cycles = t.contains("flush_cycles")
                                ? parse_value_field(t["flush_cycles"], "timing.flush_cycles")
                                : p.timing.flush_cycles;
    p.timing.encode_window_cycles =
        t.contains("encode_window_cycles")
            ? parse_value_field(t["encode_window_cycles"], "timing.encode_window_cycles")
            : p.timing.encode_window_cycles;
    if (p.timing.hit_cycles == 0 || p.timing.miss_cycles == 0)
      bad_profile("timing", "latencies must be positive");
  }

  if (root.contains("probes")) {
    const json& probes = root["probes"];
    if (!probes.is_object()) bad_profile("probes", "must be an object");
    for (const auto& [probe_name, body] : probes.items()) {
      std::string path = "probes." + probe_name;
      if (!find_probe(probe_name)) bad_profile(path, "not a catalog probe");
      if (!body.is_object()) bad_profile(path, "must be an object");
      if (!body.contains("behavior")) bad_profile(path + ".behavior", "missing");
      if (!body["behavior"].is_string()) bad_profile(path + ".behavior", "must be a string");
      ProbeBehavior behavior;
      behavior.kind = parse_kind(body["behavior"].get<std::string>(), path + ".behavior");
      if (behavior.kind == ProbeBehaviorKind::LeakValue) {
        if (!body.contains("value")) bad_profile(path + ".value", "required for leak_value");
        behavior.value = parse_value_field(body["value"], path + ".value");
      }
      p.probes[probe_name] = behavior;
    }
  }

  if (root.contains("counters")) {
    const json& counters = root["counters"];
    if (!counters.is_object()) bad_profile("counters", "must be an object");
    for (const auto& [counter_name, body] : counters.items()) {
      std::string path = "counters." + counter_name;
      if (!body.is_object()) bad_profile(path, "must be an object");
      CounterModel model;
      if (body.contains("counter_index"))
        model.counter_index =
            static_cast<uint32_t>(parse_value_field(body["counter_index"], path + ".counter_index"));
      if (body.contains("initial"))
        model.initial = parse_value_field(body["initial"], path + ".initial");
      if (body.contains("self_increment")) {
        if (!body["self_increment"].is_number_integer())
          bad_profile(path + ".self_increment", "must be an integer");
        model.self_increment = body["self_increment"].get<int64_t>();
      }
      if (body.contains("auto_increment")) {
        if (!body["auto_increment"].is_number_integer())
          bad_profile(path + ".auto_increment", "must be an integer");
        model.auto_increment = body["auto_increment"].get<int64_t>();
      }
      if (body.contains("events")) {
        if (!body["events"].is_object()) bad_profile(path + ".events", "must be an object");
        for (const auto& [event_name, rule_body] : body["events"].items()) {
          std::string rule_path = path + ".events." + event_name;
          if (!rule_body.is_object()) bad_profile(rule_path, "must be an object");
          CounterEventRule rule;
          if (rule_body.contains("increment")) {
            if (!rule_body["increment"].is_number_integer())
              bad_profile(rule_path + ".increment", "must be an integer");
            rule.increment = rule_body["increment"].get<int64_t>();
          }
          if (rule_body.contains("noise_sigma")) {
            if (!rule_body["noise_sigma"].is_number())
              bad_profile(rule_path + ".noise_sigma", "must be a number");
            rule.noise_sigma = rule_body["noise_sigma"].get<double>();
            if (rule.noise_sigma < 0.0) bad_profile(rule_path + ".noise_sigma", "must be >= 0");
          }
          model.events[event_name] = rule;
        }
      }
      p.counters[counter_name] = model;
    }
  }
  return p;
}

LeakageProfile load_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::Io, "cannot open profile: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return profile_from_json_text(buffer.str());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ProfileInvalid)
      raise(ErrorCode::ProfileInvalid, path + ": " + e.what());
    throw;
  }
}

std::string profile_to_json_text(const LeakageProfile& p) {
  json root;
  root["name"] = p.name;
  root["cpu_model"] = p.cpu_model;
  root["microcode"] = p.microcode;
  root["microarchitecture"] = p.microarchitecture;
  root["spurious_hit_rate"] = p.spurious_hit_rate;
  root["seed"] = p.seed;
  root["timing"] = {{"hit_cycles", p.timing.hit_cycles},
                    {"miss_cycles", p.timing.miss_cycles},
                    {"flush_cycles", p.timing.flush_cycles},
                    {"encode_window_cycles", p.timing.encode_window_cycles}};
  json probes = json::object();
  for (const auto& [name, behavior] : p.probes) {
    json body;
    body["behavior"] = behavior_kind_name(behavior.kind);
    if (behavior.kind == ProbeBehaviorKind::LeakValue) body["value"] = behavior.value;
    probes[name] = body;
  }
  root["probes"] = probes;
  json counters = json::object();
  for (const auto& [name, model] : p.counters) {
    json body;
    body["counter_index"] = model.counter_index;
    body["initial"] = model.initial;
    body["self_increment"] = model.self_increment;
    body["auto_increment"] = model.auto_increment;
    json events = json::object();
    for (const auto& [event, rule] : model.events)
      events[event] = {{"increment", rule.increment}, {"noise_sigma", rule.noise_sigma}};
    body["events"] = events;
    counters[name] = body;
  }
  root["counters"] = counters;
  return root.dump(2);
}

SimBackend::SimBackend(LeakageProfile profile, std::optional<uint64_t> seed)
    : profile_(std::move(profile)), seed_(seed.value_or(profile_.seed)), rng_(seed_) {
  rewind();
}

BackendCapabilities SimBackend::capabilities() const {
  return {true, false, true, true};
}

MachineIdentity SimBackend::identity() {
  return {profile_.cpu_model, profile_.microcode, profile_.microarchitecture};
}

std::unique_ptr<ChannelMemory> SimBackend::make_channel_memory(const ChannelConfig& config) {
  if (config.stride_bytes < 64 || config.stride_bytes % 64 != 0)
    raise(ErrorCode::InvalidArgument, "stride must be a positive multiple of 64");
  return std::make_unique<SimChannelMemory>(*this, config);
}

std::unique_ptr<CountingTimer> SimBackend::make_counting_timer() {
  return std::make_unique<SimCountingTimer>(*this);
}

void SimBackend::require_armed() const {
  if (!Harness::window_armed())
    raise(ErrorCode::UnrecoverableFault, "transient access outside an armed recovery window");
}

void SimBackend::encode_value(uint64_t value, int bit_offset, Channel& channel) {
  int symbols = channel.config().symbol_count;
  for (int sym = 0; sym < symbols; ++sym) {
    unsigned byte = static_cast<unsigned>((value >> (bit_offset + 8 * sym)) & 0xFF);
    unsigned slot = byte % static_cast<unsigned>(channel.config().slot_count);
    channel.encode(slot, sym);
  }
}

void SimBackend::transient_read(const ProbeSpec& spec, uint64_t operand, int bit_offset,
                                Channel& channel) {
  (void)operand;
  require_armed();
  if (bit_offset < 0 || bit_offset > 56)
    raise(ErrorCode::InvalidArgument, "bit offset must be in 0..56");
  advance(profile_.timing.encode_window_cycles);
  pending_fault_ = SIGSEGV;

  ProbeBehavior behavior = profile_.behavior_for(spec.name);
  switch (behavior.kind) {
    case ProbeBehaviorKind::Silent:
      return;
    case ProbeBehaviorKind::LeakValue:
      encode_value(behavior.value, bit_offset, channel);
      return;
    case ProbeBehaviorKind::ZeroForward:
      encode_value(0, bit_offset, channel);
      return;
    case ProbeBehaviorKind::Timestamp:
      encode_value(clock_, bit_offset, channel);
      return;
    case ProbeBehaviorKind::UnverifiedTimestamp:
      encode_value(splitmix64(seed_ ^ ++scramble_state_), bit_offset, channel);
      return;
  }
}

void SimBackend::transient_counter_read(const CounterSelector& selector, Channel& channel) {
  require_armed();
  auto it = profile_.counters.find(selector.event_name);
  if (it == profile_.counters.end())
    raise(ErrorCode::InvalidArgument, "no counter model for event " + selector.event_name);
  advance(profile_.timing.encode_window_cycles);
  pending_fault_ = SIGSEGV;

  uint64_t& value = counter_values_[selector.event_name];
  encode_value(value, 0, channel);
  int64_t after = static_cast<int64_t>(it->second.self_increment + it->second.auto_increment);
  if (after > 0)
    value += static_cast<uint64_t>(after);
  else if (after < 0 && value >= static_cast<uint64_t>(-after))
    value -= static_cast<uint64_t>(-after);
}

void SimBackend::transient_touch(uintptr_t address) {
  require_armed();
  advance(profile_.timing.encode_window_cycles);
  pending_fault_ = SIGSEGV;
  if (hot_page_) {
    bool hit = (address >> 12) == *hot_page_;
    apply_event(hit ? "tlb_walk_hit" : "tlb_walk_miss", 1);
  }
}

int SimBackend::take_pending_fault() {
  int sig = pending_fault_;
  pending_fault_ = 0;
  return sig;
}

void SimBackend::apply_event(const std::string& event, uint64_t n) {
  if (n == 0) return;
  for (auto& [counter_name, model] : profile_.counters) {
    auto rule = model.events.find(event);
    if (rule == model.events.end()) continue;
    int64_t total = rule->second.increment * static_cast<int64_t>(n);
    if (rule->second.noise_sigma > 0.0)
      total += std::llround(rng_.normal(0.0, rule->second.noise_sigma));
    // An occurrence counter never moves backwards: noise models scatter in
    // how many events retire, and that count is at least zero.
    counter_values_[counter_name] += static_cast<uint64_t>(std::max<int64_t>(total, 0));
  }
}

void SimBackend::victim_event(const std::string& event, uint64_t n) { apply_event(event, n); }

void SimBackend::victim_speculative_event(const std::string& event, uint64_t n) {
  apply_event(event, n);
}

void SimBackend::notify_mistrain(int rounds) {
  if (rounds > 0) speculation_armed_ = true;
}

void SimBackend::rewind() {
  rng_ = Rng(seed_);
  clock_ = 0;
  pending_fault_ = 0;
  speculation_armed_ = false;
  scramble_state_ = 0;
  hot_page_.reset();
  counter_values_.clear();
  for (const auto& [name, model] : profile_.counters) counter_values_[name] = model.initial;
}

uint64_t SimBackend::counter_value(const std::string& event_name) const {
  auto it = counter_values_.find(event_name);
  if (it == counter_values_.end())
    raise(ErrorCode::InvalidArgument, "no counter model for event " + event_name);
  return it->second;
}

void SimBackend::scale_counter_noise(double factor) {
  if (factor < 0.0) raise(ErrorCode::InvalidArgument, "noise factor must be >= 0");
  for (auto& [name, model] : profile_.counters)
    for (auto& [event, rule] : model.events) rule.noise_sigma *= factor;
}

}  // namespace regleak
