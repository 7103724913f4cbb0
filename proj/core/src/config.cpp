#include "mer/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "mer/error.hpp"
#include "mer/tsr.hpp"

namespace mer {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ParseError("bad value '" + v + "' for " + key, 0);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError("bad boolean '" + v + "' for " + key, 0);
}

std::string show(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}
std::string show(bool v) { return v ? "true" : "false"; }
std::string show(std::size_t v) { return std::to_string(v); }

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define MER_FLOAT(name, expr)                                                                                     \
  Field{name, [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_number<float>(k, v); }, \
        [](const RunConfig& c) { return show(static_cast<double>(expr)); }}
#define MER_DOUBLE(name, expr)                                                                                     \
  Field{name, [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_number<double>(k, v); }, \
        [](const RunConfig& c) { return show(expr); }}
#define MER_SIZE(name, expr)                                                                                            \
  Field{name, [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_number<std::size_t>(k, v); }, \
        [](const RunConfig& c) { return show(static_cast<std::size_t>(expr)); }}
#define MER_BOOL(name, expr)                                                                            \
  Field{name, [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_bool(k, v); }, \
        [](const RunConfig& c) { return show(expr); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      Field{"base_channels",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              std::vector<std::size_t> out;
              std::stringstream ss(v);
              std::string item;
              while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(k, trim(item)));
              c.model.base_channels = out;
            },
            [](const RunConfig& c) {
              std::string s;
              for (std::size_t w : c.model.base_channels) s += (s.empty() ? "" : ",") + std::to_string(w);
              return s;
            }},
      MER_SIZE("grid", c.model.grid),
      MER_SIZE("input_size", c.model.input_size),
      MER_SIZE("mag_channels", c.model.mag_channels),
      MER_DOUBLE("shift_fraction", c.model.shift_fraction),
      MER_FLOAT("alpha_amp", c.model.alpha_amp),
      MER_BOOL("use_mag", c.model.use_mag),
      MER_BOOL("use_eca", c.model.use_eca),
      MER_BOOL("use_tsm", c.model.use_tsm),
      MER_BOOL("use_skd", c.model.use_skd),
      MER_FLOAT("temperature", c.model.temperature),
      MER_FLOAT("lambda1", c.model.lambda1),
      MER_FLOAT("lambda2", c.model.lambda2),
      MER_FLOAT("gamma_focal", c.model.gamma_focal),
      MER_BOOL("class_weighting", c.schedule.class_weighting),
      MER_FLOAT("lr", c.schedule.adam.lr),
      MER_FLOAT("beta1", c.schedule.adam.beta1),
      MER_FLOAT("beta2", c.schedule.adam.beta2),
      MER_FLOAT("adam_eps", c.schedule.adam.eps),
      MER_FLOAT("weight_decay", c.schedule.adam.weight_decay),
      MER_SIZE("batch_size", c.schedule.batch_size),
      MER_SIZE("max_steps", c.schedule.max_steps),
      MER_SIZE("eval_interval", c.schedule.eval_interval),
      MER_SIZE("patience", c.schedule.patience),
      MER_DOUBLE("val_fraction", c.schedule.val_fraction),
      MER_SIZE("warm_start_steps", c.warm_start_steps),
      MER_BOOL("estimated_flow", c.prep.estimated_flow),
      MER_FLOAT("hs_lambda", c.prep.hs_lambda),
      Field{"hs_iterations",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.prep.hs_iterations = parse_number<int>(k, v); },
            [](const RunConfig& c) { return std::to_string(c.prep.hs_iterations); }},
      Field{"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      MER_BOOL("uf1_literal", c.uf1_literal),
  };
  return table;
}

#undef MER_FLOAT
#undef MER_DOUBLE
#undef MER_SIZE
#undef MER_BOOL

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key != f.key) continue;
    f.set(*this, key, value);
    return;
  }
  throw ParseError("unknown config key '" + key + "'", 0);
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::size_t offset = 0;
  while (offset < text.size()) {
    auto end = text.find('\n', offset);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(offset, end - offset);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError("expected key = value: '" + line + "'", offset);
      try {
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
      } catch (const ParseError& e) {
        throw ParseError(e.message(), offset);
      }
    }
    offset = end + 1;
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    apply_config_text(cfg, std::string(bytes.begin(), bytes.end()));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.offset());
  }
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ParseError("override must be key=value: '" + assignment + "'", 0);
  cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

}  // namespace mer
