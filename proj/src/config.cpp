#include "sqz/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sqz/error.hpp"
#include "sqz/rng.hpp"
#include "sqz/timescale.hpp"

namespace sqz {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) return s.substr(1, s.size() - 2);
  return s;
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_int(const std::string& key, const std::string& v) {
  T out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config key " + key + ": '" + v + "' is not a non-negative integer");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config key " + key + ": '" + v + "' is not a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": '" + v + "' is not true or false");
}

std::vector<double> parse_list(const std::string& key, std::string v) {
  if (!v.empty() && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  if (out.empty()) throw ConfigError("config key " + key + " needs at least one value");
  return out;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T, typename Access>
Field int_field(const std::string& key, Access access) {
  return {[=](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); },
          [=](RunConfig& c, const std::string& v) { access(c) = parse_int<T>(key, v); }};
}

template <typename Access>
Field double_field(const std::string& key, Access access) {
  return {[=](const RunConfig& c) { return fmt(access(const_cast<RunConfig&>(c))); },
          [=](RunConfig& c, const std::string& v) { access(c) = parse_double(key, v); }};
}

template <typename Access>
Field bool_field(const std::string& key, Access access) {
  return {[=](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [=](RunConfig& c, const std::string& v) { access(c) = parse_bool(key, v); }};
}

template <typename Access>
Field path_field(Access access) {
  return {[=](const RunConfig& c) { return access(const_cast<RunConfig&>(c)).string(); },
          [=](RunConfig& c, const std::string& v) { access(c) = v; }};
}

#define SQZ_SIZE(key, expr) {key, int_field<std::size_t>(key, [](RunConfig& c) -> std::size_t& { return expr; })}

void add_dit(std::map<std::string, Field>& f, const std::string& p, models::DitConfig& (*dit)(RunConfig&)) {
  f[p + "dim"] = int_field<std::size_t>(p + "dim", [dit](RunConfig& c) -> std::size_t& { return dit(c).dim; });
  f[p + "depth"] = int_field<std::size_t>(p + "depth", [dit](RunConfig& c) -> std::size_t& { return dit(c).depth; });
  f[p + "heads"] = int_field<std::size_t>(p + "heads", [dit](RunConfig& c) -> std::size_t& { return dit(c).heads; });
  f[p + "patch"] = int_field<std::size_t>(p + "patch", [dit](RunConfig& c) -> std::size_t& { return dit(c).patch; });
  f[p + "temb_dim"] =
      int_field<std::size_t>(p + "temb_dim", [dit](RunConfig& c) -> std::size_t& { return dit(c).temb_dim; });
  f[p + "mlp_ratio"] =
      int_field<std::size_t>(p + "mlp_ratio", [dit](RunConfig& c) -> std::size_t& { return dit(c).mlp_ratio; });
}

const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f{
        {"sample_rate", int_field<int>("sample_rate", [](RunConfig& c) -> int& { return c.sample_rate; })},
        {"ratio", double_field("ratio", [](RunConfig& c) -> double& { return c.ratio; })},
        {"seed", int_field<std::uint64_t>("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; })},
        {"schedule.steps", int_field<int>("schedule.steps", [](RunConfig& c) -> int& { return c.schedule.steps; })},
        {"schedule.delta_max",
         double_field("schedule.delta_max", [](RunConfig& c) -> double& { return c.schedule.delta_max; })},
        {"schedule.delta_min",
         double_field("schedule.delta_min", [](RunConfig& c) -> double& { return c.schedule.delta_min; })},
        {"train.steps", int_field<int>("train.steps", [](RunConfig& c) -> int& { return c.train.steps; })},
        {"train.batch", int_field<int>("train.batch", [](RunConfig& c) -> int& { return c.train.batch; })},
        {"train.lr", double_field("train.lr", [](RunConfig& c) -> double& { return c.train.lr; })},
        {"train.deterministic",
         bool_field("train.deterministic", [](RunConfig& c) -> bool& { return c.train.deterministic; })},
        SQZ_SIZE("restoration.train_window", c.restoration.train.window),
        SQZ_SIZE("restoration.window", c.restoration.window),
        SQZ_SIZE("restoration.overlap", c.restoration.overlap),
        SQZ_SIZE("restoration.hidden", c.restoration.prior.hidden),
        SQZ_SIZE("restoration.blocks", c.restoration.prior.blocks),
        SQZ_SIZE("restoration.kernel", c.restoration.prior.kernel),
        SQZ_SIZE("composer.train_window", c.composer.train.window),
        {"composer.masked_only",
         bool_field("composer.masked_only", [](RunConfig& c) -> bool& { return c.composer.masked_only; })},
        SQZ_SIZE("sag.train_window", c.sag.train.window),
        SQZ_SIZE("sag.prior_dim", c.sag.prior.dim),
        SQZ_SIZE("sag.prior_depth", c.sag.prior.depth),
        SQZ_SIZE("sag.prior_heads", c.sag.prior.heads),
        SQZ_SIZE("sag.prior_mlp_ratio", c.sag.prior.mlp_ratio),
        {"paths.data", path_field([](RunConfig& c) -> std::filesystem::path& { return c.data_dir; })},
        {"paths.checkpoints", path_field([](RunConfig& c) -> std::filesystem::path& { return c.checkpoint_dir; })},
        {"paths.output", path_field([](RunConfig& c) -> std::filesystem::path& { return c.output_dir; })},
    };
    f["restoration.ratios"] = {
        [](const RunConfig& c) {
          std::string s;
          for (double r : c.restoration.ratios) s += (s.empty() ? "" : ",") + fmt(r);
          return s;
        },
        [](RunConfig& c, const std::string& v) { c.restoration.ratios = parse_list("restoration.ratios", v); }};
    f["sag.target"] = {
        [](const RunConfig& c) { return std::string(c.sag.mixture_target ? "mixture" : "instrument"); },
        [](RunConfig& c, const std::string& v) {
          if (v != "mixture" && v != "instrument") throw ConfigError("sag.target must be instrument or mixture");
          c.sag.mixture_target = v == "mixture";
        }};
    add_dit(f, "restoration.", [](RunConfig& c) -> models::DitConfig& { return c.restoration.refiner; });
    add_dit(f, "composer.", [](RunConfig& c) -> models::DitConfig& { return c.composer.dit; });
    add_dit(f, "sag.", [](RunConfig& c) -> models::DitConfig& { return c.sag.dit; });
    return f;
  }();
  return fields;
}

#undef SQZ_SIZE

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = registry().find(key);
  if (it == registry().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, unquote(trim(value)));
}

std::string RunConfig::get(const std::string& key) const {
  const auto it = registry().find(key);
  if (it == registry().end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get(*this);
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : registry()) out.push_back(name);
    return out;
  }();
  return k;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::string line, section;
  for (int n = 1; std::getline(in, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(path.string() + ":" + std::to_string(n) + ": malformed section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(path.string() + ":" + std::to_string(n) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    set(section.empty() ? key : section + "." + key, line.substr(eq + 1));
  }
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  RunConfig c;
  c.load_file(path);
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (sample_rate != 16000 && sample_rate != 24000) throw ConfigError("sample_rate must be 16000 or 24000");
  try {
    SpeedRatio check(ratio);
    for (double r : restoration.ratios) SpeedRatio check_each(r);
    make_schedule(schedule.steps, schedule.delta_max, schedule.delta_min);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  if (train.steps < 1 || train.batch < 1 || !(train.lr > 0.0)) {
    throw ConfigError("train.steps, train.batch and train.lr must be positive");
  }
  for (const auto* d : {&restoration.refiner, &composer.dit, &sag.dit}) {
    if (d->dim == 0 || d->depth == 0 || d->heads == 0 || d->dim % d->heads != 0 || d->patch == 0) {
      throw ConfigError("DiT dim must be a positive multiple of heads, with positive depth and patch");
    }
  }
  if (sag.prior.dim % sag.prior.heads != 0) throw ConfigError("sag.prior_dim must be a multiple of sag.prior_heads");
  if (restoration.window < 2 * restoration.overlap + 1) {
    throw ConfigError("restoration.window must exceed twice restoration.overlap");
  }
  // Constructing the models runs their own checks.
  RestorationModel r(restoration_config(), mel());
  ComposerModel c(composer_config(), mel());
  SagModel s(sag_config(), mel());
}

RestorationConfig RunConfig::restoration_config() const {
  RestorationConfig c = restoration;
  c.schedule = schedule;
  const auto window = c.train.window;
  c.train = train;
  c.train.window = window;
  return c;
}

ComposerConfig RunConfig::composer_config() const {
  ComposerConfig c = composer;
  c.schedule = schedule;
  const auto window = c.train.window;
  c.train = train;
  c.train.window = window;
  c.ratio = ratio;
  return c;
}

SagConfig RunConfig::sag_config() const {
  SagConfig c = sag;
  c.schedule = schedule;
  const auto window = c.train.window;
  c.train = train;
  c.train.window = window;
  c.ratio = ratio;
  return c;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [name, f] : registry()) out += name + " = " + f.get(*this) + "\n";
  return out;
}

std::string RunConfig::fingerprint() const {
  nlohmann::json j = {{"mel", mel().fingerprint()},
                      {"schedule", schedule},
                      {"prior_cnn", restoration.prior},
                      {"refiner", restoration.refiner},
                      {"composer", composer.dit},
                      {"sag_prior", sag.prior},
                      {"sag_dit", sag.dit}};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(j.dump())));
  return buf;
}

}  // namespace sqz
