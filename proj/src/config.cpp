// SPDX-License-Identifier: Apache-2.0
#include "s3vdc/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace s3vdc {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool looks_like_integer(const std::string& s) {
  std::size_t i = (s[0] == '+' || s[0] == '-') ? 1 : 0;
  if (i == s.size()) return false;
  for (; i < s.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
  return true;
}

TomlValue parse_value(const std::string& raw, const std::string& key) {
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"')
    return raw.substr(1, raw.size() - 2);
  if (raw == "true") return true;
  if (raw == "false") return false;
  if (looks_like_integer(raw)) {
    try {
      return static_cast<std::int64_t>(std::stoll(raw));
    } catch (...) {
      throw ConfigError("config: " + key + ": integer out of range (" + raw + ")");
    }
  }
  try {
    std::size_t used = 0;
    const double v = std::stod(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (...) {
    throw ConfigError("config: " + key + ": cannot parse value \"" + raw + "\"");
  }
}

// Pulls typed values out of the parsed map, erasing consumed keys so that
// leftovers can be reported as unknown.
class SchemaReader {
 public:
  explicit SchemaReader(std::map<std::string, TomlValue> kv) : kv_(std::move(kv)) {}

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback,
                         bool required = false) {
    auto it = kv_.find(key);
    if (it == kv_.end()) {
      if (required) throw ConfigError("config: " + key + ": required key is missing");
      return fallback;
    }
    if (!std::holds_alternative<std::string>(it->second))
      throw ConfigError("config: " + key + ": expected a string");
    std::string v = std::get<std::string>(it->second);
    kv_.erase(it);
    return v;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback, bool required = false) {
    auto it = kv_.find(key);
    if (it == kv_.end()) {
      if (required) throw ConfigError("config: " + key + ": required key is missing");
      return fallback;
    }
    std::int64_t v;
    if (std::holds_alternative<std::int64_t>(it->second)) {
      v = std::get<std::int64_t>(it->second);
    } else if (std::holds_alternative<double>(it->second)) {
      const double d = std::get<double>(it->second);
      v = static_cast<std::int64_t>(d);
      if (static_cast<double>(v) != d)
        throw ConfigError("config: " + key + ": expected an integer");
    } else {
      throw ConfigError("config: " + key + ": expected an integer");
    }
    kv_.erase(it);
    return v;
  }

  double get_double(const std::string& key, double fallback, bool required = false) {
    auto it = kv_.find(key);
    if (it == kv_.end()) {
      if (required) throw ConfigError("config: " + key + ": required key is missing");
      return fallback;
    }
    double v;
    if (std::holds_alternative<double>(it->second))
      v = std::get<double>(it->second);
    else if (std::holds_alternative<std::int64_t>(it->second))
      v = static_cast<double>(std::get<std::int64_t>(it->second));
    else
      throw ConfigError("config: " + key + ": expected a number");
    kv_.erase(it);
    return v;
  }

  void reject_unknown() const {
    if (kv_.empty()) return;
    std::string names;
    for (const auto& [k, v] : kv_) {
      if (!names.empty()) names += ", ";
      names += k;
    }
    throw ConfigError("config: unknown key(s): " + names);
  }

 private:
  std::map<std::string, TomlValue> kv_;
};

RunConfig from_reader(SchemaReader& r) {
  RunConfig c;
  c.dataset = r.get_string("dataset", "", true);
  c.data_root = r.get_string("data_root", "data");
  const bool image_dataset = (c.dataset == "mnist" || c.dataset == "fashion");
  const std::string default_mode = image_dataset ? "bernoulli" : "gaussian";
  const std::string mode = r.get_string("mode", default_mode);
  if (mode == "bernoulli")
    c.mode = ObservationModel::Bernoulli;
  else if (mode == "gaussian")
    c.mode = ObservationModel::Gaussian;
  else
    throw ConfigError("config: mode: must be \"bernoulli\" or \"gaussian\" (got \"" + mode +
                      "\")");
  c.arch = r.get_string("arch", c.arch);
  c.batch_size = static_cast<int>(r.get_int("batch_size", 0, true));
  c.latent_dim = static_cast<int>(r.get_int("latent_dim", 0, true));
  c.clusters = static_cast<int>(r.get_int("clusters", 0, true));
  c.initial_lr = r.get_double("initial_lr", 0, true);
  c.terminal_lr = r.get_double("terminal_lr", c.terminal_lr);
  c.noise_std = r.get_double("noise_std", c.noise_std);
  c.seed = r.get_int("seed", c.seed);
  c.test_fraction = r.get_double("test_fraction", c.test_fraction);

  c.schedule.gamma = r.get_double("gamma", 0, true);
  c.schedule.t_gamma = r.get_int("t_gamma", 0, true);
  c.schedule.t_beta = r.get_int("t_beta", 0, true);
  c.schedule.t_static = r.get_int("t_static", 0, true);
  c.schedule.periods = static_cast<int>(r.get_int("periods", 0, true));
  c.schedule.exponent = static_cast<int>(r.get_int("u", 3));
  c.schedule.lambda = r.get_double("lambda", 50.0);

  c.gmm_k = r.get_int("gmm.k", 0, true);
  c.gmm_max_em_steps = r.get_int("gmm.max_em_steps", c.gmm_max_em_steps);
  c.gmm_tol = r.get_double("gmm.tol", c.gmm_tol);
  c.gmm_seed = r.get_int("gmm.seed", c.gmm_seed);

  if (c.dataset == "synthetic") {
    c.synthetic.n = r.get_int("synthetic.n", 0, true);
    c.synthetic.archetypes = static_cast<int>(r.get_int("synthetic.archetypes", 0, true));
    c.synthetic.noise = r.get_double("synthetic.noise", 0.4);
    c.synthetic.seed = static_cast<std::uint64_t>(r.get_int("synthetic.seed", 20240601));
  }
  if (c.dataset.ends_with(".csv")) {
    c.csv_channels = static_cast<int>(r.get_int("csv.channels", 0));
    c.csv_steps = static_cast<int>(r.get_int("csv.steps", 0));
  }
  r.reject_unknown();
  c.validate();
  return c;
}

}  // namespace

std::map<std::string, TomlValue> parse_toml(const std::string& text) {
  std::map<std::string, TomlValue> kv;
  std::istringstream in(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    // strip comments outside quotes
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: line " + std::to_string(line_no) + ": malformed section");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config: line " + std::to_string(line_no) + ": empty section name");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string raw = trim(line.substr(eq + 1));
    if (key.empty() || raw.empty())
      throw ConfigError("config: line " + std::to_string(line_no) + ": expected key = value");
    if (!section.empty()) key = section + "." + key;
    if (kv.count(key)) throw ConfigError("config: duplicate key: " + key);
    kv[key] = parse_value(raw, key);
  }
  return kv;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& constraint) {
    throw ConfigError("config: " + key + ": " + constraint);
  };
  if (dataset.empty()) fail("dataset", "must not be empty");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (latent_dim < 1) fail("latent_dim", "must be >= 1");
  if (clusters < 2) fail("clusters", "must be >= 2");
  if (!(initial_lr > 0)) fail("initial_lr", "must be positive");
  if (!(terminal_lr > 0)) fail("terminal_lr", "must be positive");
  if (!(initial_lr > terminal_lr)) fail("initial_lr", "must exceed terminal_lr");
  if (noise_std < 0) fail("noise_std", "must be non-negative");
  if (!(test_fraction > 0 && test_fraction < 1)) fail("test_fraction", "must lie in (0,1)");
  try {
    schedule.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  try {
    ArchSpec::parse(arch);
  } catch (const ConfigError&) {
    throw;
  }
  if (gmm_k < 1) fail("gmm.k", "must be >= 1");
  if (gmm_max_em_steps < 1) fail("gmm.max_em_steps", "must be >= 1");
  if (!(gmm_tol > 0)) fail("gmm.tol", "must be positive");
  if (dataset == "synthetic") {
    if (synthetic.n < synthetic.archetypes) fail("synthetic.n", "must be >= synthetic.archetypes");
    if (synthetic.archetypes < 1) fail("synthetic.archetypes", "must be >= 1");
    if (synthetic.noise < 0) fail("synthetic.noise", "must be non-negative");
  }
}

RunConfig RunConfig::from_toml_text(const std::string& text) {
  SchemaReader reader(parse_toml(text));
  return from_reader(reader);
}

RunConfig RunConfig::from_toml_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_toml_text(ss.str());
}

std::string RunConfig::to_toml() const {
  std::ostringstream out;
  out.precision(17);
  out << "dataset = \"" << dataset << "\"\n";
  out << "data_root = \"" << data_root << "\"\n";
  out << "mode = \"" << observation_model_name(mode) << "\"\n";
  out << "arch = \"" << arch << "\"\n";
  out << "batch_size = " << batch_size << "\n";
  out << "latent_dim = " << latent_dim << "\n";
  out << "clusters = " << clusters << "\n";
  out << "initial_lr = " << initial_lr << "\n";
  out << "terminal_lr = " << terminal_lr << "\n";
  out << "noise_std = " << noise_std << "\n";
  out << "seed = " << seed << "\n";
  out << "test_fraction = " << test_fraction << "\n";
  out << "gamma = " << schedule.gamma << "\n";
  out << "t_gamma = " << schedule.t_gamma << "\n";
  out << "t_beta = " << schedule.t_beta << "\n";
  out << "t_static = " << schedule.t_static << "\n";
  out << "periods = " << schedule.periods << "\n";
  out << "u = " << schedule.exponent << "\n";
  out << "lambda = " << schedule.lambda << "\n";
  out << "\n[gmm]\n";
  out << "k = " << gmm_k << "\n";
  out << "max_em_steps = " << gmm_max_em_steps << "\n";
  out << "tol = " << gmm_tol << "\n";
  out << "seed = " << gmm_seed << "\n";
  if (dataset == "synthetic") {
    out << "\n[synthetic]\n";
    out << "n = " << synthetic.n << "\n";
    out << "archetypes = " << synthetic.archetypes << "\n";
    out << "noise = " << synthetic.noise << "\n";
    out << "seed = " << synthetic.seed << "\n";
  }
  if (dataset.ends_with(".csv")) {
    out << "\n[csv]\n";
    out << "channels = " << csv_channels << "\n";
    out << "steps = " << csv_steps << "\n";
  }
  return out.str();
}

std::string RunConfig::to_json() const {
  nlohmann::json j;
  j["dataset"] = dataset;
  j["data_root"] = data_root;
  j["mode"] = observation_model_name(mode);
  j["arch"] = arch;
  j["batch_size"] = batch_size;
  j["latent_dim"] = latent_dim;
  j["clusters"] = clusters;
  j["initial_lr"] = initial_lr;
  j["terminal_lr"] = terminal_lr;
  j["noise_std"] = noise_std;
  j["seed"] = seed;
  j["test_fraction"] = test_fraction;
  j["gamma"] = schedule.gamma;
  j["t_gamma"] = schedule.t_gamma;
  j["t_beta"] = schedule.t_beta;
  j["t_static"] = schedule.t_static;
  j["periods"] = schedule.periods;
  j["u"] = schedule.exponent;
  j["lambda"] = schedule.lambda;
  j["gmm"] = {{"k", gmm_k},
              {"max_em_steps", gmm_max_em_steps},
              {"tol", gmm_tol},
              {"seed", gmm_seed}};
  if (dataset == "synthetic")
    j["synthetic"] = {{"n", synthetic.n},
                      {"archetypes", synthetic.archetypes},
                      {"noise", synthetic.noise},
                      {"seed", synthetic.seed}};
  if (dataset.ends_with(".csv"))
    j["csv"] = {{"channels", csv_channels}, {"steps", csv_steps}};
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  std::map<std::string, TomlValue> kv;
  auto put = [&](const std::string& key, const nlohmann::json& v) {
    if (v.is_string())
      kv[key] = v.get<std::string>();
    else if (v.is_boolean())
      kv[key] = v.get<bool>();
    else if (v.is_number_integer() || v.is_number_unsigned())
      kv[key] = v.get<std::int64_t>();
    else
      kv[key] = v.get<double>();
  };
  for (auto& [key, v] : j.items()) {
    if (v.is_object())
      for (auto& [sub, sv] : v.items()) put(key + "." + sub, sv);
    else
      put(key, v);
  }
  SchemaReader reader(std::move(kv));
  return from_reader(reader);
}

std::string RunConfig::run_id() const {
  const std::string text = to_toml();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

Dataset load_for_run(const RunConfig& cfg) {
  Dataset ds;
  if (cfg.dataset == "synthetic") {
    ds = synthetic_behavior(cfg.synthetic.n, cfg.synthetic.archetypes, cfg.synthetic.seed,
                            cfg.synthetic.noise);
  } else {
    SampleShape csv_shape;
    if (cfg.csv_channels > 0 && cfg.csv_steps > 0)
      csv_shape = SampleShape{cfg.csv_channels, 1, cfg.csv_steps};
    ds = load_dataset(cfg.dataset, cfg.mode, cfg.data_root, csv_shape);
  }
  if (cfg.mode == ObservationModel::Gaussian && cfg.dataset != "mnist" &&
      cfg.dataset != "fashion")
    ds = standardize(ds);
  ds.mode = cfg.mode;
  if (ArchSpec::parse(cfg.arch).kind == ArchSpec::Kind::Cnn) ds = to_model_grid(ds);
  ds.validate();
  return ds;
}

}  // namespace s3vdc
