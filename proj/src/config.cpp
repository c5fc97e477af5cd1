#include "lowrank/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "lowrank/error.hpp"

namespace lowrank {

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
  throw ConfigError(strfmt("%s:%d: %s", origin.c_str(), line, msg.c_str()));
}

bool parse_bool(const std::string& v, const std::string& origin, int line) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(origin, line, strfmt("expected boolean, got '%s'", v.c_str()));
}

long parse_long(const std::string& v, const std::string& origin, int line) {
  try {
    size_t pos = 0;
    const long x = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail(origin, line, strfmt("expected integer, got '%s'", v.c_str()));
  }
}

double parse_real(const std::string& v, const std::string& origin, int line) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail(origin, line, strfmt("expected number, got '%s'", v.c_str()));
  }
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string raw;
  int line_no = 0;
  bool in_sweep = false;
  bool saw_variant = false, saw_alpha = false, saw_seed = false, saw_rank = false;

  while (std::getline(is, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line == "[sweep]") {
        in_sweep = true;
        continue;
      }
      fail(origin, line_no, strfmt("unknown section '%s'", line.c_str()));
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) fail(origin, line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(origin, line_no, "empty key");

    if (in_sweep) {
      const std::vector<std::string> items = split_list(value);
      if (items.empty()) fail(origin, line_no, strfmt("sweep axis '%s' is empty", key.c_str()));
      if (key == "variant") {
        cfg.variants.clear();
        for (const std::string& v : items) {
          try {
            cfg.variants.push_back(parse_variant(v));
          } catch (const ConfigError& e) {
            fail(origin, line_no, e.what());
          }
        }
        saw_variant = true;
      } else if (key == "rank") {
        cfg.ranks.clear();
        for (const std::string& v : items)
          cfg.ranks.push_back(static_cast<int>(parse_long(v, origin, line_no)));
        saw_rank = true;
      } else if (key == "alpha_fc") {
        cfg.alpha_fcs.clear();
        for (const std::string& v : items) cfg.alpha_fcs.push_back(parse_real(v, origin, line_no));
        saw_alpha = true;
      } else if (key == "seed") {
        cfg.seeds.clear();
        for (const std::string& v : items)
          cfg.seeds.push_back(static_cast<uint64_t>(parse_long(v, origin, line_no)));
        saw_seed = true;
      } else {
        fail(origin, line_no,
             strfmt("unknown sweep axis '%s' (variant, rank, alpha_fc, seed)", key.c_str()));
      }
      continue;
    }

    if (key == "preset") cfg.preset = value;
    else if (key == "dataset") cfg.dataset = value;
    else if (key == "train_images") cfg.train_images = value;
    else if (key == "train_labels") cfg.train_labels = value;
    else if (key == "test_images") cfg.test_images = value;
    else if (key == "test_labels") cfg.test_labels = value;
    else if (key == "train_files") {
      for (const std::string& f : split_list(value)) cfg.train_files.emplace_back(f);
    } else if (key == "test_files") {
      for (const std::string& f : split_list(value)) cfg.test_files.emplace_back(f);
    } else if (key == "train_limit") cfg.train_limit = static_cast<size_t>(parse_long(value, origin, line_no));
    else if (key == "test_limit") cfg.test_limit = static_cast<size_t>(parse_long(value, origin, line_no));
    else if (key == "standardize") cfg.standardize = parse_bool(value, origin, line_no);
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_long(value, origin, line_no));
    else if (key == "block_size") cfg.block_size = static_cast<int>(parse_long(value, origin, line_no));
    else if (key == "epochs") cfg.epochs = static_cast<int>(parse_long(value, origin, line_no));
    else if (key == "alpha_conv") cfg.alpha_conv = parse_real(value, origin, line_no);
    else if (key == "dropout") cfg.dropout = parse_bool(value, origin, line_no);
    else if (key == "dropout_fraction") cfg.dropout_fraction = parse_real(value, origin, line_no);
    else if (key == "sigma_floor") cfg.sigma_floor = parse_real(value, origin, line_no);
    else if (key == "tracking_cadence") cfg.tracking_cadence = static_cast<int>(parse_long(value, origin, line_no));
    else if (key == "output_dir") cfg.output_dir = value;
    else if (key == "workers") cfg.workers = static_cast<int>(parse_long(value, origin, line_no));
    else fail(origin, line_no, strfmt("unknown key '%s'", key.c_str()));
  }

  // required fields and axis defaults
  if (cfg.preset.empty()) throw ConfigError(origin + ": missing required key 'preset'");
  if (cfg.output_dir.empty()) throw ConfigError(origin + ": missing required key 'output_dir'");
  if (cfg.epochs < 0) throw ConfigError(origin + ": epochs must be >= 0");
  if (!saw_variant) throw ConfigError(origin + ": [sweep] must list at least one variant");
  if (!saw_alpha) cfg.alpha_fcs = {0.01};
  if (!saw_seed) cfg.seeds = {1};
  const bool any_lowrank = std::any_of(cfg.variants.begin(), cfg.variants.end(),
                                       [](Variant v) { return v != Variant::mbgd; });
  if (!saw_rank) {
    if (any_lowrank)
      throw ConfigError(origin + ": [sweep] must list ranks when SBPCA/SBPCAV variants run");
    cfg.ranks = {0};
  }
  if (cfg.dataset != "idx" && cfg.dataset != "cifar10")
    throw ConfigError(origin + ": dataset must be 'idx' or 'cifar10'");
  if (cfg.dataset == "idx") {
    if (cfg.train_images.empty() || cfg.train_labels.empty() || cfg.test_images.empty() ||
        cfg.test_labels.empty())
      throw ConfigError(origin +
                        ": idx dataset needs train_images/train_labels/test_images/test_labels");
  } else if (cfg.train_files.empty() || cfg.test_files.empty()) {
    throw ConfigError(origin + ": cifar10 dataset needs train_files and test_files");
  }
  return cfg;
}

RunConfig parse_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(strfmt("cannot open config %s", path.string().c_str()));
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config_text(ss.str(), path.string());
}

std::string resolved_config_text(const RunConfig& cfg) {
  std::ostringstream os;
  os << "preset = " << cfg.preset << "\n";
  os << "dataset = " << cfg.dataset << "\n";
  if (cfg.dataset == "idx") {
    os << "train_images = " << cfg.train_images.string() << "\n";
    os << "train_labels = " << cfg.train_labels.string() << "\n";
    os << "test_images = " << cfg.test_images.string() << "\n";
    os << "test_labels = " << cfg.test_labels.string() << "\n";
  } else {
    auto join = [](const std::vector<std::filesystem::path>& v) {
      std::string s;
      for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ", ";
        s += v[i].string();
      }
      return s;
    };
    os << "train_files = " << join(cfg.train_files) << "\n";
    os << "test_files = " << join(cfg.test_files) << "\n";
  }
  os << "train_limit = " << cfg.train_limit << "\n";
  os << "test_limit = " << cfg.test_limit << "\n";
  os << "standardize = " << (cfg.standardize ? "true" : "false") << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "block_size = " << cfg.block_size << "\n";
  os << "epochs = " << cfg.epochs << "\n";
  os << "alpha_conv = " << format_double(cfg.alpha_conv) << "\n";
  os << "dropout = " << (cfg.dropout ? "true" : "false") << "\n";
  os << "dropout_fraction = " << format_double(cfg.dropout_fraction) << "\n";
  os << "sigma_floor = " << format_double(cfg.sigma_floor) << "\n";
  os << "tracking_cadence = " << cfg.tracking_cadence << "\n";
  os << "output_dir = " << cfg.output_dir.string() << "\n";
  os << "workers = " << cfg.workers << "\n";
  os << "\n[sweep]\n";
  os << "variant = ";
  for (size_t i = 0; i < cfg.variants.size(); ++i)
    os << (i ? ", " : "") << variant_name(cfg.variants[i]);
  os << "\nrank = ";
  for (size_t i = 0; i < cfg.ranks.size(); ++i) os << (i ? ", " : "") << cfg.ranks[i];
  os << "\nalpha_fc = ";
  for (size_t i = 0; i < cfg.alpha_fcs.size(); ++i)
    os << (i ? ", " : "") << format_double(cfg.alpha_fcs[i]);
  os << "\nseed = ";
  for (size_t i = 0; i < cfg.seeds.size(); ++i) os << (i ? ", " : "") << cfg.seeds[i];
  os << "\n";
  return os.str();
}

uint64_t config_hash(const RunConfig& cfg) {
  const std::string text = resolved_config_text(cfg);
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace lowrank
