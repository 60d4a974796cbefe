#include "axial/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace axial {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& value, const std::string& where) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw UsageError(where + ": cannot parse '" + value + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& value, const std::string& where) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw UsageError(where + ": expected true or false, got '" + value + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto index = [&](const char* key, Index ModelConfig::*field) {
      t[key] = [field](RunConfig& c, const std::string& v, const std::string& w) {
        c.model.*field = parse_number<Index>(v, w);
      };
    };
    index("height", &ModelConfig::height);
    index("width", &ModelConfig::width);
    index("channels", &ModelConfig::channels);
    index("vocab", &ModelConfig::vocab);
    index("embed_dim", &ModelConfig::embed_dim);
    index("ffn_factor", &ModelConfig::ffn_factor);
    index("heads", &ModelConfig::heads);
    index("encoder_layers", &ModelConfig::encoder_layers);
    index("upper_layers", &ModelConfig::upper_layers);
    index("row_layers", &ModelConfig::row_layers);
    t["upper_context"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.model.upper_context = parse_bool(v, w);
    };
    auto real = [&](const char* key, double AdamConfig::*field) {
      t[key] = [field](RunConfig& c, const std::string& v, const std::string& w) {
        c.train.adam.*field = parse_number<double>(v, w);
      };
    };
    real("lr", &AdamConfig::lr);
    real("beta1", &AdamConfig::beta1);
    real("beta2", &AdamConfig::beta2);
    real("eps", &AdamConfig::eps);
    auto count = [&](const char* key, std::int64_t TrainConfig::*field) {
      t[key] = [field](RunConfig& c, const std::string& v, const std::string& w) {
        c.train.*field = parse_number<std::int64_t>(v, w);
      };
    };
    count("warmup", &TrainConfig::warmup);
    count("steps", &TrainConfig::steps);
    count("log_every", &TrainConfig::log_every);
    count("eval_every", &TrainConfig::eval_every);
    count("checkpoint_every", &TrainConfig::checkpoint_every);
    t["batch"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.train.batch = parse_number<Index>(v, w);
    };
    t["seed"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.train.seed = parse_number<std::uint64_t>(v, w);
    };
    t["dtype"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      try {
        c.dtype = parse_dtype(v);
      } catch (const std::exception& e) {
        throw UsageError(w + ": " + e.what());
      }
      if (c.dtype == DType::int32) throw UsageError(w + ": dtype must be real32 or real64");
    };
    return t;
  }();
  return table;
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw UsageError(where + ": unknown config key '" + key + "'");
    it->second(cfg, value, where + " (" + key + ")");
  }
  try {
    cfg.model.validate();
  } catch (const ConfigError& e) {
    throw UsageError(origin + ": " + e.what());
  }
  if (cfg.train.batch <= 0 || cfg.train.steps < 0 || cfg.train.warmup < 0) {
    throw UsageError(origin + ": batch must be positive, steps and warmup non-negative");
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

std::string format_config(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  const auto& m = c.model;
  const auto& t = c.train;
  os << "height = " << m.height << "\nwidth = " << m.width << "\nchannels = " << m.channels
     << "\nvocab = " << m.vocab << "\nembed_dim = " << m.embed_dim << "\nffn_factor = " << m.ffn_factor
     << "\nheads = " << m.heads << "\nencoder_layers = " << m.encoder_layers
     << "\nupper_layers = " << m.upper_layers << "\nrow_layers = " << m.row_layers
     << "\nupper_context = " << (m.upper_context ? "true" : "false") << "\nlr = " << t.adam.lr
     << "\nbeta1 = " << t.adam.beta1 << "\nbeta2 = " << t.adam.beta2 << "\neps = " << t.adam.eps
     << "\nwarmup = " << t.warmup << "\nbatch = " << t.batch << "\nsteps = " << t.steps << "\nseed = " << t.seed
     << "\nlog_every = " << t.log_every << "\neval_every = " << t.eval_every
     << "\ncheckpoint_every = " << t.checkpoint_every << "\ndtype = " << dtype_name(c.dtype) << '\n';
  return os.str();
}

}  // namespace axial
