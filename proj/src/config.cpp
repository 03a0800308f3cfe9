#include "mate/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace mate {

void MateConfig::validate() const {
  if (d < 1 || expansion < 1 || state_dim < 1 || head_dim < 1 || conv_kernel < 1 || layers < 0)
    throw std::domain_error("MateConfig: dimensions must be positive");
  if (d % head_dim != 0) throw std::domain_error("MateConfig: head_dim must divide d");
  if (tesa.heads < 1 || d % tesa.heads != 0) throw std::domain_error("MateConfig: tesa.heads must divide d");
  if (tesa.t_window < 1 || tesa.s_window < 1) throw std::domain_error("MateConfig: TESA windows must be >= 1");
  if (time_features < 2 || time_features % 2 != 0)
    throw std::domain_error("MateConfig: time_features must be even and >= 2");
  review.validate();
}

MateConfig large_model_config() {
  MateConfig c;
  c.d = 2560;
  c.expansion = 2;
  c.state_dim = kDefaultStateDim;
  c.head_dim = kDefaultHeadDim;
  c.conv_kernel = 4;
  c.layers = 32;
  c.tesa = {8, 4, 20, ShiftParity::Unshifted};
  c.review = {true, 8, 4, 4, 0};
  return c;
}

Shape3 CostSettings::latent_shape(Index seconds) const {
  if (seconds < 1) throw std::domain_error("latent_shape: seconds must be >= 1");
  const Index frames = seconds * fps;
  return {frames / temporal_compression / patch_t, height_px / spatial_compression / patch_h,
          width_px / spatial_compression / patch_w};
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Index parse_index(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::invalid_argument("config: '" + key + "' expects true or false, got '" + v + "'");
}

// One row per key: full dotted name, getter and setter.
struct Field {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define MATE_INDEX_FIELD(key, member)                                                          \
  Field {                                                                                      \
    key, [](const RunConfig& c) { return std::to_string(c.member); },                          \
        [](RunConfig& c, const std::string& v) { c.member = parse_index(key, v); }             \
  }
#define MATE_DOUBLE_FIELD(key, member)                                                         \
  Field {                                                                                      \
    key, [](const RunConfig& c) { return format_double(c.member); },                           \
        [](RunConfig& c, const std::string& v) { c.member = parse_double(key, v); }            \
  }
#define MATE_BOOL_FIELD(key, member)                                                           \
  Field {                                                                                      \
    key, [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); },          \
        [](RunConfig& c, const std::string& v) { c.member = parse_bool(key, v); }              \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      MATE_INDEX_FIELD("model.d", model.d),
      MATE_INDEX_FIELD("model.expansion", model.expansion),
      MATE_INDEX_FIELD("model.state_dim", model.state_dim),
      MATE_INDEX_FIELD("model.head_dim", model.head_dim),
      MATE_INDEX_FIELD("model.conv_kernel", model.conv_kernel),
      MATE_INDEX_FIELD("model.layers", model.layers),
      MATE_INDEX_FIELD("model.time_features", model.time_features),
      Field{"model.combine",
            [](const RunConfig& c) { return std::string(c.model.combine == Combine::Sum ? "sum" : "concat_project"); },
            [](RunConfig& c, const std::string& v) {
              if (v == "sum")
                c.model.combine = Combine::Sum;
              else if (v == "concat_project")
                c.model.combine = Combine::ConcatProject;
              else
                throw std::invalid_argument("config: 'model.combine' expects sum or concat_project");
            }},
      MATE_INDEX_FIELD("tesa.tw", model.tesa.t_window),
      MATE_INDEX_FIELD("tesa.sw", model.tesa.s_window),
      MATE_INDEX_FIELD("tesa.heads", model.tesa.heads),
      MATE_BOOL_FIELD("review.enabled", model.review.enabled),
      MATE_INDEX_FIELD("review.pt", model.review.pt),
      MATE_INDEX_FIELD("review.py", model.review.py),
      MATE_INDEX_FIELD("review.px", model.review.px),
      MATE_INDEX_FIELD("review.min_length", model.review.min_length),
      Field{"train.shape", [](const RunConfig& c) { return c.train.shape.to_string(); },
            [](RunConfig& c, const std::string& v) { c.train.shape = parse_shape(v); }},
      MATE_INDEX_FIELD("train.batch", train.batch),
      MATE_INDEX_FIELD("train.square", train.square),
      MATE_DOUBLE_FIELD("train.lr", train.learning_rate),
      MATE_DOUBLE_FIELD("train.momentum", train.momentum),
      MATE_DOUBLE_FIELD("train.beta2", train.beta2),
      Field{"train.optimizer",
            [](const RunConfig& c) {
              return std::string(c.train.optimizer == OptimizerKind::Adam ? "adam" : "momentum");
            },
            [](RunConfig& c, const std::string& v) {
              if (v == "adam")
                c.train.optimizer = OptimizerKind::Adam;
              else if (v == "momentum")
                c.train.optimizer = OptimizerKind::Momentum;
              else
                throw std::invalid_argument("config: 'train.optimizer' expects adam or momentum");
            }},
      MATE_DOUBLE_FIELD("train.init_scale", train.init_scale),
      MATE_INDEX_FIELD("train.smoothing", train.smoothing),
      Field{"train.seed", [](const RunConfig& c) { return std::to_string(c.train.seed); },
            [](RunConfig& c, const std::string& v) {
              c.train.seed = static_cast<std::uint64_t>(parse_index("train.seed", v));
            }},
      MATE_BOOL_FIELD("cost.bidirectional", cost.bidirectional),
      MATE_INDEX_FIELD("cost.fps", cost.fps),
      MATE_INDEX_FIELD("cost.height_px", cost.height_px),
      MATE_INDEX_FIELD("cost.width_px", cost.width_px),
      MATE_INDEX_FIELD("cost.temporal_compression", cost.temporal_compression),
      MATE_INDEX_FIELD("cost.spatial_compression", cost.spatial_compression),
      MATE_INDEX_FIELD("cost.patch_t", cost.patch_t),
      MATE_INDEX_FIELD("cost.patch_h", cost.patch_h),
      MATE_INDEX_FIELD("cost.patch_w", cost.patch_w),
      MATE_INDEX_FIELD("cost.model_dim", cost.model_dim),
  };
  return all;
}

#undef MATE_INDEX_FIELD
#undef MATE_DOUBLE_FIELD
#undef MATE_BOOL_FIELD

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (!section.empty()) key = section + "." + key;
    bool known = false;
    for (const auto& f : fields())
      if (f.name == key) {
        f.set(cfg, value);
        known = true;
        break;
      }
    if (!known) throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  cfg.model.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "# mate run configuration v1\n";
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.name.find('.');
    const std::string sec = f.name.substr(0, dot);
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    const std::string value = f.get(*this);
    const bool quote = sec == "train" && f.name == "train.shape";
    os << f.name.substr(dot + 1) << " = " << (quote ? "\"" + value + "\"" : value) << '\n';
  }
  return os.str();
}

}  // namespace mate
