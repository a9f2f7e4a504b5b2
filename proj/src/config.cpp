#include "fetrack/config.hpp"

#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace fetrack {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a real number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' expects on/off, got '" + v + "'");
}

void check_choice(const std::string& key, const std::string& v,
                  std::initializer_list<const char*> allowed) {
  for (const char* a : allowed)
    if (v == a) return;
  std::string msg = "config: key '" + key + "' must be one of {";
  bool first = true;
  for (const char* a : allowed) {
    if (!first) msg += ", ";
    msg += a;
    first = false;
  }
  throw ConfigError(msg + "}, got '" + v + "'");
}

}  // namespace

ZohModeCfg RunConfig::zoh_mode() const {
  return zoh == "exact" ? ZohModeCfg::exact : ZohModeCfg::simplified;
}

Modality RunConfig::modality_mode() const {
  if (modality == "rgb") return Modality::rgb;
  if (modality == "event") return Modality::event;
  return Modality::fused;
}

MotionModel RunConfig::motion_model() const {
  if (motion == "sine") return MotionModel::sine;
  if (motion == "bursts") return MotionModel::bursts;
  return MotionModel::linear;
}

Background RunConfig::background_model() const {
  return background == "texture" ? Background::texture : Background::flat;
}

void RunConfig::validate() const {
  auto positive = [](const char* k, std::int64_t v) {
    if (v <= 0) throw ConfigError(std::string("config: '") + k + "' must be positive");
  };
  positive("channels", channels);
  positive("depth", depth);
  positive("state", state);
  positive("conv_width", conv_width);
  positive("expand", expand);
  positive("patch", patch);
  positive("template_size", template_size);
  positive("search_size", search_size);
  positive("steps", steps == 0 ? 1 : steps);  // steps = 0 is allowed (no-op training)
  positive("batch", batch);
  positive("width", width);
  positive("height", height);
  positive("frames", frames);
  positive("sequences", sequences);
  positive("frame_period_us", frame_period_us);
  if (steps < 0) throw ConfigError("config: 'steps' must be >= 0");
  if (dt_rank < 0) throw ConfigError("config: 'dt_rank' must be >= 0");
  if (oversample < 1) throw ConfigError("config: 'oversample' must be >= 1");
  if (theta <= 0) throw ConfigError("config: 'theta' must be positive");
  if (object_size <= 0) throw ConfigError("config: 'object_size' must be positive");
  if (lr <= 0) throw ConfigError("config: 'lr' must be positive");
  if (weight_decay < 0) throw ConfigError("config: 'weight_decay' must be >= 0");
  if (template_size % patch != 0)
    throw ConfigError("config: template_size must be divisible by patch");
  if (search_size % patch != 0)
    throw ConfigError("config: search_size must be divisible by patch");
  if (hdr_gain <= 0) throw ConfigError("config: 'hdr_gain' must be positive");
  check_choice("zoh", zoh, {"exact", "simplified"});
  check_choice("modality", modality, {"fused", "rgb", "event"});
  check_choice("motion", motion, {"linear", "sine", "bursts"});
  check_choice("background", background, {"flat", "texture"});
  check_choice("hdr_clip", hdr_clip, {"off", "half"});
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  std::map<std::string, std::function<void(const std::string&)>> setters;
  auto key_i = [&](const char* k, std::int64_t& field) {
    setters[k] = [k, &field](const std::string& v) { field = parse_int(k, v); };
  };
  auto key_r = [&](const char* k, double& field) {
    setters[k] = [k, &field](const std::string& v) { field = parse_real(k, v); };
  };
  auto key_b = [&](const char* k, bool& field) {
    setters[k] = [k, &field](const std::string& v) { field = parse_bool(k, v); };
  };
  auto key_s = [&](const char* k, std::string& field) {
    setters[k] = [&field](const std::string& v) { field = v; };
  };

  key_i("channels", c.channels);
  key_i("depth", c.depth);
  key_i("state", c.state);
  key_i("conv_width", c.conv_width);
  key_i("dt_rank", c.dt_rank);
  key_i("expand", c.expand);
  key_i("patch", c.patch);
  key_i("template_size", c.template_size);
  key_i("search_size", c.search_size);
  key_s("zoh", c.zoh);
  key_b("d_skip", c.d_skip);
  key_s("modality", c.modality);
  key_i("steps", c.steps);
  key_i("batch", c.batch);
  key_r("lr", c.lr);
  key_r("weight_decay", c.weight_decay);
  key_i("seed", c.seed);
  key_i("sample_range", c.sample_range);
  key_r("jitter_center", c.jitter_center);
  key_r("jitter_logscale", c.jitter_logscale);
  key_i("width", c.width);
  key_i("height", c.height);
  key_i("frames", c.frames);
  key_i("sequences", c.sequences);
  key_i("frame_period_us", c.frame_period_us);
  key_i("oversample", c.oversample);
  key_r("theta", c.theta);
  key_r("object_size", c.object_size);
  key_r("object_intensity", c.object_intensity);
  key_r("background_intensity", c.background_intensity);
  key_s("motion", c.motion);
  key_r("speed", c.speed);
  key_s("background", c.background);
  key_s("hdr_clip", c.hdr_clip);
  key_r("hdr_gain", c.hdr_gain);
  key_b("blur", c.blur);
  key_b("window", c.window);

  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end())
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second(value);
  }
  c.validate();
  return c;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_text(const RunConfig& c) {
  std::ostringstream os;
  os << "channels = " << c.channels << "\n";
  os << "depth = " << c.depth << "\n";
  os << "state = " << c.state << "\n";
  os << "conv_width = " << c.conv_width << "\n";
  os << "dt_rank = " << c.dt_rank << "\n";
  os << "expand = " << c.expand << "\n";
  os << "patch = " << c.patch << "\n";
  os << "template_size = " << c.template_size << "\n";
  os << "search_size = " << c.search_size << "\n";
  os << "zoh = " << c.zoh << "\n";
  os << "d_skip = " << (c.d_skip ? "on" : "off") << "\n";
  os << "modality = " << c.modality << "\n";
  os << "steps = " << c.steps << "\n";
  os << "batch = " << c.batch << "\n";
  os << "lr = " << c.lr << "\n";
  os << "weight_decay = " << c.weight_decay << "\n";
  os << "seed = " << c.seed << "\n";
  os << "sample_range = " << c.sample_range << "\n";
  os << "jitter_center = " << c.jitter_center << "\n";
  os << "jitter_logscale = " << c.jitter_logscale << "\n";
  os << "width = " << c.width << "\n";
  os << "height = " << c.height << "\n";
  os << "frames = " << c.frames << "\n";
  os << "sequences = " << c.sequences << "\n";
  os << "frame_period_us = " << c.frame_period_us << "\n";
  os << "oversample = " << c.oversample << "\n";
  os << "theta = " << c.theta << "\n";
  os << "object_size = " << c.object_size << "\n";
  os << "object_intensity = " << c.object_intensity << "\n";
  os << "background_intensity = " << c.background_intensity << "\n";
  os << "motion = " << c.motion << "\n";
  os << "speed = " << c.speed << "\n";
  os << "background = " << c.background << "\n";
  os << "hdr_clip = " << c.hdr_clip << "\n";
  os << "hdr_gain = " << c.hdr_gain << "\n";
  os << "blur = " << (c.blur ? "on" : "off") << "\n";
  os << "window = " << (c.window ? "on" : "off") << "\n";
  return os.str();
}

}  // namespace fetrack
