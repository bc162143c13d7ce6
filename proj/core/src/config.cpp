#include "dgcn/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dgcn {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

bool operator==(const TrainConfig& a, const TrainConfig& b) {
  return a.base_lr == b.base_lr && a.poly_power == b.poly_power && a.momentum == b.momentum &&
         a.weight_decay == b.weight_decay && a.iterations == b.iterations && a.batch_size == b.batch_size &&
         a.ohem_k == b.ohem_k && a.eval_interval == b.eval_interval && a.seed == b.seed;
}

bool RunConfig::operator==(const RunConfig& o) const {
  return dtype == o.dtype && backbone_width == o.backbone_width && backbone_layers == o.backbone_layers &&
         channels == o.channels && classes == o.classes && downsample == o.downsample && projection == o.projection &&
         order == o.order && scale_by_nodes == o.scale_by_nodes && variant == o.variant && height == o.height &&
         width == o.width && samples == o.samples && data_seed == o.data_seed && train == o.train &&
         scales == o.scales;
}

SegModelConfig RunConfig::model_config() const {
  SegModelConfig m;
  m.head.in_channels = backbone_width;
  m.head.channels = channels;
  m.head.classes = classes;
  m.head.coord.downsample = downsample;
  m.head.coord.mode = projection;
  m.head.coord.order = order;
  m.head.coord.scale_by_nodes = scale_by_nodes;
  m.head.variant = variant;
  m.backbone_layers = backbone_layers;
  return m;
}

ToyTaskShape RunConfig::task_shape() const { return {height, width, classes}; }

void RunConfig::validate() const {
  model_config().head.validate();
  if (backbone_layers == 0) throw ConfigError("backbone_layers must be positive");
  if (height % downsample != 0 || width % downsample != 0) {
    throw ConfigError("downsample rate " + std::to_string(downsample) + " must divide the image extents");
  }
  if (scales.empty()) throw ConfigError("scales must list at least one value");
  for (double s : scales) {
    if (!(s > 0)) throw ConfigError("scales must be positive");
  }
  train.validate();
}

RunConfig default_toy_config() { return RunConfig{}; }

RunConfig default_gradcheck_config() {
  RunConfig c;
  c.dtype = DType::f64;
  c.backbone_width = 8;
  c.channels = 8;
  c.classes = 3;
  c.downsample = 4;
  c.projection = ProjectionMode::strided_conv;
  c.height = 16;
  c.width = 16;
  return c;
}

std::vector<double> parse_scales(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(parse_double("scales", trim(item)));
    if (!(out.back() > 0)) throw ConfigError("'scales' entries must be positive, got '" + trim(item) + "'");
  }
  if (out.empty()) throw ConfigError("'scales' expects a comma-separated list of numbers");
  return out;
}

void apply_setting(RunConfig& c, const std::string& key, const std::string& v) {
  if (key == "dtype") {
    if (v != "f32" && v != "f64") throw ConfigError("'dtype' expects f32 or f64, got '" + v + "'");
    c.dtype = dtype_from_string(v);
  } else if (key == "backbone_width") c.backbone_width = parse_uint(key, v);
  else if (key == "backbone_layers") c.backbone_layers = parse_uint(key, v);
  else if (key == "channels") c.channels = parse_uint(key, v);
  else if (key == "classes") c.classes = parse_uint(key, v);
  else if (key == "downsample") c.downsample = parse_uint(key, v);
  else if (key == "projection") c.projection = projection_mode_from_string(v);
  else if (key == "order") c.order = message_order_from_string(v);
  else if (key == "scale_by_nodes") c.scale_by_nodes = parse_bool(key, v);
  else if (key == "variant") c.variant = variant_from_string(v);
  else if (key == "height") c.height = parse_uint(key, v);
  else if (key == "width") c.width = parse_uint(key, v);
  else if (key == "samples") c.samples = parse_uint(key, v);
  else if (key == "data_seed") c.data_seed = parse_uint(key, v);
  else if (key == "base_lr") c.train.base_lr = parse_double(key, v);
  else if (key == "poly_power") c.train.poly_power = parse_double(key, v);
  else if (key == "momentum") c.train.momentum = parse_double(key, v);
  else if (key == "weight_decay") c.train.weight_decay = parse_double(key, v);
  else if (key == "iterations") c.train.iterations = parse_uint(key, v);
  else if (key == "batch_size") c.train.batch_size = parse_uint(key, v);
  else if (key == "ohem_k") c.train.ohem_k = parse_uint(key, v);
  else if (key == "eval_interval") c.train.eval_interval = parse_uint(key, v);
  else if (key == "seed") c.train.seed = parse_uint(key, v);
  else if (key == "scales") c.scales = parse_scales(v);
  else throw ConfigError("unknown key '" + key + "'");
}

std::string render_config(const RunConfig& c) {
  std::ostringstream os;
  os << "dtype=" << to_string(c.dtype) << '\n'
     << "backbone_width=" << c.backbone_width << '\n'
     << "backbone_layers=" << c.backbone_layers << '\n'
     << "channels=" << c.channels << '\n'
     << "classes=" << c.classes << '\n'
     << "downsample=" << c.downsample << '\n'
     << "projection=" << to_string(c.projection) << '\n'
     << "order=" << to_string(c.order) << '\n'
     << "scale_by_nodes=" << (c.scale_by_nodes ? "true" : "false") << '\n'
     << "variant=" << to_string(c.variant) << '\n'
     << "height=" << c.height << '\n'
     << "width=" << c.width << '\n'
     << "samples=" << c.samples << '\n'
     << "data_seed=" << c.data_seed << '\n'
     << "base_lr=" << fmt_double(c.train.base_lr) << '\n'
     << "poly_power=" << fmt_double(c.train.poly_power) << '\n'
     << "momentum=" << fmt_double(c.train.momentum) << '\n'
     << "weight_decay=" << fmt_double(c.train.weight_decay) << '\n'
     << "iterations=" << c.train.iterations << '\n'
     << "batch_size=" << c.train.batch_size << '\n'
     << "ohem_k=" << c.train.ohem_k << '\n'
     << "eval_interval=" << c.train.eval_interval << '\n'
     << "seed=" << c.train.seed << '\n'
     << "scales=";
  for (std::size_t i = 0; i < c.scales.size(); ++i) os << (i ? "," : "") << fmt_double(c.scales[i]);
  os << '\n';
  return os.str();
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream is(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + line + "'", line_no);
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    try {
      apply_setting(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), line_no);
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

}  // namespace dgcn
