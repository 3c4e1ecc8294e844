#include "spgat/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace spgat {
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw ConfigError("config: bad value '" + value + "' for key '" + key + "'");
}

int64_t parse_int(const std::string& key, const std::string& value) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || p != value.data() + value.size()) bad_value(key, value);
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  uint64_t out = 0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || p != value.data() + value.size()) bad_value(key, value);
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value);
  }
  if (used != value.size()) bad_value(key, value);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value);
}

std::vector<int64_t> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int64_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(parse_int(key, trim(item)));
  }
  if (out.empty()) bad_value(key, value);
  return out;
}

void apply_key(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "variant") c.variant = value;
  else if (key == "patch") c.patch = parse_int(key, value);
  else if (key == "epochs") c.epochs = parse_int(key, value);
  else if (key == "lr") c.lr = parse_real(key, value);
  else if (key == "batch") c.batch = parse_int(key, value);
  else if (key == "sessions") c.sessions = parse_int(key, value);
  else if (key == "seed") c.seed = parse_u64(key, value);
  else if (key == "rates") c.pyramid.rates = parse_int_list(key, value);
  else if (key == "branch_channels") c.pyramid.branch_channels = parse_int(key, value);
  else if (key == "bottleneck_mids") {
    std::vector<int64_t> mids = parse_int_list(key, value);
    if (mids.size() != 2) bad_value(key, value);
    c.pyramid.bottleneck_mids = {mids[0], mids[1]};
  }
  else if (key == "expansion") c.pyramid.expansion = parse_int(key, value);
  else if (key == "pooled_stream") c.pyramid.pooled_stream = parse_bool(key, value);
  else if (key == "embed_dim") c.embed_dim = parse_int(key, value);
  else if (key == "leaky_slope") c.leaky_slope = parse_real(key, value);
  else if (key == "score") c.score = value;
  else if (key == "merge") c.merge = value;
  else if (key == "dataset") c.dataset = value;
  else if (key == "synth_classes") c.synth.classes = parse_int(key, value);
  else if (key == "synth_bands") c.synth.bands = parse_int(key, value);
  else if (key == "synth_height") c.synth.height = parse_int(key, value);
  else if (key == "synth_width") c.synth.width = parse_int(key, value);
  else if (key == "synth_noise") c.synth.noise_sigma = parse_real(key, value);
  else if (key == "synth_context") c.synth.context_scale = parse_real(key, value);
  else if (key == "header") c.header_path = value;
  else if (key == "data") c.data_path = value;
  else if (key == "labels") c.labels_path = value;
  else if (key == "train_count") c.train_count = parse_int(key, value);
  else if (key == "train_fraction") c.train_fraction = parse_real(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig config;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) +
                        " is not 'key = value'");
    }
    apply_key(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void RunConfig::validate() const {
  if (variant != "spgat" && variant != "spgat-1" && variant != "spgcn" &&
      variant != "spgat-avg") {
    throw ConfigError("config: unknown variant '" + variant + "'");
  }
  if (patch < 1 || patch % 2 == 0) {
    throw ConfigError("config: patch must be odd and positive");
  }
  if (epochs < 1) throw ConfigError("config: epochs must be positive");
  if (lr < 0.0) throw ConfigError("config: lr must be >= 0");
  if (batch < 1) throw ConfigError("config: batch must be positive");
  if (sessions < 1) throw ConfigError("config: sessions must be positive");
  pyramid.validate();
  if (score != "dot-product" && score != "feature-difference") {
    throw ConfigError("config: unknown score '" + score + "'");
  }
  if (merge != "attention" && merge != "average") {
    throw ConfigError("config: unknown merge '" + merge + "'");
  }
  if (dataset != "synth" && dataset != "files") {
    throw ConfigError("config: unknown dataset '" + dataset + "'");
  }
  if (dataset == "files" &&
      (header_path.empty() || data_path.empty() || labels_path.empty())) {
    throw ConfigError("config: dataset=files needs header, data, and labels paths");
  }
  if (train_fraction < 0.0 || train_fraction >= 1.0) {
    throw ConfigError("config: train_fraction must lie in [0,1)");
  }
  if (train_fraction == 0.0 && train_count < 1) {
    throw ConfigError("config: train_count must be positive");
  }
}

ModelConfig RunConfig::model_config(int64_t classes) const {
  ModelConfig mc;
  mc.pyramid = pyramid;
  mc.patch = patch;
  mc.classes = classes;
  mc.embed_dim = embed_dim;
  mc.leaky_slope = leaky_slope;
  mc.score = score == "feature-difference" ? ScoreKind::kFeatureDifference
                                           : ScoreKind::kDotProduct;
  mc.merge = merge == "average" ? MergeKind::kAverage : MergeKind::kAttention;
  mc.lattice_gcn = variant == "spgcn";
  return mc;
}

TrainSettings RunConfig::train_settings() const {
  TrainSettings ts;
  ts.epochs = epochs;
  ts.lr = lr;
  ts.batch = batch;
  ts.seed = seed;
  return ts;
}

SplitRequest RunConfig::split_request() const {
  return train_fraction > 0.0 ? SplitRequest::per_class_fraction(train_fraction)
                              : SplitRequest::per_class_count(train_count);
}

void apply_variant(RunConfig& config) {
  if (config.variant == "spgat-1") {
    config.pyramid.rates = {1};
    config.pyramid.pooled_stream = false;
  } else if (config.variant == "spgat-avg") {
    config.merge = "average";
  } else if (config.variant != "spgat" && config.variant != "spgcn") {
    throw ConfigError("config: unknown variant '" + config.variant + "'");
  }
}

void apply_paper_scale(RunConfig& config) {
  config.epochs = 500;
  config.sessions = 10;
  config.pyramid.bottleneck_mids = {64, 128};
  config.pyramid.expansion = 4;
}

}  // namespace spgat
