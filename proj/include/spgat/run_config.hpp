#pragma once

#include <cstdint>
#include <string>

#include "spgat/hsi_data.hpp"
#include "spgat/model.hpp"
#include "spgat/synth_scene.hpp"
#include "spgat/trainer.hpp"

namespace spgat {

// Everything a run needs, parsed from a `key = value` config file. Defaults
// are desk-scale; apply_paper_scale() switches to the full protocol.
struct RunConfig {
  std::string variant = "spgat";  // spgat | spgat-1 | spgcn | spgat-avg
  int64_t patch = 7;
  int64_t epochs = 200;
  double lr = 0.001;
  int64_t batch = 16;
  int64_t sessions = 3;
  uint64_t seed = 0;

  PyramidConfig pyramid;
  int64_t embed_dim = 0;
  double leaky_slope = 0.2;
  std::string score = "dot-product";  // dot-product | feature-difference
  std::string merge = "attention";    // attention | average

  std::string dataset = "synth";  // synth | files
  SynthParams synth;              // dataset = synth (seed comes from `seed`)
  std::string header_path;        // dataset = files
  std::string data_path;
  std::string labels_path;

  int64_t train_count = 10;     // per-class training pixels
  double train_fraction = 0.0;  // when > 0, used instead of train_count

  void validate() const;
  ModelConfig model_config(int64_t classes) const;
  TrainSettings train_settings() const;
  SplitRequest split_request() const;
};

// Applies `key = value` lines ('#' comments, blank lines allowed) on top of
// the defaults. Unknown keys or unparsable values throw ConfigError naming
// the key.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

// Rewrites architecture fields according to config.variant.
void apply_variant(RunConfig& config);
// Full protocol: 500 epochs, 10 sessions, bottleneck widths 64/128 with
// expansion 4.
void apply_paper_scale(RunConfig& config);

}  // namespace spgat
