#pragma once

#include <cstdint>
#include <vector>

#include "spgat/adam.hpp"
#include "spgat/hsi_data.hpp"
#include "spgat/metrics.hpp"
#include "spgat/model.hpp"

namespace spgat {

struct TrainSettings {
  int64_t epochs = 200;
  double lr = 0.001;
  int64_t batch = 16;
  uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // sample-weighted mean loss per epoch
};

// Mini-batch Adam over shuffled training patches. Shuffle order, weight
// init, and accumulation order are all fixed by the seed, so a rerun is
// bitwise identical.
TrainResult train(SpgatModel& model, const PatchBatch& data,
                  const TrainSettings& settings);

// Runs the model over the test patches in eval mode and accumulates the
// confusion matrix. Ties in the argmax go to the lowest class index. Never
// mutates parameters or running statistics.
EvalReport evaluate(SpgatModel& model, const PatchBatch& data, int64_t classes);

// Argmax predictions (1-based classes) for every labeled pixel; unlabeled
// pixels stay 0.
LabelMap predict_labels(SpgatModel& model, const HsiCube& cube,
                        const LabelMap& labels, int64_t batch = 64);

struct SessionResult {
  EvalReport report;
  std::vector<double> epoch_loss;
};

struct SessionsResult {
  std::vector<SessionResult> sessions;
  double mean_oa = 0.0;
  double mean_aa = 0.0;
  double mean_kappa = 0.0;
  // Trainables then running stats of the first session's model, in the
  // save_parameters order.
  std::vector<Tensor> first_model;
};

// Trains `sessions` fresh models with seeds settings.seed+0 .. +sessions-1
// on the same split and averages the metrics.
SessionsResult run_sessions(const ModelConfig& model_config,
                            const TrainSettings& settings, int64_t sessions,
                            const PatchBatch& train_data,
                            const PatchBatch& test_data, int64_t classes);

}  // namespace spgat
