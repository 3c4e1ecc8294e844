#include "spgat/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "spgat/rng.hpp"

namespace spgat {
namespace {

void require_batch_tensor(const PatchBatch& data, const char* who) {
  if (!data.inputs.defined() || data.labels.empty()) {
    throw ConfigError(std::string(who) + ": patch set is empty");
  }
  if (data.inputs.ndim() != 5 ||
      data.inputs.dim(0) != static_cast<int64_t>(data.labels.size())) {
    throw ShapeError(std::string(who) + ": patch tensor " +
                     shape_str(data.inputs.shape()) + " does not match " +
                     std::to_string(data.labels.size()) + " labels");
  }
}

// Copies the selected samples into a fresh non-tracked batch tensor.
Tensor gather_inputs(const PatchBatch& data, std::span<const int64_t> idx) {
  const Shape& s = data.inputs.shape();
  const int64_t sample = s[1] * s[2] * s[3] * s[4];
  Tensor out = Tensor::zeros({static_cast<int64_t>(idx.size()), s[1], s[2], s[3], s[4]});
  std::span<const double> src = data.inputs.data();
  std::span<double> dst = out.data_mut();
  for (size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(src.begin() + idx[i] * sample, sample,
                dst.begin() + static_cast<int64_t>(i) * sample);
  }
  return out;
}

int64_t argmax_lowest(std::span<const double> row) {
  int64_t best = 0;
  for (size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = static_cast<int64_t>(j);
  }
  return best;
}

[[noreturn]] void rethrow_with_prefix(const Error& e, const std::string& prefix) {
  const std::string msg = prefix + e.what();
  if (dynamic_cast<const ShapeError*>(&e)) throw ShapeError(msg);
  if (dynamic_cast<const NumericError*>(&e)) throw NumericError(msg);
  if (dynamic_cast<const TapeError*>(&e)) throw TapeError(msg);
  if (dynamic_cast<const ConfigError*>(&e)) throw ConfigError(msg);
  if (dynamic_cast<const FormatError*>(&e)) throw FormatError(msg);
  if (dynamic_cast<const SplitError*>(&e)) throw SplitError(msg);
  if (dynamic_cast<const LabelError*>(&e)) throw LabelError(msg);
  if (dynamic_cast<const EvalError*>(&e)) throw EvalError(msg);
  if (dynamic_cast<const UsageError*>(&e)) throw UsageError(msg);
  throw NumericError(msg);
}

}  // namespace

TrainResult train(SpgatModel& model, const PatchBatch& data,
                  const TrainSettings& settings) {
  require_batch_tensor(data, "train");
  if (settings.epochs < 1 || settings.batch < 1 || settings.lr < 0.0) {
    throw ConfigError("train: epochs and batch must be positive, lr >= 0");
  }
  std::vector<Tensor> params = model.parameters();
  AdamConfig acfg;
  acfg.lr = settings.lr;
  Adam opt(params, acfg);

  const int64_t n = static_cast<int64_t>(data.labels.size());
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(Rng::derive(settings.seed, 4));

  TrainResult result;
  result.epoch_loss.reserve(static_cast<size_t>(settings.epochs));
  for (int64_t epoch = 0; epoch < settings.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (int64_t start = 0, batch_index = 0; start < n;
         start += settings.batch, ++batch_index) {
      const int64_t count = std::min(settings.batch, n - start);
      std::span<const int64_t> idx(order.data() + start,
                                   static_cast<size_t>(count));
      std::vector<int64_t> labels(static_cast<size_t>(count));
      for (int64_t i = 0; i < count; ++i) {
        labels[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(idx[i])];
      }
      try {
        Tape tape(true);
        Tensor logits = model.forward(tape, gather_inputs(data, idx),
                                      BatchNormMode::kTrain);
        Tensor loss = ops::cross_entropy(tape, logits, labels);
        loss_sum += loss.value() * static_cast<double>(count);
        tape.backward(loss);
        opt.step();
        opt.zero_grad();
      } catch (const Error& e) {
        rethrow_with_prefix(e, "train: epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_index) +
                                   ": ");
      }
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(n));
  }
  return result;
}

EvalReport evaluate(SpgatModel& model, const PatchBatch& data, int64_t classes) {
  if (!data.inputs.defined() || data.labels.empty()) {
    throw EvalError("evaluate: test set is empty");
  }
  require_batch_tensor(data, "evaluate");
  if (classes < 1) throw ConfigError("evaluate: class count must be positive");

  std::vector<int64_t> confusion(static_cast<size_t>(classes * classes), 0);
  const int64_t n = static_cast<int64_t>(data.labels.size());
  constexpr int64_t kEvalBatch = 64;
  for (int64_t start = 0; start < n; start += kEvalBatch) {
    const int64_t count = std::min(kEvalBatch, n - start);
    std::vector<int64_t> idx(static_cast<size_t>(count));
    std::iota(idx.begin(), idx.end(), start);
    Tape tape(false);
    Tensor logits = model.forward(tape, gather_inputs(data, idx),
                                  BatchNormMode::kEval);
    const int64_t c = logits.dim(1);
    for (int64_t i = 0; i < count; ++i) {
      const int64_t truth = data.labels[static_cast<size_t>(start + i)];
      if (truth < 0 || truth >= classes) {
        throw LabelError("evaluate: label " + std::to_string(truth + 1) +
                         " outside " + std::to_string(classes) + " classes");
      }
      const int64_t pred = argmax_lowest(
          logits.data().subspan(static_cast<size_t>(i * c), static_cast<size_t>(c)));
      ++confusion[static_cast<size_t>(truth * classes + pred)];
    }
  }
  return report_from_confusion(std::move(confusion), classes);
}

LabelMap predict_labels(SpgatModel& model, const HsiCube& cube,
                        const LabelMap& labels, int64_t batch) {
  if (batch < 1) throw ConfigError("predict: batch must be positive");
  std::vector<PixelRef> coords;
  for (int64_t r = 0; r < labels.height; ++r) {
    for (int64_t c = 0; c < labels.width; ++c) {
      if (labels.at(r, c) != 0) {
        coords.push_back({labels.at(r, c), r, c});
      }
    }
  }
  LabelMap out;
  out.height = labels.height;
  out.width = labels.width;
  out.classes.assign(static_cast<size_t>(labels.height * labels.width), 0);
  const int64_t n = static_cast<int64_t>(coords.size());
  for (int64_t start = 0; start < n; start += batch) {
    const int64_t count = std::min(batch, n - start);
    std::span<const PixelRef> window(coords.data() + start,
                                     static_cast<size_t>(count));
    PatchBatch patches = extract_patches(cube, labels, window,
                                         model.config().patch);
    Tape tape(false);
    Tensor logits = model.forward(tape, patches.inputs, BatchNormMode::kEval);
    const int64_t c = logits.dim(1);
    for (int64_t i = 0; i < count; ++i) {
      const int64_t pred = argmax_lowest(
          logits.data().subspan(static_cast<size_t>(i * c), static_cast<size_t>(c)));
      const PixelRef& px = window[static_cast<size_t>(i)];
      out.classes[static_cast<size_t>(px.row * out.width + px.col)] =
          static_cast<uint16_t>(pred + 1);
    }
  }
  return out;
}

SessionsResult run_sessions(const ModelConfig& model_config,
                            const TrainSettings& settings, int64_t sessions,
                            const PatchBatch& train_data,
                            const PatchBatch& test_data, int64_t classes) {
  if (sessions < 1) throw ConfigError("sessions: need at least 1");
  SessionsResult out;
  out.sessions.reserve(static_cast<size_t>(sessions));
  for (int64_t i = 0; i < sessions; ++i) {
    try {
      TrainSettings s = settings;
      s.seed = settings.seed + static_cast<uint64_t>(i);
      SpgatModel model(model_config, s.seed);
      TrainResult tr = train(model, train_data, s);
      SessionResult sr;
      sr.report = evaluate(model, test_data, classes);
      sr.epoch_loss = std::move(tr.epoch_loss);
      out.sessions.push_back(std::move(sr));
      if (i == 0) {
        out.first_model = model.parameters();
        for (const Tensor& t : model.state_tensors()) {
          out.first_model.push_back(t);
        }
      }
    } catch (const Error& e) {
      rethrow_with_prefix(e, "session " + std::to_string(i) + ": ");
    }
  }
  for (const SessionResult& s : out.sessions) {
    out.mean_oa += s.report.oa;
    out.mean_aa += s.report.aa;
    out.mean_kappa += s.report.kappa;
  }
  const double inv = 1.0 / static_cast<double>(sessions);
  out.mean_oa *= inv;
  out.mean_aa *= inv;
  out.mean_kappa *= inv;
  return out;
}

}  // namespace spgat
