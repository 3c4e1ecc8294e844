// Acceptance gate: one pass/fail line per shipping criterion, exit 0 only
// when every line passes. Long-running criteria print progress as they go.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spgat/cli.hpp"
#include "spgat/gradcheck_suite.hpp"
#include "spgat/graph_attention.hpp"
#include "spgat/metrics.hpp"
#include "spgat/ppm.hpp"
#include "spgat/run_config.hpp"
#include "spgat/synth_scene.hpp"
#include "spgat/trainer.hpp"

using namespace spgat;
namespace fs = std::filesystem;

namespace {

// Frozen regression constants for the synthetic end-to-end criteria. The
// scene, architecture, and training recipe were fixed after one calibration
// run; loosening them to pass is not allowed.
constexpr double kOaThreshold = 0.90;
const char* const kFrozenConfig = R"(# frozen acceptance protocol
synth_classes = 4
synth_bands = 32
synth_height = 48
synth_width = 48
synth_noise = 0.3
synth_context = 2.0
seed = 7
rates = 1, 4, 8, 12
branch_channels = 8
bottleneck_mids = 4, 8
expansion = 2
patch = 5
epochs = 200
sessions = 3
train_count = 20
lr = 0.001
batch = 16
)";

// The determinism criterion exercises the complete ablate pipeline twice and
// compares every output byte. Byte-identity does not depend on the training
// budget, so it runs the frozen scene and model at a shorter protocol to keep
// two full ablate passes inside the time budget.
const char* const kDeterminismConfig = R"(# frozen determinism protocol
synth_classes = 4
synth_bands = 32
synth_height = 48
synth_width = 48
synth_noise = 0.3
synth_context = 2.0
seed = 7
rates = 1, 4, 8, 12
branch_channels = 8
bottleneck_mids = 4, 8
expansion = 2
patch = 5
epochs = 60
sessions = 2
train_count = 20
lr = 0.001
batch = 16
)";

int g_failures = 0;

void report(int index, const char* name, bool pass, double seconds,
            double budget_seconds, const std::string& detail) {
  const bool in_budget = seconds <= budget_seconds;
  std::printf("[%d] %-22s %s  (%.2fs, budget %.0fs)%s%s\n", index, name,
              pass && in_budget ? "PASS" : "FAIL", seconds, budget_seconds,
              detail.empty() ? "" : "  ", detail.c_str());
  std::fflush(stdout);
  if (!pass || !in_budget) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

std::string real3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// ---------------------------------------------------------------- criterion 1

void criterion_gradients() {
  const auto start = std::chrono::steady_clock::now();
  std::vector<CheckOutcome> outcomes = run_gradcheck_suite(1e-4);
  bool pass = !outcomes.empty();
  double worst = 0.0;
  std::string worst_name;
  for (const CheckOutcome& c : outcomes) {
    pass = pass && c.pass;
    if (c.max_rel_err >= worst) {
      worst = c.max_rel_err;
      worst_name = c.name;
    }
  }
  std::ostringstream detail;
  detail << outcomes.size() << " checks, worst " << worst_name << " at rel err "
         << worst;
  report(1, "gradient suite", pass, seconds_since(start), 120.0, detail.str());
}

// ---------------------------------------------------------------- criterion 2

void criterion_conv_oracle() {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<int64_t> rates = {1, 2, 3, 12};
  Rng rng(20260816);
  double max_diff = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t rate = rates[static_cast<size_t>(trial) % rates.size()];
    const PadMode pad = trial % 2 == 0 ? PadMode::kZero : PadMode::kCircular;
    const int64_t B = 1 + static_cast<int64_t>(rng.next_u64() % 2);
    const int64_t cin = 1 + static_cast<int64_t>(rng.next_u64() % 3);
    const int64_t cout = 1 + static_cast<int64_t>(rng.next_u64() % 3);
    const int64_t S = 5 + static_cast<int64_t>(rng.next_u64() % 14);
    const int64_t H = 1 + static_cast<int64_t>(rng.next_u64() % 3);
    const int64_t W = 1 + static_cast<int64_t>(rng.next_u64() % 3);
    const int64_t K = 3;

    auto randv = [&rng](int64_t n) {
      std::vector<double> v(static_cast<size_t>(n));
      for (double& x : v) x = rng.uniform(-1.0, 1.0);
      return v;
    };
    Tensor x = Tensor::from_data({B, cin, S, H, W}, randv(B * cin * S * H * W));
    Tensor w = Tensor::from_data({cout, cin, K}, randv(cout * cin * K));
    Tensor b = Tensor::from_data({cout}, randv(cout));

    Tape tape(false);
    Tensor got = ops::atrous_conv_spectral(tape, x, w, b, rate, pad);

    // Direct definition: y[b,co,s,h,w] = bias + sum x[b,ci,s+r(k-1)-pad,...].
    const int64_t padlen = rate * (K - 1) / 2;
    for (int64_t bi = 0; bi < B; ++bi) {
      for (int64_t co = 0; co < cout; ++co) {
        for (int64_t s = 0; s < S; ++s) {
          for (int64_t h = 0; h < H; ++h) {
            for (int64_t wi = 0; wi < W; ++wi) {
              double acc = b.data()[static_cast<size_t>(co)];
              for (int64_t ci = 0; ci < cin; ++ci) {
                for (int64_t k = 0; k < K; ++k) {
                  int64_t src = s + rate * k - padlen;
                  if (pad == PadMode::kCircular) {
                    src %= S;
                    if (src < 0) src += S;
                  } else if (src < 0 || src >= S) {
                    continue;
                  }
                  acc += w.data()[static_cast<size_t>((co * cin + ci) * K + k)] *
                         x.data()[static_cast<size_t>(
                             (((bi * cin + ci) * S + src) * H + h) * W + wi)];
                }
              }
              const double gv = got.data()[static_cast<size_t>(
                  (((bi * cout + co) * S + s) * H + h) * W + wi)];
              max_diff = std::max(max_diff, std::fabs(gv - acc));
            }
          }
        }
      }
    }
  }
  std::ostringstream detail;
  detail << "50 cases, rates {1,2,3,12}, both pad modes, max |diff| " << max_diff;
  report(2, "convolution oracle", max_diff <= 1e-12, seconds_since(start), 10.0,
         detail.str());
}

// ---------------------------------------------------------------- criterion 3

void criterion_attention_invariants() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(414);
  bool pass = true;
  std::ostringstream detail;

  auto randt = [&rng](Shape shape) {
    std::vector<double> v(static_cast<size_t>(numel(shape)));
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor::from_data(std::move(shape), std::move(v));
  };

  Tape tape(false);
  const int64_t d = 6, N = 8;
  GatLayerParams p = make_gat_layer_params(d, d, d, rng);

  // Row-stochasticity within 1e-9.
  {
    Tensor alpha = gat_scores(tape, randt({2, N, d}), p);
    double worst = 0.0;
    for (int64_t b = 0; b < 2; ++b) {
      for (int64_t i = 0; i < N; ++i) {
        double sum = 0.0;
        for (int64_t j = 0; j < N; ++j) {
          const double a =
              alpha.data()[static_cast<size_t>((b * N + i) * N + j)];
          if (a < 0.0) pass = false;
          sum += a;
        }
        worst = std::max(worst, std::fabs(sum - 1.0));
      }
    }
    pass = pass && worst <= 1e-9;
    detail << "rows " << worst;
  }

  // Identical node features attend uniformly.
  {
    Tensor row = randt({1, 1, d});
    Tensor h = Tensor::zeros({1, N, d});
    for (int64_t i = 0; i < N; ++i) {
      for (int64_t k = 0; k < d; ++k) {
        h.data_mut()[static_cast<size_t>(i * d + k)] =
            row.data()[static_cast<size_t>(k)];
      }
    }
    Tensor alpha = gat_scores(tape, h, p);
    double worst = 0.0;
    for (double a : alpha.data()) {
      worst = std::max(worst, std::fabs(a - 1.0 / static_cast<double>(N)));
    }
    pass = pass && worst <= 1e-12;
    detail << ", uniform " << worst;
  }

  // Permutation equivariance of the two-layer block within 1e-10.
  {
    GatLayerParams l2 = make_gat_layer_params(d, d, d, rng);
    Tensor h = randt({1, N, d});
    std::vector<int64_t> perm = {5, 2, 7, 0, 4, 6, 1, 3};
    Tensor hp = Tensor::zeros({1, N, d});
    for (int64_t i = 0; i < N; ++i) {
      for (int64_t k = 0; k < d; ++k) {
        hp.data_mut()[static_cast<size_t>(i * d + k)] =
            h.data()[static_cast<size_t>(perm[static_cast<size_t>(i)] * d + k)];
      }
    }
    Tensor out = gat_block(tape, h, p, l2);
    Tensor outp = gat_block(tape, hp, p, l2);
    double worst = 0.0;
    for (int64_t i = 0; i < N; ++i) {
      for (int64_t k = 0; k < d; ++k) {
        const double a = outp.data()[static_cast<size_t>(i * d + k)];
        const double b = out.data()[static_cast<size_t>(
            perm[static_cast<size_t>(i)] * d + k)];
        worst = std::max(worst, std::fabs(a - b));
      }
    }
    pass = pass && worst <= 1e-10;
    detail << ", equivariance " << worst;
  }

  // With psi frozen to ones the score is the plain embedded dot product.
  {
    GatLayerParams ones = make_gat_layer_params(d, d, d, rng);
    for (double& v : ones.psi_w.data_mut()) v = 1.0;
    Tensor h = randt({1, N, d});
    Tensor alpha = gat_scores(tape, h, ones);
    Tensor theta = ops::linear(tape, h, ones.theta_w, ones.theta_b);
    Tensor phi = ops::linear(tape, h, ones.phi_w, ones.phi_b);
    Tensor want = ops::softmax(
        tape, ops::leaky_relu(
                  tape,
                  ops::matmul(tape, theta, ops::transpose(tape, phi, {0, 2, 1})),
                  ones.slope));
    double worst = 0.0;
    for (size_t i = 0; i < want.data().size(); ++i) {
      worst = std::max(worst, std::fabs(alpha.data()[i] - want.data()[i]));
    }
    pass = pass && worst <= 1e-12;
    detail << ", dot recovery " << worst;
  }

  report(3, "attention invariants", pass, seconds_since(start), 10.0,
         detail.str());
}

// ---------------------------------------------------------------- criterion 4

void criterion_metric_oracle() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(515);
  bool pass = true;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t c = 2 + static_cast<int64_t>(rng.next_u64() % 5);
    std::vector<int64_t> m(static_cast<size_t>(c * c));
    for (int64_t& v : m) v = static_cast<int64_t>(rng.next_u64() % 40);
    m[0] += 1;

    EvalReport r = report_from_confusion(m, c);

    double total = 0.0, trace = 0.0;
    std::vector<double> rows(static_cast<size_t>(c), 0.0);
    std::vector<double> cols(static_cast<size_t>(c), 0.0);
    for (int64_t i = 0; i < c; ++i) {
      for (int64_t j = 0; j < c; ++j) {
        const double v =
            static_cast<double>(m[static_cast<size_t>(i * c + j)]);
        total += v;
        rows[static_cast<size_t>(i)] += v;
        cols[static_cast<size_t>(j)] += v;
        if (i == j) trace += v;
      }
    }
    const double oa = trace / total;
    double recall_sum = 0.0;
    int64_t populated = 0;
    for (int64_t i = 0; i < c; ++i) {
      if (rows[static_cast<size_t>(i)] > 0) {
        ++populated;
        recall_sum += m[static_cast<size_t>(i * c + i)] /
                      rows[static_cast<size_t>(i)];
      }
    }
    const double aa = recall_sum / static_cast<double>(populated);
    double pe = 0.0;
    for (int64_t i = 0; i < c; ++i) {
      pe += rows[static_cast<size_t>(i)] * cols[static_cast<size_t>(i)];
    }
    pe /= total * total;
    const double kappa = pe >= 1.0 ? 1.0 : (oa - pe) / (1.0 - pe);

    worst = std::max({worst, std::fabs(r.oa - oa), std::fabs(r.aa - aa),
                      std::fabs(r.kappa - kappa)});
  }
  pass = worst <= 1e-12;

  // Closed forms: perfect diagonal and marginal-independent counts.
  EvalReport diag = report_from_confusion({7, 0, 0, 0, 3, 0, 0, 0, 11}, 3);
  pass = pass && diag.kappa == 1.0 && diag.oa == 1.0;
  EvalReport indep = report_from_confusion({40, 10, 40, 10}, 2);
  pass = pass && std::fabs(indep.kappa) <= 1e-15;

  std::ostringstream detail;
  detail << "20 matrices, max |diff| " << worst << ", diag kappa " << diag.kappa
         << ", independent kappa " << indep.kappa;
  report(4, "metric oracle", pass, seconds_since(start), 1.0, detail.str());
}

// ------------------------------------------------------- criteria 5, 6

struct PreparedScene {
  PatchBatch train;
  PatchBatch test;
  int64_t classes = 0;
  RunConfig base;
};

PreparedScene prepare_frozen_scene() {
  PreparedScene s;
  s.base = parse_config_text(kFrozenConfig);
  s.base.validate();
  SynthParams sp = s.base.synth;
  sp.seed = s.base.seed;
  auto [cube, labels] = synth_scene(sp);
  HsiCube norm = normalize_bands(cube, labels);
  s.classes = labels.num_classes();
  SplitSpec split = make_split(labels, s.base.split_request(), s.base.seed);
  s.train = extract_patches(norm, labels, split.train, s.base.patch);
  s.test = extract_patches(norm, labels, split.test, s.base.patch);
  return s;
}

SessionsResult run_variant(const PreparedScene& scene, const std::string& variant) {
  RunConfig config = scene.base;
  config.variant = variant;
  apply_variant(config);
  config.validate();
  return run_sessions(config.model_config(scene.classes),
                      config.train_settings(), config.sessions, scene.train,
                      scene.test, scene.classes);
}

void criteria_synthetic_end_to_end() {
  const auto start5 = std::chrono::steady_clock::now();
  PreparedScene scene = prepare_frozen_scene();
  SessionsResult spgat = run_variant(scene, "spgat");
  {
    std::ostringstream detail;
    detail << "mean OA " << real3(spgat.mean_oa) << " (sessions";
    for (const SessionResult& s : spgat.sessions) {
      detail << " " << real3(s.report.oa);
    }
    detail << ") vs threshold " << kOaThreshold;
    report(5, "synthetic end-to-end", spgat.mean_oa >= kOaThreshold,
           seconds_since(start5), 900.0, detail.str());
  }

  const auto start6 = std::chrono::steady_clock::now();
  SessionsResult avg = run_variant(scene, "spgat-avg");
  SessionsResult single = run_variant(scene, "spgat-1");
  {
    const bool pass =
        spgat.mean_oa >= avg.mean_oa && spgat.mean_oa >= single.mean_oa;
    std::ostringstream detail;
    detail << "spgat " << real3(spgat.mean_oa) << " >= spgat-avg "
           << real3(avg.mean_oa) << " and >= spgat-1 " << real3(single.mean_oa);
    report(6, "ablation direction", pass, seconds_since(start6), 1200.0,
           detail.str());
  }
}

// ---------------------------------------------------------------- criterion 7

std::map<std::string, std::string> read_dir_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::ifstream in(entry.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    out[entry.path().filename().string()] = ss.str();
  }
  return out;
}

void criterion_determinism() {
  const auto start = std::chrono::steady_clock::now();
  const fs::path root = fs::temp_directory_path() / "spgat_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg = root / "frozen.cfg";
  std::ofstream(cfg) << kDeterminismConfig;

  bool pass = true;
  std::ostringstream detail;
  for (int runidx = 1; runidx <= 2; ++runidx) {
    const fs::path out = root / ("run" + std::to_string(runidx));
    const int code = cli_main({"ablate", "--config", cfg.string(), "--out",
                               out.string()});
    if (code != 0) {
      pass = false;
      detail << "ablate run " << runidx << " exited " << code;
      break;
    }
  }
  if (pass) {
    auto a = read_dir_bytes(root / "run1");
    auto b = read_dir_bytes(root / "run2");
    if (a.empty() || a.size() != b.size()) {
      pass = false;
      detail << "file sets differ (" << a.size() << " vs " << b.size() << ")";
    } else {
      int64_t bytes = 0;
      for (const auto& [name, content] : a) {
        auto it = b.find(name);
        if (it == b.end() || it->second != content) {
          pass = false;
          detail << "mismatch in " << name;
          break;
        }
        bytes += static_cast<int64_t>(content.size());
      }
      if (pass) {
        detail << a.size() << " files, " << bytes
               << " bytes byte-identical across two ablate runs";
      }
    }
  }
  report(7, "determinism", pass, seconds_since(start), 1800.0, detail.str());
}

// ---------------------------------------------------------------- criterion 8

void criterion_round_trips() {
  const auto start = std::chrono::steady_clock::now();
  const fs::path root = fs::temp_directory_path() / "spgat_roundtrip";
  fs::remove_all(root);
  fs::create_directories(root);
  Rng rng(616);
  bool pass = true;
  std::ostringstream detail;

  // Cube save/load in both layouts. Disk payload is f32, so exactness is
  // checked on f32-representable values.
  {
    HsiCube cube;
    cube.bands = 5;
    cube.height = 6;
    cube.width = 7;
    cube.values.resize(static_cast<size_t>(5 * 6 * 7));
    for (double& v : cube.values) {
      v = static_cast<double>(static_cast<float>(rng.uniform(-2.0, 2.0)));
    }
    for (Interleave layout : {Interleave::kBsq, Interleave::kBip}) {
      const char* tag = layout == Interleave::kBsq ? "bsq" : "bip";
      const std::string hdr = (root / (std::string(tag) + ".hdr")).string();
      const std::string raw = (root / (std::string(tag) + ".raw")).string();
      save_cube(cube, hdr, raw, layout);
      HsiCube back = load_cube(hdr, raw);
      bool same = back.bands == cube.bands && back.height == cube.height &&
                  back.width == cube.width && back.values == cube.values;
      if (!same) {
        pass = false;
        detail << "cube " << tag << " mismatch; ";
      }
    }
  }

  // PPM palette round trip over every palette slot plus unlabeled.
  {
    LabelMap labels;
    labels.height = 2;
    labels.width = 11;
    labels.classes.resize(22);
    for (uint16_t c = 0; c < 22; ++c) labels.classes[c] = c;  // 0..21
    LabelMap back = labels_from_ppm_text(labels_to_ppm(labels));
    if (back.classes != labels.classes) {
      pass = false;
      detail << "ppm palette mismatch; ";
    }
  }

  // Split file round trip.
  {
    SynthParams sp;
    sp.classes = 3;
    sp.bands = 8;
    sp.height = 10;
    sp.width = 10;
    sp.seed = 99;
    auto [cube, labels] = synth_scene(sp);
    SplitSpec split = make_split(labels, SplitRequest::per_class_count(6), 5);
    SplitSpec back = split_from_text(split_to_text(split), labels);
    if (back.train != split.train || back.test != split.test) {
      pass = false;
      detail << "split mismatch; ";
    }
  }

  if (pass) detail << "cube bsq+bip, ppm palette, split file all exact";
  report(8, "format round-trips", pass, seconds_since(start), 5.0, detail.str());
}

}  // namespace

int main() {
  tune_allocator();
  std::printf("acceptance gate: 8 criteria\n");
  const auto start = std::chrono::steady_clock::now();
  const struct {
    void (*fn)();
    const char* name;
  } criteria[] = {
      {criterion_gradients, "gradient suite"},
      {criterion_conv_oracle, "convolution oracle"},
      {criterion_attention_invariants, "attention invariants"},
      {criterion_metric_oracle, "metric oracle"},
      {criteria_synthetic_end_to_end, "synthetic end-to-end"},
      {criterion_determinism, "determinism"},
      {criterion_round_trips, "format round-trips"},
  };
  for (const auto& c : criteria) {
    try {
      c.fn();
    } catch (const std::exception& e) {
      std::printf("[-] %-22s FAIL  (uncaught exception: %s)\n", c.name,
                  e.what());
      std::fflush(stdout);
      ++g_failures;
    }
  }
  std::printf("%s (%d/8 passed, %.1fs total)\n",
              g_failures == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL",
              8 - g_failures, seconds_since(start));
  return g_failures == 0 ? 0 : 1;
}
