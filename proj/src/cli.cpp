#include "spgat/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "spgat/gradcheck_suite.hpp"
#include "spgat/params_io.hpp"
#include "spgat/ppm.hpp"
#include "spgat/run_config.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace spgat {

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::string params_path;
  uint64_t seed = 0;
  bool paper_scale = false;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* sub, CommonArgs& a, bool with_params, bool with_scale) {
  sub->add_option("--config", a.config_path, "run configuration file");
  a.seed_opt = sub->add_option("--seed", a.seed, "override the config seed");
  sub->add_option("--out", a.out_dir, "output directory (default .)");
  if (with_params) {
    sub->add_option("--params", a.params_path, "parameter snapshot file")
        ->required();
  }
  if (with_scale) {
    sub->add_flag("--paper-scale", a.paper_scale,
                  "full protocol: 500 epochs, 10 sessions");
  }
}

RunConfig resolve_base(const CommonArgs& a) {
  RunConfig c = a.config_path.empty() ? RunConfig{} : load_config(a.config_path);
  if (a.seed_opt != nullptr && a.seed_opt->count() > 0) c.seed = a.seed;
  if (a.paper_scale) apply_paper_scale(c);
  return c;
}

RunConfig resolve_run(const CommonArgs& a) {
  RunConfig c = resolve_base(a);
  apply_variant(c);
  c.validate();
  return c;
}

struct PreparedData {
  HsiCube cube;  // normalized
  LabelMap labels;
  SplitSpec split;
  int64_t classes = 0;
  PatchBatch train_patches;
  PatchBatch test_patches;
};

PreparedData prepare_data(const RunConfig& config) {
  PreparedData d;
  if (config.dataset == "synth") {
    SynthParams sp = config.synth;
    sp.seed = config.seed;
    auto [cube, labels] = synth_scene(sp);
    d.cube = normalize_bands(cube, labels);
    d.labels = std::move(labels);
  } else {
    HsiCube cube = load_cube(config.header_path, config.data_path);
    LabelMap labels = load_labels(config.labels_path, cube.height, cube.width);
    d.cube = normalize_bands(cube, labels);
    d.labels = std::move(labels);
  }
  d.classes = d.labels.num_classes();
  d.split = make_split(d.labels, config.split_request(), config.seed);
  d.train_patches = extract_patches(d.cube, d.labels, d.split.train, config.patch);
  d.test_patches = extract_patches(d.cube, d.labels, d.split.test, config.patch);
  return d;
}

std::filesystem::path ensure_out_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw FormatError("cannot create output directory '" + dir + "'");
  return p;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw FormatError("short write to '" + path.string() + "'");
}

std::string sessions_to_text(const std::string& variant, const SessionsResult& r,
                             int64_t classes) {
  std::string out;
  out += "variant " + variant + "\n";
  out += "sessions " + std::to_string(r.sessions.size()) + "\n";
  out += "classes " + std::to_string(classes) + "\n";
  for (size_t i = 0; i < r.sessions.size(); ++i) {
    const std::string tag = "session_" + std::to_string(i + 1);
    out += tag + "_oa " + format_real(r.sessions[i].report.oa) + "\n";
    out += tag + "_aa " + format_real(r.sessions[i].report.aa) + "\n";
    out += tag + "_kappa " + format_real(r.sessions[i].report.kappa) + "\n";
  }
  out += "mean_oa " + format_real(r.mean_oa) + "\n";
  out += "mean_aa " + format_real(r.mean_aa) + "\n";
  out += "mean_kappa " + format_real(r.mean_kappa) + "\n";
  return out;
}

std::string loss_to_text(const std::vector<double>& loss) {
  std::string out;
  for (double v : loss) out += format_real(v) + "\n";
  return out;
}

EvalReport pooled_confusion(const SessionsResult& r, int64_t classes) {
  std::vector<int64_t> sum(static_cast<size_t>(classes * classes), 0);
  for (const SessionResult& s : r.sessions) {
    for (size_t i = 0; i < sum.size(); ++i) sum[i] += s.report.confusion[i];
  }
  return report_from_confusion(std::move(sum), classes);
}

// Writes the multi-session report set under `dir` with the given file
// prefix ("" for train, "<variant>_" for ablate).
void write_session_files(const std::filesystem::path& dir,
                         const std::string& prefix, const std::string& variant,
                         const SessionsResult& r, int64_t classes) {
  write_text(dir / (prefix + "metrics.txt"),
             sessions_to_text(variant, r, classes));
  write_text(dir / (prefix + "confusion.csv"),
             confusion_to_csv(pooled_confusion(r, classes)));
  for (size_t i = 0; i < r.sessions.size(); ++i) {
    const std::string tag = prefix + "session_" + std::to_string(i + 1);
    write_text(dir / (tag + "_metrics.txt"),
               report_to_text(r.sessions[i].report));
    write_text(dir / (tag + "_loss.txt"), loss_to_text(r.sessions[i].epoch_loss));
  }
}

SessionsResult run_variant(const RunConfig& cfg, const PreparedData& data) {
  return run_sessions(cfg.model_config(data.classes), cfg.train_settings(),
                      cfg.sessions, data.train_patches, data.test_patches,
                      data.classes);
}

int cmd_synth(const CommonArgs& a) {
  RunConfig cfg = resolve_base(a);
  cfg.validate();
  SynthParams sp = cfg.synth;
  sp.seed = cfg.seed;
  auto [cube, labels] = synth_scene(sp);
  std::filesystem::path dir = ensure_out_dir(a.out_dir);
  save_cube(cube, (dir / "cube.hdr").string(), (dir / "cube.raw").string(),
            Interleave::kBsq);
  save_labels(labels, (dir / "labels.u16").string());
  save_ppm(labels, (dir / "truth.ppm").string());
  std::cout << "wrote " << (dir / "cube.hdr").string() << ", cube.raw, labels.u16, "
            << "truth.ppm (" << sp.classes << " classes, " << sp.bands
            << " bands, " << sp.height << "x" << sp.width << ")\n";
  return 0;
}

int cmd_train(const CommonArgs& a) {
  RunConfig cfg = resolve_run(a);
  PreparedData data = prepare_data(cfg);
  SessionsResult res = run_variant(cfg, data);
  std::filesystem::path dir = ensure_out_dir(a.out_dir);
  write_session_files(dir, "", cfg.variant, res, data.classes);
  save_parameters(res.first_model, (dir / "params.bin").string());
  for (size_t i = 0; i < res.sessions.size(); ++i) {
    std::printf("session %zu: oa %.4f aa %.4f kappa %.4f\n", i + 1,
                res.sessions[i].report.oa, res.sessions[i].report.aa,
                res.sessions[i].report.kappa);
  }
  std::printf("mean: oa %.4f aa %.4f kappa %.4f\n", res.mean_oa, res.mean_aa,
              res.mean_kappa);
  std::cout << "wrote metrics.txt, confusion.csv, params.bin under "
            << dir.string() << "\n";
  return 0;
}

// Builds the model shell and fills it from a parameter snapshot.
SpgatModel load_model(const RunConfig& cfg, int64_t classes,
                      const std::string& params_path) {
  SpgatModel model(cfg.model_config(classes), cfg.seed);
  std::vector<Tensor> all = model.parameters();
  for (const Tensor& t : model.state_tensors()) all.push_back(t);
  load_parameters(all, params_path);
  return model;
}

int cmd_eval(const CommonArgs& a) {
  RunConfig cfg = resolve_run(a);
  PreparedData data = prepare_data(cfg);
  SpgatModel model = load_model(cfg, data.classes, a.params_path);
  EvalReport report = evaluate(model, data.test_patches, data.classes);
  std::filesystem::path dir = ensure_out_dir(a.out_dir);
  write_text(dir / "metrics.txt", report_to_text(report));
  write_text(dir / "confusion.csv", confusion_to_csv(report));
  std::printf("oa %.4f aa %.4f kappa %.4f (%lld test samples)\n", report.oa,
              report.aa, report.kappa,
              static_cast<long long>(report.total()));
  return 0;
}

int cmd_predict_map(const CommonArgs& a) {
  RunConfig cfg = resolve_run(a);
  PreparedData data = prepare_data(cfg);
  SpgatModel model = load_model(cfg, data.classes, a.params_path);
  LabelMap predicted = predict_labels(model, data.cube, data.labels);
  std::filesystem::path dir = ensure_out_dir(a.out_dir);
  save_ppm(predicted, (dir / "map.ppm").string());
  std::cout << "wrote " << (dir / "map.ppm").string() << "\n";
  return 0;
}

int cmd_gradcheck() {
  std::vector<CheckOutcome> outcomes = run_gradcheck_suite();
  bool all_pass = true;
  for (const CheckOutcome& o : outcomes) {
    std::printf("%s %-22s max rel err %.3g\n", o.pass ? "ok  " : "FAIL",
                o.name.c_str(), o.max_rel_err);
    all_pass = all_pass && o.pass;
  }
  if (!all_pass) {
    std::cout << "gradient checks FAILED\n";
    return static_cast<int>(ErrorKind::kNumeric);
  }
  std::cout << "all " << outcomes.size() << " gradient checks passed\n";
  return 0;
}

int cmd_ablate(const CommonArgs& a) {
  const std::vector<std::string> variants = {"spgat", "spgat-1", "spgcn",
                                             "spgat-avg"};
  RunConfig base = resolve_base(a);
  std::filesystem::path dir = ensure_out_dir(a.out_dir);
  std::string table = "variant mean_oa mean_aa mean_kappa\n";
  std::printf("%-10s %8s %8s %8s\n", "variant", "oa", "aa", "kappa");
  for (const std::string& v : variants) {
    RunConfig cfg = base;
    cfg.variant = v;
    apply_variant(cfg);
    cfg.validate();
    PreparedData data = prepare_data(cfg);
    SessionsResult res = run_variant(cfg, data);
    write_session_files(dir, v + "_", v, res, data.classes);
    table += v + " " + format_real(res.mean_oa) + " " + format_real(res.mean_aa) +
             " " + format_real(res.mean_kappa) + "\n";
    std::printf("%-10s %8.4f %8.4f %8.4f\n", v.c_str(), res.mean_oa, res.mean_aa,
                res.mean_kappa);
  }
  write_text(dir / "ablation.txt", table);
  std::cout << "wrote per-variant metrics and ablation.txt under " << dir.string()
            << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  tune_allocator();
  CLI::App app{"spectral pyramid graph attention for hyperspectral pixels"};
  app.require_subcommand(1);

  CommonArgs synth_args, train_args, eval_args, map_args, ablate_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scene");
  add_common(synth, synth_args, false, false);
  CLI::App* train = app.add_subcommand("train", "train and evaluate sessions");
  add_common(train, train_args, false, true);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a parameter snapshot");
  add_common(eval, eval_args, true, false);
  CLI::App* pmap = app.add_subcommand("predict-map", "render a classification map");
  add_common(pmap, map_args, true, false);
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "verify gradients");
  CLI::App* ablate = app.add_subcommand("ablate", "compare all four variants");
  add_common(ablate, ablate_args, false, true);

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(synth_args);
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (pmap->parsed()) return cmd_predict_map(map_args);
    if (gradcheck->parsed()) return cmd_gradcheck();
    if (ablate->parsed()) return cmd_ablate(ablate_args);
    std::cerr << "no subcommand given\n";
    return static_cast<int>(ErrorKind::kUsage);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kUsage);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kNumeric);
  }
}

int cli_main(const std::vector<std::string>& args) {
  std::vector<std::string> full;
  full.reserve(args.size() + 1);
  full.push_back("spgat");
  for (const std::string& a : args) full.push_back(a);
  std::vector<const char*> ptrs;
  ptrs.reserve(full.size());
  for (const std::string& s : full) ptrs.push_back(s.c_str());
  return cli_main(static_cast<int>(ptrs.size()), ptrs.data());
}

}  // namespace spgat
