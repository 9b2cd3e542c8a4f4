#include "drscreen/cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "drscreen/datasets.hpp"
#include "drscreen/error.hpp"
#include "drscreen/json_util.hpp"
#include "drscreen/metrics.hpp"
#include "drscreen/model/checkpoint.hpp"
#include "drscreen/model/densenet.hpp"
#include "drscreen/service.hpp"

namespace drscreen::cli {
namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const DataPaths& d) {
  j = nlohmann::json{{"train_manifest", d.train_manifest},
                     {"train_images", d.train_images},
                     {"test_manifest", d.test_manifest},
                     {"test_images", d.test_images},
                     {"holdout_fraction", d.holdout_fraction},
                     {"validation_manifest", d.validation_manifest},
                     {"validation_images", d.validation_images}};
}

void from_json(const nlohmann::json& j, DataPaths& d) {
  json_util::reject_unknown_keys(j, "data",
                                 {"train_manifest", "train_images", "test_manifest", "test_images",
                                  "holdout_fraction", "validation_manifest", "validation_images"});
  json_util::read_if_present(j, "train_manifest", d.train_manifest);
  json_util::read_if_present(j, "train_images", d.train_images);
  json_util::read_if_present(j, "test_manifest", d.test_manifest);
  json_util::read_if_present(j, "test_images", d.test_images);
  json_util::read_if_present(j, "holdout_fraction", d.holdout_fraction);
  json_util::read_if_present(j, "validation_manifest", d.validation_manifest);
  json_util::read_if_present(j, "validation_images", d.validation_images);
}

void to_json(nlohmann::json& j, const CliConfig& c) {
  j = nlohmann::json{{"model", c.model}, {"train", c.train},     {"augment", c.augment},
                     {"data", c.data},   {"service", c.service}, {"out_dir", c.out_dir}};
}

void from_json(const nlohmann::json& j, CliConfig& c) {
  json_util::reject_unknown_keys(j, "config", {"model", "train", "augment", "data", "service", "out_dir"});
  if (j.contains("model")) c.model = j.at("model").get<model::ModelConfig>();
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("augment")) from_json(j.at("augment"), c.augment);
  if (j.contains("data")) from_json(j.at("data"), c.data);
  if (j.contains("service")) service::from_json(j.at("service"), c.service);
  json_util::read_if_present(j, "out_dir", c.out_dir);
}

CliConfig load_config(const fs::path& path) {
  nlohmann::json j;
  try {
    const auto bytes = read_file_bytes(path);
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("{}: not valid JSON: {}", path.string(), e.what()));
  }
  CliConfig c;
  from_json(j, c);
  return c;
}

namespace {

/// Raised with the name of the pipeline stage that failed.
struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string s, const std::string& what) : std::runtime_error(what), stage(std::move(s)) {}
};

template <class F>
auto stage(const std::string& name, F&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const fs::path& path) {
  const auto b = read_file_bytes(path);
  return {b.begin(), b.end()};
}

std::optional<CropRect> parse_crop_flag(const std::string& s) {
  if (s.empty()) return std::nullopt;
  CropRect r;
  char c1 = 0, c2 = 0;
  std::istringstream is(s);
  if (!(is >> r.x >> c1 >> r.y >> c2 >> r.side) || c1 != ',' || c2 != ',' || !is.eof()) {
    throw ConfigError("--crop expects x,y,side");
  }
  return r;
}

struct Options {
  std::string config_path;
  std::string out_dir;
  std::string model_preset;
  // train
  std::optional<int> epochs, runs, batch_size;
  std::optional<double> learning_rate;
  std::optional<std::uint64_t> seed;
  bool no_augment = false;
  std::string train_manifest, train_images, test_manifest, test_images;
  // evaluate / infer / verify / report
  std::string checkpoint, manifest, images, predictions, image, crop, kind,
                                                                       report_path, dataset_name;
  std::vector<std::string> notes;
  bool json = false, strict = false;
  // serve
  std::string host, store;
  std::optional<int> port;
  bool retain_images = false;
  std::optional<std::size_t> max_upload;
};

CliConfig effective_config(const Options& o) {
  CliConfig c = o.config_path.empty() ? CliConfig{} : load_config(o.config_path);
  if (o.model_preset == "tiny") c.model = model::ModelConfig::tiny();
  else if (o.model_preset == "reference") c.model = model::ModelConfig::reference();
  else if (!o.model_preset.empty()) throw ConfigError("--model must be 'reference' or 'tiny'");
  if (!o.out_dir.empty()) c.out_dir = o.out_dir;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.runs) c.train.num_runs = *o.runs;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.learning_rate) c.train.learning_rate = *o.learning_rate;
  if (o.seed) c.train.seed = *o.seed;
  if (o.no_augment) c.augment = AugmentConfig::disabled();
  if (!o.train_manifest.empty()) c.data.train_manifest = o.train_manifest;
  if (!o.train_images.empty()) c.data.train_images = o.train_images;
  if (!o.test_manifest.empty()) c.data.test_manifest = o.test_manifest;
  if (!o.test_images.empty()) c.data.test_images = o.test_images;
  if (!o.manifest.empty()) c.data.validation_manifest = o.manifest;
  if (!o.images.empty()) c.data.validation_images = o.images;
  if (!o.checkpoint.empty()) c.service.checkpoint = o.checkpoint;
  if (!o.host.empty()) c.service.host = o.host;
  if (o.port) c.service.port = *o.port;
  if (!o.store.empty()) c.service.store_path = o.store;
  if (o.retain_images) c.service.retain_images = true;
  if (o.max_upload) c.service.max_upload_bytes = *o.max_upload;
  c.model.validate();
  c.train.validate();
  c.augment.validate();
  return c;
}

void echo_config(const CliConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "effective-config.json", nlohmann::json(c).dump(2) + "\n");
}

// --- train ------------------------------------------------------------------

int cmd_train(const Options& o, std::ostream& out) {
  const CliConfig cfg = stage("config", [&] { return effective_config(o); });
  if (cfg.data.train_manifest.empty()) throw StageError("config", "a training manifest is required");
  const fs::path out_dir = cfg.out_dir;
  stage("output", [&] {
    fs::create_directories(out_dir / "checkpoints");
    echo_config(cfg, out_dir);
  });

  const int side = cfg.model.input_side;
  auto [train_set, test_set] = stage("load-data", [&] {
    auto all = datasets::load_training_manifest(cfg.data.train_manifest, cfg.data.train_images);
    std::vector<datasets::TrainingRecord> train_records, test_records;
    if (!cfg.data.test_manifest.empty()) {
      train_records = std::move(all.records);
      const auto images = cfg.data.test_images.empty() ? cfg.data.train_images : cfg.data.test_images;
      test_records = datasets::load_training_manifest(cfg.data.test_manifest, images).records;
    } else {
      const auto split = datasets::holdout_split(all.records.size(), cfg.data.holdout_fraction, cfg.train.seed);
      for (auto i : split.train) train_records.push_back(all.records[i]);
      for (auto i : split.test) test_records.push_back(all.records[i]);
    }
    return std::pair{std::make_unique<datasets::TrainingSource>(std::move(train_records), side),
                     std::make_unique<datasets::TrainingSource>(std::move(test_records), side)};
  });
  out << fmt::format("training on {} images, selecting on {} held-out images, {} run(s) x {} epoch(s)\n",
                     train_set->size(), test_set->size(), cfg.train.num_runs, cfg.train.epochs);

  std::ofstream log(out_dir / "train-log.txt", std::ios::trunc);
  const auto sink = [&](const train::EpochRecord& r) {
    const auto line = train::format_progress(r);
    log << line << '\n' << std::flush;
    out << line << '\n' << std::flush;
  };

  int best_run = -1;
  double best_acc = -1.0;
  std::vector<nlohmann::json> summaries;
  for (int r = 0; r < cfg.train.num_runs; ++r) {
    const std::uint64_t seed = cfg.train.seed + static_cast<std::uint64_t>(r);
    auto result = stage("train", [&] {
      return train::train_one_run(*train_set, *test_set, cfg.model, cfg.train, cfg.augment, seed, r, sink);
    });
    model::Checkpoint ckpt{cfg.model, std::move(result.params),
                           {{"run", r},
                            {"seed", seed},
                            {"epochs", cfg.train.epochs},
                            {"batch_size", cfg.train.batch_size},
                            {"learning_rate", cfg.train.learning_rate},
                            {"loss_history", result.loss_history},
                            {"held_out_accuracy", result.accuracy}}};
    const auto path = out_dir / "checkpoints" / fmt::format("run-{:02}.ckpt", r);
    stage("save", [&] { model::save_checkpoint(path, ckpt); });
    nlohmann::json s{{"run", r}, {"seed", seed}, {"held_out_accuracy", result.accuracy},
                     {"final_loss", result.loss_history.back()}, {"checkpoint", path.string()}};
    log << s.dump() << '\n' << std::flush;
    summaries.push_back(s);
    // Same rule as select_best: strictly better wins, so ties keep the earliest run.
    if (result.accuracy > best_acc) {
      best_acc = result.accuracy;
      best_run = r;
      stage("save", [&] { fs::copy_file(path, out_dir / "checkpoints" / "best.ckpt", fs::copy_options::overwrite_existing); });
    }
  }
  const nlohmann::json best{{"best_run", best_run}, {"held_out_accuracy", best_acc}, {"runs", summaries}};
  log << nlohmann::json{{"best_run", best_run}, {"held_out_accuracy", best_acc}}.dump() << '\n';
  write_text(out_dir / "runs.json", best.dump(2) + "\n");
  out << fmt::format("best run {} with held-out accuracy {:.2f}% -> {}\n", best_run, 100.0 * best_acc,
                     (out_dir / "checkpoints" / "best.ckpt").string());
  return 0;
}

// --- evaluate ---------------------------------------------------------------

struct SeededPrediction {
  Grade grade{0};
  double dr_score = 0.0;
};

std::map<std::string, SeededPrediction> load_predictions(const fs::path& path) {
  const auto table = datasets::read_csv_file(path);
  const auto c_id = table.column("image_id");
  const auto c_grade = table.column("predicted_grade");
  const auto c_score = table.column("dr_score");
  std::map<std::string, SeededPrediction> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const int g = std::stoi(row[c_grade]);
    const double s = std::stod(row[c_score]);
    if (!out.emplace(row[c_id], SeededPrediction{Grade(g), s}).second) {
      throw UniquenessError(fmt::format("predictions row {}: duplicate image_id '{}'", r + 1, row[c_id]));
    }
  }
  return out;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  const CliConfig cfg = stage("config", [&] { return effective_config(o); });
  if (cfg.data.validation_manifest.empty()) throw StageError("config", "--manifest is required");
  const bool seeded = !o.predictions.empty();
  if (!seeded && cfg.service.checkpoint.empty()) {
    throw StageError("config", "--checkpoint is required unless --predictions is given");
  }
  const fs::path out_dir = cfg.out_dir;

  const auto manifest = stage("load-data", [&] {
    datasets::LoadOptions opts;
    opts.require_images = !seeded;
    return datasets::load_validation_manifest(cfg.data.validation_manifest, cfg.data.validation_images, opts);
  });

  std::vector<metrics::LabeledPrediction> pairs;
  std::vector<std::array<double, Grade::kCount>> probabilities;
  if (seeded) {
    const auto preds = stage("load-predictions", [&] { return load_predictions(o.predictions); });
    for (const auto& rec : manifest.records) {
      const auto it = preds.find(rec.image_id);
      if (it == preds.end()) throw StageError("load-predictions", "no prediction for image '" + rec.image_id + "'");
      pairs.push_back({rec.specialist_grade, it->second.grade, it->second.dr_score});
    }
  } else {
    stage("inference", [&] {
      const auto loaded = service::load_model(cfg.service.checkpoint);
      const datasets::ValidationSource source(manifest.records, loaded->checkpoint.config.input_side);
      for (std::size_t i = 0; i < source.size(); ++i) {
        const auto pred = model::predict(*loaded->net, loaded->checkpoint.params, source.image(i));
        pairs.push_back({source.label(i), pred.grade, model::dr_score(pred.probabilities)});
        probabilities.push_back(pred.probabilities);
      }
    });
  }

  auto report = stage("metrics", [&] { return metrics::build_report(pairs, manifest.n_patients); });
  for (const auto& n : o.notes) report.notes.push_back(n);
  const std::string name = o.dataset_name.empty() ? fs::path(cfg.data.validation_manifest).stem().string()
                                                  : o.dataset_name;
  stage("write-report", [&] {
    fs::create_directories(out_dir / "report-data");
    echo_config(cfg, out_dir);
    write_text(out_dir / "report.txt",
               nlohmann::json{{"dataset", name}, {"report", report}}.dump(2) + "\n");
    write_text(out_dir / "report-data" / "classwise.csv", metrics::classwise_csv(report));
    write_text(out_dir / "report-data" / "roc.csv", metrics::roc_csv(report));
    std::string preds = "image_id,true_grade,predicted_grade,dr_score\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      preds += fmt::format("{},{},{},{:.17g}\n", manifest.records[i].image_id, pairs[i].true_grade.value(),
                           pairs[i].predicted_grade.value(), pairs[i].dr_score);
    }
    write_text(out_dir / "report-data" / "predictions.csv", preds);
  });
  out << metrics::render_text(report, name);
  return 0;
}

// --- infer ------------------------------------------------------------------

int cmd_infer(const Options& o, std::ostream& out) {
  if (o.checkpoint.empty() || o.image.empty()) throw StageError("config", "--checkpoint and --image are required");
  const auto crop = stage("config", [&] { return parse_crop_flag(o.crop); });
  const auto loaded = stage("load-checkpoint", [&] { return service::load_model(o.checkpoint); });
  const auto input = stage("preprocess", [&] {
    return preprocess_for_inference(read_file_bytes(o.image), crop, loaded->checkpoint.config.input_side);
  });
  const auto pred = stage("inference", [&] { return model::predict(*loaded->net, loaded->checkpoint.params, input); });
  const double score = model::dr_score(pred.probabilities);
  if (o.json) {
    out << nlohmann::json{{"grade", pred.grade.value()},
                          {"stage_name", std::string(stage_name(pred.grade))},
                          {"dr_positive", is_positive(pred.grade)},
                          {"dr_score", score},
                          {"probabilities", pred.probabilities},
                          {"model_version", loaded->version}}
               .dump()
        << '\n';
    return 0;
  }
  out << fmt::format("grade: {}\nstage: {}\nscreening: {}\n", pred.grade.value(), stage_name(pred.grade),
                     binary_label_name(to_binary(pred.grade)));
  out << "probabilities:";
  for (double p : pred.probabilities) out << fmt::format(" {:.6f}", p);
  out << fmt::format("\ndr_score: {:.6f}\nmodel_version: {}\n", score, loaded->version);
  return 0;
}

// --- verify-data --------------------------------------------------------------

int cmd_verify(const Options& o, std::ostream& out) {
  if (o.manifest.empty()) throw StageError("config", "--manifest is required");
  datasets::LoadOptions opts;
  opts.fail_fast = false;
  std::string kind = o.kind;
  if (kind.empty()) {
    // Guess from the header: training manifests are keyed by id_code.
    const auto table = stage("load-data", [&] { return datasets::read_csv_file(o.manifest); });
    kind = table.find_column("id_code") ? "training" : "validation";
  }
  nlohmann::json report;
  if (kind == "training") {
    const auto m = stage("load-data", [&] { return datasets::load_training_manifest(o.manifest, o.images, opts); });
    const auto rep = datasets::verify_dataset(std::span<const datasets::TrainingRecord>(m.records));
    report = datasets::to_json(rep);
    for (const auto& miss : m.missing) {
      report["issues"].push_back({{"image_id", miss.image_id}, {"kind", "missing"},
                                  {"message", fmt::format("row {}: image file not found", miss.row)}});
    }
    report["records"] = m.records.size();
  } else if (kind == "validation") {
    const auto m = stage("load-data", [&] { return datasets::load_validation_manifest(o.manifest, o.images, opts); });
    const auto rep = datasets::verify_dataset(std::span<const datasets::ValidationRecord>(m.records));
    report = datasets::to_json(rep);
    for (const auto& miss : m.missing) {
      report["issues"].push_back({{"image_id", miss.image_id}, {"kind", "missing"},
                                  {"message", fmt::format("row {}: image file not found", miss.row)}});
    }
    report["records"] = m.records.size();
    report["patients"] = m.n_patients;
  } else {
    throw StageError("config", "--kind must be 'training' or 'validation'");
  }
  report["ok"] = report["issues"].empty();
  out << report.dump(2) << '\n';
  if (!o.out_dir.empty()) {
    stage("write-report", [&] {
      fs::create_directories(o.out_dir);
      write_text(fs::path(o.out_dir) / "verification.json", report.dump(2) + "\n");
    });
  }
  return (o.strict && !report["ok"].get<bool>()) ? 1 : 0;
}

// --- serve --------------------------------------------------------------------

int cmd_serve(const Options& o, std::ostream& out) {
  const CliConfig cfg = stage("config", [&] { return effective_config(o); });
  if (cfg.service.checkpoint.empty()) throw StageError("config", "--checkpoint is required");
  stage("config", [&] { cfg.service.validate(); });
  // Refuse to start on a checkpoint that does not self-validate.
  const auto loaded = stage("load-checkpoint", [&] { return service::load_model(cfg.service.checkpoint); });
  service::ScreeningService svc(loaded, cfg.service);
  service::HttpServer http(svc);

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  const int port = stage("bind", [&] { return http.bind(cfg.service.host, cfg.service.port); });
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    http.stop();
  });
  out << fmt::format("serving model {} on http://{}:{} (store {})\n", loaded->version, cfg.service.host, port,
                     cfg.service.store_path.string())
      << std::flush;
  http.listen();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

// --- report -------------------------------------------------------------------

int cmd_report(const Options& o, std::ostream& out) {
  if (o.report_path.empty()) throw StageError("config", "--report is required");
  const auto doc = stage("load-report", [&] {
    try {
      return nlohmann::json::parse(read_text(o.report_path));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("report is not valid JSON: ") + e.what());
    }
  });
  const auto report = stage("load-report", [&] {
    return doc.contains("report") ? doc.at("report").get<metrics::EvaluationReport>()
                                  : doc.get<metrics::EvaluationReport>();
  });
  const std::string name = !o.dataset_name.empty() ? o.dataset_name : doc.value("dataset", std::string("validation"));
  out << metrics::render_text(report, name);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diabetic-retinopathy screening toolkit", "drscreen"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "Run the multi-run training protocol");
  train->add_option("--config", o.config_path, "JSON config file");
  train->add_option("--out-dir", o.out_dir, "Output directory");
  train->add_option("--model", o.model_preset, "Model preset: reference | tiny");
  train->add_option("--train-manifest", o.train_manifest, "CSV with id_code,diagnosis");
  train->add_option("--train-images", o.train_images, "Directory of training images");
  train->add_option("--test-manifest", o.test_manifest, "Labelled held-out CSV (default: seeded holdout)");
  train->add_option("--test-images", o.test_images, "Directory of held-out images");
  train->add_option("--epochs", o.epochs);
  train->add_option("--runs", o.runs);
  train->add_option("--batch-size", o.batch_size);
  train->add_option("--lr", o.learning_rate);
  train->add_option("--seed", o.seed);
  train->add_flag("--no-augment", o.no_augment, "Disable training augmentation");

  auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint on a validation manifest");
  eval->add_option("--config", o.config_path);
  eval->add_option("--out-dir", o.out_dir);
  eval->add_option("--checkpoint", o.checkpoint);
  eval->add_option("--manifest", o.manifest, "CSV with image_id,patient_code,grade,confidence,...");
  eval->add_option("--images", o.images);
  eval->add_option("--predictions", o.predictions, "CSV image_id,predicted_grade,dr_score; skips inference");
  eval->add_option("--name", o.dataset_name, "Dataset label used in the rendered table");
  eval->add_option("--note", o.notes, "Extra note carried into the report (repeatable)");

  auto* infer = app.add_subcommand("infer", "Grade one image");
  infer->add_option("--checkpoint", o.checkpoint)->required();
  infer->add_option("--image", o.image)->required();
  infer->add_option("--crop", o.crop, "Manual crop x,y,side");
  infer->add_flag("--json", o.json);

  auto* verify = app.add_subcommand("verify-data", "Check a manifest and its images");
  verify->add_option("--manifest", o.manifest)->required();
  verify->add_option("--images", o.images);
  verify->add_option("--kind", o.kind, "training | validation (default: from the header)");
  verify->add_option("--out-dir", o.out_dir);
  verify->add_flag("--strict", o.strict, "Exit 1 when any issue is found");

  auto* serve = app.add_subcommand("serve", "Host a checkpoint behind the screening API");
  serve->add_option("--config", o.config_path);
  serve->add_option("--checkpoint", o.checkpoint);
  serve->add_option("--host", o.host);
  serve->add_option("--port", o.port);
  serve->add_option("--store", o.store, "Record log path");
  serve->add_flag("--retain-images", o.retain_images);
  serve->add_option("--max-upload", o.max_upload, "Bytes");

  auto* report = app.add_subcommand("report", "Render a stored evaluation report");
  report->add_option("--report", o.report_path)->required();
  report->add_option("--name", o.dataset_name);

  if (args.size() > 1 && !args[1].starts_with("-") && app.get_subcommand_no_throw(args[1]) == nullptr) {
    err << "drscreen: unknown subcommand '" << args[1] << "'\n\n" << app.help();
    return 2;
  }
  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "drscreen: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  const auto* sub = app.get_subcommands().front();
  try {
    if (sub == train) return cmd_train(o, out);
    if (sub == eval) return cmd_evaluate(o, out);
    if (sub == infer) return cmd_infer(o, out);
    if (sub == verify) return cmd_verify(o, out);
    if (sub == serve) return cmd_serve(o, out);
    if (sub == report) return cmd_report(o, out);
  } catch (const StageError& e) {
    err << fmt::format("drscreen {}: {} failed: {}\n", sub->get_name(), e.stage, e.what());
    return 1;
  } catch (const std::exception& e) {
    err << fmt::format("drscreen {}: {}\n", sub->get_name(), e.what());
    return 1;
  }
  return 2;
}

}  // namespace drscreen::cli
