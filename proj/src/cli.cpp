#include "hscal/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "hscal/checkpoint.hpp"
#include "hscal/trainer.hpp"

namespace hscal::cli {

namespace {

using nlohmann::json;

std::uint64_t default_seed() {
  if (const char* env = std::getenv(kSeedEnv)) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string(kSeedEnv) + " is not an unsigned integer");
    }
  }
  return 0;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

// Values from a --config document fill options the user did not set on the
// command line.
template <typename T>
void fill_from(const json& cfg, const char* key, const CLI::Option* opt, T& value) {
  if (opt->count() > 0) return;
  if (auto it = cfg.find(key); it != cfg.end()) {
    try {
      value = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

void check_keys(const json& cfg, std::initializer_list<const char*> keys) {
  if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : cfg.items()) {
    bool ok = false;
    for (const char* key : keys) ok = ok || k == key;
    if (!ok) throw ConfigError("unknown config key '" + k + "'");
  }
}

std::optional<TemperatureFit> load_temperature(const std::string& calibration, double temperature) {
  if (!calibration.empty()) {
    const json j = read_json_file(calibration);
    try {
      return TemperatureFit{j.at("t").get<double>(), j.value("dev_nll_before", 0.0), j.value("dev_nll_after", 0.0)};
    } catch (const json::exception& e) {
      throw ConfigError(calibration + ": " + e.what());
    }
  }
  if (temperature > 0.0) return TemperatureFit{temperature, 0.0, 0.0};
  return std::nullopt;
}

BinGrouping grouping_from(const std::string& s) {
  if (s == "predicted") return BinGrouping::predicted;
  if (s == "gold") return BinGrouping::gold;
  throw ConfigError("grouping must be 'predicted' or 'gold'");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hyperspherical label-space calibration toolkit", "hscal"};
  app.require_subcommand(1);
  app.fallthrough();
  bool as_json = false;
  app.add_flag("--json", as_json, "Print machine-readable JSON on stdout");

  // sphere-gen
  auto* sg = app.add_subcommand("sphere-gen", "Optimize a hyperspherical label frame and write it as CSV");
  // --h is the embedding dimension here, so help is long-form only.
  sg->set_help_flag("--help", "Print this help message and exit");
  std::string sg_config, sg_out;
  std::size_t sg_k = 0, sg_h = 0;
  FrameOptConfig sg_cfg;
  std::uint64_t sg_seed = 0;
  sg->add_option("--config", sg_config, "JSON file with any of the options below");
  auto* sg_k_opt = sg->add_option("--k", sg_k, "Number of labels");
  auto* sg_h_opt = sg->add_option("--h", sg_h, "Embedding dimension");
  auto* sg_out_opt = sg->add_option("--out", sg_out, "Output CSV path");
  auto* sg_seed_opt = sg->add_option("--seed", sg_seed, "Seed");
  auto* sg_iters_opt = sg->add_option("--iters", sg_cfg.max_iters, "Iterations per restart");
  auto* sg_step_opt = sg->add_option("--step", sg_cfg.step_size, "Initial step size");
  auto* sg_restarts_opt = sg->add_option("--restarts", sg_cfg.restarts, "Random restarts");

  // synth
  auto* sy = app.add_subcommand("synth", "Generate a synthetic keyword-bag corpus as JSONL");
  std::string sy_config, sy_out;
  SynthSpec sy_spec;
  sy->add_option("--config", sy_config, "JSON file with any of the options below");
  auto* sy_k = sy->add_option("--k", sy_spec.k, "Number of labels");
  auto* sy_n = sy->add_option("--n", sy_spec.n, "Number of samples");
  auto* sy_noise = sy->add_option("--noise", sy_spec.noise, "Cross-class word contamination rate");
  auto* sy_decay = sy->add_option("--decay", sy_spec.decay, "Geometric class-prior ratio (1 = uniform)");
  auto* sy_seed = sy->add_option("--seed", sy_spec.seed, "Seed");
  auto* sy_out_opt = sy->add_option("--out", sy_out, "Output JSONL path");

  // noise
  auto* nz = app.add_subcommand("noise", "Relabel a fraction of a JSONL corpus");
  std::string nz_in, nz_out;
  double nz_fraction = 0.0;
  std::uint64_t nz_seed = 0;
  nz->add_option("--fraction", nz_fraction, "Fraction of samples to relabel")->required();
  auto* nz_seed_opt = nz->add_option("--seed", nz_seed, "Seed");
  nz->add_option("input", nz_in, "Input JSONL")->required();
  nz->add_option("output", nz_out, "Output JSONL")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a model from a JSON config");
  std::string tr_config, tr_model_out, tr_record_out, tr_frame_out, tr_head, tr_train, tr_dev, tr_test;
  std::optional<std::size_t> tr_epochs, tr_batch;
  std::optional<double> tr_lr, tr_rau, tr_avuc, tr_kl, tr_noise;
  std::optional<std::uint64_t> tr_seed;
  tr->add_option("--config", tr_config, "Training config JSON")->required();
  tr->add_option("--out", tr_model_out, "Checkpoint output path");
  tr->add_option("--record", tr_record_out, "Run record JSON output path");
  tr->add_option("--frame-out", tr_frame_out, "Write the label frame CSV (hyperspherical head)");
  tr->add_option("--epochs", tr_epochs, "Override epochs");
  tr->add_option("--batch-size", tr_batch, "Override batch size");
  tr->add_option("--lr", tr_lr, "Override learning rate");
  tr->add_option("--seed", tr_seed, "Override seed");
  tr->add_option("--head", tr_head, "Override head (hyperspherical|linear)");
  tr->add_option("--rau-weight", tr_rau, "Override RAU weight");
  tr->add_option("--avuc-weight", tr_avuc, "Override AVUC weight");
  tr->add_option("--kl-weight", tr_kl, "Override KL weight");
  tr->add_option("--label-noise", tr_noise, "Override train label noise fraction");
  tr->add_option("--train", tr_train, "Override train JSONL path");
  tr->add_option("--dev", tr_dev, "Override dev JSONL path");
  tr->add_option("--test", tr_test, "Override test JSONL path");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on a JSONL corpus");
  std::string ev_model, ev_data, ev_out, ev_calibration, ev_grouping = "predicted", ev_train_data;
  std::size_t ev_bins = 10, ev_worst = 3;
  double ev_temperature = 0.0;
  ev->add_option("--model", ev_model, "Checkpoint JSON")->required();
  ev->add_option("--data", ev_data, "Evaluation JSONL")->required();
  ev->add_option("--bins", ev_bins, "Reliability bins");
  ev->add_option("--temperature", ev_temperature, "Apply a fixed temperature");
  ev->add_option("--calibration", ev_calibration, "Apply a temperature fit JSON from 'calibrate'");
  ev->add_option("--grouping", ev_grouping, "Per-label grouping for classwise ECE (predicted|gold)");
  ev->add_option("--train-data", ev_train_data, "Training JSONL; adds the low-frequency label table");
  ev->add_option("--worst-n", ev_worst, "Rows in the low-frequency table");
  ev->add_option("--out", ev_out, "Write the report JSON here");

  // calibrate
  auto* ca = app.add_subcommand("calibrate", "Fit a temperature on a dev set");
  std::string ca_model, ca_data, ca_out;
  ca->add_option("--model", ca_model, "Checkpoint JSON")->required();
  ca->add_option("--data", ca_data, "Dev JSONL")->required();
  ca->add_option("--out", ca_out, "Write the fit JSON here");

  // report
  auto* rp = app.add_subcommand("report", "Write reliability-diagram CSV for a checkpoint and corpus");
  std::string rp_model, rp_data, rp_out, rp_calibration, rp_grouping = "predicted";
  std::size_t rp_bins = 10;
  double rp_temperature = 0.0;
  rp->add_option("--model", rp_model, "Checkpoint JSON")->required();
  rp->add_option("--data", rp_data, "Evaluation JSONL")->required();
  rp->add_option("--out", rp_out, "CSV output path")->required();
  rp->add_option("--bins", rp_bins, "Reliability bins");
  rp->add_option("--temperature", rp_temperature, "Apply a fixed temperature");
  rp->add_option("--calibration", rp_calibration, "Apply a temperature fit JSON");
  rp->add_option("--grouping", rp_grouping, "predicted|gold");

  // CLI11 expects argv order reversed when given a vector.
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (sg->parsed()) {
      sg_seed = default_seed();
      if (!sg_config.empty()) {
        const json c = read_json_file(sg_config);
        check_keys(c, {"k", "h", "out", "seed", "iters", "step", "restarts"});
        fill_from(c, "k", sg_k_opt, sg_k);
        fill_from(c, "h", sg_h_opt, sg_h);
        fill_from(c, "out", sg_out_opt, sg_out);
        fill_from(c, "seed", sg_seed_opt, sg_seed);
        fill_from(c, "iters", sg_iters_opt, sg_cfg.max_iters);
        fill_from(c, "step", sg_step_opt, sg_cfg.step_size);
        fill_from(c, "restarts", sg_restarts_opt, sg_cfg.restarts);
      }
      if (sg_k == 0 || sg_h == 0) {
        err << "error: sphere-gen needs --k and --h\n";
        return kExitUsage;
      }
      sg_cfg.seed = sg_seed;
      const FrameMatrix frame = optimize_frame(sg_k, sg_h, sg_cfg);
      if (!sg_out.empty()) write_frame_csv(frame, std::filesystem::path(sg_out));
      const json j = {{"k", sg_k},
                      {"h", sg_h},
                      {"gram_penalty", gram_penalty(frame)},
                      {"max_pairwise_cosine", max_pairwise_cosine(frame)},
                      {"out", sg_out}};
      if (as_json) {
        out << j.dump() << '\n';
      } else {
        if (sg_out.empty()) write_frame_csv(frame, out);
        err << "gram_penalty " << j["gram_penalty"].get<double>() << ", max pairwise cosine "
            << j["max_pairwise_cosine"].get<double>() << '\n';
      }
    } else if (sy->parsed()) {
      if (sy_seed->count() == 0) sy_spec.seed = default_seed();
      if (!sy_config.empty()) {
        const json c = read_json_file(sy_config);
        check_keys(c, {"k", "n", "noise", "decay", "seed", "out", "pool_size", "min_words", "max_words"});
        fill_from(c, "k", sy_k, sy_spec.k);
        fill_from(c, "n", sy_n, sy_spec.n);
        fill_from(c, "noise", sy_noise, sy_spec.noise);
        fill_from(c, "decay", sy_decay, sy_spec.decay);
        fill_from(c, "seed", sy_seed, sy_spec.seed);
        fill_from(c, "out", sy_out_opt, sy_out);
        if (c.contains("pool_size")) sy_spec.pool_size = c["pool_size"].get<std::size_t>();
        if (c.contains("min_words")) sy_spec.min_words = c["min_words"].get<std::size_t>();
        if (c.contains("max_words")) sy_spec.max_words = c["max_words"].get<std::size_t>();
      }
      const Dataset ds = synth_gaussian_text(sy_spec);
      if (sy_out.empty()) {
        write_jsonl(ds, out);
      } else {
        write_jsonl(ds, std::filesystem::path(sy_out));
        if (as_json) out << json{{"samples", ds.size()}, {"labels", ds.vocab}, {"out", sy_out}}.dump() << '\n';
      }
    } else if (nz->parsed()) {
      if (nz_seed_opt->count() == 0) nz_seed = default_seed();
      const Dataset ds = load_jsonl(std::filesystem::path(nz_in));
      const Dataset noisy = inject_noise(ds, nz_fraction, nz_seed);
      write_jsonl(noisy, std::filesystem::path(nz_out));
      std::size_t changed = 0;
      for (std::size_t i = 0; i < ds.size(); ++i) changed += ds.samples[i].label != noisy.samples[i].label;
      if (as_json) out << json{{"samples", ds.size()}, {"changed", changed}, {"out", nz_out}}.dump() << '\n';
    } else if (tr->parsed()) {
      const json raw = read_json_file(tr_config);
      const bool seed_in_file = raw.is_object() && raw.contains("seed");
      TrainConfig cfg = train_config_from_json(raw);
      if (!seed_in_file) cfg.seed = default_seed();
      if (tr_seed) cfg.seed = *tr_seed;
      if (tr_epochs) cfg.epochs = *tr_epochs;
      if (tr_batch) cfg.batch_size = *tr_batch;
      if (tr_lr) cfg.learning_rate = *tr_lr;
      if (!tr_head.empty()) cfg.head = head_type_from_string(tr_head);
      if (tr_rau) cfg.loss.rau_weight = *tr_rau;
      if (tr_avuc) cfg.loss.avuc_weight = *tr_avuc;
      if (tr_kl) cfg.loss.kl_weight = *tr_kl;
      if (tr_noise) cfg.data.label_noise = *tr_noise;
      if (!tr_train.empty()) cfg.data.train_path = tr_train;
      if (!tr_dev.empty()) cfg.data.dev_path = tr_dev;
      if (!tr_test.empty()) cfg.data.test_path = tr_test;
      cfg.validate();
      Trainer trainer(cfg, prepare_data(cfg.data, cfg.seed));
      const RunRecord record = trainer.run();
      if (!tr_model_out.empty()) save_model(trainer.model(), tr_model_out);
      if (!tr_frame_out.empty()) {
        const auto* hs = std::get_if<HypersphericalHead>(&trainer.model().head);
        if (!hs) throw ConfigError("--frame-out needs the hyperspherical head");
        write_frame_csv(hs->frame, std::filesystem::path(tr_frame_out));
      }
      const json rj = to_json(record);
      if (!tr_record_out.empty()) write_text(tr_record_out, rj.dump(2) + "\n");
      if (as_json) {
        out << rj.dump() << '\n';
      } else {
        for (const auto& e : record.epochs) {
          out << "epoch " << e.epoch << " loss " << e.loss << " u_theta " << e.u_theta;
          if (e.dev_f1) out << " dev_f1 " << *e.dev_f1 << " dev_ece " << *e.dev_ece_standard;
          out << '\n';
        }
        if (record.test) {
          out << "test accuracy " << record.test->metrics.accuracy << " f1 " << record.test->metrics.f1
              << " ece " << record.test->ece_standard << " classwise_ece " << record.test->ece_classwise << '\n';
        }
      }
    } else if (ev->parsed()) {
      const Model model = load_model(ev_model);
      const Dataset ds = load_jsonl(std::filesystem::path(ev_data));
      const auto temp = load_temperature(ev_calibration, ev_temperature);
      const auto report = evaluate(model, ds, ev_bins, temp, grouping_from(ev_grouping));
      json j = to_json(report, model.labels);
      if (!ev_train_data.empty()) {
        const Dataset train = remap_labels(load_jsonl(std::filesystem::path(ev_train_data)), model.labels);
        const auto counts = train.label_counts();
        const ProbBatch batch = predict(model, ds, temp ? std::optional(temp->t) : std::nullopt);
        j["low_frequency"] =
            to_json(low_frequency_report(batch, counts, std::min(ev_worst, model.num_labels()), ev_bins), model.labels);
      }
      if (!ev_out.empty()) write_text(ev_out, j.dump(2) + "\n");
      if (as_json) {
        out << j.dump() << '\n';
      } else {
        out << "accuracy " << report.metrics.accuracy << "\nprecision " << report.metrics.precision << "\nrecall "
            << report.metrics.recall << "\nf1 " << report.metrics.f1 << "\nece_standard " << report.ece_standard
            << "\nece_classwise " << report.ece_classwise << '\n';
      }
    } else if (ca->parsed()) {
      const Model model = load_model(ca_model);
      const Dataset ds = remap_labels(load_jsonl(std::filesystem::path(ca_data)), model.labels);
      const auto fit = fit_temperature(predict_logits(model, ds), ds.labels());
      const json j = to_json(fit);
      if (!ca_out.empty()) write_text(ca_out, j.dump(2) + "\n");
      if (as_json) {
        out << j.dump() << '\n';
      } else {
        out << "temperature " << fit.t << " (dev nll " << fit.dev_nll_before << " -> " << fit.dev_nll_after
            << ")\n";
      }
    } else if (rp->parsed()) {
      const Model model = load_model(rp_model);
      const Dataset ds = load_jsonl(std::filesystem::path(rp_data));
      const auto temp = load_temperature(rp_calibration, rp_temperature);
      const ProbBatch batch = predict(model, ds, temp ? std::optional(temp->t) : std::nullopt);
      const auto bins = bin_predictions(batch, rp_bins, grouping_from(rp_grouping));
      emit_reliability_csv(bins, std::filesystem::path(rp_out));
      if (as_json) out << json{{"out", rp_out}, {"samples", batch.size()}, {"bins", rp_bins}}.dump() << '\n';
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace hscal::cli
