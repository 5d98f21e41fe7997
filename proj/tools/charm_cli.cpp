#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "charm/card_mesh.hpp"
#include "charm/dataset.hpp"
#include "charm/inference.hpp"
#include "charm/io.hpp"
#include "charm/metrics.hpp"
#include "charm/model.hpp"
#include "charm/sequence.hpp"
#include "charm/tokenizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace charm;

namespace {

PiecewiseScheme load_scheme(const std::string& path) {
  if (path.empty()) return PiecewiseScheme::standard();
  return PiecewiseScheme::from_json(read_file(path));
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw ValueError("cannot write " + path.string());
}

HairMesh load_condition_mesh(const std::string& path) {
  if (path.ends_with(".obj")) return load_obj(path);
  return style_to_mesh(load_hairstyle(path));
}

struct EncodeOpts {
  std::string input, output;
  double merge_eps = 1e-6;
};

int cmd_encode(const EncodeOpts& o) {
  PreprocessConfig cfg;
  cfg.vertex_merge_eps = o.merge_eps;
  const PreprocessReport report = preprocess_mesh(load_obj(o.input), cfg);
  if (!report.accepted) {
    std::string joined;
    for (const auto& r : report.reasons) joined += (joined.empty() ? "" : "; ") + r;
    throw GeometryError("mesh rejected: " + joined);
  }
  save_hairstyle(report.style, o.output);
  std::printf("cards %zu, recall %.4f, compression ratio %.6f\n", report.style.cards.size(),
              report.recall, token_compression_ratio(report.style));
  return 0;
}

struct DecodeOpts {
  std::string input, output;
};

int cmd_decode(const DecodeOpts& o) {
  const Hairstyle style = load_hairstyle(o.input);
  save_obj(style_to_mesh(style), o.output);
  std::printf("cards %zu, compression ratio %.6f\n", style.cards.size(),
              token_compression_ratio(style));
  return 0;
}

struct TokenizeOpts {
  std::string input, output, scheme, ordering = "ccw";
};

int cmd_tokenize(const TokenizeOpts& o) {
  const Hairstyle style = load_hairstyle(o.input);
  const HairSequence seq =
      to_sequence(style, load_scheme(o.scheme), ordering_mode_from_string(o.ordering));
  write_file(o.output, sequence_to_text(seq));
  std::printf("tokens %zu\n", seq.tokens.size());
  return 0;
}

struct SynthOpts {
  std::string output;
  int count = 50;
  std::uint64_t seed = 0;
  int min_cards = 25, max_cards = 130;
  int min_points = 20, max_points = 60;
};

int cmd_make_synthetic(const SynthOpts& o) {
  std::vector<Hairstyle> styles;
  for (int i = 0; i < o.count; ++i) {
    SynthConfig cfg;
    cfg.min_cards = o.min_cards;
    cfg.max_cards = o.max_cards;
    cfg.min_points = o.min_points;
    cfg.max_points = o.max_points;
    cfg.seed = o.seed + static_cast<std::uint64_t>(i);
    styles.push_back(generate_synthetic(cfg));
  }
  save_dataset(styles, o.output);
  write_json(fs::path(o.output) / "run_config.json",
             {{"command", "make-synthetic"},
              {"count", o.count},
              {"seed", o.seed},
              {"min_cards", o.min_cards},
              {"max_cards", o.max_cards},
              {"min_points", o.min_points},
              {"max_points", o.max_points}});
  std::printf("wrote %d styles to %s\n", o.count, o.output.c_str());
  return 0;
}

struct TrainOpts {
  std::string dataset, output, scheme, ordering = "ccw";
  int layers = 4, hidden = 128, heads = 4;
  int epochs = 200, batch_size = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::size_t cloud_points = 512;
  bool verbose = false;
};

int cmd_train(const TrainOpts& o) {
  const std::vector<Hairstyle> styles = load_dataset(o.dataset);
  const PiecewiseScheme scheme = load_scheme(o.scheme);
  const OrderingMode mode = ordering_mode_from_string(o.ordering);
  const std::vector<TrainingItem> items =
      build_training_items(styles, scheme, mode, o.cloud_points, o.seed);

  ModelConfig mcfg;
  mcfg.layers = o.layers;
  mcfg.hidden = o.hidden;
  mcfg.heads = o.heads;
  mcfg.seed = o.seed;
  TrainConfig tcfg;
  tcfg.epochs = o.epochs;
  tcfg.lr = o.lr;
  tcfg.batch_size = o.batch_size;
  tcfg.seed = o.seed;
  tcfg.verbose = o.verbose;

  const TrainResult result = train(items, mcfg, tcfg);
  save_weights(result.weights, o.output);
  save_loss_curve(result.loss_curve, (fs::path(o.output) / "loss_curve.csv").string());

  const Accuracy acc = evaluate_accuracy(items, result.weights);
  write_json(fs::path(o.output) / "run_config.json",
             {{"command", "train"},
              {"seed", o.seed},
              {"ordering", o.ordering},
              {"epochs", o.epochs},
              {"lr", o.lr},
              {"batch_size", o.batch_size},
              {"cloud_points", o.cloud_points},
              {"styles", styles.size()},
              {"final_loss", result.loss_curve.empty() ? 0.0 : result.loss_curve.back()},
              {"accuracy",
               {{"position", acc.position}, {"width", acc.width}, {"thickness", acc.thickness}}}});
  std::printf("final loss %.5f, accuracy position %.4f width %.4f thickness %.4f\n",
              result.loss_curve.empty() ? 0.0 : result.loss_curve.back(), acc.position,
              acc.width, acc.thickness);
  return 0;
}

struct GenerateOpts {
  std::string weights, condition, output, log, scheme;
  std::uint64_t seed = 0;
  std::size_t samples = 10000;
  int top_k = 0;  // 0 = greedy
  double temperature = 1.0;
  bool no_root_verify = false, no_length_norm = false, no_coherence = false;
};

int cmd_generate(const GenerateOpts& o) {
  const ModelWeights weights = load_weights(o.weights);
  const PiecewiseScheme scheme = load_scheme(o.scheme);
  const PointCloud condition = sample_surface(load_condition_mesh(o.condition), o.samples, o.seed);

  InferenceConfig cfg;
  cfg.seed = o.seed;
  cfg.enable_root_verification = !o.no_root_verify;
  cfg.enable_length_normalization = !o.no_length_norm;
  cfg.enable_coherence_check = !o.no_coherence;
  if (o.top_k > 0) {
    cfg.sampling = SamplingMode::TopK;
    cfg.top_k = o.top_k;
    cfg.temperature = o.temperature;
  }

  const GenerationResult result = generate(condition, weights, scheme, cfg);
  save_hairstyle(result.style, o.output);
  const std::string log_path = o.log.empty() ? o.output + ".log.jsonl" : o.log;
  write_file(log_path, log_to_jsonl(result.log));
  write_json(o.output + ".config.json", {{"command", "generate"},
                                         {"seed", o.seed},
                                         {"samples", o.samples},
                                         {"top_k", o.top_k},
                                         {"temperature", o.temperature},
                                         {"root_verification", cfg.enable_root_verification},
                                         {"length_normalization", cfg.enable_length_normalization},
                                         {"coherence_check", cfg.enable_coherence_check},
                                         {"truncated", result.truncated}});
  std::printf("cards %zu, log entries %zu%s\n", result.style.cards.size(), result.log.size(),
              result.truncated ? ", truncated" : "");
  return 0;
}

struct EvalOpts {
  std::string pred, gt, output;
  std::size_t samples = 2048;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalOpts& o) {
  const MetricReport report =
      card_level_report(load_hairstyle(o.pred), load_hairstyle(o.gt), o.samples, o.seed);
  if (!o.output.empty()) {
    json j = report.to_json();
    j["seed"] = o.seed;
    j["samples_per_card"] = o.samples;
    write_json(o.output, j);
  }
  std::fputs(report.to_table().c_str(), stdout);
  return 0;
}

struct PreprocessOpts {
  std::string input, output;
  double merge_eps = 1e-6;
};

int cmd_preprocess(const PreprocessOpts& o) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(o.input))
    if (entry.path().extension() == ".obj") files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  PreprocessConfig cfg;
  cfg.vertex_merge_eps = o.merge_eps;
  std::vector<Hairstyle> accepted;
  std::ostringstream report_lines;
  for (const auto& file : files) {
    const PreprocessReport report = preprocess_mesh(load_obj(file.string()), cfg);
    if (report.accepted) accepted.push_back(report.style);
    report_lines << json{{"file", file.filename().string()},
                         {"accepted", report.accepted},
                         {"reasons", report.reasons},
                         {"recall", report.recall},
                         {"cards", report.style.cards.size()}}
                        .dump()
                 << "\n";
  }
  save_dataset(accepted, o.output);
  write_file((fs::path(o.output) / "report.jsonl").string(), report_lines.str());
  write_json(fs::path(o.output) / "run_config.json",
             {{"command", "preprocess"},
              {"merge_eps", o.merge_eps},
              {"inputs", files.size()},
              {"accepted", accepted.size()}});
  std::printf("accepted %zu of %zu meshes\n", accepted.size(), files.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hair card codec, generator, and evaluation toolkit"};
  app.require_subcommand(1);
  bool json_errors = false;
  app.add_flag("--json-errors", json_errors, "structured error output on stderr");

  std::function<int()> run;

  auto encode_opts = std::make_shared<EncodeOpts>();
  auto* enc = app.add_subcommand("encode", "mesh OBJ -> hairstyle JSON");
  enc->add_option("--input", encode_opts->input, "input .obj")->required();
  enc->add_option("--output", encode_opts->output, "output .json")->required();
  enc->add_option("--merge-eps", encode_opts->merge_eps, "vertex merge epsilon");
  enc->callback([=, &run] { run = [=] { return cmd_encode(*encode_opts); }; });

  auto decode_opts = std::make_shared<DecodeOpts>();
  auto* dec = app.add_subcommand("decode", "hairstyle JSON -> mesh OBJ");
  dec->add_option("--input", decode_opts->input)->required();
  dec->add_option("--output", decode_opts->output)->required();
  dec->callback([=, &run] { run = [=] { return cmd_decode(*decode_opts); }; });

  auto tok_opts = std::make_shared<TokenizeOpts>();
  auto* tok = app.add_subcommand("tokenize", "hairstyle JSON -> token text");
  tok->add_option("--input", tok_opts->input)->required();
  tok->add_option("--output", tok_opts->output)->required();
  tok->add_option("--scheme", tok_opts->scheme, "quantization scheme JSON");
  tok->add_option("--ordering", tok_opts->ordering)->check(CLI::IsMember({"ccw", "x", "y", "z"}));
  tok->callback([=, &run] { run = [=] { return cmd_tokenize(*tok_opts); }; });

  auto synth_opts = std::make_shared<SynthOpts>();
  auto* synth = app.add_subcommand("make-synthetic", "procedural dataset generator");
  synth->add_option("--output", synth_opts->output)->required();
  synth->add_option("--count", synth_opts->count);
  synth->add_option("--seed", synth_opts->seed);
  synth->add_option("--min-cards", synth_opts->min_cards);
  synth->add_option("--max-cards", synth_opts->max_cards);
  synth->add_option("--min-points", synth_opts->min_points);
  synth->add_option("--max-points", synth_opts->max_points);
  synth->callback([=, &run] { run = [=] { return cmd_make_synthetic(*synth_opts); }; });

  auto train_opts = std::make_shared<TrainOpts>();
  auto* tr = app.add_subcommand("train", "fit the generator on a dataset directory");
  tr->add_option("--dataset", train_opts->dataset)->required();
  tr->add_option("--output", train_opts->output)->required();
  tr->add_option("--scheme", train_opts->scheme);
  tr->add_option("--ordering", train_opts->ordering)->check(CLI::IsMember({"ccw", "x", "y", "z"}));
  tr->add_option("--layers", train_opts->layers);
  tr->add_option("--hidden", train_opts->hidden);
  tr->add_option("--heads", train_opts->heads);
  tr->add_option("--epochs", train_opts->epochs);
  tr->add_option("--batch-size", train_opts->batch_size);
  tr->add_option("--lr", train_opts->lr);
  tr->add_option("--seed", train_opts->seed);
  tr->add_option("--cloud-points", train_opts->cloud_points);
  tr->add_flag("--verbose", train_opts->verbose);
  tr->callback([=, &run] { run = [=] { return cmd_train(*train_opts); }; });

  auto gen_opts = std::make_shared<GenerateOpts>();
  auto* gen = app.add_subcommand("generate", "sample a hairstyle conditioned on geometry");
  gen->add_option("--weights", gen_opts->weights)->required();
  gen->add_option("--condition", gen_opts->condition, "condition .obj or hairstyle .json")
      ->required();
  gen->add_option("--output", gen_opts->output)->required();
  gen->add_option("--log", gen_opts->log, "generation log path (JSON lines)");
  gen->add_option("--scheme", gen_opts->scheme);
  gen->add_option("--seed", gen_opts->seed);
  gen->add_option("--samples", gen_opts->samples, "condition cloud size");
  gen->add_option("--top-k", gen_opts->top_k, "0 for greedy decoding");
  gen->add_option("--temperature", gen_opts->temperature);
  gen->add_flag("--no-root-verify", gen_opts->no_root_verify);
  gen->add_flag("--no-length-norm", gen_opts->no_length_norm);
  gen->add_flag("--no-coherence", gen_opts->no_coherence);
  gen->callback([=, &run] { run = [=] { return cmd_generate(*gen_opts); }; });

  auto eval_opts = std::make_shared<EvalOpts>();
  auto* ev = app.add_subcommand("eval", "card-level geometric report");
  ev->add_option("--pred", eval_opts->pred)->required();
  ev->add_option("--gt", eval_opts->gt)->required();
  ev->add_option("--output", eval_opts->output, "report JSON path");
  ev->add_option("--samples", eval_opts->samples);
  ev->add_option("--seed", eval_opts->seed);
  ev->callback([=, &run] { run = [=] { return cmd_eval(*eval_opts); }; });

  auto pre_opts = std::make_shared<PreprocessOpts>();
  auto* pre = app.add_subcommand("preprocess", "ingest a directory of OBJ meshes");
  pre->add_option("--input", pre_opts->input)->required();
  pre->add_option("--output", pre_opts->output)->required();
  pre->add_option("--merge-eps", pre_opts->merge_eps);
  pre->callback([=, &run] { run = [=] { return cmd_preprocess(*pre_opts); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  auto report = [&](const char* kind, const std::exception& e) {
    if (json_errors)
      std::cerr << json{{"error", kind}, {"message", e.what()}}.dump() << "\n";
    else
      std::cerr << "error (" << kind << "): " << e.what() << "\n";
  };
  try {
    return run();
  } catch (const ParseError& e) {
    report("parse", e);
    return 1;
  } catch (const GeometryError& e) {
    report("geometry", e);
    return 2;
  } catch (const BudgetError& e) {
    report("budget", e);
    return 3;
  } catch (const ValueError& e) {
    report("value", e);
    return 1;
  } catch (const std::exception& e) {
    report("internal", e);
    return 1;
  }
}
