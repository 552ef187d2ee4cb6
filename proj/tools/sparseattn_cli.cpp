// sparseattn: generate data, train, evaluate, count cost and export attention maps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sparseattn/archive.hpp"
#include "sparseattn/baseline.hpp"
#include "sparseattn/config.hpp"
#include "sparseattn/cost.hpp"
#include "sparseattn/data.hpp"
#include "sparseattn/errors.hpp"
#include "sparseattn/model.hpp"
#include "sparseattn/trainer.hpp"

namespace fs = std::filesystem;
using namespace sparseattn;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

const char* kFooter =
    "Exit codes: 0 success, 1 unexpected failure, 2 configuration error,\n"
    "3 data or checkpoint error, 4 numeric abort during training.\n"
    "Settings resolve as defaults < --config file < flags; SPARSEATTN_SEED\n"
    "supplies the seed when neither sets it.";

// Raw string values of every config flag the user actually passed.
struct FlagSet {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  bool synthetic = false;
  CLI::Option* synthetic_opt = nullptr;
  std::string config_path;

  std::map<std::string, std::string> passed() const {
    std::map<std::string, std::string> kv;
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) kv[key] = values.at(key);
    }
    if (synthetic_opt && synthetic_opt->count() > 0) kv["synthetic"] = "true";
    return kv;
  }
};

const std::map<std::string, std::string>& flag_help() {
  static const std::map<std::string, std::string> help = {
      {"model", "sparse or baseline"},
      {"dataset", "directory holding PGM images and a manifest"},
      {"manifest", "manifest file name inside --dataset"},
      {"out", "output directory"},
      {"seed", "random seed"},
      {"train-fraction", "share of each class used for training"},
      {"image-size", "synthetic image side length"},
      {"classes", "number of classes"},
      {"noise-sigma", "synthetic background noise"},
      {"samples-per-class", "synthetic samples per class"},
      {"coarse-channels", "coarse conv width"},
      {"embed-hidden", "pixel embedding hidden width"},
      {"dim", "token dimension D"},
      {"heads", "attention heads"},
      {"hidden", "classifier hidden width"},
      {"blocks", "classifier residual blocks"},
      {"fine-epsilon", "key positivity offset"},
      {"k-init", "initial pixel budget"},
      {"k-min", "smallest pixel budget"},
      {"k-max", "largest pixel budget (0 = whole image)"},
      {"k-step-up", "budget increase when loss stalls"},
      {"k-step-down", "budget decrease when loss falls"},
      {"ema-beta", "loss smoothing coefficient"},
      {"k-alpha", "budget momentum"},
      {"epochs", "training epochs"},
      {"batch", "batch size"},
      {"lr", "learning rate"},
      {"wd", "weight decay"},
      {"plateau-factor", "learning-rate reduction factor"},
      {"patience", "epochs without improvement before reduction"},
      {"val-fraction", "validation share of the training split"},
      {"inverse-frequency-alpha", "derive class weights from label counts"},
      {"gamma", "focal exponent"},
      {"alpha", "comma-separated class weights"},
      {"lambda-contrast", "contrastive loss weight"},
      {"lambda-distill", "distillation loss weight"},
      {"tau", "contrastive temperature"},
      {"emphasis", "fine-importance sharpening exponent"},
  };
  return help;
}

void add_config_flags(CLI::App* app, FlagSet& flags) {
  app->add_option("--config", flags.config_path, "key=value settings file");
  flags.synthetic_opt = app->add_flag("--synthetic", flags.synthetic, "use generated data");
  for (const std::string& key : config_keys()) {
    if (key == "synthetic") continue;
    flags.values[key];
    flags.options[key] = app->add_option("--" + key, flags.values[key], flag_help().at(key));
  }
}

RunConfig resolve(const FlagSet& flags) {
  std::map<std::string, std::string> file_kv;
  if (!flags.config_path.empty()) file_kv = read_config_file(flags.config_path);
  std::optional<std::string> env_seed;
  if (const char* s = std::getenv("SPARSEATTN_SEED")) env_seed = s;
  return resolve_config(file_kv, flags.passed(), env_seed);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

// Train and test splits for a run, from generated data or a directory.
DatasetSplit load_splits(RunConfig& cfg) {
  Dataset data;
  if (cfg.synthetic) {
    data = generate(cfg.synth);
  } else {
    if (cfg.dataset.empty()) throw ConfigError("pass --synthetic or --dataset");
    data = load_dataset(cfg.dataset, cfg.model.classes, cfg.manifest);
    if (data.empty()) throw DataError(cfg.dataset + ": manifest lists no images");
    cfg.model.height = data.front().pixels.dim(0);
    cfg.model.width = data.front().pixels.dim(1);
  }
  DatasetSplit parts = split(data, cfg.train_fraction, cfg.seed);
  for (const std::string& w : parts.warnings) std::cerr << "warning: " << w << '\n';
  return parts;
}

BaselineConfig baseline_config(const RunConfig& cfg) {
  BaselineConfig b;
  b.height = cfg.model.height;
  b.width = cfg.model.width;
  b.classes = cfg.model.classes;
  b.seed = cfg.seed;
  return b;
}

void report(const MetricsReport& m, bool json) {
  if (json) {
    std::cout << metrics_json(m) << '\n';
  } else {
    std::cout << format_metrics(m);
  }
}

int cmd_gen(const FlagSet& flags) {
  RunConfig cfg = resolve(flags);
  const Dataset data = generate(cfg.synth);
  export_dataset(cfg.out, data);
  write_text(fs::path(cfg.out) / "config.resolved", format_config(cfg));
  std::cout << "wrote " << data.size() << " images to " << cfg.out << '\n';
  return 0;
}

template <typename Model>
int finish_training(const RunConfig& cfg, const TrainResult<Model>& result, const Dataset& test,
                    bool json) {
  const fs::path out(cfg.out);
  save_checkpoint((out / "checkpoint.sacp").string(), result.model);
  save_checkpoint((out / "best.sacp").string(), result.best);
  if (result.aborted) {
    std::cerr << "training aborted: " << result.abort_reason << '\n';
    return kExitNumeric;
  }
  const MetricsReport m = evaluate(result.model, test);
  write_text(out / "test_metrics.json", metrics_json(m) + "\n");
  report(m, json);
  return 0;
}

int cmd_train(const FlagSet& flags, bool json) {
  RunConfig cfg = resolve(flags);
  DatasetSplit parts = load_splits(cfg);
  const fs::path out(cfg.out);
  fs::create_directories(out);
  write_text(out / "config.resolved", format_config(cfg));
  std::ofstream log(out / "metrics.jsonl", std::ios::binary);
  if (!log) throw DataError("cannot write " + (out / "metrics.jsonl").string());

  if (cfg.model_kind == "baseline") {
    auto result = train(BaselineNet(baseline_config(cfg)), parts.train, cfg.train, &log);
    return finish_training(cfg, result, parts.test, json);
  }
  auto result = train(ModelState(cfg.model), parts.train, cfg.train, &log);
  return finish_training(cfg, result, parts.test, json);
}

int cmd_eval(const FlagSet& flags, const std::string& checkpoint, bool json) {
  RunConfig cfg = resolve(flags);
  if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  Dataset data;
  if (cfg.synthetic) {
    data = load_splits(cfg).test;
  } else {
    if (cfg.dataset.empty()) throw ConfigError("pass --synthetic or --dataset");
    data = load_dataset(cfg.dataset, cfg.model.classes, cfg.manifest);
    if (data.empty()) throw DataError(cfg.dataset + ": manifest lists no images");
  }
  if (checkpoint_kind(checkpoint) == "baseline") {
    report(evaluate(load_baseline_checkpoint(checkpoint), data), json);
  } else {
    report(evaluate(load_checkpoint(checkpoint), data), json);
  }
  return 0;
}

void print_cost(const CostReport& r, bool json) {
  std::cout << (json ? cost_json(r) + "\n" : format_cost_table(r));
}

int cmd_cost(const FlagSet& flags, const std::string& checkpoint, std::optional<std::size_t> k,
             bool with_baseline, bool json) {
  RunConfig cfg = resolve(flags);
  std::optional<ModelState> sparse;
  std::optional<BaselineNet> dense;
  if (!checkpoint.empty() && checkpoint_kind(checkpoint) == "baseline") {
    dense = load_baseline_checkpoint(checkpoint);
  } else if (!checkpoint.empty()) {
    sparse = load_checkpoint(checkpoint);
  } else if (cfg.model_kind == "baseline") {
    dense = BaselineNet(baseline_config(cfg));
  } else {
    sparse = ModelState(cfg.model);
  }
  if (sparse) {
    const std::size_t H = sparse->config().height, W = sparse->config().width;
    const std::size_t budget = k.value_or(sparse->controller.k());
    if (budget > H * W) throw ConfigError("--k exceeds the pixel count");
    const CostReport r = count_cost(*sparse, H, W, budget);
    print_cost(r, json);
    if (with_baseline) {
      BaselineConfig bc = baseline_config(cfg);
      bc.height = H;
      bc.width = W;
      bc.classes = sparse->config().classes;
      const CostReport b = count_cost(BaselineNet(bc));
      print_cost(b, json);
      if (!json) {
        std::cout << "flops ratio sparse/baseline: " << r.total_flops / b.total_flops << '\n'
                  << "parameter ratio sparse/baseline: "
                  << static_cast<double>(r.parameters) / static_cast<double>(b.parameters)
                  << '\n';
      }
    }
  } else {
    print_cost(count_cost(*dense), json);
  }
  return 0;
}

int cmd_viz(const FlagSet& flags, const std::string& checkpoint, const std::string& image_path,
            std::optional<std::size_t> k) {
  RunConfig cfg = resolve(flags);
  if (checkpoint.empty() || image_path.empty()) throw ConfigError("viz needs --checkpoint and --image");
  const ModelState model = load_checkpoint(checkpoint);
  const Tensor image = read_pgm(image_path);
  const std::size_t H = model.config().height, W = model.config().width;
  if (image.shape() != Shape{H, W}) {
    throw DataError(image_path + " is " + shape_str(image.shape()) + ", model expects [" +
                    std::to_string(H) + "x" + std::to_string(W) + "]");
  }
  const std::size_t budget = k.value_or(model.controller.k());
  Tape tape(false);
  const ForwardResult fwd = model_forward(tape, model, image, budget, false);
  const std::vector<SparsePixel>& sel = fwd.selected.front();
  const Tensor& importance = fwd.fine.front().pixel_importance.value();

  const fs::path out(cfg.out);
  fs::create_directories(out);
  const std::string stem = fs::path(image_path).stem().string();
  write_pgm((out / (stem + "_coarse.pgm")).string(),
            fwd.coarse.attention_map.value().reshaped({H, W}));

  std::ofstream csv(out / (stem + "_topk.csv"), std::ios::binary);
  if (!csv) throw DataError("cannot write " + (out / (stem + "_topk.csv")).string());
  csv << "row,col,x,y,v,score,fine_score\n";
  double peak = 0.0;
  for (std::size_t i = 0; i < sel.size(); ++i) {
    const SparsePixel& p = sel[i];
    csv << p.row << ',' << p.col << ',' << format_double(p.x) << ',' << format_double(p.y) << ','
        << format_double(p.v) << ',' << format_double(p.score) << ','
        << format_double(importance[i]) << '\n';
    peak = std::max(peak, importance[i]);
  }

  Tensor fine({H, W}, 0.0);
  for (std::size_t i = 0; i < sel.size(); ++i) {
    fine[sel[i].row * W + sel[i].col] = peak > 0.0 ? importance[i] / peak : 0.0;
  }
  write_pgm((out / (stem + "_fine.pgm")).string(), fine);
  std::cout << "wrote " << stem << "_coarse.pgm, " << stem << "_topk.csv, " << stem
            << "_fine.pgm to " << out.string() << " (k=" << budget << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical sparse-attention image classifier"};
  app.footer(kFooter);
  app.require_subcommand(1);

  FlagSet gen_flags, train_flags, eval_flags, cost_flags, viz_flags;
  bool json = false, with_baseline = false;
  std::string checkpoint, image;
  std::size_t k_value = 0;

  CLI::App* gen = app.add_subcommand("gen", "write a synthetic dataset as PGM + manifest");
  add_config_flags(gen, gen_flags);

  CLI::App* trn = app.add_subcommand("train", "train a model and write checkpoint and logs");
  add_config_flags(trn, train_flags);
  trn->add_flag("--json", json, "print test metrics as JSON");

  CLI::App* evl = app.add_subcommand("eval", "evaluate a checkpoint");
  add_config_flags(evl, eval_flags);
  evl->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  evl->add_flag("--json", json, "print metrics as JSON");

  CLI::App* cst = app.add_subcommand("cost", "count parameters and multiply-adds");
  add_config_flags(cst, cost_flags);
  cst->add_option("--checkpoint", checkpoint, "read shapes and k from a checkpoint");
  CLI::Option* cost_k = cst->add_option("--k", k_value, "pixel budget to account for");
  cst->add_flag("--baseline", with_baseline, "also report the dense baseline");
  cst->add_flag("--json", json, "print JSON lines");

  CLI::App* viz = app.add_subcommand("viz", "export coarse, top-k and fine attention maps");
  add_config_flags(viz, viz_flags);
  viz->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  viz->add_option("--image", image, "PGM image")->required();
  CLI::Option* viz_k = viz->add_option("--k", k_value, "pixel budget (default: checkpoint k)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_flags);
    if (trn->parsed()) return cmd_train(train_flags, json);
    if (evl->parsed()) return cmd_eval(eval_flags, checkpoint, json);
    if (cst->parsed()) {
      std::optional<std::size_t> k;
      if (cost_k->count() > 0) k = k_value;
      return cmd_cost(cost_flags, checkpoint, k, with_baseline, json);
    }
    if (viz->parsed()) {
      std::optional<std::size_t> k;
      if (viz_k->count() > 0) k = k_value;
      return cmd_viz(viz_flags, checkpoint, image, k);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ArgumentError& e) {
    std::cerr << "argument error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
