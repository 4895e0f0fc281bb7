#include "tvgan/cli.hpp"

#include <fstream>
#include <functional>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "tvgan/error.hpp"
#include "tvgan/hash.hpp"
#include "tvgan/imageio.hpp"
#include "tvgan/pipeline.hpp"
#include "tvgan/recog.hpp"

namespace tvgan {

namespace {

using Json = nlohmann::json;

void require_known(const Json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw InvalidArgument("config " + where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) {
      throw InvalidArgument("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

template <class T>
void take(const Json& j, const char* key, T& target) {
  if (j.contains(key)) target = j.at(key).get<T>();
}

}  // namespace

void to_json(Json& j, const RunConfig& c) {
  j = {{"seed", c.seed},
       {"out_dir", c.out_dir},
       {"resolution", c.resolution},
       {"data",
        {{"manifest", c.manifest},
         {"split_mode", c.split_mode},
         {"n_test", c.n_test},
         {"attribute", c.attribute},
         {"splits", c.splits},
         {"split_out", c.split_out},
         {"synthesize_toy", c.synthesize_toy},
         {"toy_subjects", c.toy_subjects},
         {"toy_per_subject", c.toy_per_subject}}},
       {"train", c.train},
       {"model", c.model},
       {"checkpoints", c.checkpoints},
       {"inputs", c.inputs},
       {"eval",
        {{"protocol", c.protocol},
         {"embedder", c.embedder},
         {"ks", c.ks},
         {"rank_mode", c.rank_mode},
         {"queries", c.queries},
         {"gallery_seed", c.gallery_seed ? Json(*c.gallery_seed) : Json(nullptr)},
         {"export_images", c.export_images}}},
       {"report", {{"metrics", c.metrics}, {"format", c.format}, {"grid", c.grid}}}};
}

void apply_config_json(const Json& j, RunConfig& c) {
  try {
    require_known(j, {"seed", "out_dir", "resolution", "data", "train", "model", "checkpoints",
                      "inputs", "eval", "report"},
                  "");
    take(j, "seed", c.seed);
    take(j, "out_dir", c.out_dir);
    if (j.contains("resolution")) {
      c.resolution = j.at("resolution").get<int>();
      c.resolution_set = true;
    }
    if (j.contains("data")) {
      const Json& d = j.at("data");
      require_known(d, {"manifest", "split_mode", "n_test", "attribute", "splits", "split_out",
                        "synthesize_toy", "toy_subjects", "toy_per_subject"},
                    "data");
      take(d, "manifest", c.manifest);
      take(d, "split_mode", c.split_mode);
      take(d, "n_test", c.n_test);
      take(d, "attribute", c.attribute);
      take(d, "splits", c.splits);
      take(d, "split_out", c.split_out);
      take(d, "synthesize_toy", c.synthesize_toy);
      take(d, "toy_subjects", c.toy_subjects);
      take(d, "toy_per_subject", c.toy_per_subject);
    }
    if (j.contains("train")) from_json(j.at("train"), c.train);
    take(j, "model", c.model);
    take(j, "checkpoints", c.checkpoints);
    take(j, "inputs", c.inputs);
    if (j.contains("eval")) {
      const Json& e = j.at("eval");
      require_known(e, {"protocol", "embedder", "ks", "rank_mode", "queries", "gallery_seed",
                        "export_images"},
                    "eval");
      take(e, "protocol", c.protocol);
      take(e, "embedder", c.embedder);
      take(e, "ks", c.ks);
      take(e, "rank_mode", c.rank_mode);
      take(e, "queries", c.queries);
      if (e.contains("gallery_seed")) {
        if (e.at("gallery_seed").is_null()) c.gallery_seed.reset();
        else c.gallery_seed = e.at("gallery_seed").get<std::uint64_t>();
      }
      take(e, "export_images", c.export_images);
    }
    if (j.contains("report")) {
      const Json& r = j.at("report");
      require_known(r, {"metrics", "format", "grid"}, "report");
      take(r, "metrics", c.metrics);
      take(r, "format", c.format);
      take(r, "grid", c.grid);
    }
  } catch (const Json::exception& e) {
    throw InvalidArgument(std::string("invalid config: ") + e.what());
  }
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open config file: " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw DecodeError("config file " + path + ": " + e.what());
  }
  apply_config_json(j, base);
  return base;
}

namespace {

// Flags are parsed into temporaries and applied after the config file so
// that they take precedence over it.
class Overrides {
 public:
  template <class T>
  CLI::Option* option(CLI::App* app, const std::string& name, const std::string& help,
                      std::function<void(RunConfig&, const T&)> set) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(name, *value, help);
    appliers_.push_back([opt, value, set](RunConfig& c) {
      if (opt->count() > 0) set(c, *value);
    });
    return opt;
  }

  CLI::Option* flag(CLI::App* app, const std::string& name, const std::string& help,
                    std::function<void(RunConfig&)> set) {
    CLI::Option* opt = app->add_flag(name, help);
    appliers_.push_back([opt, set](RunConfig& c) {
      if (opt->count() > 0) set(c);
    });
    return opt;
  }

  void apply(RunConfig& c) const {
    for (const auto& f : appliers_) f(c);
  }

 private:
  std::vector<std::function<void(RunConfig&)>> appliers_;
};

std::filesystem::path out_path(const RunConfig& c, const std::string& name) {
  return std::filesystem::path(c.out_dir) / name;
}

std::vector<PairedSample> load_dataset(const RunConfig& c, std::ostream& err) {
  if (c.manifest.empty()) throw InvalidArgument("--manifest is required");
  std::vector<std::string> warnings;
  auto data = load_paired_dataset(c.manifest, c.resolution, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  return data;
}

int cmd_prepare_data(RunConfig c, std::ostream& out, std::ostream& err) {
  if (c.synthesize_toy) {
    const auto dir = out_path(c, "toy");
    const auto samples = synthesize_toy_dataset(c.toy_subjects, c.toy_per_subject, c.resolution, c.seed);
    write_toy_dataset(samples, dir);
    c.manifest = (dir / "manifest.json").string();
    out << "toy dataset: " << samples.size() << " pairs, " << c.toy_subjects << " subjects -> "
        << c.manifest << "\n";
  }
  const auto data = load_dataset(c, err);
  DatasetSplit split;
  if (c.split_mode == "random") {
    split = make_subject_disjoint_split(data, c.n_test, c.seed);
  } else if (c.split_mode == "attribute") {
    split = make_attribute_split(data, c.attribute);
    split.seed = c.seed;
  } else {
    throw InvalidArgument("unknown split mode '" + c.split_mode + "' (random or attribute)");
  }
  const auto path = out_path(c, c.split_out);
  std::filesystem::create_directories(path.parent_path());
  write_split(path, split);
  out << "train subjects: " << split.train_subjects.size()
      << ", test subjects: " << split.test_subjects.size() << "\n";
  out << "split written to " << path.string() << "\n";
  return 0;
}

void resolve_train(RunConfig& c) {
  c.train.model_kind = parse_model_kind(c.model);
  c.train.seed = c.seed;
  c.train.generator.resolution = c.resolution;
  c.train.discriminator.resolution = c.resolution;
}

int cmd_train(RunConfig c, std::ostream& out, std::ostream& err) {
  resolve_train(c);
  c.train.resolved_epochs();  // plain has nothing to train
  if (c.splits.size() != 1) throw InvalidArgument("train needs exactly one --split");
  const auto data = load_dataset(c, err);
  const DatasetSplit split = read_split(c.splits.front());
  TrainOutputs outputs;
  outputs.out_dir = c.out_dir;
  outputs.split_path = c.splits.front();
  outputs.manifest_sha256 = sha256_file(c.manifest);
  outputs.extra["run_config"] = c;
  outputs.extra["manifest_path"] = c.manifest;
  const auto result = train(data, split, c.train, outputs, [&](int epoch, const LossReport& m) {
    out << "epoch " << epoch << ": total_g " << m.total_g << ", total_d " << m.total_d << "\n";
    out.flush();
  });
  out << "trained " << to_string(c.train.model_kind) << " for " << result.steps << " steps\n";
  for (const auto& p : result.checkpoints) out << "checkpoint " << p.string() << "\n";
  return 0;
}

TransformModel model_for(const RunConfig& c, const std::string& checkpoint) {
  const ModelKind kind = parse_model_kind(c.model);
  if (kind == ModelKind::plain) {
    if (!checkpoint.empty()) throw InvalidArgument("the plain model takes no checkpoint");
    return plain_model();
  }
  if (checkpoint.empty()) throw InvalidArgument("--checkpoint is required for model " + c.model);
  TransformModel m = load_transform_model(checkpoint);
  if (m.kind != kind) {
    throw InvalidArgument("checkpoint " + checkpoint + " holds a " + to_string(m.kind) +
                          " model, not " + c.model);
  }
  return m;
}

int cmd_transform(RunConfig c, std::ostream& out, std::ostream&) {
  if (c.inputs.empty()) throw InvalidArgument("transform needs at least one input image");
  if (c.checkpoints.size() > 1) throw InvalidArgument("transform takes at most one --checkpoint");
  const std::string ckpt = c.checkpoints.empty() ? "" : c.checkpoints.front();
  TransformModel model;
  if (c.model == "plain") {
    model = model_for(c, ckpt);
  } else {
    if (ckpt.empty()) throw InvalidArgument("--checkpoint is required unless --model plain");
    model = load_transform_model(ckpt);
  }
  int resolution = 0;
  if (model.generator) resolution = model.generator->spec().resolution;
  else if (c.resolution_set) resolution = c.resolution;
  for (const auto& input : c.inputs) {
    const RawImage raw = decode_image(input, 1);
    if (raw.size.height != raw.size.width && resolution == 0) {
      throw ShapeError("input " + input + " is not square; pass --resolution");
    }
    const ImageTensor x = to_tensor(raw, resolution ? resolution : raw.size.height);
    const auto path = out_path(c, std::filesystem::path(input).stem().string() + ".png");
    write_png(path, transform(model, x));
    out << path.string() << "\n";
  }
  return 0;
}

int cmd_evaluate(RunConfig c, std::ostream& out, std::ostream& err) {
  if (c.splits.empty()) throw InvalidArgument("evaluate needs at least one --split");
  const ModelKind kind = parse_model_kind(c.model);
  if (kind != ModelKind::plain && c.checkpoints.size() != c.splits.size()) {
    throw InvalidArgument("evaluate needs one --checkpoint per --split");
  }
  if (kind == ModelKind::plain && !c.checkpoints.empty()) {
    throw InvalidArgument("the plain model takes no checkpoint");
  }
  EvalOptions options;
  const Protocol protocol = parse_protocol(c.protocol);
  options.gallery = protocol == Protocol::A ? GallerySpec::protocol_a() : GallerySpec::protocol_b();
  options.ks = c.ks;
  options.rank_mode = parse_rank_mode(c.rank_mode);
  options.queries = parse_query_set(c.queries);
  const auto embedder = make_embedder(c.embedder, c.resolution);
  const auto data = load_dataset(c, err);
  for (std::size_t i = 0; i < c.splits.size(); ++i) {
    const DatasetSplit split = read_split(c.splits[i]);
    const std::string name = std::filesystem::path(c.splits[i]).stem().string();
    const TransformModel model = model_for(c, kind == ModelKind::plain ? "" : c.checkpoints[i]);
    options.gallery_seed = c.gallery_seed.value_or(split.seed);
    options.export_dir = c.export_images.empty()
                             ? std::filesystem::path()
                             : std::filesystem::path(c.export_images) / (c.model + "_" + name);
    const Metrics m = evaluate_split(data, split, name, model, c.model, *embedder, options);
    const auto path = out_path(c, "metrics_" + c.model + "_" + name + ".json");
    write_metrics(path, m);
    out << name << " " << c.model << " protocol " << c.protocol << ":";
    for (const auto& [k, v] : m.accuracies) out << " rank" << k << "=" << format_percent(100 * v);
    out << " -> " << path.string() << "\n";
  }
  return 0;
}

int cmd_report(RunConfig c, std::ostream& out, std::ostream&) {
  if (c.metrics.empty() && c.grid.empty()) throw InvalidArgument("report needs metrics files or --grid");
  if (c.format != "csv" && c.format != "markdown") {
    throw InvalidArgument("unknown format '" + c.format + "' (csv or markdown)");
  }
  std::filesystem::create_directories(c.out_dir);
  if (!c.metrics.empty()) {
    std::vector<Metrics> metrics;
    for (const auto& p : c.metrics) metrics.push_back(read_metrics(p));
    const ResultsTable table = aggregate_metrics(metrics);
    const std::string text = c.format == "csv" ? render_csv(table) : render_markdown(table);
    const auto table_path = out_path(c, c.format == "csv" ? "results_table.csv" : "results_table.md");
    std::ofstream(table_path, std::ios::binary) << text;
    const auto cmc_path = out_path(c, "cmc.csv");
    std::ofstream(cmc_path, std::ios::binary) << render_cmc_csv(metrics);
    out << text;
    out << "table written to " << table_path.string() << "\ncmc written to " << cmc_path.string()
        << "\n";
  }
  if (!c.grid.empty()) {
    std::ifstream in(c.grid);
    if (!in) throw LoadError("cannot open grid spec: " + c.grid);
    Json spec;
    try {
      spec = Json::parse(in);
    } catch (const Json::exception& e) {
      throw DecodeError("grid spec " + c.grid + ": " + e.what());
    }
    if (!spec.is_object() || !spec.contains("rows") || !spec["rows"].is_array()) {
      throw InvalidArgument("grid spec must be {\"rows\": [[image paths...], ...]}");
    }
    const auto base = std::filesystem::path(c.grid).parent_path();
    std::vector<std::vector<ImageTensor>> rows;
    int size = 0;
    for (const auto& row : spec["rows"]) {
      std::vector<ImageTensor> images;
      for (const auto& p : row) {
        const auto path = base / p.get<std::string>();
        const RawImage raw = decode_image(path, 3);
        if (size == 0) size = raw.size.height;
        images.push_back(to_tensor(raw, size));
      }
      rows.push_back(std::move(images));
    }
    const auto grid_path = out_path(c, "grid.png");
    write_png(grid_path, compose_grid(rows));
    out << "grid written to " << grid_path.string() << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Thermal-to-visible face translation: training, transformation and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides ov;
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (flags override it)");
  ov.option<std::uint64_t>(&app, "--seed", "Random seed", [](RunConfig& c, const auto& v) { c.seed = v; });
  ov.option<std::string>(&app, "--out-dir", "Output directory",
                         [](RunConfig& c, const auto& v) { c.out_dir = v; });
  ov.option<int>(&app, "--resolution", "Image resolution",
                 [](RunConfig& c, const auto& v) { c.resolution = v; c.resolution_set = true; });

  auto* prep = app.add_subcommand("prepare-data", "Write a subject split for a dataset manifest");
  auto* tr = app.add_subcommand("train", "Train a model on a split");
  auto* tf = app.add_subcommand("transform", "Transform thermal images with a model");
  auto* ev = app.add_subcommand("evaluate", "Rank-k identification of transformed queries");
  auto* rp = app.add_subcommand("report", "Aggregate metrics into tables, CMC data and image grids");

  for (auto* sub : {prep, tr, ev}) {
    ov.option<std::string>(sub, "--manifest", "Dataset manifest JSON",
                           [](RunConfig& c, const auto& v) { c.manifest = v; });
  }
  ov.option<std::string>(prep, "--mode", "Split mode: random or attribute",
                         [](RunConfig& c, const auto& v) { c.split_mode = v; });
  ov.option<int>(prep, "--n-test", "Number of test subjects (random mode)",
                 [](RunConfig& c, const auto& v) { c.n_test = v; });
  ov.option<std::string>(prep, "--attribute", "Attribute selecting test subjects",
                         [](RunConfig& c, const auto& v) { c.attribute = v; });
  ov.option<std::string>(prep, "--split-out", "Split file name under the output directory",
                         [](RunConfig& c, const auto& v) { c.split_out = v; });
  ov.flag(prep, "--synthesize-toy", "Generate the toy dataset under <out-dir>/toy first",
          [](RunConfig& c) { c.synthesize_toy = true; });
  ov.option<int>(prep, "--toy-subjects", "Toy dataset subject count",
                 [](RunConfig& c, const auto& v) { c.toy_subjects = v; });
  ov.option<int>(prep, "--toy-per-subject", "Toy dataset pairs per subject",
                 [](RunConfig& c, const auto& v) { c.toy_per_subject = v; });

  for (auto* sub : {tr, tf, ev}) {
    ov.option<std::string>(sub, "--model", "Model kind: tvgan, pix2pix, patch or plain",
                           [](RunConfig& c, const auto& v) { c.model = v; });
  }
  for (auto* sub : {tr, ev}) {
    ov.option<std::vector<std::string>>(sub, "--split", "Split JSON file (repeatable for evaluate)",
                                        [](RunConfig& c, const auto& v) { c.splits = v; });
  }
  for (auto* sub : {tf, ev}) {
    ov.option<std::vector<std::string>>(sub, "--checkpoint", "Checkpoint file (one per split)",
                                        [](RunConfig& c, const auto& v) { c.checkpoints = v; });
  }

  ov.option<int>(tr, "--epochs", "Epochs (default by model kind)",
                 [](RunConfig& c, const auto& v) { c.train.epochs = v; });
  ov.option<int>(tr, "--batch-size", "Batch size", [](RunConfig& c, const auto& v) { c.train.batch_size = v; });
  ov.option<double>(tr, "--lr", "Adam learning rate",
                    [](RunConfig& c, const auto& v) { c.train.learning_rate = v; });
  ov.option<double>(tr, "--beta1", "Adam beta1", [](RunConfig& c, const auto& v) { c.train.beta1 = v; });
  ov.option<double>(tr, "--beta2", "Adam beta2", [](RunConfig& c, const auto& v) { c.train.beta2 = v; });
  ov.option<double>(tr, "--lambda1", "L1 weight", [](RunConfig& c, const auto& v) { c.train.weights.lambda1 = v; });
  ov.option<double>(tr, "--lambda2", "Identity weight",
                    [](RunConfig& c, const auto& v) { c.train.weights.lambda2 = v; });
  ov.flag(tr, "--no-identity-fake-term", "Train the identity head on real pairs only",
          [](RunConfig& c) { c.train.weights.identity_fake_term = false; });
  ov.option<std::vector<std::string>>(tr, "--augment", "Augmentations: hflip rotate crop, or none",
                                      [](RunConfig& c, const auto& v) {
                                        c.train.augmentation.clear();
                                        for (const auto& op : v)
                                          if (op != "none") c.train.augmentation.insert(parse_augment_op(op));
                                      });
  ov.option<int>(tr, "--checkpoint-every", "Checkpoint period in epochs (0: final only)",
                 [](RunConfig& c, const auto& v) { c.train.checkpoint_every = v; });
  ov.option<int>(tr, "--generator-depth", "U-Net stages",
                 [](RunConfig& c, const auto& v) { c.train.generator.depth = v; });
  ov.option<int>(tr, "--generator-base", "U-Net base channels",
                 [](RunConfig& c, const auto& v) { c.train.generator.base_channels = v; });
  ov.option<int>(tr, "--disc-base", "Discriminator base channels",
                 [](RunConfig& c, const auto& v) { c.train.discriminator.base_channels = v; });
  ov.option<std::string>(tr, "--realness-head", "Realness head: patch or scalar",
                         [](RunConfig& c, const auto& v) {
                           if (v != "patch" && v != "scalar") throw InvalidArgument("realness head must be patch or scalar");
                           c.train.discriminator.realness_head = v == "patch" ? RealnessHead::patch : RealnessHead::scalar;
                         });
  ov.option<int>(tr, "--patch-width", "Patch network channels",
                 [](RunConfig& c, const auto& v) { c.train.patch.width = v; });
  ov.option<int>(tr, "--patch-stride", "Patch extraction stride for training",
                 [](RunConfig& c, const auto& v) { c.train.patch_stride = v; });
  ov.flag(tr, "--stochastic-inference", "Keep dropout active when transforming",
          [](RunConfig& c) { c.train.stochastic_inference = true; });

  ov.option<std::vector<std::string>>(tf, "inputs", "Thermal input images",
                                      [](RunConfig& c, const auto& v) { c.inputs = v; });

  ov.option<std::string>(ev, "--protocol", "Gallery protocol: A or B",
                         [](RunConfig& c, const auto& v) { c.protocol = v; });
  ov.option<std::string>(ev, "--embedder", "toy, file:<path>, cmd:<command>",
                         [](RunConfig& c, const auto& v) { c.embedder = v; });
  ov.option<std::vector<int>>(ev, "--ks", "Rank levels, e.g. 1,3,5,7",
                              [](RunConfig& c, const auto& v) { c.ks = v; })
      ->delimiter(',');
  ov.option<std::string>(ev, "--rank-mode", "per-image or per-subject-min",
                         [](RunConfig& c, const auto& v) { c.rank_mode = v; });
  ov.option<std::string>(ev, "--queries", "Query subjects: test, train or all",
                         [](RunConfig& c, const auto& v) { c.queries = v; });
  ov.option<std::uint64_t>(ev, "--gallery-seed", "Seed for protocol B pose choice (default: split seed)",
                           [](RunConfig& c, const auto& v) { c.gallery_seed = v; });
  ov.option<std::string>(ev, "--export-images", "Directory for transformed query images",
                         [](RunConfig& c, const auto& v) { c.export_images = v; });

  ov.option<std::vector<std::string>>(rp, "metrics", "Metrics JSON files",
                                      [](RunConfig& c, const auto& v) { c.metrics = v; });
  ov.option<std::string>(rp, "--format", "Table format: csv or markdown",
                         [](RunConfig& c, const auto& v) { c.format = v; });
  ov.option<std::string>(rp, "--grid", "Grid spec JSON: {\"rows\": [[paths...], ...]}",
                         [](RunConfig& c, const auto& v) { c.grid = v; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_config_file(config_path);
    ov.apply(config);
    if (*prep) return cmd_prepare_data(config, out, err);
    if (*tr) return cmd_train(config, out, err);
    if (*tf) return cmd_transform(config, out, err);
    if (*ev) return cmd_evaluate(config, out, err);
    if (*rp) return cmd_report(config, out, err);
    return 1;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace tvgan
