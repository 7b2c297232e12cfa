// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vibertgrid/config.hpp"
#include "vibertgrid/dataset.hpp"
#include "vibertgrid/errors.hpp"
#include "vibertgrid/synthgen.hpp"
#include "vibertgrid/trainer.hpp"

namespace vbg {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunManifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string output;
  std::string config_hash;
};

void write_run_manifest(const std::string& path, const RunManifest& m, const std::vector<std::string>& args) {
  json j;
  j["command"] = m.command;
  j["config_path"] = m.config_path;
  j["seed"] = m.seed;
  j["output"] = m.output;
  j["config_hash"] = m.config_hash;
  j["args"] = args;
  write_file(path, j.dump(2) + "\n");
}

/// Manifest location for commands whose output is a single file.
std::string sidecar(const std::string& out_file) { return out_file + ".manifest.json"; }

std::string read_usage_file(const std::string& path, const std::string& what) {
  try {
    return read_file(path);
  } catch (const IoError& e) {
    throw UsageError(what + ": " + e.what());
  }
}

struct Ablations {
  std::string fusion_stage;
  bool no_visual = false;
  bool no_textual = false;
  bool no_late_fusion = false;
  bool no_early_fusion = false;
  bool freeze_encoder = false;
  bool no_cnn = false;
  std::optional<double> lambda;
  std::string optimizer_grid;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::vector<std::string> sets;
};

void apply_ablations(RunConfig& cfg, const Ablations& a) {
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!a.fusion_stage.empty()) apply_config_entry(cfg, "backbone.fusion_stage", a.fusion_stage);
  if (a.no_visual) cfg.model.backbone.use_visual = false;
  if (a.no_early_fusion || a.no_textual) {
    cfg.model.backbone.use_textual = false;
    cfg.model.backbone.fusion_stage = FusionStage::kNone;
  }
  if (a.no_late_fusion || a.no_textual) cfg.model.head.late_fusion = false;
  if (a.freeze_encoder) cfg.model.encoder.frozen = true;
  if (a.no_cnn) cfg.model.use_cnn = false;
  if (a.lambda) cfg.train.lambda = *a.lambda;
  if (!a.optimizer_grid.empty()) {
    std::vector<std::string> parts;
    std::istringstream in(a.optimizer_grid);
    std::string p;
    while (std::getline(in, p, ':')) parts.push_back(p);
    if (parts.size() != 2 && parts.size() != 4)
      throw UsageError("--optimizer-grid expects T:V or T:V:lr_T:lr_V, got '" + a.optimizer_grid + "'");
    apply_config_entry(cfg, "train.transformer_optimizer", parts[0]);
    apply_config_entry(cfg, "train.cnn_optimizer", parts[1]);
    if (parts.size() == 4) {
      apply_config_entry(cfg, "train.lr_t", parts[2]);
      apply_config_entry(cfg, "train.lr_v", parts[3]);
    }
  }
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.workers) cfg.train.workers = *a.workers;
}

void add_ablation_flags(CLI::App* cmd, Ablations& a) {
  cmd->add_option("--fusion-stage", a.fusion_stage, "CNN stage receiving the text grid: c2, c3, c4 or none");
  cmd->add_flag("--no-visual", a.no_visual, "Feed a blank image to the CNN (text grid only)");
  cmd->add_flag("--no-textual", a.no_textual, "Disable both early and late fusion of word embeddings");
  cmd->add_flag("--no-late-fusion", a.no_late_fusion, "Classify words from ROI features only");
  cmd->add_flag("--no-early-fusion", a.no_early_fusion, "Do not concatenate the text grid into the CNN");
  cmd->add_flag("--freeze-encoder", a.freeze_encoder, "Keep transformer weights fixed");
  cmd->add_flag("--no-cnn", a.no_cnn, "Classify from word embeddings alone (no CNN, no auxiliary head)");
  cmd->add_option("--lambda", a.lambda, "Weight of the auxiliary segmentation loss");
  cmd->add_option("--optimizer-grid", a.optimizer_grid,
                  "Optimizers and optional peak rates, e.g. adamw:sgd or adamw:sgd:2e-5:0.016");
  cmd->add_option("--epochs", a.epochs, "Override train.epochs");
  cmd->add_option("--seed", a.seed, "Override train.seed");
  cmd->add_option("--workers", a.workers, "Worker threads for data preparation");
  cmd->add_option("--set", a.sets, "Extra config override key=value (repeatable)");
}

void ensure_schema_matches(const FieldSchema& ckpt, const FieldSchema& data, const std::string& where) {
  if (data.size() == 0 || ckpt == data) return;
  auto join = [](const FieldSchema& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + s.name(i);
    return out;
  };
  throw VersionError("schema mismatch: checkpoint fields [" + join(ckpt) + "] but " + where + " has [" + join(data) +
                     "]");
}

int cmd_synthesize(const std::string& spec_path, int n, const std::string& out_dir, std::optional<std::uint64_t> seed,
                   const std::vector<std::string>& args, std::ostream& out) {
  if (n < 1) throw UsageError("--n must be >= 1");
  GenSpec spec;
  if (!spec_path.empty()) spec = parse_gen_spec(read_usage_file(spec_path, "cannot read --spec"));
  if (seed) spec.seed = *seed;
  spec.validate();
  write_run_manifest((fs::path(out_dir) / "run_manifest.json").string(),
                     {"synthesize", spec_path, spec.seed, out_dir, git_blob_hash(to_gen_spec_text(spec))}, args);
  auto docs = generate_dataset(spec, n, out_dir);
  out << "wrote " << docs.size() << " documents to " << out_dir << "\n";
  return kExitOk;
}

int cmd_rasterize(const std::string& ocr, const std::string& image, int stride, int dim, const std::string& ckpt,
                  const std::string& out_path, const std::vector<std::string>& args, std::ostream& out) {
  if (stride < 1) throw UsageError("--stride must be >= 1");
  if (dim < 1) throw UsageError("--dim must be >= 1");
  std::string config_hash;
  std::uint64_t seed = 0;
  std::optional<CheckpointData> data;
  if (!ckpt.empty()) {
    data = read_checkpoint(ckpt);
    config_hash = git_blob_hash(data->config_text);
    seed = parse_config_text(data->config_text).train.seed;
  }
  write_run_manifest(sidecar(out_path), {"rasterize", ckpt, seed, out_path, config_hash}, args);
  Document doc = load_ocr_document(read_file(ocr), read_file(image));
  torch::Tensor emb;
  if (data) {
    Trainer t = Trainer::from_checkpoint(*data);
    t.model()->eval();
    torch::NoGradGuard guard;
    emb = t.model()->forward(doc, t.vocab(), {}).embeddings.to(torch::kFloat32);
  } else {
    emb = hash_embeddings(doc.words, dim);
  }
  const BertGrid grid = rasterize_bertgrid(doc.words, emb, doc.height(), doc.width(), stride);
  write_file(out_path, encode_grid_dump(grid));
  out << "grid " << grid.rows() << "x" << grid.cols() << "x" << grid.dim() << " (stride " << stride << ") -> "
      << out_path << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out_dir,
              const std::string& resume, const std::string& vocab_path, const Ablations& ablations,
              const std::vector<std::string>& args, std::ostream& out) {
  RunConfig cfg = parse_config_text(read_usage_file(config_path, "cannot read --config"));
  apply_ablations(cfg, ablations);
  cfg.finalize();
  const std::string config_text = to_config_text(cfg);
  fs::create_directories(out_dir);
  write_run_manifest((fs::path(out_dir) / "run_manifest.json").string(),
                     {"train", config_path, cfg.train.seed, out_dir, git_blob_hash(config_text)}, args);
  write_file((fs::path(out_dir) / "config.txt").string(), config_text);

  Vocab vocab;
  if (!vocab_path.empty()) vocab = Vocab::from_text(read_file(vocab_path));
  Dataset ds = load_dataset(data_dir, "train", cfg.schema);
  if (ds.documents.empty()) throw ValidationError("no training documents in '" + data_dir + "'");

  Trainer trainer(cfg, vocab);
  if (!resume.empty()) {
    trainer.resume(read_checkpoint(resume));
    out << "resumed at epoch " << trainer.state().epoch << ", step " << trainer.state().global_step << "\n";
  }

  const std::string log_path = (fs::path(out_dir) / "loss_log.tsv").string();
  const bool append = !resume.empty() && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write '" + log_path + "'");
  if (!append) log << "step\tepoch\tL1\tL2\tLAUX1\tLAUX2\tLoss\tlr_T\tlr_V\n";
  log.precision(10);

  double epoch_loss = 0;
  int epoch_steps = 0;
  FitOptions opts;
  opts.checkpoint_dir = out_dir;
  opts.on_step = [&](const LossReport& r) {
    if (r.skipped) return;
    log << r.step << '\t' << r.epoch << '\t' << r.l1 << '\t' << r.l2 << '\t' << r.laux1 << '\t' << r.laux2 << '\t'
        << r.loss << '\t' << r.lr_t << '\t' << r.lr_v << '\n';
    epoch_loss += r.loss;
    ++epoch_steps;
  };
  opts.on_epoch = [&](int epoch, double f1) {
    log.flush();
    out << "epoch " << epoch << "/" << cfg.train.epochs << " mean loss "
        << (epoch_steps ? epoch_loss / epoch_steps : 0.0);
    if (f1 >= 0) out << " train micro F1 " << f1;
    out << "\n";
    out.flush();
    epoch_loss = 0;
    epoch_steps = 0;
  };
  const FitResult result = fit(trainer, ds.documents, opts);
  if (result.reached_target) out << "reached target training F1 after epoch " << result.epochs << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& ckpt, const std::string& data_dir, const std::string& split,
                 const std::string& out_path, bool lexicon, const std::vector<std::string>& args, std::ostream& out) {
  const CheckpointData data = read_checkpoint(ckpt);
  const RunConfig cfg = parse_config_text(data.config_text);
  write_run_manifest(sidecar(out_path), {"evaluate", ckpt, cfg.train.seed, out_path, git_blob_hash(data.config_text)},
                     args);
  ensure_schema_matches(cfg.schema, load_manifest(data_dir).schema, "dataset '" + data_dir + "'");
  Trainer trainer = Trainer::from_checkpoint(data);
  const Dataset ds = load_dataset(data_dir, split, cfg.schema);
  std::optional<Lexicon> lex;
  if (lexicon) {
    const Dataset train = load_dataset(data_dir, "train", cfg.schema);
    std::vector<FieldValues> values;
    for (const auto& d : train.documents)
      values.push_back(extract_fields(d.words, ground_truth(d.words), cfg.schema, cfg.train.reading_order));
    lex = build_lexicon(values);
  }
  const Evaluation ev = evaluate_documents(trainer.model(), ds.documents, trainer.vocab(), cfg, lex ? &*lex : nullptr);
  const std::string report = format_report(ev.words, &ev.fields);
  write_file(out_path, report);
  out << report;
  return kExitOk;
}

int cmd_predict(const std::string& ckpt, const std::string& ocr, const std::string& image, const std::string& out_path,
                const std::vector<std::string>& args, std::ostream& out) {
  const CheckpointData data = read_checkpoint(ckpt);
  const RunConfig cfg = parse_config_text(data.config_text);
  write_run_manifest(sidecar(out_path), {"predict", ckpt, cfg.train.seed, out_path, git_blob_hash(data.config_text)},
                     args);
  Trainer trainer = Trainer::from_checkpoint(data);
  const Document doc = load_ocr_document(read_file(ocr), read_file(image));
  const DocumentScores s = predict_document(trainer.model(), doc, trainer.vocab(), cfg.train.test_shorter_side);
  json words = json::array();
  for (std::size_t i = 0; i < doc.words.size(); ++i) {
    json w;
    w["text"] = doc.words[i].text;
    w["o1"] = s.o1[i];
    json o2 = json::object();
    for (std::size_t k = 0; k < cfg.schema.size(); ++k) o2[cfg.schema.name(k)] = s.o2[i][k];
    w["o2"] = o2;
    json labels = json::array();
    for (int k : s.labels[i]) labels.push_back(cfg.schema.name(static_cast<std::size_t>(k)));
    w["labels"] = labels;
    words.push_back(w);
  }
  json j;
  j["page_id"] = doc.page_id;
  j["fields"] = cfg.schema.names();
  j["words"] = words;
  write_file(out_path, j.dump(2) + "\n");
  out << "predicted " << doc.words.size() << " words -> " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ViBERTgrid key information extraction"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  int n = 0;
  std::optional<std::uint64_t> synth_seed;
  auto* synth = app.add_subcommand("synthesize", "Generate a synthetic receipt dataset");
  synth->add_option("--spec", spec_path, "Generator spec file (key=value lines)")->check(CLI::ExistingFile);
  synth->add_option("--n", n, "Number of documents")->required();
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Override the spec seed");

  std::string ocr, image, ckpt, out_file;
  int stride = 8, dim = 8;
  auto* raster = app.add_subcommand("rasterize", "Write the text grid of one page");
  raster->add_option("--ocr", ocr, "OCR JSON file")->required()->check(CLI::ExistingFile);
  raster->add_option("--image", image, "Page image (PPM/PGM)")->required()->check(CLI::ExistingFile);
  raster->add_option("--stride", stride, "Grid stride in pixels");
  raster->add_option("--dim", dim, "Pseudo-embedding size when no checkpoint is given");
  raster->add_option("--checkpoint", ckpt, "Use this model's word embeddings")->check(CLI::ExistingFile);
  raster->add_option("--out", out_file, "Grid dump path")->required();

  std::string config_path, data_dir, resume, vocab_path;
  Ablations ablations;
  auto* train = app.add_subcommand("train", "Train a model; writes a checkpoint per epoch and a loss log");
  train->add_option("--config", config_path, "Run config file (key=value lines)")->required()->check(CLI::ExistingFile);
  train->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_option("--vocab", vocab_path, "Subword vocabulary (default: character level)")->check(CLI::ExistingFile);
  add_ablation_flags(train, ablations);

  std::string split = "test";
  bool lexicon = false;
  auto* eval = app.add_subcommand("evaluate", "Word-level and field-level metrics on a dataset split");
  eval->add_option("--checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--split", split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  eval->add_option("--out", out_file, "Report path")->required();
  eval->add_flag("--lexicon", lexicon, "Autocorrect field values against training-split values");

  auto* pred = app.add_subcommand("predict", "Per-word scores and labels for one page");
  pred->add_option("--checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  pred->add_option("--ocr", ocr, "OCR JSON file")->required()->check(CLI::ExistingFile);
  pred->add_option("--image", image, "Page image (PPM/PGM)")->required()->check(CLI::ExistingFile);
  pred->add_option("--out", out_file, "Predictions JSON path")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synthesize(spec_path, n, out_dir, synth_seed, args, out);
    if (*raster) return cmd_rasterize(ocr, image, stride, dim, ckpt, out_file, args, out);
    if (*train) return cmd_train(config_path, data_dir, out_dir, resume, vocab_path, ablations, args, out);
    if (*eval) return cmd_evaluate(ckpt, data_dir, split, out_file, lexicon, args, out);
    if (*pred) return cmd_predict(ckpt, ocr, image, out_file, args, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    switch (e.category()) {
      case Error::Category::kUsage: return kExitUsage;
      case Error::Category::kNumeric: return kExitNumeric;
      case Error::Category::kData: return kExitData;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace vbg
