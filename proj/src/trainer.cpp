// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/trainer.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <future>
#include <numeric>
#include <sstream>

#include "vibertgrid/errors.hpp"
#include "vibertgrid/text_util.hpp"

namespace vbg {

Document resize_document(const Document& doc, int new_height, int new_width) {
  if (new_height == doc.height() && new_width == doc.width()) return doc;
  Document out;
  out.page_id = doc.page_id;
  out.image = resize_bilinear(doc.image, new_height, new_width);
  const double sx = static_cast<double>(new_width) / doc.width();
  const double sy = static_cast<double>(new_height) / doc.height();
  out.words = doc.words;
  for (auto& w : out.words) {
    for (auto& p : w.quad) {
      p.x = std::clamp(p.x * sx, 0.0, static_cast<double>(new_width));
      p.y = std::clamp(p.y * sy, 0.0, static_cast<double>(new_height));
    }
  }
  return out;
}

std::pair<int, int> scaled_size(int height, int width, int shorter, int max_long) {
  double s = static_cast<double>(shorter) / std::min(height, width);
  const int longer = std::max(height, width);
  if (max_long > 0 && longer * s > max_long) s = static_cast<double>(max_long) / longer;
  return {std::max(1, static_cast<int>(std::lround(height * s))), std::max(1, static_cast<int>(std::lround(width * s)))};
}

Document multiscale_resize(const Document& doc, const std::vector<int>& scales, int max_long, Rng& rng) {
  if (scales.empty()) return doc;
  std::uniform_int_distribution<std::size_t> pick(0, scales.size() - 1);
  const int shorter = scales[pick(rng)];
  const auto [h, w] = scaled_size(doc.height(), doc.width(), shorter, max_long);
  return resize_document(doc, h, w);
}

Document inference_resize(const Document& doc, int shorter_side) {
  const auto [h, w] = scaled_size(doc.height(), doc.width(), shorter_side, 0);
  return resize_document(doc, h, w);
}

namespace {

torch::Tensor label_matrix(const std::vector<Word>& words, int num_fields) {
  auto t = torch::zeros({static_cast<std::int64_t>(words.size()), num_fields}, torch::kFloat64);
  auto a = t.accessor<double, 2>();
  for (std::size_t i = 0; i < words.size(); ++i)
    for (int k : words[i].labels)
      if (k >= 0 && k < num_fields) a[static_cast<std::int64_t>(i)][k] = 1.0;
  return t;
}

std::vector<double> per_pixel_second_stage_loss(const PixelPrediction& pred, const PixelCategoryMap& map) {
  torch::NoGradGuard guard;
  const auto c = static_cast<std::int64_t>(map.field_masks.size());
  auto masks = torch::zeros({c, map.height, map.width}, torch::kFloat64);
  auto* m = masks.data_ptr<double>();
  const std::size_t plane = static_cast<std::size_t>(map.height) * map.width;
  for (std::size_t k = 0; k < map.field_masks.size(); ++k)
    for (std::size_t p = 0; p < plane; ++p) m[k * plane + p] = map.field_masks[k][p];
  auto loss = clamped_bce(pred.x2.detach().to(torch::kFloat64), masks).sum(0).contiguous();
  return std::vector<double>(loss.data_ptr<double>(), loss.data_ptr<double>() + loss.numel());
}

}  // namespace

SampleBatch sample_training_batch(const Document& doc, const ForwardResult& fwd, const SamplingConfig& counts,
                                  int num_fields, Rng& rng) {
  const SamplingConfig c = counts.effective();
  SampleBatch batch;
  batch.word_batch1 = sample_words(doc.words, c.word_positive, c.word_negative, rng);
  if (!doc.words.empty()) {
    auto losses = per_word_second_stage_loss(fwd.words, label_matrix(doc.words, num_fields));
    batch.word_batch2 = sample_hard_words(doc.words, losses, c.hard_word_positive, c.hard_word_negative, num_fields);
  }
  if (fwd.pixels) {
    const auto map = build_pixel_category_map(doc, num_fields);
    auto pixel = sample_pixels(map, c, per_pixel_second_stage_loss(*fwd.pixels, map), rng);
    batch.pixel_batch1 = std::move(pixel.batch1);
    batch.pixel_batch2 = std::move(pixel.batch2);
  }
  return batch;
}

DocumentLosses document_losses(ViBERTgrid& model, const Document& doc, const Vocab& vocab, const TrainConfig& cfg,
                               Rng& rng, const SampleBatch* fixed) {
  DocumentLosses out;
  ForwardOptions opts;
  opts.max_grad_windows = cfg.max_grad_windows;
  opts.rng = &rng;
  opts.compute_pixels = model->config().use_cnn;
  out.forward = model->forward(doc, vocab, opts);
  const int c = model->config().head.num_fields;
  out.batch = fixed ? *fixed : sample_training_batch(doc, out.forward, cfg.sampling, c, rng);
  out.word = loss_word(out.forward.words, out.batch.word_batch1, out.batch.word_batch2, cfg.second_stage_norm);
  if (out.forward.pixels) {
    out.aux = loss_aux(*out.forward.pixels, out.batch.pixel_batch1, out.batch.pixel_batch2, cfg.second_stage_norm);
    out.total = total_loss(out.word.lc, out.aux.aux, cfg.lambda);
  } else {
    auto zero = torch::zeros({}, out.word.lc.options());
    out.aux = AuxLosses{zero, zero, zero};
    out.total = out.word.lc;
  }
  return out;
}

namespace {

GroupOptimizer make_optimizer(OptimizerKind kind, const TrainConfig& t, double lr) {
  GroupOptimizer g;
  g.kind = kind;
  g.adamw = t.adamw;
  g.sgd = t.sgd;
  g.adamw.lr = lr;
  g.sgd.lr = lr;
  return g;
}

void clear_grads(ParameterPartition& part) {
  zero_grad(part.transformer);
  zero_grad(part.cnn_heads);
}

double value(const torch::Tensor& t) { return t.defined() ? t.detach().to(torch::kFloat64).item<double>() : 0.0; }

}  // namespace

Trainer::Trainer(RunConfig cfg, Vocab vocab) : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
  cfg_.finalize();
  if (vocab_.size() > cfg_.model.encoder.vocab_size)
    throw ConfigError("vocabulary has " + std::to_string(vocab_.size()) + " entries but encoder.vocab_size is " +
                      std::to_string(cfg_.model.encoder.vocab_size));
  torch::manual_seed(cfg_.train.seed);
  model_ = ViBERTgrid(cfg_.model);
  model_->train();
  partition_ = partition_parameters(*model_);
  state_.rng.seed(mix64(cfg_.train.seed));
  state_.transformer = make_optimizer(cfg_.train.transformer_optimizer, cfg_.train, cfg_.train.lr_t);
  state_.cnn = make_optimizer(cfg_.train.cnn_optimizer, cfg_.train, cfg_.train.lr_v);
}

LossReport Trainer::train_step(const std::vector<const Document*>& docs, const LearningRates& lr, bool augment) {
  model_->train();
  clear_grads(partition_);
  LossReport report;
  report.step = state_.global_step;
  report.epoch = state_.epoch;
  report.lr_t = lr.lr_t;
  report.lr_v = lr.lr_v;
  const auto& t = cfg_.train;

  std::vector<Rng> rngs;
  rngs.reserve(docs.size());
  for (const auto* d : docs) rngs.push_back(derive_rng(t.seed, d->page_id, static_cast<std::uint64_t>(state_.global_step)));
  std::vector<Document> prepared(docs.size());
  auto prepare = [&](std::size_t i) {
    prepared[i] = augment ? multiscale_resize(*docs[i], t.scales, t.max_long_side, rngs[i]) : *docs[i];
  };
  if (t.workers > 1 && docs.size() > 1) {
    for (std::size_t start = 0; start < docs.size(); start += static_cast<std::size_t>(t.workers)) {
      std::vector<std::future<void>> jobs;
      for (std::size_t i = start; i < std::min(docs.size(), start + static_cast<std::size_t>(t.workers)); ++i)
        jobs.push_back(std::async(std::launch::async, prepare, i));
      for (auto& j : jobs) j.get();
    }
  } else {
    for (std::size_t i = 0; i < docs.size(); ++i) prepare(i);
  }

  const double scale = 1.0 / static_cast<double>(std::max<std::size_t>(docs.size(), 1));
  for (std::size_t i = 0; i < docs.size(); ++i) {
    auto losses = document_losses(model_, prepared[i], vocab_, t, rngs[i]);
    const double total = value(losses.total);
    if (!std::isfinite(total)) {
      report.skipped_documents.push_back(prepared[i].page_id);
      continue;
    }
    if (losses.total.requires_grad()) (losses.total * scale).backward();
    report.l1 += scale * value(losses.word.l1);
    report.l2 += scale * value(losses.word.l2);
    report.lc += scale * value(losses.word.lc);
    report.laux1 += scale * value(losses.aux.aux1);
    report.laux2 += scale * value(losses.aux.aux2);
    report.laux += scale * value(losses.aux.aux);
    report.loss += scale * total;
  }

  if (!report.skipped_documents.empty()) {
    std::string ids;
    for (const auto& id : report.skipped_documents) ids += (ids.empty() ? "" : ", ") + id;
    warn("step " + std::to_string(state_.global_step) + ": non-finite loss, step skipped (documents: " + ids + ")");
    report.skipped = true;
    clear_grads(partition_);
    ++state_.global_step;
    return report;
  }

  if (before_step) before_step(*this);
  const bool frozen = model_->encoder()->frozen();
  if (!frozen) check_finite_gradients(partition_.transformer);
  check_finite_gradients(partition_.cnn_heads);
  if (!frozen) state_.transformer.step(partition_.transformer, lr.lr_t);
  state_.cnn.step(partition_.cnn_heads, lr.lr_v);
  clear_grads(partition_);
  ++state_.global_step;
  return report;
}

LossReport Trainer::train_step(const std::vector<const Document*>& docs, int steps_per_epoch) {
  const auto lr = lr_schedule(state_.epoch, state_.step_in_epoch, steps_per_epoch, cfg_.train.schedule());
  auto report = train_step(docs, lr);
  ++state_.step_in_epoch;
  return report;
}

std::vector<LossReport> Trainer::train_epoch(const std::vector<Document>& docs,
                                             const std::function<void(const LossReport&)>& on_step) {
  if (docs.empty()) throw ValidationError("train_epoch: no training documents");
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffler = state_.rng;
  std::shuffle(order.begin(), order.end(), shuffler);
  const auto b = static_cast<std::size_t>(cfg_.train.batch_size);
  const int steps = static_cast<int>((docs.size() + b - 1) / b);
  std::vector<LossReport> reports;
  for (int s = state_.step_in_epoch; s < steps; ++s) {
    std::vector<const Document*> batch;
    for (std::size_t i = static_cast<std::size_t>(s) * b; i < std::min(docs.size(), (static_cast<std::size_t>(s) + 1) * b); ++i)
      batch.push_back(&docs[order[i]]);
    reports.push_back(train_step(batch, steps));
    if (on_step) on_step(reports.back());
  }
  state_.rng = shuffler;
  ++state_.epoch;
  state_.step_in_epoch = 0;
  return reports;
}

CheckpointData Trainer::checkpoint() const {
  CheckpointData data;
  data.config_text = to_config_text(cfg_);
  data.vocab_text = vocab_.to_text();
  data.epoch = state_.epoch;
  data.step_in_epoch = state_.step_in_epoch;
  data.global_step = state_.global_step;
  std::ostringstream rng;
  rng << state_.rng;
  data.rng_state = rng.str();
  for (const auto& p : model_->named_parameters()) data.tensors.emplace_back("param/" + p.key(), p.value().detach().clone());
  for (const auto& b : model_->named_buffers()) data.tensors.emplace_back("buffer/" + b.key(), b.value().detach().clone());
  auto save_opt = [&](const std::string& group, const GroupOptimizer& opt) {
    for (const auto& [name, slot] : opt.adamw_state.slots) {
      data.tensors.emplace_back("opt/" + group + "/adamw/" + name + "/exp_avg", slot.exp_avg.clone());
      data.tensors.emplace_back("opt/" + group + "/adamw/" + name + "/exp_avg_sq", slot.exp_avg_sq.clone());
      data.tensors.emplace_back("opt/" + group + "/adamw/" + name + "/step", torch::tensor(slot.step, torch::kInt64));
    }
    for (const auto& [name, v] : opt.sgd_state.momentum)
      data.tensors.emplace_back("opt/" + group + "/sgd/" + name + "/momentum", v.clone());
  };
  save_opt("transformer", state_.transformer);
  save_opt("cnn", state_.cnn);
  auto gen = at::detail::getDefaultCPUGenerator();
  {
    std::lock_guard<std::mutex> lock(gen.mutex());
    data.tensors.emplace_back("rng/torch", gen.get_state());
  }
  return data;
}

void Trainer::save(const std::string& path) const { write_checkpoint(path, checkpoint()); }

void load_model_tensors(ViBERTgrid& model, const CheckpointData& data) {
  torch::NoGradGuard guard;
  auto copy = [&](const std::string& name, torch::Tensor& dst) {
    const auto& src = data.tensor(name);
    if (src.sizes() != dst.sizes())
      throw VersionError("checkpoint: tensor '" + name + "' has shape " + c10::str(src.sizes()) + ", model expects " +
                         c10::str(dst.sizes()));
    dst.copy_(src);
  };
  for (auto& p : model->named_parameters()) copy("param/" + p.key(), p.value());
  for (auto& b : model->named_buffers()) copy("buffer/" + b.key(), b.value());
}

void Trainer::resume(const CheckpointData& data) {
  const std::string mine = to_config_text(cfg_);
  if (data.config_text != mine) {
    std::string msg = "resume refused: checkpoint config (hash " + git_blob_hash(data.config_text) +
                      ") differs from the requested config (hash " + git_blob_hash(mine) + "):";
    for (const auto& line : config_diff(data.config_text, mine)) msg += "\n  " + line;
    throw ConfigError(msg);
  }
  if (data.vocab_text != vocab_.to_text()) throw ConfigError("resume refused: vocabulary differs from checkpoint");
  load_model_tensors(model_, data);
  auto load_opt = [&](const std::string& group, GroupOptimizer& opt, const ParameterGroup& params) {
    opt.adamw_state.slots.clear();
    opt.sgd_state.momentum.clear();
    for (const auto& p : params.params) {
      const std::string base = "opt/" + group + "/adamw/" + p.name;
      if (data.has(base + "/exp_avg")) {
        AdamWSlot slot;
        slot.exp_avg = data.tensor(base + "/exp_avg").clone();
        slot.exp_avg_sq = data.tensor(base + "/exp_avg_sq").clone();
        slot.step = data.tensor(base + "/step").item<std::int64_t>();
        opt.adamw_state.slots[p.name] = slot;
      }
      const std::string mom = "opt/" + group + "/sgd/" + p.name + "/momentum";
      if (data.has(mom)) opt.sgd_state.momentum[p.name] = data.tensor(mom).clone();
    }
  };
  load_opt("transformer", state_.transformer, partition_.transformer);
  load_opt("cnn", state_.cnn, partition_.cnn_heads);
  state_.epoch = static_cast<int>(data.epoch);
  state_.step_in_epoch = static_cast<int>(data.step_in_epoch);
  state_.global_step = data.global_step;
  std::istringstream rng(data.rng_state);
  rng >> state_.rng;
  if (!rng) throw ParseError("checkpoint: malformed rng state");
  if (data.has("rng/torch")) {
    auto gen = at::detail::getDefaultCPUGenerator();
    std::lock_guard<std::mutex> lock(gen.mutex());
    gen.set_state(data.tensor("rng/torch"));
  }
}

Trainer Trainer::from_checkpoint(const CheckpointData& data) {
  RunConfig cfg = parse_config_text(data.config_text);
  Vocab vocab = data.vocab_text.empty() ? Vocab{} : Vocab::from_text(data.vocab_text);
  Trainer t(cfg, vocab);
  t.resume(data);
  return t;
}

DocumentScores predict_document(ViBERTgrid& model, const Document& doc, const Vocab& vocab, int shorter_side,
                                double tau1, double tau2) {
  model->eval();
  torch::NoGradGuard guard;
  const Document d = doc.words.empty() ? doc : inference_resize(doc, shorter_side);
  auto fwd = model->forward(d, vocab, {});
  DocumentScores s;
  auto o1 = fwd.words.o1.to(torch::kFloat64).contiguous();
  auto o2 = fwd.words.o2.to(torch::kFloat64).contiguous();
  const auto n = o1.numel();
  const auto c = o2.size(1);
  s.o1.assign(o1.data_ptr<double>(), o1.data_ptr<double>() + n);
  s.o2.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    s.o2[static_cast<std::size_t>(i)].assign(o2.data_ptr<double>() + i * c, o2.data_ptr<double>() + (i + 1) * c);
  s.labels = decode_predictions(s.o1, s.o2, tau1, tau2);
  return s;
}

Evaluation evaluate_documents(ViBERTgrid& model, const std::vector<Document>& docs, const Vocab& vocab,
                              const RunConfig& cfg, const Lexicon* lexicon) {
  Evaluation ev;
  WordF1Accumulator words(static_cast<int>(cfg.schema.size()));
  FieldLevelAccumulator fields;
  for (const auto& doc : docs) {
    auto scores = predict_document(model, doc, vocab, cfg.train.test_shorter_side);
    const auto gt = ground_truth(doc.words);
    words.add(scores.labels, gt);
    auto extracted = extract_fields(doc.words, scores.labels, cfg.schema, cfg.train.reading_order);
    if (lexicon) extracted = autocorrect_fields(extracted, *lexicon);
    fields.add(extracted, extract_fields(doc.words, gt, cfg.schema, cfg.train.reading_order));
    ev.scores.push_back(std::move(scores));
  }
  ev.words = words.report(cfg.schema);
  ev.fields = fields.score();
  return ev;
}

FitResult fit(Trainer& trainer, const std::vector<Document>& docs, const FitOptions& options) {
  const auto& cfg = trainer.config();
  FitResult result;
  while (trainer.state().epoch < cfg.train.epochs) {
    trainer.train_epoch(docs, options.on_step);
    result.epochs = trainer.state().epoch;
    if (!options.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", result.epochs);
      trainer.save((std::filesystem::path(options.checkpoint_dir) / name).string());
    }
    double f1 = -1;
    if (cfg.train.target_train_f1 > 0) {
      f1 = evaluate_documents(trainer.model(), docs, trainer.vocab(), cfg).words.micro_f1;
      result.train_f1 = f1;
    }
    if (options.on_epoch) options.on_epoch(result.epochs, f1);
    if (cfg.train.target_train_f1 > 0 && f1 >= cfg.train.target_train_f1) {
      result.reached_target = true;
      break;
    }
  }
  return result;
}

}  // namespace vbg
