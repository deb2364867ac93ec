#include "tlab/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "tlab/image.hpp"
#include "tlab/serialize.hpp"

namespace tlab {

namespace fs = std::filesystem;

InputNorm InputNorm::init(const std::string& kind, int channels) {
  check(kind == "layer" || kind == "batch" || kind == "instance",
        "input_norm: unknown kind '{}'", kind);
  InputNorm n;
  n.kind = kind;
  n.gamma = Tensor::ones({channels}, true);
  n.beta = Tensor::zeros({channels}, true);
  n.running_mean = Tensor::zeros({channels}, false);
  n.running_var = Tensor::ones({channels}, false);
  return n;
}

Tensor InputNorm::forward(const Tensor& x, bool training) {
  constexpr real kEps = 1e-5;
  int64_t C = x.shape()[1];
  Tensor affine_g = reshape(gamma, {1, C, 1, 1});
  Tensor affine_b = reshape(beta, {1, C, 1, 1});

  if (kind == "layer") {
    Tensor mu = mean(x, {1, 2, 3}, true);
    Tensor centered = sub(x, mu);
    Tensor var = mean(square(centered), {1, 2, 3}, true);
    return add(mul(div(centered, sqrt(add_scalar(var, kEps))), affine_g),
               affine_b);
  }
  if (kind == "instance") {
    Tensor mu = mean(x, {2, 3}, true);
    Tensor centered = sub(x, mu);
    Tensor var = mean(square(centered), {2, 3}, true);
    return add(mul(div(centered, sqrt(add_scalar(var, kEps))), affine_g),
               affine_b);
  }
  // batch
  if (training) {
    Tensor mu = mean(x, {0, 2, 3}, true);
    Tensor centered = sub(x, mu);
    Tensor var = mean(square(centered), {0, 2, 3}, true);
    constexpr real kMomentum = 0.9;
    auto& rm = running_mean.mutable_value();
    auto& rv = running_var.mutable_value();
    for (int64_t c = 0; c < C; ++c) {
      rm[static_cast<size_t>(c)] =
          kMomentum * rm[static_cast<size_t>(c)] +
          (1 - kMomentum) * mu.value()[static_cast<size_t>(c)];
      rv[static_cast<size_t>(c)] =
          kMomentum * rv[static_cast<size_t>(c)] +
          (1 - kMomentum) * var.value()[static_cast<size_t>(c)];
    }
    return add(mul(div(centered, sqrt(add_scalar(var, kEps))), affine_g),
               affine_b);
  }
  Tensor mu = reshape(detach(running_mean), {1, C, 1, 1});
  Tensor var = reshape(detach(running_var), {1, C, 1, 1});
  return add(mul(div(sub(x, mu), sqrt(add_scalar(var, kEps))), affine_g),
             affine_b);
}

void InputNorm::collect_params(std::vector<NamedParam>& out) const {
  out.push_back({"innorm.gamma", gamma});
  out.push_back({"innorm.beta", beta});
  out.push_back({"innorm.running_mean", running_mean});
  out.push_back({"innorm.running_var", running_var});
}

TokenSet Model::stem_forward(const Tensor& x, bool training) {
  Tensor in = x;
  if (input_moto) {
    in = cfg.moto_partition == "hard" ? moto_forward_hard(x, *input_moto)
                                      : moto_forward(x, *input_moto);
  } else if (input_norm) {
    in = input_norm->forward(x, training);
  }
  return tokenizer->forward(in);
}

std::vector<NamedParam> Model::named_params() {
  std::vector<NamedParam> out;
  if (input_moto) input_moto->collect_params("moto", out);
  if (input_norm) input_norm->collect_params(out);
  for (auto& np : tokenizer->named_params()) out.push_back(np);
  for (auto& np : vit->named_params()) out.push_back(np);
  if (decoder)
    for (auto& np : decoder->named_params("dec")) out.push_back(np);
  return out;
}

Model build_model(const ExperimentConfig& cfg, int num_classes, Rng& rng) {
  cfg.validate();
  check(num_classes >= 2, "model: need at least 2 classes, got {}", num_classes);
  Model m;
  m.cfg = cfg;

  if (cfg.moto) {
    MotoConfig mc;
    mc.entities = cfg.moto_entities;
    mc.tau = static_cast<real>(cfg.moto_tau);
    mc.d_kq = cfg.moto_dkq;
    mc.in_channels = 3;
    m.input_moto = MotoParams::init(mc, rng);
  } else if (cfg.input_norm != "none") {
    m.input_norm = std::make_unique<InputNorm>(InputNorm::init(cfg.input_norm, 3));
  }

  TokenizerConfig tc;
  tc.variant = parse_tokenizer_variant(cfg.tokenizer);
  tc.patch_size = cfg.patch_size;
  tc.embed_dim = cfg.embed_dim;
  tc.image_size = cfg.image_size;
  tc.moto_enabled = cfg.moto;
  m.tokenizer = make_tokenizer(tc, rng);

  VitConfig vc;
  vc.depth = cfg.depth;
  vc.heads = cfg.heads;
  vc.embed_dim = cfg.embed_dim;
  vc.mlp_ratio = cfg.mlp_ratio;
  vc.num_classes = num_classes;
  vc.drop_path_rate = static_cast<real>(cfg.drop_path);
  vc.moto_placements = cfg.moto_placements;
  vc.moto_entities = cfg.moto_entities;
  vc.moto_tau = static_cast<real>(cfg.moto_tau);
  vc.moto_d_kq = std::min(cfg.moto_dkq, cfg.embed_dim);
  m.vit = std::make_unique<VitBody>(vc, rng);

  if (cfg.tokenprop) {
    DecoderConfig dc;
    dc.channel_multiplier = cfg.decoder_multiplier;
    dc.output_scale = cfg.decoder_scale;
    dc.base_channels = cfg.decoder_base;
    dc.token_dim = cfg.embed_dim;
    m.decoder = std::make_unique<Decoder>(dc, rng);
  }
  return m;
}

void save_checkpoint(const std::string& dir, Model& model,
                     const Optimizer& optim, int epochs_done) {
  fs::create_directories(dir + "/params");
  for (auto& np : model.named_params())
    write_tensor(fmt::format("{}/params/{}.tlab", dir, np.name), np.tensor,
                 DType::F64);
  optim.save_state(dir + "/optim");
  std::ofstream meta(dir + "/meta.txt");
  check(meta.is_open(), "cannot open {}/meta.txt for writing", dir);
  meta << "epochs_done=" << epochs_done << "\n";
}

int load_checkpoint(const std::string& dir, Model& model, Optimizer* optim) {
  auto params = model.named_params();
  for (auto& np : params) {
    std::string path = fmt::format("{}/params/{}.tlab", dir, np.name);
    Tensor loaded = read_tensor(path);
    check(loaded.shape() == np.tensor.shape(),
          "checkpoint {}: parameter {} has shape {} but the model expects {}",
          dir, np.name, shape_str(loaded.shape()),
          shape_str(np.tensor.shape()));
    np.tensor.mutable_value() = loaded.value();
  }
  if (optim) optim->load_state(dir + "/optim", params);
  std::ifstream meta(dir + "/meta.txt");
  check(meta.is_open(), "cannot open {}/meta.txt", dir);
  std::string line;
  int epochs_done = -1;
  while (std::getline(meta, line))
    if (line.rfind("epochs_done=", 0) == 0)
      epochs_done = std::stoi(line.substr(std::string("epochs_done=").size()));
  check(epochs_done >= 0, "checkpoint {} lacks epochs_done", dir);
  return epochs_done;
}

DatasetShard load_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset == "synth") {
    Rng rng(splitmix64(cfg.seed ^ 0xDA7A5EEDULL));
    return synth_dataset(cfg.synth_classes, cfg.synth_per_class,
                         cfg.image_size, rng);
  }
  DatasetShard shard = ingest(cfg.dataset);
  check(shard.image_size() == cfg.image_size,
        "dataset {} has {}px images but the config says {}", cfg.dataset,
        shard.image_size(), cfg.image_size);
  return shard;
}

void split_dataset(const DatasetShard& shard, double fraction,
                   std::vector<int64_t>& train_idx,
                   std::vector<int64_t>& val_idx) {
  train_idx.clear();
  val_idx.clear();
  for (int64_t i = 0; i < shard.size(); ++i)
    (is_held_out(i) ? val_idx : train_idx).push_back(i);
  if (fraction < 1.0) {
    // deterministic hash order, then keep the leading fraction
    std::vector<int64_t> order = train_idx;
    std::sort(order.begin(), order.end(), [](int64_t a, int64_t b) {
      uint64_t ha = splitmix64(static_cast<uint64_t>(a) ^ 0xF7ACULL);
      uint64_t hb = splitmix64(static_cast<uint64_t>(b) ^ 0xF7ACULL);
      return ha != hb ? ha < hb : a < b;
    });
    size_t keep = static_cast<size_t>(
        std::ceil(fraction * static_cast<double>(order.size())));
    keep = std::max<size_t>(keep, 1);
    order.resize(keep);
    std::sort(order.begin(), order.end());
    train_idx = order;
  }
}

namespace {

Tensor denormalize(const Tensor& x, const DatasetShard& shard, int64_t sample) {
  int64_t S = x.shape()[2];
  std::vector<real> out(static_cast<size_t>(3 * S * S));
  for (int64_t c = 0; c < 3; ++c) {
    real mean = static_cast<real>(shard.channel_mean[static_cast<size_t>(c)]);
    real sd = static_cast<real>(shard.channel_std[static_cast<size_t>(c)]);
    for (int64_t p = 0; p < S * S; ++p)
      out[static_cast<size_t>(c * S * S + p)] =
          x.value()[static_cast<size_t>((sample * 3 + c) * S * S + p)] * sd +
          mean;
  }
  return Tensor({3, S, S}, std::move(out));
}

struct EpochStats {
  double task_loss = 0;
  double rec_loss = 0;
  double train_acc = 0;
  int64_t samples = 0;
};

RunResult run_loop(const ExperimentConfig& cfg, const DatasetShard& shard,
                   Model& model, Optimizer& optim, int start_epoch) {
  RunResult result;
  result.run_dir = cfg.out_dir;

  std::vector<int64_t> train_idx, val_idx;
  split_dataset(shard, cfg.fraction, train_idx, val_idx);
  check(!train_idx.empty() && !val_idx.empty(), "train: empty split");

  auto params = model.named_params();
  LrSchedule sched = parse_lr_schedule(cfg.lr_schedule);
  LossWeights weights{static_cast<real>(cfg.lambda),
                      parse_rec_loss(cfg.rec_loss)};

  fs::create_directories(cfg.out_dir);
  {
    std::ofstream cf(cfg.out_dir + "/config.txt");
    cf << cfg.to_string();
  }
  auto csv_mode = start_epoch > 0 ? std::ios::app : std::ios::trunc;
  std::ofstream metrics(cfg.out_dir + "/metrics.csv", csv_mode);
  std::ofstream timing(cfg.out_dir + "/timing.csv", csv_mode);
  check(metrics.is_open() && timing.is_open(),
        "cannot open CSV outputs under {}", cfg.out_dir);
  if (start_epoch == 0) {
    metrics << "epoch,task_loss,rec_loss,train_acc,val_acc\n";
    timing << "epoch,wall_ms\n";
  }

  auto eval_accuracy = [&]() {
    NoGradGuard ng;
    double hits = 0;
    for (size_t at = 0; at < val_idx.size();
         at += static_cast<size_t>(cfg.batch_size)) {
      size_t count =
          std::min(static_cast<size_t>(cfg.batch_size), val_idx.size() - at);
      std::vector<int64_t> ids(val_idx.begin() + static_cast<int64_t>(at),
                               val_idx.begin() + static_cast<int64_t>(at + count));
      Tensor xb = normalized_batch(shard, ids);
      TokenSet tokens = model.stem_forward(xb, false);
      Tensor logits = model.vit->forward(tokens, false);
      hits += accuracy(logits, batch_labels(shard, ids)) *
              static_cast<double>(count);
    }
    return hits / static_cast<double>(val_idx.size());
  };

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    real lr_scale = lr_scale_at(sched, epoch, cfg.epochs, cfg.warmup_epochs);

    std::vector<int64_t> order = train_idx;
    Rng shuffle_rng(splitmix64(cfg.seed ^ splitmix64(static_cast<uint64_t>(epoch) + 1)));
    shuffle_rng.shuffle(order);
    Rng drop_rng(splitmix64(cfg.seed ^ 0xD20BDA7AULL ^ static_cast<uint64_t>(epoch)));

    EpochStats stats;
    for (size_t at = 0; at < order.size();
         at += static_cast<size_t>(cfg.batch_size)) {
      size_t count =
          std::min(static_cast<size_t>(cfg.batch_size), order.size() - at);
      std::vector<int64_t> ids(order.begin() + static_cast<int64_t>(at),
                               order.begin() + static_cast<int64_t>(at + count));
      Tensor xb = normalized_batch(shard, ids);
      auto labels = batch_labels(shard, ids);

      auto abort_run = [&](const std::string& reason) {
        std::ofstream ab(cfg.out_dir + "/abort.txt");
        ab << "epoch=" << epoch + 1 << "\n";
        ab << fmt::format("lambda={:.17g}\n", cfg.lambda);
        ab << "reason=" << reason << "\n";
        result.completed = false;
        result.nan_epoch = epoch + 1;
      };

      Tensor total, task, rec;
      try {
        TokenSet tokens = model.stem_forward(xb, true);
        Tensor logits = model.vit->forward(tokens, true, &drop_rng);
        if (model.decoder) {
          Tensor recon = model.decoder->forward(tokens);
          Tensor target =
              bilinear_resize(xb, cfg.decoder_scale, cfg.decoder_scale);
          auto l = tokenprop_loss(logits, labels, recon, target, weights);
          total = l.total;
          task = l.task;
          rec = l.rec;
        } else {
          task = cross_entropy(logits, labels);
          total = task;
        }
        stats.train_acc += accuracy(logits, labels) *
                           static_cast<double>(count);
      } catch (const NumericError& e) {
        abort_run(e.what());
        return result;
      }

      if (!std::isfinite(total.item())) {
        abort_run("non-finite training loss");
        return result;
      }

      Optimizer::zero_grad(params);
      total.backward();
      optim.step(params, lr_scale);

      double n = static_cast<double>(count);
      stats.task_loss += task.item() * n;
      if (rec.defined()) stats.rec_loss += rec.item() * n;
      stats.samples += static_cast<int64_t>(count);
    }

    double denom = static_cast<double>(stats.samples);
    double val_acc = 0;
    try {
      val_acc = eval_accuracy();
    } catch (const NumericError& e) {
      std::ofstream ab(cfg.out_dir + "/abort.txt");
      ab << "epoch=" << epoch + 1 << "\n";
      ab << fmt::format("lambda={:.17g}\n", cfg.lambda);
      ab << "reason=" << e.what() << "\n";
      result.completed = false;
      result.nan_epoch = epoch + 1;
      return result;
    }
    metrics << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", epoch + 1,
                           stats.task_loss / denom, stats.rec_loss / denom,
                           stats.train_acc / denom, val_acc);
    metrics.flush();
    auto t1 = std::chrono::steady_clock::now();
    timing << fmt::format(
        "{},{}\n", epoch + 1,
        std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count());
    timing.flush();
    result.final_train_acc = stats.train_acc / denom;
    result.final_val_acc = val_acc;

    if (model.decoder && cfg.log_recon_every > 0 &&
        (epoch + 1) % cfg.log_recon_every == 0) {
      NoGradGuard ng;
      std::vector<int64_t> ids = {val_idx[0]};
      Tensor xb = normalized_batch(shard, ids);
      Tensor target = bilinear_resize(xb, cfg.decoder_scale, cfg.decoder_scale);
      Tensor pred = model.decoder->forward(model.stem_forward(xb, false));
      write_ppm(fmt::format("{}/recon_epoch{}_input.ppm", cfg.out_dir, epoch + 1),
                denormalize(xb, shard, 0));
      write_ppm(fmt::format("{}/recon_epoch{}_target.ppm", cfg.out_dir, epoch + 1),
                denormalize(target, shard, 0));
      write_ppm(fmt::format("{}/recon_epoch{}_pred.ppm", cfg.out_dir, epoch + 1),
                denormalize(pred, shard, 0));
    }
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs) {
      save_checkpoint(fmt::format("{}/ckpt_epoch{}", cfg.out_dir, epoch + 1),
                      model, optim, epoch + 1);
    }
  }

  save_checkpoint(cfg.out_dir + "/ckpt_final", model, optim, cfg.epochs);
  result.completed = true;

  if (cfg.run_probe) {
    std::vector<int64_t> all(static_cast<size_t>(shard.size()));
    for (int64_t i = 0; i < shard.size(); ++i) all[static_cast<size_t>(i)] = i;
    Tensor normalized = normalized_batch(shard, all);

    // token similarity over the held-out split
    {
      NoGradGuard ng;
      double sim = 0;
      int64_t seen = 0;
      for (size_t at = 0; at < val_idx.size();
           at += static_cast<size_t>(cfg.batch_size)) {
        size_t count =
            std::min(static_cast<size_t>(cfg.batch_size), val_idx.size() - at);
        std::vector<int64_t> ids(val_idx.begin() + static_cast<int64_t>(at),
                                 val_idx.begin() + static_cast<int64_t>(at + count));
        TokenSet tokens =
            model.stem_forward(normalized_batch(shard, ids), false);
        sim += token_similarity(tokens) * static_cast<double>(count);
        seen += static_cast<int64_t>(count);
      }
      result.token_similarity = sim / static_cast<double>(seen);
    }

    DecoderConfig pc;
    pc.channel_multiplier = cfg.decoder_multiplier;
    pc.output_scale = cfg.decoder_scale;
    pc.base_channels = cfg.decoder_base;
    pc.token_dim = cfg.embed_dim;
    auto probe = estimate_accessibility(
        [&](const Tensor& x) { return model.stem_forward(x, false); },
        normalized, pc, cfg.probe_epochs, cfg.batch_size,
        splitmix64(cfg.seed ^ 0x9806EULL));
    result.recon_error = probe.held_out_l2;

    std::ofstream pf(cfg.out_dir + "/probe.csv");
    pf << ProbeReport::csv_header() << "\n";
    ProbeReport report{model.tokenizer->id(), result.recon_error,
                       result.token_similarity, cfg.probe_epochs, cfg.seed};
    pf << report.csv_row() << "\n";
  }
  return result;
}

}  // namespace

RunResult train(const ExperimentConfig& cfg) {
  cfg.validate();
  DatasetShard shard = load_dataset(cfg);
  Rng rng(cfg.seed);
  Model model = build_model(cfg, static_cast<int>(shard.num_classes()), rng);
  OptimConfig oc;
  oc.kind = parse_optim_kind(cfg.optimizer);
  oc.lr = static_cast<real>(cfg.lr);
  oc.momentum = static_cast<real>(cfg.momentum);
  oc.beta1 = static_cast<real>(cfg.beta1);
  oc.beta2 = static_cast<real>(cfg.beta2);
  oc.weight_decay = static_cast<real>(cfg.weight_decay);
  oc.grad_clip = static_cast<real>(cfg.grad_clip);
  Optimizer optim(oc);
  return run_loop(cfg, shard, model, optim, 0);
}

RunResult resume(const std::string& run_dir) {
  ExperimentConfig cfg = ExperimentConfig::from_file(run_dir + "/config.txt");
  cfg.out_dir = run_dir;

  // newest checkpoint wins
  int best_epoch = -1;
  std::string best_dir;
  for (const auto& e : fs::directory_iterator(run_dir)) {
    if (!e.is_directory()) continue;
    std::string name = e.path().filename();
    if (name.rfind("ckpt_", 0) != 0) continue;
    std::ifstream meta(e.path() / "meta.txt");
    if (!meta.is_open()) continue;
    std::string line;
    while (std::getline(meta, line))
      if (line.rfind("epochs_done=", 0) == 0) {
        int done = std::stoi(line.substr(std::string("epochs_done=").size()));
        if (done > best_epoch) {
          best_epoch = done;
          best_dir = e.path();
        }
      }
  }
  check(best_epoch >= 0, "resume: no checkpoint under {}", run_dir);

  DatasetShard shard = load_dataset(cfg);
  Rng rng(cfg.seed);
  Model model = build_model(cfg, static_cast<int>(shard.num_classes()), rng);
  OptimConfig oc;
  oc.kind = parse_optim_kind(cfg.optimizer);
  oc.lr = static_cast<real>(cfg.lr);
  oc.momentum = static_cast<real>(cfg.momentum);
  oc.beta1 = static_cast<real>(cfg.beta1);
  oc.beta2 = static_cast<real>(cfg.beta2);
  oc.weight_decay = static_cast<real>(cfg.weight_decay);
  oc.grad_clip = static_cast<real>(cfg.grad_clip);
  Optimizer optim(oc);
  load_checkpoint(best_dir, model, &optim);
  return run_loop(cfg, shard, model, optim, best_epoch);
}

}  // namespace tlab
