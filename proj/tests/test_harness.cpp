#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "tlab/optim.hpp"
#include "tlab/image.hpp"
#include "tlab/serialize.hpp"
#include "tlab/suite.hpp"
#include "tlab/train.hpp"

using namespace tlab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is.is_open());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_cfg(const std::string& out) {
  ExperimentConfig cfg;
  cfg.synth_classes = 3;
  cfg.synth_per_class = 12;
  cfg.image_size = 16;
  cfg.patch_size = 8;
  cfg.embed_dim = 16;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.warmup_epochs = 0;
  cfg.decoder_base = 16;
  cfg.probe_epochs = 1;
  cfg.run_probe = false;
  cfg.out_dir = out;
  return cfg;
}

}  // namespace

TEST_CASE("config round-trips through its text form") {
  ExperimentConfig cfg;
  cfg.tokenizer = "intra+local";
  cfg.moto = true;
  cfg.moto_placements = {1, 3};
  cfg.lambda = 0.01;
  cfg.seed = 42;
  ExperimentConfig back = ExperimentConfig::from_string(cfg.to_string());
  CHECK(back == cfg);
  CHECK(back.moto_placements == std::vector<int>{1, 3});

  ExperimentConfig parsed = ExperimentConfig::from_string(
      "# comment line\n"
      "epochs = 5   # trailing comment\n"
      "\n"
      "tokenizer=frozen\n");
  CHECK(parsed.epochs == 5);
  CHECK(parsed.tokenizer == "frozen");

  CHECK_THROWS_WITH_AS(ExperimentConfig::from_string("no_such_key=1\n"),
                       doctest::Contains("no_such_key"), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_string("epochs\n"), Error);
  CHECK_THROWS_AS(
      ExperimentConfig::from_string("moto=on\ninput_norm=batch\n"), Error);
}

TEST_CASE("synthetic dataset is seeded, sized and in range") {
  Rng r1(9), r2(9);
  DatasetShard a = synth_dataset(4, 6, 16, r1);
  DatasetShard b = synth_dataset(4, 6, 16, r2);
  CHECK(a.images.value() == b.images.value());
  CHECK(a.labels == b.labels);
  CHECK(a.size() == 24);          // per_class * classes
  CHECK(a.num_classes() == 4);
  a.validate();

  // every class appears per_class times
  std::vector<int> counts(4, 0);
  for (uint32_t l : a.labels) counts[l]++;
  for (int c : counts) CHECK(c == 6);
}

TEST_CASE("a linear probe on raw synthetic pixels beats chance") {
  Rng rng(11);
  DatasetShard shard = synth_dataset(4, 30, 16, rng);
  int64_t N = shard.size(), F = 3 * 16 * 16;
  std::vector<int64_t> all(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i) all[static_cast<size_t>(i)] = i;
  Tensor x = reshape(normalized_batch(shard, all), {N, F});
  auto labels = batch_labels(shard, all);

  Rng wr(13);
  Tensor w = Tensor::randn({F, 4}, wr, 0.01, true);
  Tensor b = Tensor::zeros({4}, true);
  OptimConfig oc;
  oc.lr = 0.01;
  Optimizer opt(oc);
  std::vector<NamedParam> params = {{"w", w}, {"b", b}};
  double acc = 0;
  for (int it = 0; it < 60; ++it) {
    Tensor logits = linear(x, w, b);
    Tensor loss = cross_entropy(logits, labels);
    Optimizer::zero_grad(params);
    loss.backward();
    opt.step(params);
    acc = accuracy(logits, labels);
  }
  CHECK(acc > 0.25 + 0.10);  // chance is 0.25
}

TEST_CASE("shard round-trips through disk bit-identically") {
  Rng rng(15);
  DatasetShard shard = synth_dataset(3, 4, 16, rng);
  std::string dir = "/tmp/tlab_test_shard";
  fs::remove_all(dir);
  save_shard(dir, shard);
  DatasetShard back = ingest(dir);
  CHECK(back.images.value() == shard.images.value());
  CHECK(back.labels == shard.labels);
  CHECK(back.channel_mean == shard.channel_mean);
  CHECK(back.channel_std == shard.channel_std);
  // and a second disk trip stays identical
  save_shard(dir + "_2", back);
  DatasetShard again = ingest(dir + "_2");
  CHECK(again.images.value() == back.images.value());
}

TEST_CASE("ppm directories ingest with labels by filename") {
  std::string dir = "/tmp/tlab_test_ppmdir";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(17);
  for (int i = 0; i < 4; ++i)
    write_ppm(fmt::format("{}/img_{}.ppm", dir, i),
              Tensor::uniform({3, 8, 8}, rng, 0.0, 1.0));
  std::ofstream(dir + "/labels.txt")
      << "img_0.ppm 0\nimg_1.ppm 1\nimg_2.ppm 0\nimg_3.ppm 1\n";
  DatasetShard shard = ingest(dir);
  CHECK(shard.size() == 4);
  CHECK(shard.labels == std::vector<uint32_t>{0, 1, 0, 1});
  CHECK(shard.num_classes() == 2);

  std::ofstream(dir + "/labels.txt") << "img_0.ppm 0\n";  // missing entries
  CHECK_THROWS_AS(ingest(dir), Error);
}

TEST_CASE("dataset split holds out a stable tenth and honors fraction") {
  Rng rng(19);
  DatasetShard shard = synth_dataset(3, 40, 16, rng);
  std::vector<int64_t> train_idx, val_idx;
  split_dataset(shard, 1.0, train_idx, val_idx);
  CHECK(train_idx.size() + val_idx.size() == 120);
  CHECK(val_idx.size() >= 5);
  CHECK(val_idx.size() <= 25);

  std::vector<int64_t> half, val2;
  split_dataset(shard, 0.5, half, val2);
  CHECK(val2 == val_idx);
  CHECK(half.size() == (train_idx.size() + 1) / 2);
  std::vector<int64_t> half_again, val3;
  split_dataset(shard, 0.5, half_again, val3);
  CHECK(half == half_again);
}

TEST_CASE("input norm wrappers implement their documented statistics") {
  Rng rng(21);
  Tensor x = Tensor::randn({4, 3, 5, 5}, rng, 2.0);

  InputNorm inst = InputNorm::init("instance", 3);
  Tensor yi = inst.forward(x, true);
  // per-sample per-channel mean ~0
  for (int64_t n = 0; n < 4; ++n)
    for (int64_t c = 0; c < 3; ++c) {
      double m = 0;
      for (int64_t p = 0; p < 25; ++p)
        m += yi.value()[static_cast<size_t>((n * 3 + c) * 25 + p)];
      CHECK(std::abs(m / 25) < 1e-9);
    }

  InputNorm lay = InputNorm::init("layer", 3);
  Tensor yl = lay.forward(x, true);
  for (int64_t n = 0; n < 4; ++n) {
    double m = 0, sq = 0;
    for (int64_t i = 0; i < 75; ++i) {
      double v = yl.value()[static_cast<size_t>(n * 75 + i)];
      m += v;
      sq += v * v;
    }
    m /= 75;
    CHECK(std::abs(m) < 1e-9);
    CHECK(sq / 75 - m * m == doctest::Approx(1.0).epsilon(1e-3));
  }

  InputNorm bn = InputNorm::init("batch", 3);
  Tensor yb = bn.forward(x, true);
  double m0 = 0;
  for (int64_t n = 0; n < 4; ++n)
    for (int64_t p = 0; p < 25; ++p)
      m0 += yb.value()[static_cast<size_t>(n * 75 + p)];
  CHECK(std::abs(m0 / 100) < 1e-9);
  // eval path uses the running buffers and is deterministic
  Tensor e1 = bn.forward(x, false);
  Tensor e2 = bn.forward(x, false);
  CHECK(e1.value() == e2.value());
}

TEST_CASE("a one-epoch smoke run emits every artifact") {
  std::string out = "/tmp/tlab_test_run_smoke";
  fs::remove_all(out);
  ExperimentConfig cfg = tiny_cfg(out);
  cfg.epochs = 1;
  cfg.run_probe = true;
  cfg.tokenprop = true;
  cfg.log_recon_every = 1;
  RunResult r = train(cfg);
  CHECK(r.completed);
  CHECK(fs::exists(out + "/config.txt"));
  CHECK(fs::exists(out + "/metrics.csv"));
  CHECK(fs::exists(out + "/timing.csv"));
  CHECK(fs::exists(out + "/probe.csv"));
  CHECK(fs::exists(out + "/ckpt_final/meta.txt"));
  CHECK(fs::exists(out + "/recon_epoch1_input.ppm"));
  CHECK(fs::exists(out + "/recon_epoch1_target.ppm"));
  CHECK(fs::exists(out + "/recon_epoch1_pred.ppm"));
  CHECK(std::isfinite(r.recon_error));
  CHECK(std::isfinite(r.token_similarity));
  // config echo parses back to the same run
  ExperimentConfig echo = ExperimentConfig::from_file(out + "/config.txt");
  CHECK(echo == cfg);
}

TEST_CASE("identical config and seed reproduce metrics byte for byte") {
  std::string a = "/tmp/tlab_test_det_a", b = "/tmp/tlab_test_det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  ExperimentConfig ca = tiny_cfg(a);
  ca.run_probe = true;
  ExperimentConfig cb = tiny_cfg(b);
  cb.run_probe = true;
  train(ca);
  train(cb);
  CHECK(slurp(a + "/metrics.csv") == slurp(b + "/metrics.csv"));
  CHECK(slurp(a + "/probe.csv") == slurp(b + "/probe.csv"));
}

TEST_CASE("resume reproduces the uninterrupted trajectory bit-exactly") {
  std::string full = "/tmp/tlab_test_resume_full";
  std::string cut = "/tmp/tlab_test_resume_cut";
  fs::remove_all(full);
  fs::remove_all(cut);

  ExperimentConfig cf = tiny_cfg(full);
  cf.epochs = 4;
  train(cf);

  ExperimentConfig cc = tiny_cfg(cut);
  cc.epochs = 4;
  cc.checkpoint_every = 2;
  train(cc);
  // simulate an interruption after epoch 2: drop everything newer than the
  // mid-run checkpoint
  fs::remove_all(cut + "/ckpt_final");
  for (const char* name : {"/metrics.csv", "/timing.csv"}) {
    std::string text = slurp(cut + name);
    std::string kept;
    int lines = 0;
    for (size_t pos = 0; pos < text.size();) {
      size_t nl = text.find('\n', pos);
      kept += text.substr(pos, nl - pos + 1);
      pos = nl + 1;
      if (++lines == 3) break;  // header + two epochs
    }
    std::ofstream(cut + name) << kept;
  }
  RunResult r = resume(cut);
  CHECK(r.completed);
  CHECK(slurp(full + "/metrics.csv") == slurp(cut + "/metrics.csv"));

  // final parameters agree bit for bit
  Rng rng(1);
  DatasetShard shard = load_dataset(cf);
  Rng r1(cf.seed), r2(cc.seed);
  Model m1 = build_model(cf, 3, r1);
  Model m2 = build_model(cc, 3, r2);
  load_checkpoint(full + "/ckpt_final", m1, nullptr);
  load_checkpoint(cut + "/ckpt_final", m2, nullptr);
  uint64_t h1 = 0, h2 = 0;
  for (auto& np : m1.named_params()) h1 ^= value_hash(np.tensor);
  for (auto& np : m2.named_params()) h2 ^= value_hash(np.tensor);
  CHECK(h1 == h2);
}

TEST_CASE("a non-finite loss aborts and records epoch and lambda") {
  std::string out = "/tmp/tlab_test_nan";
  fs::remove_all(out);
  ExperimentConfig cfg = tiny_cfg(out);
  cfg.optimizer = "sgd";
  cfg.lr = 1e18;  // guaranteed blow-up
  cfg.momentum = 0.0;
  cfg.epochs = 3;
  cfg.lr_schedule = "constant";
  RunResult r = train(cfg);
  CHECK(!r.completed);
  CHECK(r.nan_epoch >= 1);
  CHECK(fs::exists(out + "/abort.txt"));
  std::string abort_text = slurp(out + "/abort.txt");
  CHECK(abort_text.find("epoch=") != std::string::npos);
  CHECK(abort_text.find("lambda=") != std::string::npos);
}

TEST_CASE("suite definitions enumerate the documented rows") {
  ExperimentConfig base;
  auto norm = suite_rows("norm", base);
  REQUIRE(norm.size() == 5);
  CHECK(norm[0].first == "norm_none");
  CHECK(norm[4].first == "norm_moto");
  CHECK(norm[4].second.moto);

  auto lambda = suite_rows("lambda", base);
  REQUIRE(lambda.size() == 4);
  CHECK(lambda[0].second.lambda == 0.001);
  CHECK(lambda[3].second.lambda == 1.0);
  for (auto& [label, cfg] : lambda) CHECK(cfg.tokenprop);

  auto structure = suite_rows("structure", base);
  REQUIRE(structure.size() == 5);
  CHECK(structure[1].second.tokenizer == "frozen");

  auto optim = suite_rows("optim", base);
  REQUIRE(optim.size() == 4);
  CHECK(optim[1].second.optimizer == "sgd");
  CHECK(optim[3].second.tokenprop);

  CHECK_THROWS_AS(suite_rows("bogus", base), Error);
}

TEST_CASE("a micro suite runs rows with seeds and writes the comparison CSV") {
  std::string out = "/tmp/tlab_test_suite";
  fs::remove_all(out);
  ExperimentConfig base = tiny_cfg(out + "/unused");
  base.epochs = 1;
  base.run_probe = false;
  auto rows = run_suite("loss", base, 1, out);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.status == "ok");
    CHECK(std::isfinite(r.acc_mean));
  }
  CHECK(fs::exists(out + "/suite_loss.csv"));
  std::string csv = slurp(out + "/suite_loss.csv");
  CHECK(csv.find("rec_l1") != std::string::npos);
  CHECK(csv.find("rec_l2") != std::string::npos);
}

TEST_CASE("speed ladder produces timings for both components") {
  auto pts = run_speed_ladder({8, 16}, 1, "/tmp/tlab_test_speed.csv");
  REQUIRE(pts.size() == 2);
  for (const auto& p : pts) {
    CHECK(p.moto_ms > 0);
    CHECK(p.attn_ms > 0);
  }
  CHECK(fs::exists("/tmp/tlab_test_speed.csv"));
}

TEST_CASE("every suite row's config round-trips losslessly") {
  ExperimentConfig base;
  base.depth = 4;
  for (const char* suite : {"structure", "norm", "entities", "placement",
                            "loss", "lambda", "decoder", "optim", "data"}) {
    for (auto& [label, cfg] : suite_rows(suite, base)) {
      CAPTURE(suite);
      CAPTURE(label);
      ExperimentConfig back = ExperimentConfig::from_string(cfg.to_string());
      CHECK(back == cfg);
    }
  }
}
