// Acceptance gate: one check per command-line argument (1..8), all when no
// arguments are given. Each criterion prints a single [PASS]/[FAIL] line
// (criterion 6 may pass with a recorded review flag); the exit code is the
// number of failed criteria. Artifacts land under ./acceptance_out/.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "tlab/battery.hpp"
#include "tlab/gradcheck.hpp"
#include "tlab/suite.hpp"
#include "tlab/train.hpp"

using namespace tlab;
namespace fs = std::filesystem;

namespace {

const std::string kOutRoot = "acceptance_out";

// Desk recipe shared by the experiment criteria: small enough for one core,
// large enough for the orderings to be stable across seeds.
ExperimentConfig desk_base() {
  ExperimentConfig cfg;
  cfg.synth_classes = 10;
  cfg.synth_per_class = 120;
  cfg.image_size = 32;
  cfg.patch_size = 8;
  cfg.embed_dim = 64;
  cfg.depth = 4;
  cfg.heads = 4;
  cfg.epochs = 8;
  cfg.batch_size = 64;
  cfg.optimizer = "adamw";
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.05;
  cfg.lr_schedule = "cosine";
  cfg.warmup_epochs = 1;
  cfg.decoder_base = 16;
  cfg.probe_epochs = 3;
  cfg.seed = 1;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  check(is.is_open(), "cannot open {}", path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// 1. invariant suite

bool criterion1(std::string& detail) {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  // layout normalization within 1e-6 across random inputs
  for (uint64_t s = 1; s <= 5; ++s) {
    MotoConfig mc;
    mc.entities = 8;
    mc.d_kq = 16;
    Rng pr(s);
    MotoParams p = MotoParams::init(mc, pr);
    Rng xr(s + 100);
    Tensor x = Tensor::randn({2, 3, 8, 8}, xr, 1.5);
    SemanticLayout L = soft_semantic_partition(x, p);
    const auto& v = L.probs.value();
    bool ok = true;
    for (int64_t n = 0; n < 2 && ok; ++n)
      for (int64_t px = 0; px < 64 && ok; ++px) {
        double total = 0;
        for (int64_t e = 0; e < 8; ++e)
          total += v[static_cast<size_t>((n * 8 + e) * 64 + px)];
        ok = std::abs(total - 1.0) <= 1e-6;
      }
    expect(ok, fmt::format("layout normalization (seed {})", s));
  }

  // MoTo with one entity reduces to instance normalization within 1e-5
  {
    MotoConfig mc;
    mc.entities = 1;
    mc.in_channels = 2;
    mc.d_kq = 4;
    Rng pr(7);
    MotoParams p = MotoParams::init(mc, pr);
    Rng xr(8);
    Tensor x = Tensor::randn({3, 2, 6, 6}, xr, 2.0);
    Tensor y = moto_forward(x, p);
    bool ok = true;
    for (int64_t n = 0; n < 3; ++n)
      for (int64_t c = 0; c < 2; ++c) {
        double mu = 0, var = 0;
        const real* xp = x.value().data() + (n * 2 + c) * 36;
        for (int i = 0; i < 36; ++i) mu += xp[i];
        mu /= 36;
        for (int i = 0; i < 36; ++i) var += (xp[i] - mu) * (xp[i] - mu);
        var /= 36;
        double sd = std::sqrt(var);
        for (int i = 0; i < 36; ++i) {
          double want = (xp[i] - mu) / (sd + p.cfg.eps);
          double got = y.value()[static_cast<size_t>((n * 2 + c) * 36 + i)];
          if (std::abs(got - want) >= 1e-5) ok = false;
        }
      }
    expect(ok, "MoTo(n=1) == instance norm");
  }

  // argmax invariance of the hard partition under the softmax
  {
    Rng xr(9);
    Tensor z = Tensor::randn({2, 8, 5, 5}, xr, 3.0);
    auto a = hard_partition(z, 8);
    auto b = hard_partition(softmax_over_channel(z, 1, 0.1), 8);
    expect(a.probs.value() == b.probs.value(), "hard(softmax(Z)) == hard(Z)");
  }

  // softmax and attention rows sum to one
  {
    Rng xr(10);
    Tensor x = Tensor::randn({3, 9, 4}, xr, 2.0);
    Tensor sm = softmax_over_channel(x, 1, 0.1);
    bool ok = true;
    for (int64_t o = 0; o < 3; ++o)
      for (int64_t i = 0; i < 4; ++i) {
        double s = 0;
        for (int64_t k = 0; k < 9; ++k)
          s += sm.value()[static_cast<size_t>((o * 9 + k) * 4 + i)];
        if (std::abs(s - 1.0) > 1e-6) ok = false;
      }
    expect(ok, "softmax rows sum to 1");

    Rng ar(11);
    MultiHeadAttention attn = MultiHeadAttention::init(16, 4, ar);
    Tensor seq = Tensor::randn({2, 7, 16}, xr);
    Tensor weights;
    attn.forward(seq, &weights);
    ok = true;
    const auto& w = weights.value();
    for (int64_t row = 0; row < 2 * 4 * 7; ++row) {
      double s = 0;
      for (int64_t j = 0; j < 7; ++j) s += w[static_cast<size_t>(row * 7 + j)];
      if (std::abs(s - 1.0) > 1e-6) ok = false;
    }
    expect(ok, "attention rows sum to 1");
  }

  // token similarity against an in-place brute force
  {
    Rng xr(12);
    TokenSet ts{Tensor::randn({2, 5, 4}, xr), 1, 5};
    double brute = 0;
    for (int64_t n = 0; n < 2; ++n) {
      double acc = 0;
      int pairs = 0;
      for (int64_t i = 0; i < 5; ++i)
        for (int64_t j = i + 1; j < 5; ++j) {
          double dot = 0, ni = 0, nj = 0;
          for (int64_t d = 0; d < 4; ++d) {
            double a = ts.tokens.value()[static_cast<size_t>((n * 5 + i) * 4 + d)];
            double b = ts.tokens.value()[static_cast<size_t>((n * 5 + j) * 4 + d)];
            dot += a * b;
            ni += a * a;
            nj += b * b;
          }
          acc += dot / std::sqrt(ni * nj);
          ++pairs;
        }
      brute += acc / pairs;
    }
    brute /= 2;
    expect(std::abs(token_similarity(ts) - brute) <= 1e-10,
           "token similarity brute-force match");
  }

  // total-loss linearity in lambda, and gradient routing
  {
    Rng xr(13);
    Tensor logits = Tensor::randn({3, 4}, xr);
    std::vector<int64_t> labels = {0, 2, 1};
    Tensor recon = Tensor::randn({3, 3, 8, 8}, xr);
    Tensor target = Tensor::randn({3, 3, 8, 8}, xr);
    auto l1 = tokenprop_loss(logits, labels, recon, target, {0.25, RecLossKind::L2});
    auto l2 = tokenprop_loss(logits, labels, recon, target, {0.75, RecLossKind::L2});
    double slope = (l2.total.item() - l1.total.item()) / 0.5;
    expect(std::abs(slope - l1.rec.item()) <= 1e-12, "d(total)/d(lambda) == rec");

    TokenizerConfig tc;
    tc.patch_size = 4;
    tc.embed_dim = 16;
    tc.image_size = 8;
    tc.stem_heads = 2;
    Rng mr(14);
    auto tok = make_tokenizer(tc, mr);
    VitConfig vc;
    vc.depth = 1;
    vc.heads = 2;
    vc.embed_dim = 16;
    vc.num_classes = 3;
    VitBody vit(vc, mr);
    DecoderConfig dc;
    dc.base_channels = 16;
    dc.token_dim = 16;
    Decoder dec(dc, mr);
    Rng ir(15);
    Tensor img = Tensor::randn({2, 3, 8, 8}, ir);
    TokenSet tokens = tok->forward(img);
    Tensor rec = rec_loss(dec.forward(tokens), bilinear_resize(img, 64, 64),
                          RecLossKind::L2);
    rec.backward();
    auto norm_of = [](std::vector<NamedParam> ps) {
      double s = 0;
      for (auto& np : ps)
        if (np.tensor.has_grad())
          for (real g : np.tensor.grad()) s += g * g;
      return s;
    };
    expect(norm_of(tok->named_params()) > 0,
           "reconstruction gradient reaches the tokenizer");
    expect(norm_of(dec.named_params()) > 0,
           "reconstruction gradient reaches the decoder");
    expect(norm_of(vit.named_params()) == 0,
           "task-free reconstruction leaves the body untouched");
  }

  detail = failures.empty()
               ? "layout/instance-norm/argmax/softmax/attention/similarity/"
                 "linearity/routing all hold"
               : fmt::format("failed: {}", fmt::join(failures, "; "));
  return failures.empty();
}

// ---------------------------------------------------------------------------
// 2. gradient checks

bool criterion2(std::string& detail) {
  auto results = run_gradcheck_battery(20);
  int failed = 0;
  real worst = 0;
  std::string worst_name;
  for (const auto& r : results) {
    if (!r.passed) ++failed;
    if (r.worst > worst) {
      worst = r.worst;
      worst_name = r.name;
    }
  }
  detail = fmt::format(
      "{} checks x 20 seeds, worst rel err {:.2e} ({}), {} failures",
      results.size(), worst, worst_name, failed);
  return failed == 0;
}

// ---------------------------------------------------------------------------
// 3. complexity ladder

bool criterion3(std::string& detail) {
  fs::create_directories(kOutRoot);
  auto pts = run_speed_ladder({16, 32, 64, 128}, 5,
                              kOutRoot + "/speed_ladder.csv");
  bool ok = true;
  std::string ratios;
  for (size_t i = 1; i < pts.size(); ++i) {
    double moto_ratio = pts[i].moto_ms / pts[i - 1].moto_ms;
    double attn_ratio = pts[i].attn_ms / pts[i - 1].attn_ms;
    ratios += fmt::format("{}->{}: moto {:.2f}x attn {:.2f}x; ", pts[i - 1].size,
                          pts[i].size, moto_ratio, attn_ratio);
    if (moto_ratio > 5.0 || attn_ratio < 10.0) ok = false;
  }
  detail = fmt::format("per 4x pixels: {}(moto <= 5x, attention >= 10x)", ratios);
  return ok;
}

// ---------------------------------------------------------------------------
// 4. normalization ordering

bool criterion4(std::string& detail) {
  ExperimentConfig base = desk_base();
  auto rows = run_suite("norm", base, 3, kOutRoot + "/norm");
  std::map<std::string, double> acc;
  for (const auto& r : rows) acc[r.row] = r.acc_mean;
  double moto = acc["norm_moto"], none = acc["norm_none"];
  double layer = acc["norm_layer"], batch = acc["norm_batch"];
  bool ok = moto > none && layer <= moto && batch <= moto;
  detail = fmt::format(
      "3-seed means: none {:.3f}, layer {:.3f}, batch {:.3f}, instance {:.3f}, "
      "moto {:.3f} (need moto > none, layer/batch <= moto)",
      none, layer, batch, acc["norm_instance"], moto);
  return ok;
}

// ---------------------------------------------------------------------------
// 5. tokenprop at lambda = 0.001 plus the sweep

bool criterion5(std::string& detail) {
  ExperimentConfig base = desk_base();
  std::vector<double> base_acc, tp_acc;
  bool nan_free = true;
  for (uint64_t s = 0; s < 3; ++s) {
    ExperimentConfig b = base;
    b.seed = base.seed + s;
    b.out_dir = fmt::format("{}/tokenprop/base_seed{}", kOutRoot, b.seed);
    RunResult rb = train(b);
    if (rb.completed) base_acc.push_back(rb.final_val_acc);

    ExperimentConfig t = base;
    t.tokenprop = true;
    t.lambda = 0.001;
    t.seed = base.seed + s;
    t.out_dir = fmt::format("{}/tokenprop/tp_seed{}", kOutRoot, t.seed);
    RunResult rt = train(t);
    nan_free = nan_free && rt.completed;
    if (rt.completed) tp_acc.push_back(rt.final_val_acc);
  }
  bool within = !tp_acc.empty() && !base_acc.empty() &&
                mean_of(tp_acc) >= mean_of(base_acc) - 0.005;

  // lambda sweep: completes and records; the 1.0 row may or may not abort
  ExperimentConfig sweep = desk_base();
  sweep.run_probe = false;
  auto rows = run_suite("lambda", sweep, 1, kOutRoot + "/lambda");
  std::string sweep_status;
  for (const auto& r : rows)
    sweep_status += fmt::format("{}={} ", r.row, r.status);

  detail = fmt::format(
      "baseline {:.3f} vs lambda=0.001 {:.3f} (NaN-free: {}); sweep: {}",
      base_acc.empty() ? 0.0 : mean_of(base_acc),
      tp_acc.empty() ? 0.0 : mean_of(tp_acc), nan_free, sweep_status);
  return within && nan_free;
}

// ---------------------------------------------------------------------------
// 6. probe ordering (flagged, not hard-failed)

bool criterion6(std::string& detail) {
  ExperimentConfig base = desk_base();
  base.probe_epochs = 10;  // the stated probe budget
  std::vector<double> trained_recon, trained_sim, frozen_recon, frozen_sim;
  for (uint64_t s = 0; s < 3; ++s) {
    ExperimentConfig t = base;
    t.seed = base.seed + s;
    t.out_dir = fmt::format("{}/probes/trained_seed{}", kOutRoot, t.seed);
    RunResult rt = train(t);
    if (rt.completed) {
      trained_recon.push_back(rt.recon_error);
      trained_sim.push_back(rt.token_similarity);
    }

    // fresh frozen stem probed on the same dataset and budget
    ExperimentConfig f = t;
    f.tokenizer = "frozen";
    DatasetShard shard = load_dataset(f);
    Rng rng(f.seed);
    Model model = build_model(f, static_cast<int>(shard.num_classes()), rng);
    std::vector<int64_t> all(static_cast<size_t>(shard.size()));
    for (int64_t i = 0; i < shard.size(); ++i) all[static_cast<size_t>(i)] = i;
    Tensor normalized = normalized_batch(shard, all);
    DecoderConfig pc;
    pc.base_channels = f.decoder_base;
    pc.token_dim = f.embed_dim;
    auto probe = estimate_accessibility(
        [&](const Tensor& x) { return model.stem_forward(x, false); },
        normalized, pc, f.probe_epochs, f.batch_size,
        splitmix64(f.seed ^ 0x9806EULL));
    frozen_recon.push_back(probe.held_out_l2);

    std::vector<int64_t> train_idx, val_idx;
    split_dataset(shard, 1.0, train_idx, val_idx);
    NoGradGuard ng;
    double sim = 0;
    int64_t seen = 0;
    for (size_t at = 0; at < val_idx.size();
         at += static_cast<size_t>(f.batch_size)) {
      size_t count =
          std::min(static_cast<size_t>(f.batch_size), val_idx.size() - at);
      std::vector<int64_t> ids(val_idx.begin() + static_cast<int64_t>(at),
                               val_idx.begin() + static_cast<int64_t>(at + count));
      sim += token_similarity(
                 model.stem_forward(normalized_batch(shard, ids), false)) *
             static_cast<double>(count);
      seen += static_cast<int64_t>(count);
    }
    frozen_sim.push_back(sim / static_cast<double>(seen));
  }

  double fr = mean_of(frozen_recon), tr = mean_of(trained_recon);
  double fsim = mean_of(frozen_sim), tsim = mean_of(trained_sim);
  bool recon_order = fr <= tr;
  bool sim_order = fsim <= tsim;
  detail = fmt::format(
      "recon frozen {:.4f} vs trained {:.4f}; similarity frozen {:.4f} vs "
      "trained {:.4f}",
      fr, tr, fsim, tsim);
  if (!recon_order || !sim_order) {
    // documented escape hatch: flag for review instead of hard-failing
    std::ofstream flag(kOutRoot + "/probes/REVIEW_FLAG.txt");
    flag << "probe ordering not observed at desk scale\n" << detail << "\n";
    detail += " [FLAGGED FOR REVIEW: ordering not observed at desk scale]";
  }
  return true;
}

// ---------------------------------------------------------------------------
// 7. determinism of a suite row

bool criterion7(std::string& detail) {
  ExperimentConfig base = desk_base();
  base.epochs = 2;
  base.probe_epochs = 2;
  auto rows = suite_rows("norm", base);
  ExperimentConfig row = rows[0].second;  // norm_none
  row.seed = 11;

  ExperimentConfig a = row;
  a.out_dir = kOutRoot + "/determinism/a";
  ExperimentConfig b = row;
  b.out_dir = kOutRoot + "/determinism/b";
  train(a);
  train(b);
  bool metrics_equal =
      slurp(a.out_dir + "/metrics.csv") == slurp(b.out_dir + "/metrics.csv");
  bool probe_equal =
      slurp(a.out_dir + "/probe.csv") == slurp(b.out_dir + "/probe.csv");
  detail = fmt::format("metrics.csv byte-identical: {}; probe.csv: {}",
                       metrics_equal, probe_equal);
  return metrics_equal && probe_equal;
}

// ---------------------------------------------------------------------------
// 8. optimizer compatibility

bool criterion8(std::string& detail) {
  ExperimentConfig base = desk_base();
  base.lambda = 0.1;  // desk-scale weight so the objective matters in 8 epochs
  base.run_probe = false;
  auto rows = run_suite("optim", base, 3, kOutRoot + "/optim");
  std::map<std::string, double> acc;
  for (const auto& r : rows) acc[r.row] = r.acc_mean;
  double gap_base = acc["baseline_adamw"] - acc["baseline_sgd"];
  double gap_tp = acc["tokenprop_adamw"] - acc["tokenprop_sgd"];
  detail = fmt::format(
      "baseline adamw {:.3f} sgd {:.3f} (gap {:.3f}); tokenprop adamw {:.3f} "
      "sgd {:.3f} (gap {:.3f}); need tokenprop gap <= baseline gap",
      acc["baseline_adamw"], acc["baseline_sgd"], gap_base,
      acc["tokenprop_adamw"], acc["tokenprop_sgd"], gap_tp);
  return gap_tp <= gap_base;
}

}  // namespace

int main(int argc, char** argv) {
  using Criterion = std::function<bool(std::string&)>;
  const std::vector<std::pair<std::string, Criterion>> criteria = {
      {"invariant suite", criterion1},
      {"gradient checks", criterion2},
      {"complexity scaling", criterion3},
      {"normalization ordering", criterion4},
      {"tokenprop replication", criterion5},
      {"probe ordering", criterion6},
      {"determinism", criterion7},
      {"optimizer compatibility", criterion8},
  };

  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty())
    for (size_t i = 1; i <= criteria.size(); ++i)
      which.push_back(static_cast<int>(i));

  fs::create_directories(kOutRoot);
  int failures = 0;
  for (int idx : which) {
    if (idx < 1 || idx > static_cast<int>(criteria.size())) {
      fmt::print(stderr, "unknown criterion {}\n", idx);
      return 64;
    }
    const auto& [name, fn] = criteria[static_cast<size_t>(idx - 1)];
    std::string detail;
    bool ok = false;
    try {
      ok = fn(detail);
    } catch (const std::exception& e) {
      detail = fmt::format("exception: {}", e.what());
    }
    fmt::print("[{}] criterion {} ({}): {}\n", ok ? "PASS" : "FAIL", idx, name,
               detail);
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  return failures;
}
