#include "tlab/optim.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tlab/serialize.hpp"

namespace tlab {

OptimKind parse_optim_kind(const std::string& name) {
  if (name == "sgd") return OptimKind::Sgd;
  if (name == "adamw") return OptimKind::AdamW;
  fail("unknown optimizer '{}'", name);
}

std::string optim_kind_name(OptimKind k) {
  return k == OptimKind::Sgd ? "sgd" : "adamw";
}

void OptimConfig::validate() const {
  check(lr > 0, "optimizer: lr must be positive, got {}", lr);
  check(momentum >= 0 && momentum < 1, "optimizer: momentum must be in [0,1)");
  check(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
        "optimizer: betas must be in [0,1)");
  check(weight_decay >= 0 && grad_clip >= 0,
        "optimizer: negative weight_decay/grad_clip");
}

LrSchedule parse_lr_schedule(const std::string& name) {
  if (name == "constant") return LrSchedule::Constant;
  if (name == "cosine") return LrSchedule::Cosine;
  fail("unknown lr schedule '{}'", name);
}

std::string lr_schedule_name(LrSchedule s) {
  return s == LrSchedule::Constant ? "constant" : "cosine";
}

real lr_scale_at(LrSchedule s, int epoch, int total_epochs, int warmup_epochs) {
  if (warmup_epochs > 0 && epoch < warmup_epochs)
    return static_cast<real>(epoch + 1) / static_cast<real>(warmup_epochs);
  if (s == LrSchedule::Constant) return 1.0;
  int decay_span = std::max(total_epochs - warmup_epochs, 1);
  real prog = static_cast<real>(epoch - warmup_epochs) /
              static_cast<real>(decay_span);
  if (prog > 1) prog = 1;
  return real(0.5) * (1 + std::cos(real(3.14159265358979323846) * prog));
}

Optimizer::Optimizer(OptimConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Optimizer::step(const std::vector<NamedParam>& params, real lr_scale) {
  ++t_;
  real lr = cfg_.lr * lr_scale;

  real clip_scale = 1.0;
  if (cfg_.grad_clip > 0) {
    real sq = 0;
    for (const auto& np : params) {
      if (!np.tensor.requires_grad() || !np.tensor.has_grad()) continue;
      for (real g : np.tensor.grad()) sq += g * g;
    }
    real norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
  }

  for (const auto& np : params) {
    Tensor t = np.tensor;
    if (!t.requires_grad()) continue;
    auto& p = t.mutable_value();
    size_t n = p.size();
    static const std::vector<real> kEmpty;
    const std::vector<real>& g = t.has_grad() ? t.grad() : kEmpty;
    if (!g.empty())
      for (size_t i = 0; i < n; ++i)
        check(std::isfinite(g[i]), "optimizer: non-finite gradient in '{}'",
              np.name);

    if (cfg_.kind == OptimKind::Sgd) {
      auto& buf = m_[np.name];
      if (buf.size() != n) buf.assign(n, 0.0);
      for (size_t i = 0; i < n; ++i) {
        real gi = (g.empty() ? real(0) : g[i]) * clip_scale +
                  cfg_.weight_decay * p[i];
        buf[i] = cfg_.momentum * buf[i] + gi;
        p[i] -= lr * buf[i];
      }
    } else {
      auto& mb = m_[np.name];
      auto& vb = v_[np.name];
      if (mb.size() != n) mb.assign(n, 0.0);
      if (vb.size() != n) vb.assign(n, 0.0);
      real bc1 = 1 - std::pow(cfg_.beta1, static_cast<real>(t_));
      real bc2 = 1 - std::pow(cfg_.beta2, static_cast<real>(t_));
      for (size_t i = 0; i < n; ++i) {
        real gi = (g.empty() ? real(0) : g[i]) * clip_scale;
        mb[i] = cfg_.beta1 * mb[i] + (1 - cfg_.beta1) * gi;
        vb[i] = cfg_.beta2 * vb[i] + (1 - cfg_.beta2) * gi * gi;
        real mhat = mb[i] / bc1;
        real vhat = vb[i] / bc2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                      cfg_.weight_decay * p[i]);
      }
    }
  }
}

void Optimizer::zero_grad(const std::vector<NamedParam>& params) {
  for (const auto& np : params) np.tensor.zero_grad();
}

void Optimizer::save_state(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream meta(dir + "/meta.txt");
  check(meta.is_open(), "cannot open {}/meta.txt for writing", dir);
  meta << "step_count=" << t_ << "\n";
  auto dump = [&](const std::map<std::string, std::vector<real>>& state,
                  const std::string& tag) {
    for (const auto& [name, buf] : state) {
      std::string fname = name;
      for (auto& c : fname)
        if (c == '/' || c == '\\') c = '_';
      write_tensor(fmt::format("{}/{}.{}.tlab", dir, fname, tag),
                   Tensor({static_cast<int64_t>(buf.size())}, buf),
                   DType::F64);
    }
  };
  dump(m_, "m");
  dump(v_, "v");
}

void Optimizer::load_state(const std::string& dir,
                           const std::vector<NamedParam>& params) {
  std::ifstream meta(dir + "/meta.txt");
  check(meta.is_open(), "cannot open {}/meta.txt", dir);
  std::string line;
  t_ = -1;
  while (std::getline(meta, line)) {
    if (line.rfind("step_count=", 0) == 0)
      t_ = std::stoll(line.substr(std::string("step_count=").size()));
  }
  check(t_ >= 0, "optimizer state {} lacks step_count", dir);
  m_.clear();
  v_.clear();
  namespace fs = std::filesystem;
  for (const auto& np : params) {
    if (!np.tensor.requires_grad()) continue;
    std::string fname = np.name;
    for (auto& c : fname)
      if (c == '/' || c == '\\') c = '_';
    std::string mpath = fmt::format("{}/{}.m.tlab", dir, fname);
    if (fs::exists(mpath)) m_[np.name] = read_tensor(mpath).value();
    std::string vpath = fmt::format("{}/{}.v.tlab", dir, fname);
    if (fs::exists(vpath)) v_[np.name] = read_tensor(vpath).value();
  }
}

}  // namespace tlab
