#include "tlab/config.hpp"

#include <fstream>
#include <sstream>

#include "tlab/optim.hpp"
#include "tlab/tokenizer.hpp"
#include "tlab/tokenprop.hpp"

namespace tlab {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  fail("config: '{}' is not a boolean for key '{}'", v, key);
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::string tok;
  std::istringstream is(v);
  while (std::getline(is, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

std::string int_list_str(const std::vector<int>& v) {
  return fmt::format("{}", fmt::join(v, ","));
}

template <typename T>
ConfigKey field(const std::string& name, const std::string& describe,
                T ExperimentConfig::* member) {
  ConfigKey k;
  k.name = name;
  k.describe = describe;
  if constexpr (std::is_same_v<T, std::string>) {
    k.get = [member](const ExperimentConfig& c) { return c.*member; };
    k.set = [member](ExperimentConfig& c, const std::string& v) {
      c.*member = v;
    };
  } else if constexpr (std::is_same_v<T, bool>) {
    k.get = [member](const ExperimentConfig& c) {
      return std::string(c.*member ? "on" : "off");
    };
    k.set = [member, name](ExperimentConfig& c, const std::string& v) {
      c.*member = parse_bool(v, name);
    };
  } else if constexpr (std::is_same_v<T, int>) {
    k.get = [member](const ExperimentConfig& c) {
      return std::to_string(c.*member);
    };
    k.set = [member](ExperimentConfig& c, const std::string& v) {
      c.*member = std::stoi(v);
    };
  } else if constexpr (std::is_same_v<T, uint64_t>) {
    k.get = [member](const ExperimentConfig& c) {
      return std::to_string(c.*member);
    };
    k.set = [member](ExperimentConfig& c, const std::string& v) {
      c.*member = std::stoull(v);
    };
  } else if constexpr (std::is_same_v<T, double>) {
    k.get = [member](const ExperimentConfig& c) {
      return fmt::format("{:.17g}", c.*member);
    };
    k.set = [member](ExperimentConfig& c, const std::string& v) {
      c.*member = std::stod(v);
    };
  } else {
    static_assert(std::is_same_v<T, std::vector<int>>);
    k.get = [member](const ExperimentConfig& c) {
      return int_list_str(c.*member);
    };
    k.set = [member](ExperimentConfig& c, const std::string& v) {
      c.*member = parse_int_list(v);
    };
  }
  return k;
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      field("dataset", "'synth' or a shard directory", &ExperimentConfig::dataset),
      field("synth_classes", "synthetic class count", &ExperimentConfig::synth_classes),
      field("synth_per_class", "synthetic images per class", &ExperimentConfig::synth_per_class),
      field("image_size", "square image size in pixels", &ExperimentConfig::image_size),
      field("fraction", "fraction of the training split used", &ExperimentConfig::fraction),
      field("tokenizer", "patchify|intra|intra+local|intra+local+inter|frozen", &ExperimentConfig::tokenizer),
      field("patch_size", "patch size in pixels", &ExperimentConfig::patch_size),
      field("embed_dim", "token embedding width", &ExperimentConfig::embed_dim),
      field("input_norm", "stem input normalization: none|layer|batch|instance", &ExperimentConfig::input_norm),
      field("moto", "enable MoTo in front of the tokenizer", &ExperimentConfig::moto),
      field("moto_entities", "semantic entity count n", &ExperimentConfig::moto_entities),
      field("moto_tau", "softmax scale tau", &ExperimentConfig::moto_tau),
      field("moto_dkq", "k/q extractor width", &ExperimentConfig::moto_dkq),
      field("moto_partition", "soft|hard", &ExperimentConfig::moto_partition),
      field("moto_placements", "comma list of blocks with inserted MoTo", &ExperimentConfig::moto_placements),
      field("depth", "transformer blocks", &ExperimentConfig::depth),
      field("heads", "attention heads", &ExperimentConfig::heads),
      field("mlp_ratio", "MLP expansion ratio", &ExperimentConfig::mlp_ratio),
      field("drop_path", "stochastic depth rate", &ExperimentConfig::drop_path),
      field("tokenprop", "enable the reconstruction objective", &ExperimentConfig::tokenprop),
      field("lambda", "reconstruction loss weight", &ExperimentConfig::lambda),
      field("rec_loss", "l1|l2", &ExperimentConfig::rec_loss),
      field("decoder_multiplier", "decoder channel multiplier", &ExperimentConfig::decoder_multiplier),
      field("decoder_scale", "decoder output size (64*2^k)", &ExperimentConfig::decoder_scale),
      field("decoder_base", "decoder stem width at x1", &ExperimentConfig::decoder_base),
      field("optimizer", "adamw|sgd", &ExperimentConfig::optimizer),
      field("lr", "base learning rate", &ExperimentConfig::lr),
      field("momentum", "sgd momentum", &ExperimentConfig::momentum),
      field("beta1", "adamw beta1", &ExperimentConfig::beta1),
      field("beta2", "adamw beta2", &ExperimentConfig::beta2),
      field("weight_decay", "weight decay", &ExperimentConfig::weight_decay),
      field("grad_clip", "max global grad norm, 0 = off", &ExperimentConfig::grad_clip),
      field("lr_schedule", "constant|cosine", &ExperimentConfig::lr_schedule),
      field("warmup_epochs", "linear warmup epochs", &ExperimentConfig::warmup_epochs),
      field("epochs", "training epochs", &ExperimentConfig::epochs),
      field("batch_size", "batch size", &ExperimentConfig::batch_size),
      field("seed", "run seed", &ExperimentConfig::seed),
      field("out_dir", "run output directory", &ExperimentConfig::out_dir),
      field("checkpoint_every", "checkpoint interval in epochs", &ExperimentConfig::checkpoint_every),
      field("log_recon_every", "reconstruction PPM dump interval", &ExperimentConfig::log_recon_every),
      field("run_probe", "emit the final probe report", &ExperimentConfig::run_probe),
      field("probe_epochs", "probe decoder training epochs", &ExperimentConfig::probe_epochs),
  };
  return schema;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const auto& k : config_schema()) {
    if (k.name == key) {
      try {
        k.set(*this, value);
      } catch (const Error&) {
        throw;
      } catch (const std::exception& e) {
        fail("config: bad value '{}' for key '{}' ({})", value, key, e.what());
      }
      return;
    }
  }
  fail("config: unknown key '{}'", key);
}

ExperimentConfig ExperimentConfig::from_string(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    check(eq != std::string::npos, "config line {}: expected key=value, got '{}'",
          lineno, line);
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  check(is.is_open(), "cannot open config file {}", path);
  std::stringstream buf;
  buf << is.rdbuf();
  return from_string(buf.str());
}

std::string ExperimentConfig::to_string() const {
  std::string out;
  for (const auto& k : config_schema())
    out += fmt::format("{}={}\n", k.name, k.get(*this));
  return out;
}

void ExperimentConfig::validate() const {
  check(synth_classes >= 2 && synth_per_class >= 1, "config: bad synth sizes");
  check(image_size >= 8 && patch_size >= 1 && image_size % patch_size == 0,
        "config: image size {} not divisible by patch size {}", image_size,
        patch_size);
  check(fraction > 0 && fraction <= 1, "config: fraction must be in (0,1]");
  parse_tokenizer_variant(tokenizer);
  check(input_norm == "none" || input_norm == "layer" || input_norm == "batch" ||
            input_norm == "instance",
        "config: unknown input_norm '{}'", input_norm);
  check(!(moto && input_norm != "none"),
        "config: moto and input_norm are mutually exclusive");
  check(moto_partition == "soft" || moto_partition == "hard",
        "config: unknown moto_partition '{}'", moto_partition);
  check(moto_entities >= 1 && moto_tau > 0 && moto_dkq >= 1,
        "config: bad moto settings");
  for (int p : moto_placements)
    check(p >= 1 && p <= depth, "config: moto placement {} outside 1..{}", p,
          depth);
  check(depth >= 0 && heads >= 1 && embed_dim % heads == 0,
        "config: embed_dim {} not divisible by heads {}", embed_dim, heads);
  check(lambda >= 0, "config: lambda must be >= 0");
  parse_rec_loss(rec_loss);
  {
    DecoderConfig dc;
    dc.channel_multiplier = decoder_multiplier;
    dc.output_scale = decoder_scale;
    dc.base_channels = decoder_base;
    dc.token_dim = embed_dim;
    dc.validate();
  }
  parse_optim_kind(optimizer);
  parse_lr_schedule(lr_schedule);
  check(lr > 0 && momentum >= 0 && momentum < 1, "config: bad optimizer values");
  check(epochs >= 1 && batch_size >= 1, "config: bad epochs/batch_size");
  check(warmup_epochs >= 0 && checkpoint_every >= 0 && log_recon_every >= 0 &&
            probe_epochs >= 1,
        "config: negative interval");
  check(!out_dir.empty(), "config: out_dir must not be empty");
}

}  // namespace tlab
