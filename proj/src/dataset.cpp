#include "tlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "tlab/image.hpp"
#include "tlab/ops.hpp"
#include "tlab/serialize.hpp"

namespace tlab {

namespace fs = std::filesystem;

void DatasetShard::validate() const {
  check(images.defined() && images.rank() == 4 && images.shape()[1] == 3,
        "shard: images must be [N,3,S,S]");
  check(static_cast<int64_t>(labels.size()) == size(),
        "shard: {} labels for {} images", labels.size(), size());
  uint32_t k = static_cast<uint32_t>(num_classes());
  check(k >= 1, "shard: no classes");
  for (size_t i = 0; i < labels.size(); ++i)
    check(labels[i] < k, "shard: label {} out of range [0, {}) at index {}",
          labels[i], k, i);
  for (real v : images.value())
    check(v >= 0 && v <= 1, "shard: image value {} outside [0,1]", v);
}

namespace {

struct DrawCtx {
  double cx, cy, r, phase, freq;
};

double clamp01(double v) { return v < 0 ? 0 : (v > 1 ? 1 : v); }

// soft indicator of sdf >= 0 with edge width w
double soft(double sdf, double w) { return clamp01(0.5 + sdf / (2 * w)); }

// per-class implicit mask, all coordinates in [0,1]
double class_mask(int shape_kind, const DrawCtx& d, double u, double v,
                  double w) {
  double du = u - d.cx, dv = v - d.cy;
  double dist = std::sqrt(du * du + dv * dv);
  switch (shape_kind) {
    case 0:  // filled disk
      return soft(d.r - dist, w);
    case 1:  // filled square
      return soft(d.r - std::max(std::abs(du), std::abs(dv)), w);
    case 2: {  // upward triangle: apex (cx, cy-r), base y = cy + 0.8r
      double base = (d.cy + 0.8 * d.r) - v;
      double norm = std::sqrt(1.8 * 1.8 + 1.0);
      double right = (-1.8 * du + (v - d.cy + d.r)) / norm;
      double left = (1.8 * du + (v - d.cy + d.r)) / norm;
      return soft(std::min(base, std::min(left, right)), w);
    }
    case 3: {  // plus sign
      double bar_h = std::min(d.r - std::abs(du), 0.35 * d.r - std::abs(dv));
      double bar_v = std::min(d.r - std::abs(dv), 0.35 * d.r - std::abs(du));
      return soft(std::max(bar_h, bar_v), w);
    }
    case 4:  // annulus
      return soft(0.3 * d.r - std::abs(dist - 0.75 * d.r), w);
    case 5:  // horizontal stripes
      return clamp01(0.5 + 2.0 * std::sin(2 * 3.14159265358979 * d.freq * v +
                                          d.phase));
    case 6:  // vertical stripes
      return clamp01(0.5 + 2.0 * std::sin(2 * 3.14159265358979 * d.freq * u +
                                          d.phase));
    case 7: {  // checkerboard
      double s = std::sin(2 * 3.14159265358979 * d.freq * u + d.phase) *
                 std::sin(2 * 3.14159265358979 * d.freq * v + d.phase * 0.7);
      return clamp01(0.5 + 2.5 * s);
    }
    case 8: {  // diagonal bar
      double dd = std::abs(du - dv) / 1.41421356237;
      return soft(0.35 * d.r - dd, w);
    }
    default: {  // 9: four-dot grid
      double best = -1;
      for (int sy = -1; sy <= 1; sy += 2)
        for (int sx = -1; sx <= 1; sx += 2) {
          double ddu = u - (d.cx + 0.55 * d.r * sx);
          double ddv = v - (d.cy + 0.55 * d.r * sy);
          double dot = 0.32 * d.r - std::sqrt(ddu * ddu + ddv * ddv);
          best = std::max(best, dot);
        }
      return soft(best, w);
    }
  }
}

}  // namespace

DatasetShard synth_dataset(int classes, int per_class, int size, Rng& rng) {
  check(classes >= 2 && classes <= 1000, "synth: bad class count {}", classes);
  check(per_class >= 1 && size >= 8, "synth: bad per_class/size");
  int64_t N = static_cast<int64_t>(classes) * per_class;
  int64_t S = size;
  std::vector<real> data(static_cast<size_t>(N * 3 * S * S));
  std::vector<uint32_t> labels(static_cast<size_t>(N));

  double edge = 1.5 / static_cast<double>(S);
  for (int64_t i = 0; i < N; ++i) {
    int label = static_cast<int>(i % classes);
    labels[static_cast<size_t>(i)] = static_cast<uint32_t>(label);
    int kind = label % 10;

    DrawCtx d;
    d.cx = rng.uniform(0.40, 0.60);
    d.cy = rng.uniform(0.40, 0.60);
    d.r = rng.uniform(0.20, 0.32);
    d.freq = std::floor(rng.uniform(3.0, 6.0)) + 0.5 * (label / 10);
    d.phase = rng.uniform(0.0, 6.28318);

    double fg[3], bg[3];
    for (int c = 0; c < 3; ++c) {
      fg[c] = rng.uniform(0.60, 0.95);
      bg[c] = rng.uniform(0.05, 0.40);
    }
    // nuisance: directional lighting ramp and per-channel color cast
    int light_dir = static_cast<int>(rng.uniform_int(4));
    double light = rng.uniform(0.0, 0.35);
    double gain[3], offs[3];
    for (int c = 0; c < 3; ++c) {
      gain[c] = rng.uniform(0.55, 1.0);
      offs[c] = rng.uniform(0.0, 0.15);
    }

    for (int64_t y = 0; y < S; ++y) {
      for (int64_t x = 0; x < S; ++x) {
        double u = (static_cast<double>(x) + 0.5) / static_cast<double>(S);
        double v = (static_cast<double>(y) + 0.5) / static_cast<double>(S);
        double m = class_mask(kind, d, u, v, edge);
        double t = light_dir == 0 ? u
                   : light_dir == 1 ? 1 - u
                   : light_dir == 2 ? v
                                    : 1 - v;
        double shade = 1.0 - light * t;
        for (int c = 0; c < 3; ++c) {
          double pix = (bg[c] + (fg[c] - bg[c]) * m) * shade;
          pix = pix * gain[c] + offs[c];
          pix += rng.uniform(-0.02, 0.02);
          // quantize through f32 so shard round trips are lossless
          float q = static_cast<float>(clamp01(pix));
          data[static_cast<size_t>(((i * 3 + c) * S + y) * S + x)] =
              static_cast<real>(q);
        }
      }
    }
  }

  DatasetShard shard;
  shard.images = Tensor({N, 3, S, S}, std::move(data));
  shard.labels = std::move(labels);
  for (int k = 0; k < classes; ++k)
    shard.class_names.push_back(fmt::format("class_{}", k));

  const auto& v = shard.images.value();
  for (int c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    int64_t count = N * S * S;
    for (int64_t i = 0; i < N; ++i)
      for (int64_t p = 0; p < S * S; ++p) {
        double x = v[static_cast<size_t>((i * 3 + c) * S * S + p)];
        sum += x;
        sq += x * x;
      }
    double mean = sum / static_cast<double>(count);
    double var = sq / static_cast<double>(count) - mean * mean;
    shard.channel_mean[static_cast<size_t>(c)] = mean;
    shard.channel_std[static_cast<size_t>(c)] = std::sqrt(std::max(var, 1e-12));
  }
  return shard;
}

void save_shard(const std::string& dir, const DatasetShard& shard) {
  fs::create_directories(dir);
  write_tensor(dir + "/images.tlab", shard.images, DType::F32);
  write_u32_list(dir + "/labels.u32", shard.labels);
  std::ofstream mf(dir + "/manifest.txt");
  check(mf.is_open(), "cannot open {}/manifest.txt for writing", dir);
  mf << "count=" << shard.size() << "\n";
  mf << "image_size=" << shard.image_size() << "\n";
  mf << "num_classes=" << shard.num_classes() << "\n";
  mf << fmt::format("mean={:.17g},{:.17g},{:.17g}\n", shard.channel_mean[0],
                    shard.channel_mean[1], shard.channel_mean[2]);
  mf << fmt::format("std={:.17g},{:.17g},{:.17g}\n", shard.channel_std[0],
                    shard.channel_std[1], shard.channel_std[2]);
  for (size_t i = 0; i < shard.class_names.size(); ++i)
    mf << "class_" << i << "=" << shard.class_names[i] << "\n";
  check(mf.good(), "write error on {}/manifest.txt", dir);
}

namespace {

std::map<std::string, std::string> read_kv(const std::string& path) {
  std::ifstream is(path);
  check(is.is_open(), "cannot open {}", path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::array<double, 3> parse_triple(const std::string& s, const std::string& what) {
  std::array<double, 3> out{};
  size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    size_t comma = s.find(',', pos);
    std::string tok = comma == std::string::npos ? s.substr(pos)
                                                 : s.substr(pos, comma - pos);
    check(!tok.empty(), "manifest: malformed {} entry '{}'", what, s);
    out[static_cast<size_t>(i)] = std::stod(tok);
    pos = comma == std::string::npos ? s.size() : comma + 1;
  }
  return out;
}

DatasetShard ingest_tlab(const std::string& dir) {
  DatasetShard shard;
  shard.images = read_tensor(dir + "/images.tlab");
  shard.labels = read_u32_list(dir + "/labels.u32");
  auto kv = read_kv(dir + "/manifest.txt");
  check(kv.count("num_classes"), "manifest {} lacks num_classes", dir);
  int64_t k = std::stoll(kv["num_classes"]);
  for (int64_t i = 0; i < k; ++i) {
    auto it = kv.find(fmt::format("class_{}", i));
    shard.class_names.push_back(it == kv.end() ? fmt::format("class_{}", i)
                                               : it->second);
  }
  check(kv.count("mean") && kv.count("std"),
        "manifest {} lacks channel statistics", dir);
  shard.channel_mean = parse_triple(kv["mean"], "mean");
  shard.channel_std = parse_triple(kv["std"], "std");
  shard.validate();
  return shard;
}

DatasetShard ingest_ppm(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".ppm") files.push_back(e.path().filename());
  check(!files.empty(), "{} holds neither a TLAB shard nor PPM files", dir);
  std::sort(files.begin(), files.end());

  // labels.txt holds one "<filename> <label>" pair per line
  std::map<std::string, std::string> labels_kv;
  {
    std::ifstream is(dir + "/labels.txt");
    check(is.is_open(), "cannot open {}/labels.txt", dir);
    std::string name;
    uint32_t label;
    while (is >> name >> label) labels_kv[name] = std::to_string(label);
  }

  std::vector<Tensor> images;
  std::vector<uint32_t> labels;
  uint32_t max_label = 0;
  for (const auto& f : files) {
    Tensor img = read_ppm(dir + "/" + f);
    if (!images.empty())
      check(img.shape() == images[0].shape(),
            "{}: image {} has shape {} but expected {}", dir, f,
            shape_str(img.shape()), shape_str(images[0].shape()));
    auto it = labels_kv.find(f);
    check(it != labels_kv.end(), "{}/labels.txt lacks an entry for {}", dir, f);
    uint32_t label = static_cast<uint32_t>(std::stoul(it->second));
    labels.push_back(label);
    max_label = std::max(max_label, label);
    images.push_back(img);
  }

  int64_t S = images[0].shape()[1];
  int64_t N = static_cast<int64_t>(images.size());
  std::vector<real> data;
  data.reserve(static_cast<size_t>(N * 3 * S * S));
  for (const auto& img : images)
    data.insert(data.end(), img.value().begin(), img.value().end());

  DatasetShard shard;
  shard.images = Tensor({N, 3, S, S}, std::move(data));
  shard.labels = std::move(labels);
  for (uint32_t k = 0; k <= max_label; ++k)
    shard.class_names.push_back(fmt::format("class_{}", k));

  const auto& v = shard.images.value();
  for (int c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (int64_t i = 0; i < N; ++i)
      for (int64_t p = 0; p < S * S; ++p) {
        double x = v[static_cast<size_t>((i * 3 + c) * S * S + p)];
        sum += x;
        sq += x * x;
      }
    double mean = sum / static_cast<double>(N * S * S);
    double var = sq / static_cast<double>(N * S * S) - mean * mean;
    shard.channel_mean[static_cast<size_t>(c)] = mean;
    shard.channel_std[static_cast<size_t>(c)] = std::sqrt(std::max(var, 1e-12));
  }
  shard.validate();
  return shard;
}

}  // namespace

DatasetShard ingest(const std::string& dir) {
  check(fs::is_directory(dir), "{} is not a directory", dir);
  if (fs::exists(dir + "/images.tlab")) return ingest_tlab(dir);
  return ingest_ppm(dir);
}

Tensor normalized_batch(const DatasetShard& shard,
                        const std::vector<int64_t>& indices) {
  Tensor raw;
  {
    NoGradGuard ng;
    raw = gather(shard.images, 0, indices);
  }
  int64_t B = raw.shape()[0], S = raw.shape()[2];
  std::vector<real> out = raw.value();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < 3; ++c) {
      real mean = static_cast<real>(shard.channel_mean[static_cast<size_t>(c)]);
      real inv = real(1) /
                 static_cast<real>(shard.channel_std[static_cast<size_t>(c)]);
      real* p = out.data() + (b * 3 + c) * S * S;
      for (int64_t i = 0; i < S * S; ++i) p[i] = (p[i] - mean) * inv;
    }
  return Tensor(raw.shape(), std::move(out));
}

std::vector<int64_t> batch_labels(const DatasetShard& shard,
                                  const std::vector<int64_t>& indices) {
  std::vector<int64_t> out;
  out.reserve(indices.size());
  for (int64_t i : indices)
    out.push_back(static_cast<int64_t>(shard.labels[static_cast<size_t>(i)]));
  return out;
}

}  // namespace tlab
