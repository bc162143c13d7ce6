#include "dgcn/toy_data.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "dgcn/rng.hpp"
#include "dgcn/tensor_io.hpp"

namespace dgcn {

namespace {

constexpr int kPlacementAttempts = 500;
constexpr int kTargetTries = 200;

bool overlaps(const Square& a, const Square& b, std::size_t gap) {
  return a.y < b.y + b.size + gap && b.y < a.y + a.size + gap && a.x < b.x + b.size + gap &&
         b.x < a.x + a.size + gap;
}

double linf(const Square& a, const Square& b) { return std::max(std::abs(a.cy() - b.cy()), std::abs(a.cx() - b.cx())); }

Square random_square(Rng& rng, std::size_t size, const ToyTaskShape& shape) {
  return {rng.below(shape.height - size + 1), rng.below(shape.width - size + 1), size};
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

void ToyTaskShape::validate() const {
  if (height < 32 || width < 32) throw ConfigError("toy images must be at least 32x32");
  if (classes < 3) throw ConfigError("toy task needs at least 3 classes");
  if (classes > 254) throw ConfigError("toy task supports at most 254 classes");
}

std::vector<float> beacon_palette_colour(std::size_t k, std::size_t kinds) {
  const double hue = 6.0 * static_cast<double>(k) / static_cast<double>(kinds);
  const double v = 0.9;
  const double f = hue - std::floor(hue);
  const double p = 0.0, q = v * (1 - f), t = v * f;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(std::floor(hue)) % 6) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

std::uint64_t sample_seed(std::uint64_t seed, std::size_t index) { return Rng(seed).fork(index).next_u64(); }

ToySample gen_toy_sample(std::uint64_t seed, const ToyTaskShape& shape) {
  shape.validate();
  Rng rng(seed);
  const std::size_t h = shape.height, w = shape.width;
  const std::size_t beacon_size = std::max<std::size_t>(4, h / 8);
  const std::size_t target_size = std::max<std::size_t>(3, h / 10);
  const double min_distance = static_cast<double>(h) / 2;

  ToySample s;
  s.seed = seed;
  s.beacon_colour = rng.below(shape.target_kinds());
  const std::size_t wanted = 2 + rng.below(3);
  bool placed = false;
  for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
    s.beacon = random_square(rng, beacon_size, shape);
    s.targets.clear();
    for (int tries = 0; tries < kTargetTries && s.targets.size() < wanted; ++tries) {
      Square t = random_square(rng, target_size, shape);
      if (linf(t, s.beacon) < min_distance || overlaps(t, s.beacon, 1)) continue;
      if (std::any_of(s.targets.begin(), s.targets.end(), [&](const Square& o) { return overlaps(t, o, 1); })) continue;
      s.targets.push_back(t);
    }
    placed = s.targets.size() == wanted;
  }
  if (!placed) throw std::runtime_error("toy sample placement failed for seed " + std::to_string(seed));

  std::vector<float> img(3 * h * w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < h * w; ++i) img[c * h * w + i] = clamp01(rng.uniform(0.35, 0.55));
  s.labels = {h, w, std::vector<std::uint8_t>(h * w, kBackgroundClass)};

  auto paint = [&](const Square& sq, const std::vector<float>& rgb, std::uint8_t label) {
    for (std::size_t y = sq.y; y < sq.y + sq.size; ++y)
      for (std::size_t x = sq.x; x < sq.x + sq.size; ++x) {
        for (std::size_t c = 0; c < 3; ++c) img[(c * h + y) * w + x] = clamp01(rgb[c] + rng.uniform(-0.05, 0.05));
        s.labels.labels[y * w + x] = label;
      }
  };
  paint(s.beacon, beacon_palette_colour(s.beacon_colour, shape.target_kinds()), kBeaconClass);
  const auto target_class = static_cast<std::uint8_t>(2 + s.beacon_colour);
  for (const auto& t : s.targets) paint(t, {0.85f, 0.85f, 0.85f}, target_class);
  s.image = Tensor<float>::from({3, h, w}, std::move(img));
  return s;
}

std::vector<ToySample> gen_toy_dataset(std::uint64_t seed, std::size_t count, const ToyTaskShape& shape,
                                       std::size_t threads) {
  shape.validate();
  std::vector<ToySample> out(count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        out[i] = gen_toy_sample(sample_seed(seed, i), shape);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(count, 1));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::size_t validation_start(std::size_t count) {
  if (count < 2) throw ConfigError("a dataset needs at least 2 samples to hold a validation split");
  const std::size_t val = std::max<std::size_t>(1, count / 5);
  return count - val;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<ToySample>& samples, std::uint64_t seed,
                  const ToyTaskShape& shape) {
  std::filesystem::create_directories(dir);
  const std::size_t val_start = validation_start(samples.size());
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw FormatError("cannot write manifest in " + dir.string());
  manifest << "DGCN-DATASET 1\n";
  manifest << "seed " << seed << " count " << samples.size() << " height " << shape.height << " width " << shape.width
           << " classes " << shape.classes << '\n';
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%05zu.tnsr", i);
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw FormatError("cannot write " + (dir / name).string());
    write_tensor(os, samples[i].image);
    const auto& lm = samples[i].labels;
    std::vector<float> labels(lm.labels.begin(), lm.labels.end());
    write_tensor(os, Tensor<float>::from({lm.height, lm.width}, std::move(labels)));
    manifest << i << ' ' << samples[i].seed << ' ' << (i >= val_start ? "val" : "train") << ' ' << name << '\n';
  }
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw FormatError("no manifest.txt in " + dir.string());
  std::string tag_line;
  std::getline(manifest, tag_line);
  if (tag_line != "DGCN-DATASET 1") throw FormatError("bad dataset manifest tag '" + tag_line + "'");
  LoadedDataset ds;
  std::string k1, k2, k3, k4, k5;
  std::size_t count = 0;
  if (!(manifest >> k1 >> ds.seed >> k2 >> count >> k3 >> ds.shape.height >> k4 >> ds.shape.width >> k5 >>
        ds.shape.classes) ||
      k1 != "seed" || k2 != "count" || k3 != "height" || k4 != "width" || k5 != "classes") {
    throw FormatError("malformed dataset manifest header");
  }
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    std::string split, name;
    if (!(manifest >> index >> seed >> split >> name) || index != i) {
      throw FormatError("malformed manifest entry " + std::to_string(i));
    }
    std::ifstream is(dir / name, std::ios::binary);
    if (!is) throw FormatError("missing sample file " + (dir / name).string());
    ToySample s;
    s.seed = seed;
    try {
      s.image = read_tensor<float>(is);
      auto labels = read_tensor<float>(is);
      if (s.image.ndim() != 3 || s.image.dim(0) != 3 || labels.ndim() != 2 || labels.dim(0) != s.image.dim(1) ||
          labels.dim(1) != s.image.dim(2)) {
        throw FormatError("unexpected tensor shapes");
      }
      s.labels = {labels.dim(0), labels.dim(1), {}};
      for (float v : labels.data()) s.labels.labels.push_back(static_cast<std::uint8_t>(v));
    } catch (const FormatError& e) {
      throw FormatError("corrupt sample file " + (dir / name).string() + ": " + e.what());
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace dgcn
