#include "ibp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "ibp/error.hpp"
#include "ibp/rng.hpp"

namespace ibp {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;  // 2051
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;  // 2049
constexpr std::int64_t kCifarRecord = 3073;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  in.seekg(0);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw DataError("failed to read " + std::to_string(size) + " bytes from " + path);
  return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset,
                        const std::string& path) {
  if (offset + 4 > b.size()) {
    throw DataError(path + ": truncated file, needed 4 bytes at offset " +
                    std::to_string(offset) + ", file has " + std::to_string(b.size()));
  }
  return (static_cast<std::uint32_t>(b[offset]) << 24) |
         (static_cast<std::uint32_t>(b[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(b[offset + 2]) << 8) |
         static_cast<std::uint32_t>(b[offset + 3]);
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_le32(const std::vector<unsigned char>& b, std::size_t offset,
                        const std::string& path) {
  if (offset + 4 > b.size()) {
    throw DataError(path + ": truncated cache, needed 4 bytes at offset " +
                    std::to_string(offset));
  }
  return static_cast<std::uint32_t>(b[offset]) | (static_cast<std::uint32_t>(b[offset + 1]) << 8) |
         (static_cast<std::uint32_t>(b[offset + 2]) << 16) |
         (static_cast<std::uint32_t>(b[offset + 3]) << 24);
}

}  // namespace

Tensor<float> Dataset::image(int index) const {
  const auto s = image_shape();
  const std::int64_t n = static_cast<std::int64_t>(s[0]) * s[1] * s[2];
  std::vector<float> out(static_cast<std::size_t>(n));
  std::memcpy(out.data(), images.data() + static_cast<std::int64_t>(index) * n,
              static_cast<std::size_t>(n) * sizeof(float));
  return Tensor<float>::from_vector({s[0], s[1], s[2]}, std::move(out));
}

Dataset Dataset::take(int n) const {
  n = std::min(n, count());
  const auto s = image_shape();
  const std::int64_t per = static_cast<std::int64_t>(s[0]) * s[1] * s[2];
  std::vector<float> imgs(static_cast<std::size_t>(per * n));
  std::memcpy(imgs.data(), images.data(), imgs.size() * sizeof(float));
  Dataset out;
  out.images = Tensor<float>::from_vector({n, s[0], s[1], s[2]}, std::move(imgs));
  out.labels.assign(labels.begin(), labels.begin() + n);
  out.num_classes = num_classes;
  out.split = split;
  out.norm_mean = norm_mean;
  out.norm_std = norm_std;
  return out;
}

Tensor<float> gather_images(const Dataset& data, const std::vector<int>& indices) {
  const auto s = data.image_shape();
  const std::int64_t per = static_cast<std::int64_t>(s[0]) * s[1] * s[2];
  Tensor<float> out = Tensor<float>::zeros({static_cast<int>(indices.size()), s[0], s[1], s[2]});
  float* dst = out.mutable_data();
  const float* src = data.images.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::memcpy(dst + static_cast<std::int64_t>(i) * per,
                src + static_cast<std::int64_t>(indices[i]) * per,
                static_cast<std::size_t>(per) * sizeof(float));
  }
  return out;
}

std::vector<int> gather_labels(const Dataset& data, const std::vector<int>& indices) {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out[i] = data.labels[static_cast<std::size_t>(indices[i])];
  }
  return out;
}

Dataset load_idx_pair(const std::string& image_path, const std::string& label_path,
                      const std::string& split) {
  auto ib = read_file(image_path);
  const std::uint32_t image_magic = read_be32(ib, 0, image_path);
  if (image_magic != kIdxImageMagic) {
    throw DataError(image_path + ": bad magic " + hex32(image_magic) + " at offset 0, expected " +
                    hex32(kIdxImageMagic));
  }
  const std::uint32_t count = read_be32(ib, 4, image_path);
  const std::uint32_t rows = read_be32(ib, 8, image_path);
  const std::uint32_t cols = read_be32(ib, 12, image_path);
  const std::size_t expected = 16 + static_cast<std::size_t>(count) * rows * cols;
  if (ib.size() != expected) {
    throw DataError(image_path + ": expected " + std::to_string(expected) + " bytes for " +
                    std::to_string(count) + " images of " + std::to_string(rows) + "x" +
                    std::to_string(cols) + ", file has " + std::to_string(ib.size()) +
                    " (payload starts at offset 16)");
  }

  auto lb = read_file(label_path);
  const std::uint32_t label_magic = read_be32(lb, 0, label_path);
  if (label_magic != kIdxLabelMagic) {
    throw DataError(label_path + ": bad magic " + hex32(label_magic) + " at offset 0, expected " +
                    hex32(kIdxLabelMagic));
  }
  const std::uint32_t label_count = read_be32(lb, 4, label_path);
  if (lb.size() != 8 + label_count) {
    throw DataError(label_path + ": expected " + std::to_string(8 + label_count) +
                    " bytes, file has " + std::to_string(lb.size()));
  }
  if (label_count != count) {
    throw DataError(label_path + ": " + std::to_string(label_count) + " labels for " +
                    std::to_string(count) + " images in " + image_path);
  }

  Dataset d;
  d.split = split;
  d.num_classes = 10;
  d.labels.resize(count);
  std::vector<float> pixels(static_cast<std::size_t>(count) * rows * cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<float>(ib[16 + i]) / 255.0f;
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const unsigned char y = lb[8 + i];
    if (y > 9) {
      throw DataError(label_path + ": label " + std::to_string(y) + " out of range at offset " +
                      std::to_string(8 + i));
    }
    d.labels[i] = y;
  }
  d.images = Tensor<float>::from_vector(
      {static_cast<int>(count), 1, static_cast<int>(rows), static_cast<int>(cols)},
      std::move(pixels));
  return d;
}

std::pair<Dataset, Dataset> load_mnist(const std::string& dir) {
  namespace fs = std::filesystem;
  auto pick = [&](const char* a, const char* b) {
    const fs::path pa = fs::path(dir) / a;
    if (fs::exists(pa)) return pa.string();
    return (fs::path(dir) / b).string();
  };
  Dataset train = load_idx_pair(pick("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
                                pick("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
                                "train");
  Dataset test = load_idx_pair(pick("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
                               pick("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"), "test");
  return {std::move(train), std::move(test)};
}

Dataset load_cifar_batches(const std::vector<std::string>& paths, const std::string& split) {
  std::vector<float> pixels;
  std::vector<int> labels;
  for (const auto& path : paths) {
    auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
      throw DataError(path + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of the 3073-byte record");
    }
    const std::size_t records = bytes.size() / kCifarRecord;
    pixels.reserve(pixels.size() + records * 3072);
    for (std::size_t r = 0; r < records; ++r) {
      const std::size_t off = r * kCifarRecord;
      const unsigned char y = bytes[off];
      if (y > 9) {
        throw DataError(path + ": label " + std::to_string(y) + " out of range at offset " +
                        std::to_string(off));
      }
      labels.push_back(y);
      for (std::size_t i = 0; i < 3072; ++i) {
        pixels.push_back(static_cast<float>(bytes[off + 1 + i]) / 255.0f);
      }
    }
  }
  Dataset d;
  d.split = split;
  d.num_classes = 10;
  d.labels = std::move(labels);
  d.images = Tensor<float>::from_vector({static_cast<int>(d.labels.size()), 3, 32, 32},
                                        std::move(pixels));
  return d;
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> train_paths;
  for (int i = 1; i <= 5; ++i) {
    train_paths.push_back((fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin")).string());
  }
  Dataset train = load_cifar_batches(train_paths, "train");
  Dataset test = load_cifar_batches({(fs::path(dir) / "test_batch.bin").string()}, "test");
  return {std::move(train), std::move(test)};
}

std::pair<std::vector<float>, std::vector<float>> normalization_stats(const Dataset& train) {
  if (train.count() == 0) throw ValueError("normalization_stats: empty dataset");
  const auto s = train.image_shape();
  const int channels = s[0];
  const std::int64_t hw = static_cast<std::int64_t>(s[1]) * s[2];
  const std::int64_t per_image = channels * hw;
  std::vector<double> sum(static_cast<std::size_t>(channels), 0.0);
  std::vector<double> sumsq(static_cast<std::size_t>(channels), 0.0);
  const float* p = train.images.data();
  for (int i = 0; i < train.count(); ++i) {
    for (int c = 0; c < channels; ++c) {
      const float* base = p + i * per_image + c * hw;
      for (std::int64_t j = 0; j < hw; ++j) {
        sum[static_cast<std::size_t>(c)] += base[j];
        sumsq[static_cast<std::size_t>(c)] += static_cast<double>(base[j]) * base[j];
      }
    }
  }
  const double n = static_cast<double>(train.count()) * static_cast<double>(hw);
  std::vector<float> mean(static_cast<std::size_t>(channels));
  std::vector<float> stddev(static_cast<std::size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    const double m = sum[static_cast<std::size_t>(c)] / n;
    const double var = std::max(0.0, sumsq[static_cast<std::size_t>(c)] / n - m * m);
    mean[static_cast<std::size_t>(c)] = static_cast<float>(m);
    stddev[static_cast<std::size_t>(c)] = std::max(static_cast<float>(std::sqrt(var)), 1e-6f);
  }
  return {mean, stddev};
}

Tensor<float> augment(const Tensor<float>& images, std::uint64_t seed, int max_translate,
                      bool flip) {
  if (images.rank() != 4) {
    throw ShapeError("augment: expected [batch, C, H, W], got " +
                     shape_to_string(images.shape()));
  }
  const int batch = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  Tensor<float> out = Tensor<float>::zeros(images.shape());
  const float* src = images.data();
  float* dst = out.mutable_data();
  const std::int64_t per = static_cast<std::int64_t>(c) * h * w;
  for (int b = 0; b < batch; ++b) {
    auto rng = make_rng(seed, static_cast<std::uint64_t>(b));
    const bool do_flip = flip && (rng() & 1u) != 0;
    const int span = 2 * max_translate + 1;
    const int dy = max_translate > 0 ? static_cast<int>(uniform_u32(rng, span)) - max_translate : 0;
    const int dx = max_translate > 0 ? static_cast<int>(uniform_u32(rng, span)) - max_translate : 0;
    const float* in_img = src + b * per;
    float* out_img = dst + b * per;
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          // read from the shifted (and possibly mirrored) source; zero outside
          const int sy = y - dy;
          int sx = x - dx;
          if (do_flip) sx = w - 1 - sx;
          float v = 0.0f;
          if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
            v = in_img[(static_cast<std::int64_t>(ch) * h + sy) * w + sx];
          }
          out_img[(static_cast<std::int64_t>(ch) * h + y) * w + x] = v;
        }
      }
    }
  }
  return out;
}

namespace {

// Paint an axis-aligned rectangle (inclusive coords), clipped to the image.
void paint_rect(float* img, int h, int w, int y0, int y1, int x0, int x1, float value) {
  y0 = std::max(0, y0);
  x0 = std::max(0, x0);
  y1 = std::min(h - 1, y1);
  x1 = std::min(w - 1, x1);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) img[y * w + x] = value;
}

}  // namespace

Dataset make_synthetic(const std::string& split, int count, std::uint64_t seed) {
  if (split != "train" && split != "test") {
    throw ValueError("make_synthetic: split must be 'train' or 'test'");
  }
  const int h = 8, w = 8;
  Dataset d;
  d.split = split;
  d.num_classes = 2;
  d.labels.resize(static_cast<std::size_t>(count));
  std::vector<float> pixels(static_cast<std::size_t>(count) * h * w, 0.0f);
  const std::uint64_t split_tag = split == "train" ? 1 : 2;
  for (int i = 0; i < count; ++i) {
    auto rng = make_rng(seed, split_tag, static_cast<std::uint64_t>(i));
    const int label = static_cast<int>(rng() & 1u);
    d.labels[static_cast<std::size_t>(i)] = label;
    float* img = pixels.data() + static_cast<std::int64_t>(i) * h * w;
    const int pos = 1 + static_cast<int>(uniform_u32(rng, 5));  // bar position with jitter
    const float intensity = uniform_real<float>(rng, 0.75f, 1.0f);
    if (label == 0) {
      paint_rect(img, h, w, pos, pos + 1, 0, w - 1, intensity);  // horizontal bar
    } else {
      paint_rect(img, h, w, 0, h - 1, pos, pos + 1, intensity);  // vertical bar
    }
    for (int j = 0; j < h * w; ++j) {
      img[j] = std::clamp(img[j] + uniform_real<float>(rng, 0.0f, 0.15f), 0.0f, 1.0f);
    }
  }
  d.images = Tensor<float>::from_vector({count, 1, h, w}, std::move(pixels));
  return d;
}

Dataset make_synthetic_digits(const std::string& split, int count, std::uint64_t seed) {
  if (split != "train" && split != "test") {
    throw ValueError("make_synthetic_digits: split must be 'train' or 'test'");
  }
  const int h = 28, w = 28;
  Dataset d;
  d.split = split;
  d.num_classes = 10;
  d.labels.resize(static_cast<std::size_t>(count));
  std::vector<float> pixels(static_cast<std::size_t>(count) * h * w, 0.0f);
  const std::uint64_t split_tag = split == "train" ? 1 : 2;
  for (int i = 0; i < count; ++i) {
    auto rng = make_rng(seed, split_tag, static_cast<std::uint64_t>(i) + 1000);
    const int label = static_cast<int>(uniform_u32(rng, 10));
    d.labels[static_cast<std::size_t>(i)] = label;
    float* img = pixels.data() + static_cast<std::int64_t>(i) * h * w;
    const int jy = static_cast<int>(uniform_u32(rng, 9)) - 4;
    const int jx = static_cast<int>(uniform_u32(rng, 9)) - 4;
    const float ink = uniform_real<float>(rng, 0.92f, 1.0f);

    // Each class is a distinct arrangement of thick strokes on a 28x28 canvas.
    // Strokes are near-saturated on a near-zero background, like MNIST ink, so
    // wide-margin robust classification is possible while the +-4 pixel jitter
    // and shared sub-strokes keep the task from being linearly trivial.
    const int t = 2;      // stroke half-thickness (5 px wide)
    const int c0 = 13;    // canvas center
    auto hbar = [&](int y) { paint_rect(img, h, w, y + jy - t, y + jy + t, 5 + jx, 22 + jx, ink); };
    auto vbar = [&](int x) { paint_rect(img, h, w, 5 + jy, 22 + jy, x + jx - t, x + jx + t, ink); };
    auto block = [&](int y, int x) {
      paint_rect(img, h, w, y + jy - 2, y + jy + 2, x + jx - 2, x + jx + 2, ink);
    };
    switch (label) {
      case 0: hbar(6); hbar(21); vbar(6); vbar(21); break;            // box
      case 1: vbar(c0); break;                                        // single vertical
      case 2: hbar(6); vbar(21); hbar(c0); vbar(6); break;            // S-ish corners
      case 3: hbar(6); hbar(c0); hbar(21); vbar(21); break;           // comb right
      case 4: vbar(6); hbar(c0); vbar(21); break;                     // H shape
      case 5: hbar(6); vbar(6); hbar(c0); vbar(21); break;            // Z-ish corners
      case 6: vbar(6); hbar(21); block(8, 19); break;                 // L plus dot
      case 7: hbar(6); vbar(18); break;                               // top bar, right leg
      case 8: block(8, 8); block(8, 19); block(19, 8); block(19, 19); break;  // four dots
      case 9: block(c0, c0); hbar(21); break;                         // center dot, base
    }
    for (int j = 0; j < h * w; ++j) {
      img[j] = std::clamp(img[j] + uniform_real<float>(rng, 0.0f, 0.05f), 0.0f, 1.0f);
    }
  }
  d.images = Tensor<float>::from_vector({count, 1, h, w}, std::move(pixels));
  return d;
}

void save_dataset_cache(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open cache file for writing: " + path);
  out.write("IBPD", 4);
  write_u32(out, 1);  // version
  write_u32(out, static_cast<std::uint32_t>(data.count()));
  const auto s = data.image_shape();
  write_u32(out, static_cast<std::uint32_t>(s[0]));
  write_u32(out, static_cast<std::uint32_t>(s[1]));
  write_u32(out, static_cast<std::uint32_t>(s[2]));
  write_u32(out, static_cast<std::uint32_t>(data.num_classes));
  write_u32(out, data.split == "train" ? 0u : 1u);
  // pixels as raw little-endian float32
  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(data.images.data()),
            static_cast<std::streamsize>(data.images.numel() * 4));
  for (int y : data.labels) write_u32(out, static_cast<std::uint32_t>(y));
  if (!out) throw DataError("failed writing cache file: " + path);
}

Dataset load_dataset_cache(const std::string& path) {
  auto bytes = read_file(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "IBPD", 4) != 0) {
    throw DataError(path + ": bad cache magic, expected \"IBPD\"");
  }
  const std::uint32_t version = read_le32(bytes, 4, path);
  if (version != 1) {
    throw DataError(path + ": unsupported cache version " + std::to_string(version));
  }
  const std::uint32_t count = read_le32(bytes, 8, path);
  const std::uint32_t c = read_le32(bytes, 12, path);
  const std::uint32_t h = read_le32(bytes, 16, path);
  const std::uint32_t w = read_le32(bytes, 20, path);
  const std::uint32_t classes = read_le32(bytes, 24, path);
  const std::uint32_t split_code = read_le32(bytes, 28, path);
  const std::size_t pixel_bytes = static_cast<std::size_t>(count) * c * h * w * 4;
  const std::size_t expected = 32 + pixel_bytes + static_cast<std::size_t>(count) * 4;
  if (bytes.size() != expected) {
    throw DataError(path + ": expected " + std::to_string(expected) + " bytes, file has " +
                    std::to_string(bytes.size()));
  }
  Dataset d;
  d.split = split_code == 0 ? "train" : "test";
  d.num_classes = static_cast<int>(classes);
  std::vector<float> pixels(static_cast<std::size_t>(count) * c * h * w);
  std::memcpy(pixels.data(), bytes.data() + 32, pixel_bytes);
  d.images = Tensor<float>::from_vector({static_cast<int>(count), static_cast<int>(c),
                                         static_cast<int>(h), static_cast<int>(w)},
                                        std::move(pixels));
  d.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    d.labels[i] = static_cast<int>(read_le32(bytes, 32 + pixel_bytes + i * 4, path));
  }
  return d;
}

std::uint64_t dataset_content_hash(const Dataset& data) {
  std::uint64_t hash = 1469598103934665603ULL;  // FNV-1a offset basis
  auto feed = [&hash](const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= b[i];
      hash *= 1099511628211ULL;
    }
  };
  feed(data.images.data(), static_cast<std::size_t>(data.images.numel()) * sizeof(float));
  feed(data.labels.data(), data.labels.size() * sizeof(int));
  return hash;
}

}  // namespace ibp
