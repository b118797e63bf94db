#include "ibp/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ibp/error.hpp"

namespace ibp {

namespace {

constexpr char kMagic[4] = {'I', 'B', 'P', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::string& b, std::size_t& off, const std::string& path) {
  if (off + 4 > b.size()) {
    throw DataError(path + ": truncated checkpoint at offset " + std::to_string(off));
  }
  const unsigned char* p = reinterpret_cast<const unsigned char*>(b.data() + off);
  off += 4;
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_payload(std::string& out, const Tensor<float>& t) {
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int d = 0; d < t.rank(); ++d) put_u32(out, static_cast<std::uint32_t>(t.dim(d)));
  const std::size_t bytes = static_cast<std::size_t>(t.numel()) * 4;
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(t.data()), bytes);
  } else {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      std::uint32_t v;
      std::memcpy(&v, t.data() + i, 4);
      put_u32(out, v);
    }
  }
}

Tensor<float> get_payload(const std::string& b, std::size_t& off, const std::string& path) {
  const std::uint32_t rank = get_u32(b, off, path);
  if (rank == 0 || rank > 8) {
    throw DataError(path + ": implausible payload rank " + std::to_string(rank) + " at offset " +
                    std::to_string(off - 4));
  }
  std::vector<int> shape;
  std::int64_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = get_u32(b, off, path);
    shape.push_back(static_cast<int>(d));
    numel *= d;
  }
  const std::size_t bytes = static_cast<std::size_t>(numel) * 4;
  if (off + bytes > b.size()) {
    throw DataError(path + ": truncated payload of " + std::to_string(bytes) +
                    " bytes at offset " + std::to_string(off));
  }
  std::vector<float> data(static_cast<std::size_t>(numel));
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(data.data(), b.data() + off, bytes);
    off += bytes;
  } else {
    for (std::int64_t i = 0; i < numel; ++i) {
      std::uint32_t v = get_u32(b, off, path);
      std::memcpy(&data[static_cast<std::size_t>(i)], &v, 4);
    }
  }
  return Tensor<float>::from_vector(std::move(shape), std::move(data));
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_float_list(const std::vector<float>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    char buf[24];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v[i]));
    os << buf;
  }
  return os.str();
}

std::vector<float> parse_float_list(const std::string& s) {
  std::vector<float> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stof(item));
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Network<float>& net,
                     const CheckpointMeta& meta, const OptimizerState* optimizer) {
  std::ostringstream manifest;
  manifest << "format=ibp-checkpoint\n";
  manifest << "epoch=" << meta.epoch << "\n";
  manifest << "epsilon=" << format_double(meta.epsilon) << "\n";
  manifest << "kappa=" << format_double(meta.kappa) << "\n";
  manifest << "seed=" << meta.seed << "\n";
  if (net.normalization.enabled()) {
    manifest << "norm_mean=" << format_float_list(net.normalization.mean) << "\n";
    manifest << "norm_std=" << format_float_list(net.normalization.std_dev) << "\n";
  }
  if (optimizer) {
    manifest << "optimizer=" << (optimizer->kind == OptimizerKind::Adam ? "adam" : "sgd") << "\n";
    manifest << "optimizer_step=" << optimizer->step << "\n";
  } else {
    manifest << "optimizer=none\n";
  }
  manifest << "params=" << net.weights.size() * 2 << "\n";
  manifest << net.spec.to_text();

  std::string blob;
  blob.append(kMagic, 4);
  put_u32(blob, kVersion);
  const std::string mtext = manifest.str();
  put_u32(blob, static_cast<std::uint32_t>(mtext.size()));
  blob += mtext;
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    put_payload(blob, net.weights[i]);
    put_payload(blob, net.biases[i]);
  }
  if (optimizer) {
    if (optimizer->first_moment.size() != net.weights.size() * 2 ||
        optimizer->second_moment.size() != net.weights.size() * 2) {
      throw ValueError("save_checkpoint: optimizer state does not cover every parameter");
    }
    for (std::size_t i = 0; i < optimizer->first_moment.size(); ++i) {
      put_payload(blob, optimizer->first_moment[i]);
      put_payload(blob, optimizer->second_moment[i]);
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string b = ss.str();

  if (b.size() < 8 || std::memcmp(b.data(), kMagic, 4) != 0) {
    throw DataError(path + ": bad magic, expected \"IBPC\"");
  }
  std::size_t off = 4;
  const std::uint32_t version = get_u32(b, off, path);
  if (version != kVersion) {
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version) +
                    " (this build reads version " + std::to_string(kVersion) + ")");
  }
  const std::uint32_t mlen = get_u32(b, off, path);
  if (off + mlen > b.size()) {
    throw DataError(path + ": manifest length " + std::to_string(mlen) +
                    " exceeds file size " + std::to_string(b.size()));
  }
  const std::string manifest = b.substr(off, mlen);
  off += mlen;

  Checkpoint ckpt;
  std::string spec_lines;
  std::string optimizer_kind = "none";
  std::int64_t optimizer_step = 0;
  int param_payloads = -1;
  std::istringstream ms(manifest);
  std::string line;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError(path + ": malformed manifest line '" + line + "'");
    }
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "format") {
      if (val != "ibp-checkpoint") throw DataError(path + ": unknown format '" + val + "'");
    } else if (key == "epoch") {
      ckpt.meta.epoch = std::stoi(val);
    } else if (key == "epsilon") {
      ckpt.meta.epsilon = std::stod(val);
    } else if (key == "kappa") {
      ckpt.meta.kappa = std::stod(val);
    } else if (key == "seed") {
      ckpt.meta.seed = std::stoull(val);
    } else if (key == "norm_mean") {
      ckpt.net.normalization.mean = parse_float_list(val);
    } else if (key == "norm_std") {
      ckpt.net.normalization.std_dev = parse_float_list(val);
    } else if (key == "optimizer") {
      optimizer_kind = val;
    } else if (key == "optimizer_step") {
      optimizer_step = std::stoll(val);
    } else if (key == "params") {
      param_payloads = std::stoi(val);
    } else if (key == "input" || key == "classes" || key == "layer") {
      spec_lines += line + "\n";
    } else {
      throw DataError(path + ": unknown manifest key '" + key + "'");
    }
  }
  if (param_payloads < 0) throw DataError(path + ": manifest is missing the params count");
  ckpt.net.spec = NetworkSpec::from_text(spec_lines);

  int expected_params = 0;
  for (const auto& l : ckpt.net.spec.layers) {
    if (l.parameterized()) expected_params += 2;
  }
  if (expected_params != param_payloads) {
    throw DataError(path + ": manifest declares " + std::to_string(param_payloads) +
                    " parameter payloads but the architecture needs " +
                    std::to_string(expected_params));
  }

  // expected parameter shapes from the spec
  std::vector<std::vector<int>> expected_shapes;
  for (std::size_t i = 0; i < ckpt.net.spec.layers.size(); ++i) {
    const LayerSpec& l = ckpt.net.spec.layers[i];
    if (l.kind == LayerKind::Conv) {
      expected_shapes.push_back({l.out_filters, l.in_filters, l.kernel_size, l.kernel_size});
      expected_shapes.push_back({l.out_filters});
    } else if (l.kind == LayerKind::Dense) {
      expected_shapes.push_back(
          {l.out_features, ckpt.net.spec.dense_in_features(static_cast<int>(i))});
      expected_shapes.push_back({l.out_features});
    }
  }

  for (int i = 0; i < param_payloads; ++i) {
    Tensor<float> t = get_payload(b, off, path);
    if (t.shape() != expected_shapes[static_cast<std::size_t>(i)]) {
      throw DataError(path + ": parameter " + std::to_string(i) + " has shape " +
                      shape_to_string(t.shape()) + ", architecture expects " +
                      shape_to_string(expected_shapes[static_cast<std::size_t>(i)]));
    }
    if (i % 2 == 0) {
      ckpt.net.weights.push_back(std::move(t));
    } else {
      ckpt.net.biases.push_back(std::move(t));
    }
  }

  if (optimizer_kind != "none") {
    OptimizerState opt;
    if (optimizer_kind == "adam") {
      opt.kind = OptimizerKind::Adam;
    } else if (optimizer_kind == "sgd") {
      opt.kind = OptimizerKind::Sgd;
    } else {
      throw DataError(path + ": unknown optimizer '" + optimizer_kind + "'");
    }
    opt.step = optimizer_step;
    for (int i = 0; i < param_payloads; ++i) {
      Tensor<float> m = get_payload(b, off, path);
      Tensor<float> v = get_payload(b, off, path);
      if (m.shape() != expected_shapes[static_cast<std::size_t>(i)] ||
          v.shape() != expected_shapes[static_cast<std::size_t>(i)]) {
        throw DataError(path + ": optimizer payload " + std::to_string(i) +
                        " does not match parameter shape");
      }
      opt.first_moment.push_back(std::move(m));
      opt.second_moment.push_back(std::move(v));
    }
    ckpt.optimizer = std::move(opt);
  }

  if (off != b.size()) {
    throw DataError(path + ": " + std::to_string(b.size() - off) +
                    " unexpected trailing bytes at offset " + std::to_string(off));
  }

  if (ckpt.net.normalization.mean.size() != ckpt.net.normalization.std_dev.size() ||
      (ckpt.net.normalization.enabled() &&
       static_cast<int>(ckpt.net.normalization.mean.size()) != ckpt.net.spec.in_channels)) {
    throw DataError(path + ": normalization stats do not match the input channel count");
  }
  return ckpt;
}

}  // namespace ibp
