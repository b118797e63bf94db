#include "ibp/network.hpp"

#include <sstream>

namespace ibp {

std::vector<std::vector<int>> NetworkSpec::layer_output_shapes() const {
  if (in_channels <= 0 || in_height <= 0 || in_width <= 0) {
    throw ShapeError("network: input shape must be positive, got " +
                     shape_to_string({in_channels, in_height, in_width}));
  }
  if (num_classes <= 0) throw ShapeError("network: num_classes must be positive");
  if (layers.empty()) throw ShapeError("network: layer list is empty");

  std::vector<std::vector<int>> shapes;
  std::vector<int> cur = {in_channels, in_height, in_width};
  bool flattened = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::Conv: {
        if (flattened) {
          throw ShapeError("network: conv layer " + std::to_string(i) + " after flatten");
        }
        if (l.in_filters <= 0 || l.out_filters <= 0 || l.kernel_size <= 0 || l.stride <= 0) {
          throw ShapeError("network: conv layer " + std::to_string(i) +
                           " has non-positive parameters");
        }
        if (l.in_filters != cur[0]) {
          throw ShapeError("network: conv layer " + std::to_string(i) + " expects " +
                           std::to_string(l.in_filters) + " channels, input has " +
                           std::to_string(cur[0]));
        }
        const int oh = (cur[1] - l.kernel_size) / l.stride + 1;
        const int ow = (cur[2] - l.kernel_size) / l.stride + 1;
        if (cur[1] < l.kernel_size || cur[2] < l.kernel_size || oh < 1 || ow < 1) {
          throw ShapeError("network: conv layer " + std::to_string(i) +
                           " produces non-positive output size from input " +
                           shape_to_string(cur));
        }
        cur = {l.out_filters, oh, ow};
        break;
      }
      case LayerKind::Dense: {
        if (!flattened) {
          if (cur.size() != 1) {
            throw ShapeError("network: dense layer " + std::to_string(i) +
                             " needs a flatten before it (input shape " + shape_to_string(cur) +
                             ")");
          }
        }
        if (l.out_features <= 0) {
          throw ShapeError("network: dense layer " + std::to_string(i) +
                           " has non-positive width");
        }
        cur = {l.out_features};
        break;
      }
      case LayerKind::Relu:
        break;
      case LayerKind::Flatten: {
        int features = 1;
        for (int d : cur) features *= d;
        cur = {features};
        flattened = true;
        break;
      }
    }
    shapes.push_back(cur);
  }
  if (cur.size() != 1 || cur[0] != num_classes) {
    throw ShapeError("network: final layer produces " + shape_to_string(cur) + ", expected [" +
                     std::to_string(num_classes) + "] logits");
  }
  return shapes;
}

int NetworkSpec::dense_in_features(int layer_index) const {
  auto shapes = layer_output_shapes();
  if (layer_index == 0) {
    return in_channels * in_height * in_width;
  }
  const auto& prev = shapes[static_cast<std::size_t>(layer_index - 1)];
  int features = 1;
  for (int d : prev) features *= d;
  return features;
}

std::string NetworkSpec::to_text() const {
  std::ostringstream os;
  os << "input=" << in_channels << "," << in_height << "," << in_width << "\n";
  os << "classes=" << num_classes << "\n";
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::Conv:
        os << "layer=conv," << l.in_filters << "," << l.out_filters << "," << l.kernel_size << ","
           << l.stride << "\n";
        break;
      case LayerKind::Dense:
        os << "layer=dense," << l.out_features << "\n";
        break;
      case LayerKind::Relu:
        os << "layer=relu\n";
        break;
      case LayerKind::Flatten:
        os << "layer=flatten\n";
        break;
    }
  }
  return os.str();
}

namespace {

std::vector<int> parse_ints(const std::string& s, const std::string& context) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw DataError("network spec: cannot parse integer '" + item + "' in " + context);
    }
  }
  return out;
}

}  // namespace

NetworkSpec NetworkSpec::from_text(const std::string& text) {
  NetworkSpec spec;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("network spec: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "input") {
      auto v = parse_ints(val, "input");
      if (v.size() != 3) throw DataError("network spec: input needs 3 dims, got '" + val + "'");
      spec.in_channels = v[0];
      spec.in_height = v[1];
      spec.in_width = v[2];
    } else if (key == "classes") {
      spec.num_classes = std::stoi(val);
    } else if (key == "layer") {
      if (val == "relu") {
        spec.layers.push_back(LayerSpec::relu());
      } else if (val == "flatten") {
        spec.layers.push_back(LayerSpec::flatten());
      } else if (val.rfind("conv,", 0) == 0) {
        auto v = parse_ints(val.substr(5), "conv layer");
        if (v.size() != 4) throw DataError("network spec: conv needs 4 parameters, got '" + val + "'");
        spec.layers.push_back(LayerSpec::conv(v[0], v[1], v[2], v[3]));
      } else if (val.rfind("dense,", 0) == 0) {
        auto v = parse_ints(val.substr(6), "dense layer");
        if (v.size() != 1) throw DataError("network spec: dense needs 1 parameter, got '" + val + "'");
        spec.layers.push_back(LayerSpec::dense(v[0]));
      } else {
        throw DataError("network spec: unknown layer '" + val + "'");
      }
    } else {
      throw DataError("network spec: unknown key '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

NetworkSpec preset(const std::string& name, std::array<int, 3> input_shape, int num_classes) {
  const int c = input_shape[0];
  NetworkSpec spec;
  spec.in_channels = c;
  spec.in_height = input_shape[1];
  spec.in_width = input_shape[2];
  spec.num_classes = num_classes;
  auto& L = spec.layers;
  if (name == "small") {
    L = {LayerSpec::conv(c, 16, 4, 2), LayerSpec::relu(),
         LayerSpec::conv(16, 32, 4, 1), LayerSpec::relu(),
         LayerSpec::flatten(),
         LayerSpec::dense(100), LayerSpec::relu(),
         LayerSpec::dense(num_classes)};
  } else if (name == "medium") {
    L = {LayerSpec::conv(c, 32, 3, 1), LayerSpec::relu(),
         LayerSpec::conv(32, 32, 4, 2), LayerSpec::relu(),
         LayerSpec::conv(32, 64, 3, 1), LayerSpec::relu(),
         LayerSpec::conv(64, 64, 4, 2), LayerSpec::relu(),
         LayerSpec::flatten(),
         LayerSpec::dense(512), LayerSpec::relu(),
         LayerSpec::dense(512), LayerSpec::relu(),
         LayerSpec::dense(num_classes)};
  } else if (name == "large") {
    L = {LayerSpec::conv(c, 64, 3, 1), LayerSpec::relu(),
         LayerSpec::conv(64, 64, 3, 1), LayerSpec::relu(),
         LayerSpec::conv(64, 128, 3, 2), LayerSpec::relu(),
         LayerSpec::conv(128, 128, 3, 1), LayerSpec::relu(),
         LayerSpec::conv(128, 128, 3, 1), LayerSpec::relu(),
         LayerSpec::flatten(),
         LayerSpec::dense(200), LayerSpec::relu(),
         LayerSpec::dense(num_classes)};
  } else {
    throw ValueError("preset: unknown architecture '" + name +
                     "' (valid names: small, medium, large)");
  }
  spec.validate();
  return spec;
}

}  // namespace ibp
