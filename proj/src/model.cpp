#include "segrob/model.hpp"

#include "segrob/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace segrob {

using nlohmann::json;

void ArchSpec::validate() const {
  check(!layers.empty(), "ArchSpec: no layers");
  check(num_classes >= 2, "ArchSpec: need at least 2 classes");
  check(backbone_layers >= 0 && backbone_layers <= int(layers.size()),
        "ArchSpec: backbone prefix out of range");
  int c = in_channels;
  for (const auto& l : layers) {
    check(l.kernel == 1 || l.kernel == 3, "ArchSpec: kernel must be 1 or 3");
    check(l.in_channels == c, "ArchSpec: layer widths do not compose");
    c = l.out_channels;
  }
  check(c == num_classes, "ArchSpec: final width must equal num_classes");
}

ArchSpec ArchSpec::pixel_linear(int num_classes, int in_channels) {
  ArchSpec s;
  s.tag = "pixel-linear";
  s.in_channels = in_channels;
  s.num_classes = num_classes;
  s.backbone_layers = 0;
  s.layers = {{1, in_channels, num_classes, Nonlinearity::None}};
  s.validate();
  return s;
}

ArchSpec ArchSpec::small_conv(int num_classes, int in_channels) {
  ArchSpec s;
  s.tag = "small-conv";
  s.in_channels = in_channels;
  s.num_classes = num_classes;
  s.backbone_layers = 2;
  s.layers = {{3, in_channels, 8, Nonlinearity::Relu},
              {3, 8, 12, Nonlinearity::Relu},
              {3, 12, 16, Nonlinearity::Relu},
              {1, 16, num_classes, Nonlinearity::None}};
  s.validate();
  return s;
}

ArchSpec ArchSpec::by_tag(const std::string& tag, int num_classes, int in_channels) {
  if (tag == "pixel-linear") return pixel_linear(num_classes, in_channels);
  if (tag == "small-conv") return small_conv(num_classes, in_channels);
  throw std::invalid_argument("unknown architecture tag: " + tag);
}

ModelParams init_params(const ArchSpec& spec, std::uint64_t seed, InitSource source,
                        const BackboneCheckpoint* backbone) {
  spec.validate();
  ModelParams p;
  p.spec = spec;
  p.seed = seed;
  Rng rng(derive_seed(seed, "model-init"));
  for (const auto& l : spec.layers) {
    ConvLayer layer;
    const int fan_in = l.kernel * l.kernel * l.in_channels;
    const double scale = 1.0 / std::sqrt(double(fan_in));
    layer.weight.resize(fan_in, l.out_channels);
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
      layer.weight.data()[i] = rng.uniform(-scale, scale);
    layer.bias = Vector::Zero(l.out_channels);
    p.layers.push_back(std::move(layer));
  }
  if (source == InitSource::PretrainedBackbone) {
    check(backbone != nullptr, "init_params: pretrained-backbone init needs a checkpoint");
    check(int(backbone->layers.size()) == spec.backbone_layers,
          "init_params: backbone layer count mismatch");
    for (int i = 0; i < spec.backbone_layers; ++i) {
      const auto& src = backbone->layer_specs[size_t(i)];
      const auto& dst = spec.layers[size_t(i)];
      check(src.kernel == dst.kernel && src.in_channels == dst.in_channels &&
                src.out_channels == dst.out_channels,
            "init_params: backbone layer shape mismatch");
      p.layers[size_t(i)] = backbone->layers[size_t(i)];
    }
  }
  return p;
}

Matrix gather_patches(const Matrix& input, int height, int width, int kernel) {
  if (kernel == 1) return input;
  const int c = int(input.cols());
  Matrix patches = Matrix::Zero(input.rows(), Eigen::Index(kernel) * kernel * c);
  int offset_idx = 0;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx, ++offset_idx) {
      const int len = width - std::abs(dx);
      const int out_x0 = std::max(0, -dx);
      const int in_x0 = std::max(0, dx);
      for (int y = 0; y < height; ++y) {
        const int yin = y + dy;
        if (yin < 0 || yin >= height) continue;
        patches.block(Eigen::Index(y) * width + out_x0, Eigen::Index(offset_idx) * c, len, c) =
            input.block(Eigen::Index(yin) * width + in_x0, 0, len, c);
      }
    }
  }
  return patches;
}

void scatter_patches(const Matrix& patch_grad, int height, int width, int kernel, Matrix& input_grad) {
  if (kernel == 1) {
    input_grad += patch_grad;
    return;
  }
  const int c = int(input_grad.cols());
  int offset_idx = 0;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx, ++offset_idx) {
      const int len = width - std::abs(dx);
      const int out_x0 = std::max(0, -dx);
      const int in_x0 = std::max(0, dx);
      for (int y = 0; y < height; ++y) {
        const int yin = y + dy;
        if (yin < 0 || yin >= height) continue;
        input_grad.block(Eigen::Index(yin) * width + in_x0, 0, len, c) +=
            patch_grad.block(Eigen::Index(y) * width + out_x0, Eigen::Index(offset_idx) * c, len, c);
      }
    }
  }
}

Matrix forward_layers(const std::vector<ConvLayerSpec>& specs, const std::vector<ConvLayer>& layers,
                      const Matrix& input, int height, int width, ForwardTape* tape) {
  Matrix act = input;
  if (tape) {
    tape->inputs.clear();
    tape->preactivations.clear();
  }
  for (size_t i = 0; i < specs.size(); ++i) {
    if (tape) tape->inputs.push_back(act);
    Matrix patches = gather_patches(act, height, width, specs[i].kernel);
    Matrix pre = patches * layers[i].weight;
    pre.rowwise() += layers[i].bias.transpose();
    if (tape) tape->preactivations.push_back(pre);
    if (specs[i].activation == Nonlinearity::Relu)
      act = pre.cwiseMax(0.0);
    else
      act = std::move(pre);
  }
  return act;
}

Matrix backward_layers(const std::vector<ConvLayerSpec>& specs, const std::vector<ConvLayer>& layers,
                       const ForwardTape& tape, const Matrix& output_grad, int height, int width,
                       std::vector<ConvLayer>* param_grads) {
  Matrix grad = output_grad;
  for (int i = int(specs.size()) - 1; i >= 0; --i) {
    const auto& spec = specs[size_t(i)];
    if (spec.activation == Nonlinearity::Relu) {
      // subgradient at exactly 0 is 0
      grad = (tape.preactivations[size_t(i)].array() > 0.0).select(grad, 0.0);
    }
    if (param_grads) {
      Matrix patches = gather_patches(tape.inputs[size_t(i)], height, width, spec.kernel);
      (*param_grads)[size_t(i)].weight = patches.transpose() * grad;
      (*param_grads)[size_t(i)].bias = grad.colwise().sum();
    }
    Matrix patch_grad = grad * layers[size_t(i)].weight.transpose();
    Matrix in_grad = Matrix::Zero(tape.inputs[size_t(i)].rows(), tape.inputs[size_t(i)].cols());
    scatter_patches(patch_grad, height, width, spec.kernel, in_grad);
    grad = std::move(in_grad);
  }
  return grad;
}

LogitMap forward(const ModelParams& params, const ImageTensor& image) {
  check(image.channels == params.spec.in_channels, "forward: channel count mismatch");
  Matrix out = forward_layers(params.spec.layers, params.layers, normalize_input(image.data),
                              image.height, image.width);
  return LogitMap(image.height, image.width, params.spec.num_classes, std::move(out));
}

Matrix input_gradient(const ModelParams& params, const ImageTensor& image,
                      const LogitMap& logit_cotangent) {
  check(image.channels == params.spec.in_channels, "input_gradient: channel count mismatch");
  check(logit_cotangent.height == image.height && logit_cotangent.width == image.width &&
            logit_cotangent.classes == params.spec.num_classes,
        "input_gradient: cotangent shape mismatch");
  ForwardTape tape;
  forward_layers(params.spec.layers, params.layers, normalize_input(image.data), image.height,
                 image.width, &tape);
  return kInputScale * backward_layers(params.spec.layers, params.layers, tape,
                                       logit_cotangent.data, image.height, image.width);
}

ModelParams param_gradient(const ModelParams& params, const ImageTensor& image,
                           const LogitMap& logit_cotangent) {
  check(image.channels == params.spec.in_channels, "param_gradient: channel count mismatch");
  check(logit_cotangent.height == image.height && logit_cotangent.width == image.width &&
            logit_cotangent.classes == params.spec.num_classes,
        "param_gradient: cotangent shape mismatch");
  ForwardTape tape;
  forward_layers(params.spec.layers, params.layers, normalize_input(image.data), image.height,
                 image.width, &tape);
  ModelParams grads;
  grads.spec = params.spec;
  grads.seed = params.seed;
  grads.layers.resize(params.layers.size());
  backward_layers(params.spec.layers, params.layers, tape, logit_cotangent.data, image.height,
                  image.width, &grads.layers);
  return grads;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].weight != b.layers[i].weight) return false;
    if (a.layers[i].bias != b.layers[i].bias) return false;
  }
  return true;
}

namespace {

json layer_spec_to_json(const ConvLayerSpec& l) {
  return json{{"kernel", l.kernel},
              {"in", l.in_channels},
              {"out", l.out_channels},
              {"activation", l.activation == Nonlinearity::Relu ? "relu" : "none"}};
}

ConvLayerSpec layer_spec_from_json(const json& j) {
  ConvLayerSpec l;
  l.kernel = j.at("kernel").get<int>();
  l.in_channels = j.at("in").get<int>();
  l.out_channels = j.at("out").get<int>();
  l.activation = j.at("activation").get<std::string>() == "relu" ? Nonlinearity::Relu
                                                                 : Nonlinearity::None;
  return l;
}

json weights_to_json(const ConvLayer& layer) {
  std::vector<double> w(layer.weight.data(), layer.weight.data() + layer.weight.size());
  std::vector<double> b(layer.bias.data(), layer.bias.data() + layer.bias.size());
  return json{{"weight", w}, {"bias", b}};
}

ConvLayer weights_from_json(const json& j, const ConvLayerSpec& spec) {
  ConvLayer layer;
  const auto w = j.at("weight").get<std::vector<double>>();
  const auto b = j.at("bias").get<std::vector<double>>();
  const int fan_in = spec.kernel * spec.kernel * spec.in_channels;
  check(int(w.size()) == fan_in * spec.out_channels, "checkpoint: weight size mismatch");
  check(int(b.size()) == spec.out_channels, "checkpoint: bias size mismatch");
  layer.weight = Eigen::Map<const Matrix>(w.data(), fan_in, spec.out_channels);
  layer.bias = Eigen::Map<const Vector>(b.data(), spec.out_channels);
  return layer;
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return json::parse(in);
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
  json spec{{"tag", params.spec.tag},
            {"in_channels", params.spec.in_channels},
            {"num_classes", params.spec.num_classes},
            {"backbone_layers", params.spec.backbone_layers},
            {"layers", json::array()}};
  for (const auto& l : params.spec.layers) spec["layers"].push_back(layer_spec_to_json(l));
  json j{{"format", "segrob-model"}, {"version", 1}, {"seed", params.seed}, {"spec", spec},
         {"weights", json::array()}};
  for (const auto& l : params.layers) j["weights"].push_back(weights_to_json(l));
  write_json_file(j, path);
}

ModelParams load_checkpoint(const std::string& path) {
  const json j = read_json_file(path);
  check(j.at("format") == "segrob-model" && j.at("version") == 1, "checkpoint: unsupported format");
  ModelParams p;
  const json& spec = j.at("spec");
  p.spec.tag = spec.at("tag").get<std::string>();
  p.spec.in_channels = spec.at("in_channels").get<int>();
  p.spec.num_classes = spec.at("num_classes").get<int>();
  p.spec.backbone_layers = spec.at("backbone_layers").get<int>();
  for (const auto& l : spec.at("layers")) p.spec.layers.push_back(layer_spec_from_json(l));
  p.spec.validate();
  p.seed = j.at("seed").get<std::uint64_t>();
  for (size_t i = 0; i < p.spec.layers.size(); ++i)
    p.layers.push_back(weights_from_json(j.at("weights").at(i), p.spec.layers[i]));
  return p;
}

void save_backbone(const BackboneCheckpoint& ckpt, const std::string& path) {
  json j{{"format", "segrob-backbone"},
         {"version", 1},
         {"provenance", ckpt.provenance},
         {"pretrain_epsilon", ckpt.pretrain_epsilon},
         {"layer_specs", json::array()},
         {"weights", json::array()}};
  for (const auto& l : ckpt.layer_specs) j["layer_specs"].push_back(layer_spec_to_json(l));
  for (const auto& l : ckpt.layers) j["weights"].push_back(weights_to_json(l));
  write_json_file(j, path);
}

BackboneCheckpoint load_backbone(const std::string& path) {
  const json j = read_json_file(path);
  check(j.at("format") == "segrob-backbone" && j.at("version") == 1,
        "backbone checkpoint: unsupported format");
  BackboneCheckpoint c;
  c.provenance = j.at("provenance").get<std::string>();
  c.pretrain_epsilon = j.at("pretrain_epsilon").get<double>();
  for (const auto& l : j.at("layer_specs")) c.layer_specs.push_back(layer_spec_from_json(l));
  for (size_t i = 0; i < c.layer_specs.size(); ++i)
    c.layers.push_back(weights_from_json(j.at("weights").at(i), c.layer_specs[i]));
  return c;
}

}  // namespace segrob
