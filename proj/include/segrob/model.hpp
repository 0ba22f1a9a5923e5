#pragma once

#include "segrob/types.hpp"

#include <string>
#include <vector>

namespace segrob {

enum class Nonlinearity { None, Relu };

/// Pixels are centered to [-1, 1] before the first convolution; the input
/// gradient of the model ops accounts for the scaling.
constexpr double kInputShift = 0.5;
constexpr double kInputScale = 2.0;

inline Matrix normalize_input(const Matrix& pixels) {
  return kInputScale * (pixels.array() - kInputShift).matrix();
}

/// One convolution layer with same-padding zero fill. Weights are stored as a
/// (k*k*c_in) x c_out matrix whose row index is offset_index*c_in + in_channel,
/// offsets enumerated row-major over the kernel window. A 1x1 layer has a
/// single centered offset.
struct ConvLayerSpec {
  int kernel = 1;  // 1 or 3
  int in_channels = 0;
  int out_channels = 0;
  Nonlinearity activation = Nonlinearity::None;
};

struct ArchSpec {
  std::string tag;                   // "pixel-linear" | "small-conv"
  int in_channels = 3;
  int num_classes = 0;               // K
  int backbone_layers = 0;           // prefix length; the rest is the decoder
  std::vector<ConvLayerSpec> layers;

  void validate() const;
  static ArchSpec pixel_linear(int num_classes, int in_channels = 3);
  static ArchSpec small_conv(int num_classes, int in_channels = 3);
  static ArchSpec by_tag(const std::string& tag, int num_classes, int in_channels = 3);
};

struct ConvLayer {
  Matrix weight;  // (k*k*c_in) x c_out
  Vector bias;    // c_out
};

struct ModelParams {
  ArchSpec spec;
  std::uint64_t seed = 0;
  std::vector<ConvLayer> layers;

  int num_classes() const { return spec.num_classes; }
};

enum class InitSource { Random, PretrainedBackbone };

/// Prefix weights reusable as initialization of a segmentation model's backbone.
struct BackboneCheckpoint {
  std::string provenance;  // "clean-pretrained" | "adv-pretrained"
  double pretrain_epsilon = 0.0;
  std::vector<ConvLayerSpec> layer_specs;
  std::vector<ConvLayer> layers;
};

ModelParams init_params(const ArchSpec& spec, std::uint64_t seed,
                        InitSource source = InitSource::Random,
                        const BackboneCheckpoint* backbone = nullptr);

LogitMap forward(const ModelParams& params, const ImageTensor& image);

/// Gradient of <cotangent, f(x)> w.r.t. the input pixels; exact reverse mode.
Matrix input_gradient(const ModelParams& params, const ImageTensor& image,
                      const LogitMap& logit_cotangent);

/// Gradients of <cotangent, f(x)> w.r.t. every weight and bias, in layer order.
ModelParams param_gradient(const ModelParams& params, const ImageTensor& image,
                           const LogitMap& logit_cotangent);

bool params_equal(const ModelParams& a, const ModelParams& b);

// checkpoint container, JSON, bit-exact round trip
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);
void save_backbone(const BackboneCheckpoint& ckpt, const std::string& path);
BackboneCheckpoint load_backbone(const std::string& path);

// --- layer-level pieces, shared by the segmentation net and the patch
//     classifier used for robust backbone pretraining ---

/// im2col patch matrix: (H*W) x (k*k*c_in), zero fill outside the canvas.
Matrix gather_patches(const Matrix& input, int height, int width, int kernel);

/// Scatter-add transpose of gather_patches.
void scatter_patches(const Matrix& patch_grad, int height, int width, int kernel, Matrix& input_grad);

struct ForwardTape {
  std::vector<Matrix> inputs;           // activation entering each layer
  std::vector<Matrix> preactivations;   // conv output before the nonlinearity
};

Matrix forward_layers(const std::vector<ConvLayerSpec>& specs, const std::vector<ConvLayer>& layers,
                      const Matrix& input, int height, int width, ForwardTape* tape = nullptr);

/// Backward through a layer stack. Returns the input gradient; when
/// param_grads is non-null, accumulates weight/bias gradients there.
Matrix backward_layers(const std::vector<ConvLayerSpec>& specs, const std::vector<ConvLayer>& layers,
                       const ForwardTape& tape, const Matrix& output_grad, int height, int width,
                       std::vector<ConvLayer>* param_grads = nullptr);

}  // namespace segrob
