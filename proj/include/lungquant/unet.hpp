#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lungquant/nn/layers.hpp"
#include "lungquant/nn/tensor.hpp"
#include "lungquant/preprocess.hpp"
#include "lungquant/types.hpp"

namespace lungquant::unet {

/// Architecture hyperparameters. Channels double at every level starting
/// from base_channels. Inputs whose dims are not divisible by 2^(depth-1)
/// are zero-padded symmetrically before the encoder and cropped after the
/// decoder, so any input size is accepted.
struct UNetConfig {
    int depth = 6;
    int convs_per_block = 3;
    int base_channels = 32;
    int in_channels = 1;
    int out_classes = 2;
    Dims3 input_dims{200, 150, 100};

    void validate() const;
    int channels_at(int level) const { return base_channels << level; }
};

/// Toy preset used by the CPU-scale tests.
inline UNetConfig toy_config(Dims3 input_dims, int depth = 3, int base = 8) {
    UNetConfig cfg;
    cfg.depth = depth;
    cfg.base_channels = base;
    cfg.input_dims = input_dims;
    return cfg;
}

namespace detail {

struct ConvBlock {
    nn::Conv3d conv;
    nn::InstanceNorm3d norm;
    nn::ReLU relu;

    ConvBlock(int cin, int cout, int k, int s) : conv(cin, cout, k, s), norm(cout) {}
    nn::Tensor forward(const nn::Tensor& t, bool retain);
    nn::Tensor backward(const nn::Tensor& g);
    void init(Rng& rng) { conv.init_he(rng); }
    void zero_grad() { conv.zero_grad(); norm.zero_grad(); }
    void collect(const std::string& prefix, std::vector<nn::ParamView>& out);
};

struct DeconvBlock {
    nn::ConvTranspose3d deconv;
    nn::InstanceNorm3d norm;
    nn::ReLU relu;

    DeconvBlock(int cin, int cout) : deconv(cin, cout), norm(cout) {}
    nn::Tensor forward(const nn::Tensor& t, bool retain);
    nn::Tensor backward(const nn::Tensor& g);
    void init(Rng& rng) { deconv.init_he(rng); }
    void zero_grad() { deconv.zero_grad(); norm.zero_grad(); }
    void collect(const std::string& prefix, std::vector<nn::ParamView>& out);
};

/// Channel-preserving stack of conv blocks whose input is added to its
/// output. With zeroed weights and biases the stage is an exact identity.
struct ResidualStage {
    std::vector<ConvBlock> convs;

    ResidualStage(int channels, int n_convs);
    nn::Tensor forward(const nn::Tensor& t, bool retain);
    nn::Tensor backward(const nn::Tensor& g);
    void init(Rng& rng);
    void zero_grad();
    void collect(const std::string& prefix, std::vector<nn::ParamView>& out);
};

} // namespace detail

/// The segmentation network. Encoder levels: a strided-conv transition
/// followed by a residual stage of convs_per_block convolutions (conv,
/// instance norm, ReLU each). Decoder levels mirror them with the strided
/// convolution replaced by a transpose convolution, a skip-fusion
/// convolution after concatenation, and a residual stage one convolution
/// shorter. A 1x1x1 head plus per-voxel softmax produces class probabilities.
class UNetModel {
public:
    explicit UNetModel(UNetConfig cfg, std::uint64_t init_seed = 42);

    const UNetConfig& config() const { return cfg_; }

    /// Input [in_channels, z, y, x] with (x,y,z) == config.input_dims;
    /// returns per-voxel class probabilities of the same spatial shape.
    /// retain=true keeps the activations needed by backward().
    nn::Tensor forward(const nn::Tensor& input, bool retain = false);

    /// Backpropagates a gradient w.r.t. the probability output; parameter
    /// gradients accumulate into the layers.
    void backward(const nn::Tensor& gprobs);

    /// Convenience wrappers over forward for normalized volumes in [0,1].
    Grid3<float> predict_foreground(const Grid3<float>& normalized);
    BinaryMask3D predict_mask(const CtVolume& normalized);

    std::vector<nn::ParamView> params();
    void zero_grad();

private:
    UNetConfig cfg_;
    detail::ConvBlock stem_;
    std::vector<detail::ConvBlock> down_;     // level l -> l+1
    std::vector<detail::ResidualStage> enc_;  // per level
    std::vector<detail::DeconvBlock> up_;     // level l+1 -> l
    std::vector<detail::ConvBlock> fuse_;     // after skip concat at level l
    std::vector<detail::ResidualStage> dec_;  // per level
    nn::Conv3d head_;

    int pad_lo_[3] = {0, 0, 0}, pad_hi_[3] = {0, 0, 0};
    nn::Tensor probs_cache_;
};

/// Sidecar content stored with every checkpoint.
struct CheckpointInfo {
    UNetConfig config;
    preprocess::HuWindow window;
    std::map<std::string, double> metrics;
    std::map<std::string, std::string> notes;
};

/// Writes the weights blob at `path` and a JSON sidecar at `path` + ".json".
void save_checkpoint(UNetModel& model, const CheckpointInfo& info, const std::string& path);

struct LoadedCheckpoint {
    std::unique_ptr<UNetModel> model;
    CheckpointInfo info;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Metrics and losses. The networks are two-class, so the soft losses are
// expressed on the foreground probability field with p_background = 1 - p.

/// 2|A^B| / (|A|+|B|); 1.0 when both masks are empty.
double dice_metric(const BinaryMask3D& m_true, const BinaryMask3D& m_pred);

/// Per-class average voxel counts over a training set and the derived
/// weights w_j = w0 / f_j with w0 the mean of the f_j.
struct ClassWeights {
    double f_background = 0.0;
    double f_foreground = 0.0;
    double w0 = 0.0;
    double w_background = 0.0;
    double w_foreground = 0.0;
};
ClassWeights compute_class_weights(const std::vector<const BinaryMask3D*>& masks);
ClassWeights compute_class_weights(const std::vector<BinaryMask3D>& masks);

struct LossValueGrad {
    double value = 0.0;
    Grid3<float> grad; // d(loss)/d(p_foreground)
};

/// 1 - soft Dice on the foreground field.
double dice_loss(const Grid3<float>& p_fg, const BinaryMask3D& m_true);
LossValueGrad dice_loss_grad(const Grid3<float>& p_fg, const BinaryMask3D& m_true);

/// Mean over voxels of -w_c(x) * log p_c(x), probabilities floored at 1e-7.
double weighted_cross_entropy(const Grid3<float>& p_fg, const BinaryMask3D& m_true,
                              const ClassWeights& weights);
LossValueGrad weighted_cross_entropy_grad(const Grid3<float>& p_fg, const BinaryMask3D& m_true,
                                          const ClassWeights& weights);

/// dice_loss + weighted_cross_entropy (the lesion-network objective).
double combined_loss(const Grid3<float>& p_fg, const BinaryMask3D& m_true,
                     const ClassWeights& weights);
LossValueGrad combined_loss_grad(const Grid3<float>& p_fg, const BinaryMask3D& m_true,
                                 const ClassWeights& weights);

} // namespace lungquant::unet
