#pragma once

#include <vector>

#include "lungquant/nn/tensor.hpp"
#include "lungquant/rng.hpp"

namespace lungquant::nn {

/// 3D convolution. Supported shapes: k=3 s=1 (same-padded), k=2 s=2
/// (downsampling, dims must be even), k=1 s=1.
class Conv3d {
public:
    Conv3d(int cin, int cout, int k, int stride);

    void init_he(Rng& rng);
    Tensor forward(const Tensor& in, bool retain);
    Tensor backward(const Tensor& gout);

    void zero_grad();
    void collect_params(const std::string& prefix, std::vector<ParamView>& out);

    int cin() const { return cin_; }
    int cout() const { return cout_; }

    std::vector<float> w; // [cout][cin][kz][ky][kx]
    std::vector<float> b; // [cout]
    std::vector<float> gw, gb;

private:
    int cin_, cout_, k_, stride_;
    Tensor cached_in_;
};

/// 3D transpose convolution, k=2 s=2 (doubles each spatial dim).
class ConvTranspose3d {
public:
    ConvTranspose3d(int cin, int cout);

    void init_he(Rng& rng);
    Tensor forward(const Tensor& in, bool retain);
    Tensor backward(const Tensor& gout);

    void zero_grad();
    void collect_params(const std::string& prefix, std::vector<ParamView>& out);

    std::vector<float> w; // [cin][cout][kz][ky][kx], k=2
    std::vector<float> b; // [cout]
    std::vector<float> gw, gb;

private:
    int cin_, cout_;
    Tensor cached_in_;
};

/// Instance normalization with learnable per-channel scale and shift.
class InstanceNorm3d {
public:
    explicit InstanceNorm3d(int channels);

    Tensor forward(const Tensor& in, bool retain);
    Tensor backward(const Tensor& gout);

    void zero_grad();
    void collect_params(const std::string& prefix, std::vector<ParamView>& out);

    std::vector<float> gamma, beta;
    std::vector<float> ggamma, gbeta;

private:
    int channels_;
    Tensor cached_xhat_;
    std::vector<float> cached_invstd_;
    static constexpr float kEps = 1e-5f;
};

/// ReLU (stateless apart from the backward mask).
class ReLU {
public:
    Tensor forward(const Tensor& in, bool retain);
    Tensor backward(const Tensor& gout);

private:
    Tensor cached_out_;
};

/// Per-voxel softmax over channels; returns probabilities.
Tensor softmax_channels(const Tensor& logits);
/// Gradient of a loss w.r.t. logits given probs and the loss gradient w.r.t. probs.
Tensor softmax_backward(const Tensor& probs, const Tensor& gprobs);

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& g, int ca, Tensor& ga, Tensor& gb);

/// Symmetric zero padding / cropping of the spatial dims.
Tensor pad_spatial(const Tensor& in, const int lo[3], const int hi[3]);
Tensor crop_spatial(const Tensor& in, const int lo[3], const int out_dims[3]);

/// ADAM optimizer over a fixed parameter list.
class Adam {
public:
    explicit Adam(double lr) : lr_(lr) {}

    void step(const std::vector<ParamView>& params);

    double lr() const { return lr_; }

private:
    double lr_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

} // namespace lungquant::nn
