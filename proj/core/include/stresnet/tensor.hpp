#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "stresnet/errors.hpp"

namespace stresnet {

/// Dense rank-3 array of samples in row-major (row, column, channel) order.
/// Carries pixel blocks, feature maps and gradients. Samples are doubles;
/// every operation in this header keeps them finite given finite inputs.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor. Channels may be zero (degenerate but legal,
    /// needed as the neutral element of channel concatenation).
    Tensor(int height, int width, int channels)
        : height_(height), width_(width), channels_(channels) {
        if (height < 1 || width < 1 || channels < 0)
            throw PreconditionError("Tensor: dimensions must be positive (channels may be 0)");
        data_.assign(static_cast<std::size_t>(height) * width * channels, 0.0);
    }

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }

    double& at(int r, int c, int ch) {
        return data_[(static_cast<std::size_t>(r) * width_ + c) * channels_ + ch];
    }
    double at(int r, int c, int ch) const {
        return data_[(static_cast<std::size_t>(r) * width_ + c) * channels_ + ch];
    }

    double* row_ptr(int r, int c) { return data_.data() + (static_cast<std::size_t>(r) * width_ + c) * channels_; }
    const double* row_ptr(int r, int c) const {
        return data_.data() + (static_cast<std::size_t>(r) * width_ + c) * channels_;
    }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    bool same_shape(const Tensor& o) const {
        return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
    }

private:
    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

/// One convolution layer's parameters. Weights are stored in canonical
/// [out][in][row][col] order (the serialization order); bias has one entry
/// per output channel. Kernel sides must be odd so that "same" padding is
/// symmetric.
struct ConvKernel {
    int out_channels = 0;
    int in_channels = 0;
    int kernel_height = 0;
    int kernel_width = 0;
    std::vector<double> weights;
    std::vector<double> bias;

    ConvKernel() = default;
    ConvKernel(int out_c, int in_c, int kh, int kw)
        : out_channels(out_c), in_channels(in_c), kernel_height(kh), kernel_width(kw) {
        if (out_c < 1 || in_c < 1 || kh < 1 || kw < 1 || kh % 2 == 0 || kw % 2 == 0)
            throw PreconditionError("ConvKernel: channel counts must be positive and kernel sides odd");
        weights.assign(static_cast<std::size_t>(out_c) * in_c * kh * kw, 0.0);
        bias.assign(static_cast<std::size_t>(out_c), 0.0);
    }

    double& weight_at(int oc, int ic, int kr, int kc) {
        return weights[((static_cast<std::size_t>(oc) * in_channels + ic) * kernel_height + kr) * kernel_width + kc];
    }
    double weight_at(int oc, int ic, int kr, int kc) const {
        return weights[((static_cast<std::size_t>(oc) * in_channels + ic) * kernel_height + kr) * kernel_width + kc];
    }

    /// Parameter count excluding bias, the Table-style reporting convention.
    std::size_t weight_count() const {
        return static_cast<std::size_t>(out_channels) * in_channels * kernel_height * kernel_width;
    }
};

/// Gradients of a convolution with respect to its input and parameters.
struct ConvGradients {
    Tensor input_grad;
    ConvKernel kernel_grad; // weights = dL/dW, bias = dL/db
};

/// Zero-padded multi-channel 2D cross-correlation; output keeps the input's
/// spatial size and has kernel.out_channels channels. Padding is
/// (kh-1)/2 rows and (kw-1)/2 columns of zeros on each side.
Tensor conv2d_same(const Tensor& input, const ConvKernel& kernel);

/// Elementwise max(0, x).
Tensor relu(const Tensor& input);

/// Elementwise sum; shapes must match.
Tensor add(const Tensor& a, const Tensor& b);

/// Stack b's channels after a's; spatial sizes must match.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Split a tensor into its first `first_channels` channels and the rest.
/// Inverse of concat_channels; used by the backward pass through the fusion layer.
std::pair<Tensor, Tensor> split_channels(const Tensor& t, int first_channels);

/// Exact partial derivatives of sum(upstream .* conv2d_same(input, kernel))
/// with respect to the input, the weights and the bias.
ConvGradients conv2d_same_backward(const Tensor& input, const ConvKernel& kernel, const Tensor& upstream);

/// Backward of relu given the post-activation values: passes upstream where
/// the activation is positive, zero elsewhere.
Tensor relu_backward(const Tensor& post_activation, const Tensor& upstream);

} // namespace stresnet
