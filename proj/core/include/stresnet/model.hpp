#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "stresnet/tensor.hpp"

namespace stresnet {

#ifdef STRESNET_RELU_AFTER_CONV5
inline constexpr bool kReluAfterLastConv = true;
#else
inline constexpr bool kReluAfterLastConv = false;
#endif

/// The five convolution layers of the residue filter plus the QP the model
/// was trained for. conv1 (5x5) reads the current block, conv2 (3x3) the
/// co-located reference block, conv3 fuses the two 32-channel branches,
/// conv4/conv5 refine down to the single-channel residue that is added back
/// onto the current block.
struct StresNetWeights {
    ConvKernel conv1{32, 1, 5, 5};
    ConvKernel conv2{32, 1, 3, 3};
    ConvKernel conv3{16, 64, 3, 3};
    ConvKernel conv4{8, 16, 3, 3};
    ConvKernel conv5{1, 8, 1, 1};
    int qp = 0;

    /// Weight count excluding biases: 800 + 288 + 9216 + 1152 + 8 = 11464.
    std::size_t weight_count() const;
    /// All trainable parameters including the 89 biases: 11553.
    std::size_t param_count() const;

    template <typename F>
    void for_each_layer(F&& fn) {
        fn(conv1); fn(conv2); fn(conv3); fn(conv4); fn(conv5);
    }
    template <typename F>
    void for_each_layer(F&& fn) const {
        fn(conv1); fn(conv2); fn(conv3); fn(conv4); fn(conv5);
    }
};

/// Pointers to every trainable parameter in canonical order (per layer:
/// weights then bias, layers conv1..conv5). The order is the serialization
/// order and the alignment contract between weights, gradients and
/// optimizer moments.
std::vector<double*> param_ptrs(StresNetWeights& w);
std::vector<const double*> param_ptrs(const StresNetWeights& w);

/// Runs the filter on one single-channel block pair in the normalized
/// [0,1] pixel domain. Output has the same shape as `current`.
Tensor forward(const StresNetWeights& weights, const Tensor& current, const Tensor& colocated);

/// Forward pass that also returns the post-activation feature maps
/// (32, 32, 16 and 8 channels in order), which the trainer's backward pass
/// consumes.
struct ForwardTrace {
    Tensor f1;     // relu(conv1(current))
    Tensor f2;     // relu(conv2(colocated))
    Tensor fused;  // relu(conv3(concat(f1, f2)))
    Tensor f4;     // relu(conv4(fused))
    Tensor output; // current + conv5(f4)
};
ForwardTrace forward_with_intermediates(const StresNetWeights& weights, const Tensor& current,
                                        const Tensor& colocated);

/// Gaussian(0, 0.001) weights from a deterministic generator; biases zero.
StresNetWeights init_weights(int qp, std::uint64_t seed);

/// Model file: magic "STRN", version u16 LE = 1, qp i16 LE, then per layer
/// conv1..conv5 the weights as f32 LE in [out][in][row][col] order followed
/// by the biases as f32 LE in channel order.
void save_model(const StresNetWeights& weights, const std::filesystem::path& destination);
StresNetWeights load_model(const std::filesystem::path& source);

/// Byte <-> normalized pixel domain. normalize_byte(b) = b / 255;
/// denormalize_sample scales back, rounds half away from zero and clamps
/// to [0,255], which inverts normalize_byte exactly for all 256 values.
inline double normalize_byte(std::uint8_t b) { return static_cast<double>(b) / 255.0; }
std::uint8_t denormalize_sample(double v);

} // namespace stresnet
