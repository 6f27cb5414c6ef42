#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "stresnet/errors.hpp"
#include "stresnet/tensor.hpp"

namespace stresnet {

/// Side of a training block. Adjacent extraction windows overlap by
/// 10 pixels at the default stride (38 - 10 = 28).
inline constexpr int kSampleBlockSize = 38;
inline constexpr int kDefaultExtractStride = 28;

/// Planar 8-bit luma frames plus a per-frame index of the closest reference
/// frame (-1 = none). reference_index[i] < i always; frame 0 has none.
struct FrameSequence {
    int width = 0;
    int height = 0;
    std::vector<std::vector<std::uint8_t>> frames;
    std::vector<int> reference_index;

    std::size_t frame_count() const { return frames.size(); }
    std::uint8_t sample(int frame, int r, int c) const {
        return frames[frame][static_cast<std::size_t>(r) * width + c];
    }
    /// Checks dimension/reference consistency; throws PreconditionError.
    void validate() const;
};

/// One (colocated, current, target) record: three co-sited 38x38 luma blocks
/// normalized to [0,1] and kept in file precision (f32).
struct TrainingSample {
    std::vector<float> colocated;
    std::vector<float> current;
    std::vector<float> target;
};

/// Shuffled, ready-to-train pack of samples plus the header fields of the
/// store file (count, block size, qp tag, shuffle seed).
struct SampleStore {
    std::uint16_t block_size = kSampleBlockSize;
    std::int16_t qp = 0;
    std::uint64_t shuffle_seed = 0;
    std::vector<TrainingSample> samples;
};

/// Walks every frame i >= 1 that has a reference and emits one sample per
/// (row, col) offset on the stride grid where a full 38x38 block fits.
/// colocated comes from the degraded reference frame, current from the
/// degraded frame i, target from the pristine frame i. Emission order is
/// frame-major then row-major. Frames smaller than the block yield nothing.
std::vector<TrainingSample> extract_samples(const FrameSequence& pristine, const FrameSequence& degraded,
                                            int stride = kDefaultExtractStride);

/// Fisher-Yates with a generator seeded by `seed`; the store records the seed.
SampleStore shuffle_store(std::vector<TrainingSample> samples, std::uint64_t seed, int qp);

/// Store file: magic "STDS", version u16 LE = 1, count u32 LE, block size
/// u16 LE = 38, qp i16 LE, shuffle seed u64 LE, then per record the
/// colocated/current/target blocks as 1444 f32 LE each.
void save_store(const SampleStore& store, const std::filesystem::path& destination);
SampleStore load_store(const std::filesystem::path& source);

/// Reads the luma planes of an 8-bit 4:2:0 planar file; chroma is skipped.
/// reference_index defaults to the previous frame in display order.
FrameSequence load_yuv(const std::filesystem::path& path, int width, int height, int frame_count);

/// Writes luma planes back out as 4:2:0. Chroma planes are copied through
/// from `chroma_source` when given (must be a 4:2:0 file of matching
/// geometry), otherwise filled with the neutral value 128.
void save_yuv(const FrameSequence& seq, const std::filesystem::path& destination,
              const std::optional<std::filesystem::path>& chroma_source = std::nullopt);

/// Optional per-frame reference override: one integer per line, -1 for
/// "no reference". Line count must equal the frame count.
void load_reference_index(FrameSequence& seq, const std::filesystem::path& path);

/// Stand-in for real codec degradation: 8x8 block DCT, uniform quantization
/// of the coefficients with the given step, inverse DCT, clamp to [0,255].
/// Produces the blocking/ringing artifacts the filter is trained to remove.
struct DegradeSpec {
    double quant_step = 16.0;
};

/// HEVC-style mapping from a QP-like parameter to a quantization step.
double quant_step_from_qp(double qp);

FrameSequence degrade(const FrameSequence& pristine, const DegradeSpec& spec);

/// Converts a store record block to a single-channel tensor (and back for
/// tests). Values stay in the normalized [0,1] domain.
Tensor block_to_tensor(const std::vector<float>& block, int block_size);

} // namespace stresnet
