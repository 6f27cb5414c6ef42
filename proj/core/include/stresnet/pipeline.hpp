#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "stresnet/dataset.hpp"
#include "stresnet/model.hpp"

namespace stresnet {

inline constexpr int kCtuSize = 64;

struct Rect {
    int x = 0; // left, pixels
    int y = 0; // top, pixels
    int w = 0;
    int h = 0;
};

/// 64x64 CTU tiling of a frame; edge CTUs may be smaller.
struct CtuGrid {
    int frame_width = 0;
    int frame_height = 0;
    int rows = 0;
    int cols = 0;

    static CtuGrid for_frame(int width, int height);
    int count() const { return rows * cols; }
    Rect rect(int row, int col) const;
};

/// One RD decision: distortion without the filter (d1), with it (d2), and
/// the resulting on/off flag. Ties keep the filter off.
struct CtuDecision {
    double d1 = 0.0;
    double d2 = 0.0;
    bool flag = false;
};

/// Per-frame raster-order decision records.
struct RdDecisionTrace {
    std::vector<std::vector<CtuDecision>> frames;
};

/// Per-frame raster-order on/off flags, one per CTU.
struct CtuFlagMap {
    int rows = 0;
    int cols = 0;
    std::vector<std::vector<std::uint8_t>> frames;
};

enum class FilterMode { in_loop, out_of_loop };

/// Read-only view of one luma plane.
struct PlaneView {
    const std::uint8_t* data = nullptr;
    int width = 0;
    int height = 0;

    PlaneView() = default;
    PlaneView(const std::uint8_t* d, int w, int h) : data(d), width(w), height(h) {}
    PlaneView(const std::vector<std::uint8_t>& plane, int w, int h) : data(plane.data()), width(w), height(h) {}
    std::uint8_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
};

/// Runs the model on one CTU and its co-located reference rectangle.
/// Normalization, zero padding confined to the CTU, de-normalization with
/// rounding and clamping. Returns rect.w * rect.h bytes in raster order.
std::vector<std::uint8_t> filter_ctu(const StresNetWeights& weights, PlaneView degraded, PlaneView reference,
                                     const Rect& rect);

/// MSE-only RD decision: d1 = MSE(degraded, original), d2 = MSE(filtered,
/// original); the flag is on iff d2 < d1 (equal rates cancel the rate term).
CtuDecision decide_flag(std::span<const std::uint8_t> original_ctu, std::span<const std::uint8_t> degraded_ctu,
                        std::span<const std::uint8_t> filtered_ctu);

struct FilterResult {
    FrameSequence filtered;
    CtuFlagMap flags;
    RdDecisionTrace trace;
};

/// Encoder-side pass over a sequence: frames without a reference pass
/// through with all flags off; every other CTU keeps the filtered block only
/// when its flag is on. in_loop feeds reconstructed frames back as
/// references, out_of_loop keeps referencing the degraded input.
FilterResult filter_sequence(const StresNetWeights& weights, const FrameSequence& degraded,
                             const FrameSequence& original, FilterMode mode, int threads = 1);

/// Decoder-side replay of one frame from signaled flags: CTUs with the flag
/// on take their entry from `filtered_blocks` (raster order), the rest stay.
std::vector<std::uint8_t> apply_flags(PlaneView degraded, const std::vector<std::vector<std::uint8_t>>& filtered_blocks,
                                      std::span<const std::uint8_t> flags, const CtuGrid& grid);

/// Full decoder-side reconstruction from the degraded sequence and the flag
/// map alone; bit-identical to filter_sequence().filtered.
FrameSequence replay_sequence(const StresNetWeights& weights, const FrameSequence& degraded,
                              const CtuFlagMap& flags, FilterMode mode, int threads = 1);

/// Sidecar text format: one line per frame, "<frame index> <'0'/'1' per CTU
/// in raster order>".
void save_flags(const CtuFlagMap& flags, const std::filesystem::path& destination);
CtuFlagMap load_flags(const std::filesystem::path& source, const CtuGrid& grid);

/// Trace CSV with header frame,ctu_row,ctu_col,d1,d2,flag.
void save_trace(const RdDecisionTrace& trace, const CtuGrid& grid, const std::filesystem::path& destination);

} // namespace stresnet
