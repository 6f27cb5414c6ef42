#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stresnet/errors.hpp"

namespace stresnet {

/// Mean squared byte difference; spans must have equal non-zero length.
double mse(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// 10*log10(255^2 / mse); +infinity for identical content.
double psnr_from_mse(double mse_value);
double psnr(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// One point of a rate-distortion curve.
struct RdPoint {
    double rate = 0.0; // bits or kbit/s, any unit consistent across curves
    double psnr = 0.0; // dB
};

struct BdRateResult {
    double percent = 0.0;   // 100 * (10^delta - 1); negative = bitrate saving
    double log_delta = 0.0; // mean log10-rate difference, test minus anchor
    std::vector<std::string> warnings;
};

/// Bjontegaard delta-rate, classic cubic-polynomial variant: least-squares
/// cubic fit of log10(rate) against PSNR per curve, closed-form integration
/// over the overlapping PSNR interval. Requires >= 4 points with distinct
/// PSNRs per curve and overlapping PSNR ranges; non-monotone curves produce
/// a warning and proceed.
BdRateResult bd_rate(std::span<const RdPoint> anchor, std::span<const RdPoint> test);

struct TimingPair {
    double baseline_seconds = 0.0; // T
    double modified_seconds = 0.0; // T'
};

/// Time increase (T' - T) / T. The companion ratio T'/T is what tables in
/// codec literature usually print; report_timing gives both.
double timing_ratio(const TimingPair& t);

struct TimingReport {
    double increment = 0.0; // (T' - T) / T
    double ratio = 0.0;     // T' / T
};
TimingReport report_timing(const TimingPair& t);

/// CSV "rate,psnr" per line; '#' lines and blank lines are skipped.
std::vector<RdPoint> load_rd_csv(const std::filesystem::path& path);

} // namespace stresnet
