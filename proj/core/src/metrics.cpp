#include "stresnet/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace stresnet {

double mse(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size() || a.empty())
        throw PreconditionError("mse: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + " samples)");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

double psnr_from_mse(double mse_value) {
    if (mse_value < 0.0)
        throw PreconditionError("psnr: negative MSE");
    if (mse_value == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse_value);
}

double psnr(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    return psnr_from_mse(mse(a, b));
}

namespace {

// Least-squares cubic of log10(rate) against PSNR. PSNR values are centered
// on a caller-supplied pivot so both curves share one basis; the normal
// equations are solved by Gaussian elimination with partial pivoting.
std::array<double, 4> fit_log_rate_cubic(std::span<const RdPoint> curve, double pivot) {
    constexpr int n = 4;
    double ata[n][n] = {};
    double atb[n] = {};
    for (const RdPoint& pt : curve) {
        const double x = pt.psnr - pivot;
        const double y = std::log10(pt.rate);
        double powers[n] = {1.0, x, x * x, x * x * x};
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j)
                ata[i][j] += powers[i] * powers[j];
            atb[i] += powers[i] * y;
        }
    }

    int perm[n] = {0, 1, 2, 3};
    for (int col = 0; col < n; ++col) {
        int best = col;
        for (int r = col + 1; r < n; ++r)
            if (std::fabs(ata[perm[r]][col]) > std::fabs(ata[perm[best]][col]))
                best = r;
        std::swap(perm[col], perm[best]);
        const double diag = ata[perm[col]][col];
        if (diag == 0.0)
            throw PreconditionError("bd_rate: singular fit (PSNR values insufficiently distinct)");
        for (int r = col + 1; r < n; ++r) {
            const double f = ata[perm[r]][col] / diag;
            for (int c = col; c < n; ++c)
                ata[perm[r]][c] -= f * ata[perm[col]][c];
            atb[perm[r]] -= f * atb[perm[col]];
        }
    }
    std::array<double, 4> coef{};
    for (int i = n - 1; i >= 0; --i) {
        double s = atb[perm[i]];
        for (int j = i + 1; j < n; ++j)
            s -= ata[perm[i]][j] * coef[j];
        coef[i] = s / ata[perm[i]][i];
    }
    return coef;
}

double integrate_cubic(const std::array<double, 4>& coef, double lo, double hi) {
    auto antiderivative = [&](double x) {
        return coef[0] * x + coef[1] * x * x / 2.0 + coef[2] * x * x * x / 3.0 + coef[3] * x * x * x * x / 4.0;
    };
    return antiderivative(hi) - antiderivative(lo);
}

void validate_curve(std::span<const RdPoint> curve, const char* name, std::vector<std::string>& warnings) {
    if (curve.size() < 4)
        throw PreconditionError(std::string("bd_rate: ") + name + " curve needs at least 4 points, got " +
                                std::to_string(curve.size()));
    for (const RdPoint& pt : curve) {
        if (!(pt.rate > 0.0))
            throw PreconditionError(std::string("bd_rate: ") + name + " curve has a non-positive rate");
        if (!std::isfinite(pt.psnr))
            throw PreconditionError(std::string("bd_rate: ") + name + " curve has a non-finite PSNR");
    }
    for (std::size_t i = 0; i < curve.size(); ++i)
        for (std::size_t j = i + 1; j < curve.size(); ++j)
            if (curve[i].psnr == curve[j].psnr)
                throw PreconditionError(std::string("bd_rate: ") + name + " curve has duplicate PSNR values");

    std::vector<RdPoint> sorted(curve.begin(), curve.end());
    std::sort(sorted.begin(), sorted.end(), [](const RdPoint& a, const RdPoint& b) { return a.rate < b.rate; });
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i].psnr <= sorted[i - 1].psnr) {
            warnings.push_back(std::string(name) + " curve is not monotone (PSNR does not increase with rate)");
            return;
        }
}

} // namespace

BdRateResult bd_rate(std::span<const RdPoint> anchor, std::span<const RdPoint> test) {
    BdRateResult result;
    validate_curve(anchor, "anchor", result.warnings);
    validate_curve(test, "test", result.warnings);

    auto psnr_range = [](std::span<const RdPoint> c) {
        double lo = c[0].psnr, hi = c[0].psnr;
        for (const RdPoint& p : c) {
            lo = std::min(lo, p.psnr);
            hi = std::max(hi, p.psnr);
        }
        return std::pair{lo, hi};
    };
    const auto [a_lo, a_hi] = psnr_range(anchor);
    const auto [t_lo, t_hi] = psnr_range(test);
    const double lo = std::max(a_lo, t_lo);
    const double hi = std::min(a_hi, t_hi);
    if (!(hi > lo))
        throw PreconditionError("bd_rate: PSNR intervals do not overlap");

    // One shared pivot keeps the two fits on the same basis, which makes
    // swapping anchor and test an exact sign flip.
    double pivot = 0.0;
    for (const RdPoint& p : anchor)
        pivot += p.psnr;
    for (const RdPoint& p : test)
        pivot += p.psnr;
    pivot /= static_cast<double>(anchor.size() + test.size());

    const auto anchor_fit = fit_log_rate_cubic(anchor, pivot);
    const auto test_fit = fit_log_rate_cubic(test, pivot);
    const double ia = integrate_cubic(anchor_fit, lo - pivot, hi - pivot);
    const double it = integrate_cubic(test_fit, lo - pivot, hi - pivot);

    result.log_delta = (it - ia) / (hi - lo);
    result.percent = 100.0 * (std::pow(10.0, result.log_delta) - 1.0);
    return result;
}

double timing_ratio(const TimingPair& t) {
    if (!(t.baseline_seconds > 0.0) || !(t.modified_seconds > 0.0))
        throw PreconditionError("timing_ratio: times must be positive");
    return (t.modified_seconds - t.baseline_seconds) / t.baseline_seconds;
}

TimingReport report_timing(const TimingPair& t) {
    TimingReport r;
    r.increment = timing_ratio(t);
    r.ratio = t.modified_seconds / t.baseline_seconds;
    return r;
}

std::vector<RdPoint> load_rd_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f)
        throw IoError("cannot open RD CSV " + path.string());
    std::vector<RdPoint> points;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#')
            continue;
        if (line_no == 1 && line.starts_with("rate"))
            continue; // optional header

        std::istringstream ss(line);
        RdPoint p;
        char comma = 0;
        if (!(ss >> p.rate >> comma >> p.psnr) || comma != ',')
            throw FormatError("RD CSV " + path.string() + ": bad line " + std::to_string(line_no) + ": '" +
                              line + "'");
        points.push_back(p);
    }
    return points;
}

} // namespace stresnet
