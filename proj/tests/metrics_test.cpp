#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "stresnet/metrics.hpp"
#include "test_util.hpp"

using namespace stresnet;
using testutil::Rng;

namespace {

// Independent BD oracle: Lagrange interpolation through exactly 4 points
// (identical to the least-squares fit in exact arithmetic) integrated by a
// fine trapezoid rule.
double lagrange_log_rate(const std::vector<RdPoint>& curve, double x) {
    double y = 0.0;
    for (std::size_t i = 0; i < curve.size(); ++i) {
        double term = std::log10(curve[i].rate);
        for (std::size_t j = 0; j < curve.size(); ++j)
            if (j != i)
                term *= (x - curve[j].psnr) / (curve[i].psnr - curve[j].psnr);
        y += term;
    }
    return y;
}

double oracle_bd_percent(const std::vector<RdPoint>& anchor, const std::vector<RdPoint>& test) {
    auto range = [](const std::vector<RdPoint>& c) {
        double lo = c[0].psnr, hi = c[0].psnr;
        for (const auto& p : c) {
            lo = std::min(lo, p.psnr);
            hi = std::max(hi, p.psnr);
        }
        return std::pair{lo, hi};
    };
    const auto [alo, ahi] = range(anchor);
    const auto [tlo, thi] = range(test);
    const double lo = std::max(alo, tlo), hi = std::min(ahi, thi);
    const int steps = 200000;
    double sum = 0.0;
    for (int i = 0; i <= steps; ++i) {
        const double x = lo + (hi - lo) * i / steps;
        const double d = lagrange_log_rate(test, x) - lagrange_log_rate(anchor, x);
        sum += (i == 0 || i == steps) ? d / 2 : d;
    }
    const double delta = sum / steps;
    return 100.0 * (std::pow(10.0, delta) - 1.0);
}

const std::vector<RdPoint> kAnchor = {{1200.0, 32.1}, {1900.0, 34.6}, {3100.0, 37.0}, {5200.0, 39.3}};
const std::vector<RdPoint> kTest = {{1150.0, 32.3}, {1800.0, 34.8}, {2950.0, 37.1}, {5050.0, 39.5}};

} // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("mse and psnr basics") {
    std::vector<std::uint8_t> a(100, 50);
    CHECK(mse(a, a) == 0.0);
    CHECK(std::isinf(psnr(a, a)));

    std::vector<std::uint8_t> b(100, 51); // +1 everywhere
    CHECK(mse(a, b) == 1.0);
    CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(65025.0)).epsilon(1e-12));
    CHECK(psnr(a, b) == doctest::Approx(48.13).epsilon(1e-3));

    CHECK_THROWS_AS(mse(a, std::vector<std::uint8_t>(99)), PreconditionError);
}

TEST_CASE("mse matches a scalar loop") {
    Rng rng(101);
    std::vector<std::uint8_t> a(333), b(333);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.byte();
        b[i] = rng.byte();
    }
    double expected = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        expected += (a[i] - b[i]) * static_cast<double>(a[i] - b[i]);
    expected /= a.size();
    CHECK(mse(a, b) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("psnr decreases as mse grows") {
    double prev = psnr_from_mse(0.25);
    for (double m : {0.5, 1.0, 4.0, 100.0, 5000.0}) {
        const double p = psnr_from_mse(m);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("bd_rate of identical curves is zero") {
    BdRateResult r = bd_rate(kAnchor, kAnchor);
    CHECK(std::fabs(r.percent) < 1e-9);
    CHECK(std::fabs(r.log_delta) < 1e-12);
    CHECK(r.warnings.empty());
}

TEST_CASE("constant 10 percent rate offset integrates exactly") {
    std::vector<RdPoint> test = kAnchor;
    for (auto& p : test)
        p.rate *= 1.10;
    BdRateResult r = bd_rate(kAnchor, test);
    CHECK(std::fabs(r.percent - 10.0) < 1e-6);
}

TEST_CASE("bd_rate matches the trapezoid oracle on a fixed curve pair") {
    BdRateResult r = bd_rate(kAnchor, kTest);
    const double oracle = oracle_bd_percent(kAnchor, kTest);
    CHECK(std::fabs(r.percent - oracle) < 0.01);
    CHECK(r.percent < 0.0); // test curve is cheaper at equal quality
}

TEST_CASE("bd_rate antisymmetry in the log domain") {
    BdRateResult ab = bd_rate(kAnchor, kTest);
    BdRateResult ba = bd_rate(kTest, kAnchor);
    CHECK(std::fabs(ab.log_delta + ba.log_delta) < 1e-9);
}

TEST_CASE("bd_rate is invariant to common rate rescaling") {
    std::vector<RdPoint> anchor = kAnchor, test = kTest;
    for (auto& p : anchor)
        p.rate *= 7.5;
    for (auto& p : test)
        p.rate *= 7.5;
    BdRateResult base = bd_rate(kAnchor, kTest);
    BdRateResult scaled = bd_rate(anchor, test);
    CHECK(std::fabs(base.percent - scaled.percent) < 1e-9);
}

TEST_CASE("bd_rate input validation") {
    std::vector<RdPoint> three(kAnchor.begin(), kAnchor.begin() + 3);
    CHECK_THROWS_AS(bd_rate(three, kTest), PreconditionError);
    CHECK_THROWS_AS(bd_rate(kAnchor, three), PreconditionError);

    std::vector<RdPoint> shifted = kAnchor;
    for (auto& p : shifted)
        p.psnr += 40.0; // no overlap
    CHECK_THROWS_AS(bd_rate(kAnchor, shifted), PreconditionError);

    std::vector<RdPoint> dup = kAnchor;
    dup[1].psnr = dup[0].psnr;
    CHECK_THROWS_AS(bd_rate(dup, kTest), PreconditionError);

    std::vector<RdPoint> bad_rate = kAnchor;
    bad_rate[2].rate = 0.0;
    CHECK_THROWS_AS(bd_rate(bad_rate, kTest), PreconditionError);

    // the +inf PSNR sentinel from identical frames is not a valid input
    std::vector<RdPoint> inf_psnr = kAnchor;
    inf_psnr[3].psnr = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(bd_rate(inf_psnr, kTest), PreconditionError);
}

TEST_CASE("non-monotone curves warn but proceed") {
    std::vector<RdPoint> bumpy = kAnchor;
    std::swap(bumpy[1].psnr, bumpy[2].psnr); // PSNR dips as rate grows
    BdRateResult r = bd_rate(bumpy, kTest);
    CHECK(!r.warnings.empty());
    CHECK(std::isfinite(r.percent));
}

TEST_CASE("timing ratio implements the increment definition") {
    CHECK(timing_ratio({100.0, 100.0}) == 0.0);
    CHECK(std::fabs(timing_ratio({100.0, 135.7}) - 0.357) < 1e-12);
    CHECK(timing_ratio({2.0, 1.0}) == -0.5);
    CHECK_THROWS_AS(timing_ratio({0.0, 1.0}), PreconditionError);
    CHECK_THROWS_AS(timing_ratio({1.0, -2.0}), PreconditionError);

    TimingReport rep = report_timing({100.0, 135.7});
    CHECK(rep.increment == doctest::Approx(0.357).epsilon(1e-12));
    CHECK(rep.ratio == doctest::Approx(1.357).epsilon(1e-12));
}

TEST_CASE("rd csv loads points and rejects junk") {
    const auto path = std::filesystem::temp_directory_path() / "stresnet_rd.csv";
    {
        std::ofstream f(path);
        f << "rate,psnr\n# comment\n1200,32.1\n1900.5,34.6\n\n3100,37\n5200,39.3\n";
    }
    auto pts = load_rd_csv(path);
    REQUIRE(pts.size() == 4);
    CHECK(pts[0].rate == 1200.0);
    CHECK(pts[1].rate == 1900.5);
    CHECK(pts[3].psnr == 39.3);

    {
        std::ofstream f(path);
        f << "1200;32.1\n";
    }
    CHECK_THROWS_AS(load_rd_csv(path), FormatError);
    std::filesystem::remove(path);
}

TEST_SUITE_END();
