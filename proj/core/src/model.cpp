#include "stresnet/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

namespace stresnet {

std::size_t StresNetWeights::weight_count() const {
    std::size_t n = 0;
    for_each_layer([&](const ConvKernel& k) { n += k.weight_count(); });
    return n;
}

std::size_t StresNetWeights::param_count() const {
    std::size_t n = 0;
    for_each_layer([&](const ConvKernel& k) { n += k.weight_count() + k.bias.size(); });
    return n;
}

namespace {

template <typename W, typename P>
std::vector<P> collect_param_ptrs(W& w) {
    std::vector<P> ptrs;
    ptrs.reserve(w.param_count());
    w.for_each_layer([&](auto& k) {
        for (auto& v : k.weights) ptrs.push_back(&v);
        for (auto& v : k.bias) ptrs.push_back(&v);
    });
    return ptrs;
}

} // namespace

std::vector<double*> param_ptrs(StresNetWeights& w) {
    return collect_param_ptrs<StresNetWeights, double*>(w);
}

std::vector<const double*> param_ptrs(const StresNetWeights& w) {
    return collect_param_ptrs<const StresNetWeights, const double*>(w);
}

Tensor forward(const StresNetWeights& weights, const Tensor& current, const Tensor& colocated) {
    return forward_with_intermediates(weights, current, colocated).output;
}

ForwardTrace forward_with_intermediates(const StresNetWeights& weights, const Tensor& current,
                                        const Tensor& colocated) {
    if (!current.same_shape(colocated))
        throw PreconditionError("forward: current and colocated blocks must share shape");
    if (current.channels() != 1)
        throw PreconditionError("forward: inputs must be single-channel");

    ForwardTrace t;
    t.f1 = relu(conv2d_same(current, weights.conv1));
    t.f2 = relu(conv2d_same(colocated, weights.conv2));
    t.fused = relu(conv2d_same(concat_channels(t.f1, t.f2), weights.conv3));
    t.f4 = relu(conv2d_same(t.fused, weights.conv4));
    Tensor residue = conv2d_same(t.f4, weights.conv5);
    if constexpr (kReluAfterLastConv)
        residue = relu(residue);
    t.output = add(current, residue);
    return t;
}

namespace {

// Box-Muller over raw mt19937_64 draws; self-contained so that a seed pins
// the exact weight bits independent of the standard library's distributions.
class GaussianSource {
public:
    explicit GaussianSource(std::uint64_t seed) : rng_(seed) {}

    double next(double stddev) {
        if (have_spare_) {
            have_spare_ = false;
            return spare_ * stddev;
        }
        const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53; // (0,1]
        const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;         // [0,1)
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle) * stddev;
    }

private:
    std::mt19937_64 rng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

constexpr double kInitStddev = 0.001;

} // namespace

StresNetWeights init_weights(int qp, std::uint64_t seed) {
    StresNetWeights w;
    w.qp = qp;
    GaussianSource gauss(seed);
    w.for_each_layer([&](ConvKernel& k) {
        for (double& v : k.weights)
            v = gauss.next(kInitStddev);
        // biases stay zero
    });
    return w;
}

namespace {

constexpr char kMagic[4] = {'S', 'T', 'R', 'N'};
constexpr std::uint16_t kFormatVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::string& buf, const std::filesystem::path& path) : buf_(buf), path_(path) {}

    std::uint16_t u16(const char* field) {
        need(2, field);
        std::uint16_t v = static_cast<std::uint8_t>(buf_[pos_]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf_[pos_ + 1])) << 8);
        pos_ += 2;
        return v;
    }

    float f32(const char* field) {
        need(4, field);
        std::uint32_t bits = 0;
        for (int i = 0; i < 4; ++i)
            bits |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    void raw(char* dst, std::size_t n, const char* field) {
        need(n, field);
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }

    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t n, const char* field) {
        if (buf_.size() - pos_ < n)
            throw FormatError("model file " + path_.string() + ": truncated while reading " + field);
    }
    const std::string& buf_;
    std::filesystem::path path_;
    std::size_t pos_ = 0;
};

} // namespace

void save_model(const StresNetWeights& weights, const std::filesystem::path& destination) {
    std::string out;
    out.reserve(8 + weights.param_count() * 4);
    out.append(kMagic, 4);
    put_u16(out, kFormatVersion);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(weights.qp)));
    weights.for_each_layer([&](const ConvKernel& k) {
        for (double v : k.weights)
            put_f32(out, static_cast<float>(v));
        for (double v : k.bias)
            put_f32(out, static_cast<float>(v));
    });

    std::ofstream f(destination, std::ios::binary | std::ios::trunc);
    if (!f)
        throw IoError("cannot open " + destination.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f)
        throw IoError("short write to " + destination.string());
}

StresNetWeights load_model(const std::filesystem::path& source) {
    std::ifstream f(source, std::ios::binary);
    if (!f)
        throw IoError("cannot open model file " + source.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r(buf, source);
    char magic[4];
    r.raw(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("model file " + source.string() + ": bad magic");
    const std::uint16_t version = r.u16("version");
    if (version != kFormatVersion)
        throw FormatError("model file " + source.string() + ": unsupported version " + std::to_string(version));

    StresNetWeights w;
    w.qp = static_cast<std::int16_t>(r.u16("qp"));
    w.for_each_layer([&](ConvKernel& k) {
        for (double& v : k.weights)
            v = r.f32("weights");
        for (double& v : k.bias)
            v = r.f32("bias");
    });
    if (r.remaining() != 0)
        throw FormatError("model file " + source.string() + ": unexpected trailing bytes (length)");
    return w;
}

std::uint8_t denormalize_sample(double v) {
    const double scaled = v * 255.0;
    long rounded = std::lround(scaled); // half away from zero
    if (rounded < 0) rounded = 0;
    if (rounded > 255) rounded = 255;
    return static_cast<std::uint8_t>(rounded);
}

} // namespace stresnet
