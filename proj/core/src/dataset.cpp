#include "stresnet/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace stresnet {

void FrameSequence::validate() const {
    if (width < 1 || height < 1)
        throw PreconditionError("FrameSequence: non-positive dimensions");
    if (frames.size() != reference_index.size())
        throw PreconditionError("FrameSequence: reference_index count does not match frame count");
    const std::size_t plane = static_cast<std::size_t>(width) * height;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (frames[i].size() != plane)
            throw PreconditionError("FrameSequence: frame " + std::to_string(i) + " has wrong plane size");
        if (reference_index[i] >= static_cast<int>(i))
            throw PreconditionError("FrameSequence: frame " + std::to_string(i) + " references a later frame");
    }
    if (!reference_index.empty() && reference_index[0] != -1)
        throw PreconditionError("FrameSequence: frame 0 cannot have a reference");
}

namespace {

void check_aligned(const FrameSequence& a, const FrameSequence& b) {
    if (a.width != b.width || a.height != b.height || a.frame_count() != b.frame_count())
        throw PreconditionError("sequence alignment: dimensions or frame counts differ (" +
                                std::to_string(a.width) + "x" + std::to_string(a.height) + "/" +
                                std::to_string(a.frame_count()) + " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height) + "/" + std::to_string(b.frame_count()) + ")");
}

std::vector<float> crop_block(const FrameSequence& seq, int frame, int top, int left) {
    std::vector<float> block(static_cast<std::size_t>(kSampleBlockSize) * kSampleBlockSize);
    std::size_t o = 0;
    for (int r = 0; r < kSampleBlockSize; ++r)
        for (int c = 0; c < kSampleBlockSize; ++c)
            block[o++] = static_cast<float>(seq.sample(frame, top + r, left + c) / 255.0);
    return block;
}

} // namespace

std::vector<TrainingSample> extract_samples(const FrameSequence& pristine, const FrameSequence& degraded,
                                            int stride) {
    check_aligned(pristine, degraded);
    if (stride < 1)
        throw PreconditionError("extract_samples: stride must be >= 1");

    std::vector<TrainingSample> out;
    const int h = degraded.height, w = degraded.width;
    for (std::size_t i = 1; i < degraded.frame_count(); ++i) {
        const int ref = degraded.reference_index[i];
        if (ref < 0)
            continue;
        for (int top = 0; top + kSampleBlockSize <= h; top += stride) {
            for (int left = 0; left + kSampleBlockSize <= w; left += stride) {
                TrainingSample s;
                s.colocated = crop_block(degraded, ref, top, left);
                s.current = crop_block(degraded, static_cast<int>(i), top, left);
                s.target = crop_block(pristine, static_cast<int>(i), top, left);
                out.push_back(std::move(s));
            }
        }
    }
    return out;
}

SampleStore shuffle_store(std::vector<TrainingSample> samples, std::uint64_t seed, int qp) {
    if (samples.empty())
        throw PreconditionError("shuffle_store: no samples");
    std::mt19937_64 rng(seed);
    for (std::size_t i = samples.size() - 1; i > 0; --i) {
        const std::size_t j = rng() % (i + 1);
        std::swap(samples[i], samples[j]);
    }
    SampleStore store;
    store.qp = static_cast<std::int16_t>(qp);
    store.shuffle_seed = seed;
    store.samples = std::move(samples);
    return store;
}

namespace {

constexpr char kStoreMagic[4] = {'S', 'T', 'D', 'S'};
constexpr std::uint16_t kStoreVersion = 1;

void put_bytes(std::ofstream& f, const void* p, std::size_t n, const std::filesystem::path& path) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!f)
        throw IoError("short write to " + path.string());
}

template <typename T>
void put_le(std::ofstream& f, T v, const std::filesystem::path& path) {
    std::array<char, sizeof(T)> b{};
    for (std::size_t i = 0; i < sizeof(T); ++i)
        b[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
    put_bytes(f, b.data(), b.size(), path);
}

void put_block_f32(std::ofstream& f, const std::vector<float>& block, const std::filesystem::path& path) {
    // x86 is little-endian; floats go out verbatim.
    static_assert(std::endian::native == std::endian::little, "store writer assumes little-endian host");
    put_bytes(f, block.data(), block.size() * 4, path);
}

void get_bytes(std::ifstream& f, void* p, std::size_t n, const char* field, const std::filesystem::path& path) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (f.gcount() != static_cast<std::streamsize>(n))
        throw FormatError("store file " + path.string() + ": truncated while reading " + field);
}

template <typename T>
T get_le(std::ifstream& f, const char* field, const std::filesystem::path& path) {
    std::array<unsigned char, sizeof(T)> b{};
    get_bytes(f, b.data(), b.size(), field, path);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return static_cast<T>(v);
}

} // namespace

void save_store(const SampleStore& store, const std::filesystem::path& destination) {
    if (store.samples.empty())
        throw PreconditionError("save_store: store must hold at least one sample");
    std::ofstream f(destination, std::ios::binary | std::ios::trunc);
    if (!f)
        throw IoError("cannot open " + destination.string() + " for writing");
    put_bytes(f, kStoreMagic, 4, destination);
    put_le<std::uint16_t>(f, kStoreVersion, destination);
    put_le<std::uint32_t>(f, static_cast<std::uint32_t>(store.samples.size()), destination);
    put_le<std::uint16_t>(f, store.block_size, destination);
    put_le<std::uint16_t>(f, static_cast<std::uint16_t>(store.qp), destination);
    put_le<std::uint64_t>(f, store.shuffle_seed, destination);
    for (const TrainingSample& s : store.samples) {
        put_block_f32(f, s.colocated, destination);
        put_block_f32(f, s.current, destination);
        put_block_f32(f, s.target, destination);
    }
}

SampleStore load_store(const std::filesystem::path& source) {
    std::ifstream f(source, std::ios::binary);
    if (!f)
        throw IoError("cannot open store file " + source.string());

    char magic[4];
    get_bytes(f, magic, 4, "magic", source);
    if (std::memcmp(magic, kStoreMagic, 4) != 0)
        throw FormatError("store file " + source.string() + ": bad magic");
    const auto version = get_le<std::uint16_t>(f, "version", source);
    if (version != kStoreVersion)
        throw FormatError("store file " + source.string() + ": unsupported version " + std::to_string(version));

    SampleStore store;
    const auto count = get_le<std::uint32_t>(f, "count", source);
    store.block_size = get_le<std::uint16_t>(f, "block size", source);
    if (store.block_size != kSampleBlockSize)
        throw FormatError("store file " + source.string() + ": unexpected block size " +
                          std::to_string(store.block_size));
    store.qp = static_cast<std::int16_t>(get_le<std::uint16_t>(f, "qp", source));
    store.shuffle_seed = get_le<std::uint64_t>(f, "shuffle seed", source);
    if (count == 0)
        throw FormatError("store file " + source.string() + ": zero sample count");

    const std::size_t block_len = static_cast<std::size_t>(store.block_size) * store.block_size;
    store.samples.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        TrainingSample& s = store.samples[i];
        s.colocated.resize(block_len);
        s.current.resize(block_len);
        s.target.resize(block_len);
        get_bytes(f, s.colocated.data(), block_len * 4, "record", source);
        get_bytes(f, s.current.data(), block_len * 4, "record", source);
        get_bytes(f, s.target.data(), block_len * 4, "record", source);
    }
    if (f.peek() != std::ifstream::traits_type::eof())
        throw FormatError("store file " + source.string() + ": trailing bytes after last record");
    return store;
}

FrameSequence load_yuv(const std::filesystem::path& path, int width, int height, int frame_count) {
    if (width < 1 || height < 1 || frame_count < 1)
        throw PreconditionError("load_yuv: dimensions and frame count must be positive");
    if (width % 2 != 0 || height % 2 != 0)
        throw PreconditionError("load_yuv: 4:2:0 requires even dimensions");

    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot open YUV file " + path.string());
    f.seekg(0, std::ios::end);
    const std::uint64_t actual = static_cast<std::uint64_t>(f.tellg());
    const std::size_t luma = static_cast<std::size_t>(width) * height;
    const std::size_t frame_bytes = luma * 3 / 2;
    const std::uint64_t expected = static_cast<std::uint64_t>(frame_bytes) * frame_count;
    if (actual < expected)
        throw FormatError("YUV file " + path.string() + " truncated: expected >= " + std::to_string(expected) +
                          " bytes for " + std::to_string(frame_count) + " frames, got " + std::to_string(actual));
    f.seekg(0, std::ios::beg);

    FrameSequence seq;
    seq.width = width;
    seq.height = height;
    seq.frames.resize(frame_count);
    seq.reference_index.resize(frame_count);
    for (int i = 0; i < frame_count; ++i) {
        seq.frames[i].resize(luma);
        f.read(reinterpret_cast<char*>(seq.frames[i].data()), static_cast<std::streamsize>(luma));
        f.seekg(static_cast<std::streamoff>(luma / 2), std::ios::cur); // skip chroma
        if (!f)
            throw FormatError("YUV file " + path.string() + ": read failed at frame " + std::to_string(i));
        seq.reference_index[i] = i - 1;
    }
    return seq;
}

void save_yuv(const FrameSequence& seq, const std::filesystem::path& destination,
              const std::optional<std::filesystem::path>& chroma_source) {
    seq.validate();
    const std::size_t luma = static_cast<std::size_t>(seq.width) * seq.height;
    const std::size_t chroma = luma / 2;

    std::ifstream src;
    if (chroma_source) {
        src.open(*chroma_source, std::ios::binary);
        if (!src)
            throw IoError("cannot open chroma source " + chroma_source->string());
    }
    std::ofstream f(destination, std::ios::binary | std::ios::trunc);
    if (!f)
        throw IoError("cannot open " + destination.string() + " for writing");

    std::vector<char> chroma_buf(chroma, static_cast<char>(128));
    for (std::size_t i = 0; i < seq.frame_count(); ++i) {
        if (chroma_source) {
            src.seekg(static_cast<std::streamoff>(i * (luma + chroma) + luma), std::ios::beg);
            src.read(chroma_buf.data(), static_cast<std::streamsize>(chroma));
            if (!src)
                throw FormatError("chroma source " + chroma_source->string() + " truncated at frame " +
                                  std::to_string(i));
        }
        f.write(reinterpret_cast<const char*>(seq.frames[i].data()), static_cast<std::streamsize>(luma));
        f.write(chroma_buf.data(), static_cast<std::streamsize>(chroma));
        if (!f)
            throw IoError("short write to " + destination.string());
    }
}

void load_reference_index(FrameSequence& seq, const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f)
        throw IoError("cannot open reference-index file " + path.string());
    std::vector<int> refs;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty())
            continue;
        try {
            refs.push_back(std::stoi(line));
        } catch (const std::exception&) {
            throw FormatError("reference-index file " + path.string() + ": bad line '" + line + "'");
        }
    }
    if (refs.size() != seq.frame_count())
        throw FormatError("reference-index file " + path.string() + ": " + std::to_string(refs.size()) +
                          " entries for " + std::to_string(seq.frame_count()) + " frames");
    seq.reference_index = std::move(refs);
    seq.validate();
}

namespace {

constexpr int kDctBlock = 8;

// Orthonormal DCT-II basis, b[u][x].
const std::array<std::array<double, kDctBlock>, kDctBlock>& dct_basis() {
    static const auto basis = [] {
        std::array<std::array<double, kDctBlock>, kDctBlock> b{};
        for (int u = 0; u < kDctBlock; ++u) {
            const double a = u == 0 ? std::sqrt(1.0 / kDctBlock) : std::sqrt(2.0 / kDctBlock);
            for (int x = 0; x < kDctBlock; ++x)
                b[u][x] = a * std::cos((2 * x + 1) * u * std::numbers::pi / (2.0 * kDctBlock));
        }
        return b;
    }();
    return basis;
}

} // namespace

double quant_step_from_qp(double qp) {
    return std::pow(2.0, (qp - 4.0) / 6.0);
}

FrameSequence degrade(const FrameSequence& pristine, const DegradeSpec& spec) {
    pristine.validate();
    if (spec.quant_step <= 0.0)
        throw PreconditionError("degrade: quantization step must be positive");

    const auto& basis = dct_basis();
    const int w = pristine.width, h = pristine.height;
    const int bw = (w + kDctBlock - 1) / kDctBlock;
    const int bh = (h + kDctBlock - 1) / kDctBlock;

    FrameSequence out = pristine;
    double px[kDctBlock][kDctBlock], tmp[kDctBlock][kDctBlock], coef[kDctBlock][kDctBlock];
    for (std::size_t fi = 0; fi < pristine.frame_count(); ++fi) {
        const std::vector<std::uint8_t>& src = pristine.frames[fi];
        std::vector<std::uint8_t>& dst = out.frames[fi];
        for (int by = 0; by < bh; ++by) {
            for (int bx = 0; bx < bw; ++bx) {
                // edge blocks replicate the border pixels
                for (int y = 0; y < kDctBlock; ++y) {
                    const int sy = std::min(by * kDctBlock + y, h - 1);
                    for (int x = 0; x < kDctBlock; ++x) {
                        const int sx = std::min(bx * kDctBlock + x, w - 1);
                        px[y][x] = static_cast<double>(src[static_cast<std::size_t>(sy) * w + sx]) - 128.0;
                    }
                }
                // coef = B * px * B^T, quantize, px = B^T * coef * B
                for (int u = 0; u < kDctBlock; ++u)
                    for (int x = 0; x < kDctBlock; ++x) {
                        double s = 0;
                        for (int y = 0; y < kDctBlock; ++y)
                            s += basis[u][y] * px[y][x];
                        tmp[u][x] = s;
                    }
                for (int u = 0; u < kDctBlock; ++u)
                    for (int v = 0; v < kDctBlock; ++v) {
                        double s = 0;
                        for (int x = 0; x < kDctBlock; ++x)
                            s += tmp[u][x] * basis[v][x];
                        coef[u][v] = std::round(s / spec.quant_step) * spec.quant_step;
                    }
                for (int y = 0; y < kDctBlock; ++y)
                    for (int v = 0; v < kDctBlock; ++v) {
                        double s = 0;
                        for (int u = 0; u < kDctBlock; ++u)
                            s += basis[u][y] * coef[u][v];
                        tmp[y][v] = s;
                    }
                for (int y = 0; y < kDctBlock; ++y) {
                    const int dy = by * kDctBlock + y;
                    if (dy >= h)
                        break;
                    for (int x = 0; x < kDctBlock; ++x) {
                        const int dx = bx * kDctBlock + x;
                        if (dx >= w)
                            break;
                        double s = 0;
                        for (int v = 0; v < kDctBlock; ++v)
                            s += tmp[y][v] * basis[v][x];
                        const long q = std::lround(s + 128.0);
                        dst[static_cast<std::size_t>(dy) * w + dx] =
                            static_cast<std::uint8_t>(std::clamp(q, 0L, 255L));
                    }
                }
            }
        }
    }
    return out;
}

Tensor block_to_tensor(const std::vector<float>& block, int block_size) {
    if (block.size() != static_cast<std::size_t>(block_size) * block_size)
        throw PreconditionError("block_to_tensor: block length does not match size");
    Tensor t(block_size, block_size, 1);
    for (int r = 0; r < block_size; ++r)
        for (int c = 0; c < block_size; ++c)
            t.at(r, c, 0) = static_cast<double>(block[static_cast<std::size_t>(r) * block_size + c]);
    return t;
}

} // namespace stresnet
