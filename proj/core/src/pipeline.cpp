#include "stresnet/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

namespace stresnet {

CtuGrid CtuGrid::for_frame(int width, int height) {
    if (width < 1 || height < 1)
        throw PreconditionError("CtuGrid: non-positive frame dimensions");
    CtuGrid g;
    g.frame_width = width;
    g.frame_height = height;
    g.cols = (width + kCtuSize - 1) / kCtuSize;
    g.rows = (height + kCtuSize - 1) / kCtuSize;
    return g;
}

Rect CtuGrid::rect(int row, int col) const {
    if (row < 0 || row >= rows || col < 0 || col >= cols)
        throw PreconditionError("CtuGrid: CTU index out of range");
    Rect r;
    r.x = col * kCtuSize;
    r.y = row * kCtuSize;
    r.w = std::min(kCtuSize, frame_width - r.x);
    r.h = std::min(kCtuSize, frame_height - r.y);
    return r;
}

namespace {

Tensor block_from_plane(PlaneView plane, const Rect& rect) {
    Tensor t(rect.h, rect.w, 1);
    for (int r = 0; r < rect.h; ++r)
        for (int c = 0; c < rect.w; ++c)
            t.at(r, c, 0) = normalize_byte(plane.at(rect.y + r, rect.x + c));
    return t;
}

void check_rect(PlaneView plane, const Rect& rect, const char* what) {
    if (rect.x < 0 || rect.y < 0 || rect.w < 1 || rect.h < 1 || rect.x + rect.w > plane.width ||
        rect.y + rect.h > plane.height)
        throw PreconditionError(std::string(what) + ": CTU rectangle out of frame bounds");
}

} // namespace

std::vector<std::uint8_t> filter_ctu(const StresNetWeights& weights, PlaneView degraded, PlaneView reference,
                                     const Rect& rect) {
    check_rect(degraded, rect, "filter_ctu");
    if (reference.width != degraded.width || reference.height != degraded.height)
        throw PreconditionError("filter_ctu: reference frame dimensions differ");

    const Tensor current = block_from_plane(degraded, rect);
    const Tensor colocated = block_from_plane(reference, rect);
    const Tensor out = forward(weights, current, colocated);

    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(rect.w) * rect.h);
    std::size_t o = 0;
    for (int r = 0; r < rect.h; ++r)
        for (int c = 0; c < rect.w; ++c)
            bytes[o++] = denormalize_sample(out.at(r, c, 0));
    return bytes;
}

CtuDecision decide_flag(std::span<const std::uint8_t> original_ctu, std::span<const std::uint8_t> degraded_ctu,
                        std::span<const std::uint8_t> filtered_ctu) {
    if (original_ctu.size() != degraded_ctu.size() || original_ctu.size() != filtered_ctu.size() ||
        original_ctu.empty())
        throw PreconditionError("decide_flag: blocks must share a non-empty shape");

    double e1 = 0.0, e2 = 0.0;
    for (std::size_t i = 0; i < original_ctu.size(); ++i) {
        const double d1 = static_cast<double>(degraded_ctu[i]) - original_ctu[i];
        const double d2 = static_cast<double>(filtered_ctu[i]) - original_ctu[i];
        e1 += d1 * d1;
        e2 += d2 * d2;
    }
    CtuDecision d;
    d.d1 = e1 / static_cast<double>(original_ctu.size());
    d.d2 = e2 / static_cast<double>(original_ctu.size());
    d.flag = d.d2 < d.d1;
    return d;
}

namespace {

std::vector<std::uint8_t> crop_bytes(PlaneView plane, const Rect& rect) {
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(rect.w) * rect.h);
    std::size_t o = 0;
    for (int r = 0; r < rect.h; ++r)
        for (int c = 0; c < rect.w; ++c)
            bytes[o++] = plane.at(rect.y + r, rect.x + c);
    return bytes;
}

void paste_bytes(std::vector<std::uint8_t>& plane, int width, const Rect& rect,
                 std::span<const std::uint8_t> block) {
    std::size_t o = 0;
    for (int r = 0; r < rect.h; ++r)
        for (int c = 0; c < rect.w; ++c)
            plane[static_cast<std::size_t>(rect.y + r) * width + rect.x + c] = block[o++];
}

template <typename F>
void for_each_ctu_parallel(const CtuGrid& grid, int threads, F&& fn) {
    const int n = grid.count();
    const int workers = std::clamp(threads, 1, n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) {
        const int lo = n * t / workers, hi = n * (t + 1) / workers;
        pool.emplace_back([lo, hi, &fn] {
            for (int i = lo; i < hi; ++i)
                fn(i);
        });
    }
    for (std::thread& t : pool)
        t.join();
}

} // namespace

FilterResult filter_sequence(const StresNetWeights& weights, const FrameSequence& degraded,
                             const FrameSequence& original, FilterMode mode, int threads) {
    degraded.validate();
    original.validate();
    if (degraded.width != original.width || degraded.height != original.height ||
        degraded.frame_count() != original.frame_count())
        throw PreconditionError("filter_sequence: degraded/original sequences are not aligned");

    const CtuGrid grid = CtuGrid::for_frame(degraded.width, degraded.height);
    FilterResult result;
    result.filtered = degraded; // start from passthrough
    result.flags.rows = grid.rows;
    result.flags.cols = grid.cols;
    result.flags.frames.assign(degraded.frame_count(), std::vector<std::uint8_t>(grid.count(), 0));
    result.trace.frames.assign(degraded.frame_count(), std::vector<CtuDecision>(grid.count()));

    for (std::size_t fi = 0; fi < degraded.frame_count(); ++fi) {
        const int ref = degraded.reference_index[fi];
        if (ref < 0)
            continue; // no temporal input; frame passes through, flags stay off

        const std::vector<std::uint8_t>& ref_plane =
            mode == FilterMode::in_loop ? result.filtered.frames[ref] : degraded.frames[ref];
        PlaneView ref_view(ref_plane, degraded.width, degraded.height);
        PlaneView deg_view(degraded.frames[fi], degraded.width, degraded.height);
        PlaneView org_view(original.frames[fi], original.width, original.height);

        std::vector<std::uint8_t>& out_plane = result.filtered.frames[fi];
        std::vector<std::uint8_t>& flags = result.flags.frames[fi];
        std::vector<CtuDecision>& trace = result.trace.frames[fi];

        // CTUs are independent; results land in raster-order slots.
        for_each_ctu_parallel(grid, threads, [&](int idx) {
            const Rect rect = grid.rect(idx / grid.cols, idx % grid.cols);
            const std::vector<std::uint8_t> filtered = filter_ctu(weights, deg_view, ref_view, rect);
            const std::vector<std::uint8_t> degraded_block = crop_bytes(deg_view, rect);
            const std::vector<std::uint8_t> original_block = crop_bytes(org_view, rect);
            const CtuDecision d = decide_flag(original_block, degraded_block, filtered);
            trace[idx] = d;
            flags[idx] = d.flag ? 1 : 0;
            if (d.flag)
                paste_bytes(out_plane, degraded.width, rect, filtered);
        });
    }
    return result;
}

std::vector<std::uint8_t> apply_flags(PlaneView degraded,
                                      const std::vector<std::vector<std::uint8_t>>& filtered_blocks,
                                      std::span<const std::uint8_t> flags, const CtuGrid& grid) {
    if (static_cast<int>(flags.size()) != grid.count() ||
        filtered_blocks.size() != static_cast<std::size_t>(grid.count()))
        throw FormatError("apply_flags: flag count " + std::to_string(flags.size()) + " does not match CTU grid (" +
                          std::to_string(grid.count()) + ")");

    std::vector<std::uint8_t> out(degraded.data, degraded.data + static_cast<std::size_t>(degraded.width) * degraded.height);
    for (int idx = 0; idx < grid.count(); ++idx) {
        if (!flags[idx])
            continue;
        const Rect rect = grid.rect(idx / grid.cols, idx % grid.cols);
        if (filtered_blocks[idx].size() != static_cast<std::size_t>(rect.w) * rect.h)
            throw FormatError("apply_flags: filtered block " + std::to_string(idx) + " has wrong size");
        paste_bytes(out, degraded.width, rect, filtered_blocks[idx]);
    }
    return out;
}

FrameSequence replay_sequence(const StresNetWeights& weights, const FrameSequence& degraded,
                              const CtuFlagMap& flags, FilterMode mode, int threads) {
    degraded.validate();
    const CtuGrid grid = CtuGrid::for_frame(degraded.width, degraded.height);
    if (flags.rows != grid.rows || flags.cols != grid.cols || flags.frames.size() != degraded.frame_count())
        throw FormatError("replay_sequence: flag map does not match the sequence geometry");

    FrameSequence out = degraded;
    for (std::size_t fi = 0; fi < degraded.frame_count(); ++fi) {
        if (static_cast<int>(flags.frames[fi].size()) != grid.count())
            throw FormatError("replay_sequence: frame " + std::to_string(fi) + " has wrong flag count");
        const int ref = degraded.reference_index[fi];
        if (ref < 0)
            continue;

        const std::vector<std::uint8_t>& ref_plane =
            mode == FilterMode::in_loop ? out.frames[ref] : degraded.frames[ref];
        PlaneView ref_view(ref_plane, degraded.width, degraded.height);
        PlaneView deg_view(degraded.frames[fi], degraded.width, degraded.height);

        std::vector<std::vector<std::uint8_t>> blocks(grid.count());
        for_each_ctu_parallel(grid, threads, [&](int idx) {
            if (!flags.frames[fi][idx])
                return;
            const Rect rect = grid.rect(idx / grid.cols, idx % grid.cols);
            blocks[idx] = filter_ctu(weights, deg_view, ref_view, rect);
        });
        out.frames[fi] = apply_flags(deg_view, blocks, flags.frames[fi], grid);
    }
    return out;
}

void save_flags(const CtuFlagMap& flags, const std::filesystem::path& destination) {
    std::ofstream f(destination, std::ios::trunc);
    if (!f)
        throw IoError("cannot open " + destination.string() + " for writing");
    for (std::size_t fi = 0; fi < flags.frames.size(); ++fi) {
        f << fi << ' ';
        for (std::uint8_t b : flags.frames[fi])
            f << (b ? '1' : '0');
        f << '\n';
    }
    if (!f)
        throw IoError("short write to " + destination.string());
}

CtuFlagMap load_flags(const std::filesystem::path& source, const CtuGrid& grid) {
    std::ifstream f(source);
    if (!f)
        throw IoError("cannot open flag file " + source.string());

    CtuFlagMap map;
    map.rows = grid.rows;
    map.cols = grid.cols;
    std::string line;
    std::size_t expect = 0;
    while (std::getline(f, line)) {
        if (line.empty())
            continue;
        std::istringstream ss(line);
        std::size_t frame;
        std::string bits;
        if (!(ss >> frame >> bits))
            throw FormatError("flag file " + source.string() + ": bad line '" + line + "'");
        if (frame != expect)
            throw FormatError("flag file " + source.string() + ": expected frame " + std::to_string(expect) +
                              ", got " + std::to_string(frame));
        if (static_cast<int>(bits.size()) != grid.count())
            throw FormatError("flag file " + source.string() + ": frame " + std::to_string(frame) + " has " +
                              std::to_string(bits.size()) + " flags, grid has " + std::to_string(grid.count()));
        std::vector<std::uint8_t> row(bits.size());
        for (std::size_t i = 0; i < bits.size(); ++i) {
            if (bits[i] != '0' && bits[i] != '1')
                throw FormatError("flag file " + source.string() + ": invalid flag character '" +
                                  std::string(1, bits[i]) + "'");
            row[i] = bits[i] == '1' ? 1 : 0;
        }
        map.frames.push_back(std::move(row));
        ++expect;
    }
    return map;
}

void save_trace(const RdDecisionTrace& trace, const CtuGrid& grid, const std::filesystem::path& destination) {
    std::ofstream f(destination, std::ios::trunc);
    if (!f)
        throw IoError("cannot open " + destination.string() + " for writing");
    f << "frame,ctu_row,ctu_col,d1,d2,flag\n";
    f.precision(17);
    for (std::size_t fi = 0; fi < trace.frames.size(); ++fi) {
        for (int idx = 0; idx < static_cast<int>(trace.frames[fi].size()); ++idx) {
            const CtuDecision& d = trace.frames[fi][idx];
            f << fi << ',' << idx / grid.cols << ',' << idx % grid.cols << ',' << d.d1 << ',' << d.d2 << ','
              << (d.flag ? 1 : 0) << '\n';
        }
    }
    if (!f)
        throw IoError("short write to " + destination.string());
}

} // namespace stresnet
