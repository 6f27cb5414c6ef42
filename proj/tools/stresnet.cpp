// Command-line front end: dataset generation, training, CTU-level filtering
// and evaluation, each writing a manifest that pins the resolved run
// configuration.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "stresnet/dataset.hpp"
#include "stresnet/metrics.hpp"
#include "stresnet/model.hpp"
#include "stresnet/pipeline.hpp"
#include "stresnet/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

#ifndef STRESNET_VERSION
#define STRESNET_VERSION "0.0.0"
#endif

int default_threads() {
    if (const char* env = std::getenv("STRESNET_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1)
            return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void write_manifest(const fs::path& path, const json& entries) {
    json manifest = entries;
    manifest["tool"] = "stresnet";
    manifest["version"] = STRESNET_VERSION;
    std::ofstream f(path, std::ios::trunc);
    if (!f)
        throw stresnet::IoError("cannot write manifest " + path.string());
    f << manifest.dump(2) << '\n';
}

void require_file(const fs::path& path, const char* what) {
    if (!fs::exists(path))
        throw stresnet::ConfigError(std::string(what) + " not found: " + path.string());
}

double mean_psnr(const stresnet::FrameSequence& a, const stresnet::FrameSequence& b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.frame_count(); ++i)
        sum += stresnet::psnr(a.frames[i], b.frames[i]);
    return sum / static_cast<double>(a.frame_count());
}

// ---------------------------------------------------------------- extract

struct ExtractArgs {
    std::string pristine, degraded, refs, out;
    int width = 0, height = 0, frames = 0;
    int stride = stresnet::kDefaultExtractStride;
    int qp = 37;
    std::uint64_t seed = 1;
    double degrade_step = 0.0;
    double degrade_qp = 0.0;
};

int run_extract(const ExtractArgs& a) {
    require_file(a.pristine, "pristine input");
    stresnet::FrameSequence pristine = stresnet::load_yuv(a.pristine, a.width, a.height, a.frames);
    if (!a.refs.empty())
        stresnet::load_reference_index(pristine, a.refs);

    stresnet::FrameSequence degraded;
    double resolved_step = 0.0;
    if (!a.degraded.empty()) {
        require_file(a.degraded, "degraded input");
        degraded = stresnet::load_yuv(a.degraded, a.width, a.height, a.frames);
        degraded.reference_index = pristine.reference_index;
    } else {
        resolved_step = a.degrade_step > 0.0 ? a.degrade_step : stresnet::quant_step_from_qp(a.degrade_qp);
        degraded = stresnet::degrade(pristine, stresnet::DegradeSpec{resolved_step});
    }

    auto samples = stresnet::extract_samples(pristine, degraded, a.stride);
    if (samples.empty()) {
        std::cerr << "warning: no samples extracted (frames smaller than " << stresnet::kSampleBlockSize
                  << "x" << stresnet::kSampleBlockSize << " or no reference frames)\n";
        return 1;
    }
    stresnet::SampleStore store = stresnet::shuffle_store(std::move(samples), a.seed, a.qp);
    stresnet::save_store(store, a.out);

    write_manifest(fs::path(a.out).string() + ".manifest.json",
                   {{"command", "extract"},
                    {"pristine", a.pristine},
                    {"degraded", a.degraded.empty() ? json(nullptr) : json(a.degraded)},
                    {"degrade_step", resolved_step},
                    {"width", a.width},
                    {"height", a.height},
                    {"frames", a.frames},
                    {"stride", a.stride},
                    {"qp", a.qp},
                    {"seed", a.seed},
                    {"reference_index_file", a.refs},
                    {"out", a.out},
                    {"samples", store.samples.size()}});
    std::cout << "samples=" << store.samples.size() << '\n';
    return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
    std::string store, out, loss_log;
    int qp = -1; // default: store tag
    long iterations = -1;
    double lr = -1.0, beta1 = -1.0, beta2 = -1.0, epsilon = -1.0;
    int batch_size = -1;
    int holdout = 0;
    std::uint64_t seed = 0;
    int threads = default_threads();
};

int run_train(const TrainArgs& a) {
    require_file(a.store, "sample store");
    stresnet::SampleStore store = stresnet::load_store(a.store);
    const int qp = a.qp >= 0 ? a.qp : store.qp;

    stresnet::HyperParams hp = stresnet::HyperParams::defaults_for_qp(qp);
    if (a.iterations > 0)
        hp.iterations = a.iterations;
    if (a.lr > 0.0)
        hp.base_learning_rate = a.lr;
    if (a.beta1 >= 0.0)
        hp.beta1 = a.beta1;
    if (a.beta2 >= 0.0)
        hp.beta2 = a.beta2;
    if (a.epsilon > 0.0)
        hp.adam_epsilon = a.epsilon;
    if (a.batch_size > 0)
        hp.batch_size = a.batch_size;
    hp.holdout_count = a.holdout;
    hp.seed = a.seed;
    hp.threads = a.threads;

    const fs::path loss_path = a.loss_log.empty() ? fs::path(a.out + ".loss.txt") : fs::path(a.loss_log);
    std::ofstream loss_file(loss_path, std::ios::trunc);
    if (!loss_file)
        throw stresnet::IoError("cannot write loss log " + loss_path.string());

    stresnet::TrainCallbacks cb;
    cb.log = [&](long iter, double mean_loss) { loss_file << iter << '\t' << mean_loss << '\n'; };
    cb.checkpoint = [&](long iter, const stresnet::StresNetWeights& w) {
        char suffix[32];
        std::snprintf(suffix, sizeof suffix, ".ckpt%08ld", iter);
        stresnet::save_model(w, a.out + suffix);
    };

    auto [weights, report] = stresnet::train(store, hp, cb);
    stresnet::save_model(weights, a.out);

    write_manifest(a.out + ".manifest.json", {{"command", "train"},
                                              {"store", a.store},
                                              {"out", a.out},
                                              {"loss_log", loss_path.string()},
                                              {"qp", qp},
                                              {"iterations", hp.iterations},
                                              {"base_learning_rate", hp.base_learning_rate},
                                              {"beta1", hp.beta1},
                                              {"beta2", hp.beta2},
                                              {"adam_epsilon", hp.adam_epsilon},
                                              {"batch_size", hp.batch_size},
                                              {"holdout", hp.holdout_count},
                                              {"seed", hp.seed},
                                              {"threads", hp.threads},
                                              {"initial_loss", report.initial_loss},
                                              {"final_loss", report.final_loss}});
    std::cout << "initial_loss=" << report.initial_loss << '\n'
              << "final_loss=" << report.final_loss << '\n'
              << "model=" << a.out << '\n';
    return 0;
}

// ----------------------------------------------------------------- filter

struct FilterArgs {
    std::string model, degraded, original, refs, out, flags, trace;
    int width = 0, height = 0, frames = 0;
    std::string mode = "in_loop";
    int threads = default_threads();
};

int run_filter(const FilterArgs& a) {
    require_file(a.model, "model file");
    require_file(a.degraded, "degraded input");
    require_file(a.original, "original input");

    const stresnet::StresNetWeights weights = stresnet::load_model(a.model);
    stresnet::FrameSequence degraded = stresnet::load_yuv(a.degraded, a.width, a.height, a.frames);
    stresnet::FrameSequence original = stresnet::load_yuv(a.original, a.width, a.height, a.frames);
    if (!a.refs.empty()) {
        stresnet::load_reference_index(degraded, a.refs);
        original.reference_index = degraded.reference_index;
    }

    const stresnet::FilterMode mode =
        a.mode == "out_of_loop" ? stresnet::FilterMode::out_of_loop : stresnet::FilterMode::in_loop;
    stresnet::FilterResult result = stresnet::filter_sequence(weights, degraded, original, mode, a.threads);

    const std::string flags_path = a.flags.empty() ? a.out + ".flags.txt" : a.flags;
    const std::string trace_path = a.trace.empty() ? a.out + ".trace.csv" : a.trace;
    stresnet::save_yuv(result.filtered, a.out, fs::path(a.degraded));
    stresnet::save_flags(result.flags, flags_path);
    const stresnet::CtuGrid grid = stresnet::CtuGrid::for_frame(a.width, a.height);
    stresnet::save_trace(result.trace, grid, trace_path);

    const double psnr_before = mean_psnr(degraded, original);
    const double psnr_after = mean_psnr(result.filtered, original);
    std::size_t enabled = 0, total = 0;
    for (const auto& frame : result.flags.frames) {
        total += frame.size();
        for (auto f : frame)
            enabled += f;
    }

    write_manifest(a.out + ".manifest.json", {{"command", "filter"},
                                              {"model", a.model},
                                              {"degraded", a.degraded},
                                              {"original", a.original},
                                              {"width", a.width},
                                              {"height", a.height},
                                              {"frames", a.frames},
                                              {"mode", a.mode},
                                              {"reference_index_file", a.refs},
                                              {"threads", a.threads},
                                              {"out", a.out},
                                              {"flags", flags_path},
                                              {"trace", trace_path},
                                              {"qp", weights.qp},
                                              {"flags_enabled", enabled},
                                              {"flags_total", total},
                                              {"mean_psnr_before_db", psnr_before},
                                              {"mean_psnr_after_db", psnr_after}});

    std::cout.precision(10);
    std::cout << "mean_psnr_before_db=" << psnr_before << '\n'
              << "mean_psnr_after_db=" << psnr_after << '\n'
              << "mean_psnr_gain_db=" << psnr_after - psnr_before << '\n'
              << "flags_enabled=" << enabled << "/" << total << '\n';
    return 0;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
    std::vector<std::string> psnr_files;
    int width = 0, height = 0, frames = 0;
    std::vector<std::string> bdrate_files;
    std::vector<double> dt;
    std::string manifest;
};

int run_eval(const EvalArgs& a) {
    json manifest_entries = {{"command", "eval"}};
    std::cout.precision(10);

    if (!a.psnr_files.empty()) {
        require_file(a.psnr_files[0], "first sequence");
        require_file(a.psnr_files[1], "second sequence");
        stresnet::FrameSequence x = stresnet::load_yuv(a.psnr_files[0], a.width, a.height, a.frames);
        stresnet::FrameSequence y = stresnet::load_yuv(a.psnr_files[1], a.width, a.height, a.frames);
        double sum_psnr = 0.0, sum_mse = 0.0;
        for (std::size_t i = 0; i < x.frame_count(); ++i) {
            const double m = stresnet::mse(x.frames[i], y.frames[i]);
            sum_mse += m;
            sum_psnr += stresnet::psnr_from_mse(m);
            std::cout << "frame " << i << " mse=" << m << " psnr_db=" << stresnet::psnr_from_mse(m) << '\n';
        }
        const double mean = sum_psnr / static_cast<double>(x.frame_count());
        std::cout << "mean_mse=" << sum_mse / static_cast<double>(x.frame_count()) << '\n'
                  << "mean_psnr_db=" << mean << '\n';
        manifest_entries["a"] = a.psnr_files[0];
        manifest_entries["b"] = a.psnr_files[1];
        manifest_entries["mean_psnr_db"] = std::isinf(mean) ? json("inf") : json(mean);
    } else if (!a.bdrate_files.empty()) {
        auto anchor = stresnet::load_rd_csv(a.bdrate_files[0]);
        auto test = stresnet::load_rd_csv(a.bdrate_files[1]);
        stresnet::BdRateResult r = stresnet::bd_rate(anchor, test);
        for (const std::string& w : r.warnings)
            std::cerr << "warning: " << w << '\n';
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.2f%%", r.percent);
        std::cout << "bd_rate=" << buf << '\n';
        std::cout << "bd_rate_exact=" << r.percent << '\n';
        manifest_entries["anchor"] = a.bdrate_files[0];
        manifest_entries["test"] = a.bdrate_files[1];
        manifest_entries["bd_rate_percent"] = r.percent;
    } else if (!a.dt.empty()) {
        stresnet::TimingReport r = stresnet::report_timing({a.dt[0], a.dt[1]});
        char inc[64], ratio[64];
        std::snprintf(inc, sizeof inc, "%.1f%%", r.increment * 100.0);
        std::snprintf(ratio, sizeof ratio, "%.1f%%", r.ratio * 100.0);
        std::cout << "time_increment=" << r.increment << '\n'
                  << "time_increment_percent=" << inc << '\n'
                  << "time_ratio_percent=" << ratio << '\n';
        manifest_entries["baseline_seconds"] = a.dt[0];
        manifest_entries["modified_seconds"] = a.dt[1];
        manifest_entries["time_increment"] = r.increment;
    } else {
        throw stresnet::ConfigError("eval: one of --psnr, --bdrate, --dt is required");
    }

    if (!a.manifest.empty())
        write_manifest(a.manifest, manifest_entries);
    return 0;
}

// ------------------------------------------------------------------- demo

// Small moving clip mixing sinusoidal texture with a drifting block pattern;
// the block edges give the DCT degradation visible, learnable artifacts. No
// external assets needed.
stresnet::FrameSequence demo_sequence(int width, int height, int frames) {
    stresnet::FrameSequence seq;
    seq.width = width;
    seq.height = height;
    for (int f = 0; f < frames; ++f) {
        std::vector<std::uint8_t> plane(static_cast<std::size_t>(width) * height);
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c) {
                const double dx = c + 1.5 * f; // horizontal drift
                const double v = 120.0 + 55.0 * std::sin(0.19 * dx) * std::cos(0.13 * r) +
                                 40.0 * std::sin(0.041 * dx * 0.7 + 0.057 * r) +
                                 10.0 * ((r / 8 + static_cast<int>(dx) / 8) % 2 ? 1.0 : -1.0);
                plane[static_cast<std::size_t>(r) * width + c] =
                    static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
            }
        seq.frames.push_back(std::move(plane));
        seq.reference_index.push_back(f - 1);
    }
    return seq;
}

struct DemoArgs {
    std::string workdir = "demo_out";
    long iterations = 2500;
    int threads = default_threads();
};

int run_demo(const DemoArgs& a) {
    fs::create_directories(a.workdir);
    const fs::path dir(a.workdir);
    const int width = 160, height = 96, frames = 12;

    std::cout << "[1/5] synthesizing " << frames << " frames of " << width << "x" << height << "\n";
    stresnet::FrameSequence pristine = demo_sequence(width, height, frames);
    stresnet::save_yuv(pristine, dir / "pristine.yuv");

    std::cout << "[2/5] degrading (DCT quantization, step 16)\n";
    stresnet::FrameSequence degraded = stresnet::degrade(pristine, stresnet::DegradeSpec{16.0});
    stresnet::save_yuv(degraded, dir / "degraded.yuv");

    std::cout << "[3/5] extracting training samples\n";
    stresnet::SampleStore store = stresnet::shuffle_store(stresnet::extract_samples(pristine, degraded), 1, 37);
    stresnet::save_store(store, dir / "samples.stds");
    std::cout << "      samples=" << store.samples.size() << '\n';

    std::cout << "[4/5] training " << a.iterations << " iterations\n";
    stresnet::HyperParams hp = stresnet::HyperParams::defaults_for_qp(37);
    hp.base_learning_rate = 3e-5; // grows the net from cold init within a short run
    hp.iterations = a.iterations;
    hp.batch_size = 8;
    hp.seed = 1;
    hp.threads = a.threads;
    auto [weights, report] = stresnet::train(store, hp, {});
    stresnet::save_model(weights, dir / "model.strn");
    std::cout << "      loss " << report.initial_loss << " -> " << report.final_loss << '\n';

    std::cout << "[5/5] filtering with CTU-level RD flags\n";
    stresnet::FilterResult result =
        stresnet::filter_sequence(weights, degraded, pristine, stresnet::FilterMode::in_loop, a.threads);
    stresnet::save_yuv(result.filtered, dir / "filtered.yuv");
    stresnet::save_flags(result.flags, dir / "filtered.flags.txt");
    stresnet::save_trace(result.trace, stresnet::CtuGrid::for_frame(width, height), dir / "filtered.trace.csv");

    const double before = mean_psnr(degraded, pristine);
    const double after = mean_psnr(result.filtered, pristine);
    std::size_t enabled = 0, total = 0;
    for (const auto& f : result.flags.frames) {
        total += f.size();
        for (auto b : f)
            enabled += b;
    }
    std::cout.precision(6);
    std::cout << "degraded PSNR " << before << " dB, filtered PSNR " << after << " dB (gain "
              << after - before << " dB), flags " << enabled << "/" << total << '\n';

    write_manifest(dir / "demo.manifest.json", {{"command", "demo"},
                                                {"workdir", a.workdir},
                                                {"iterations", a.iterations},
                                                {"threads", a.threads},
                                                {"width", width},
                                                {"height", height},
                                                {"frames", frames},
                                                {"samples", store.samples.size()},
                                                {"mean_psnr_before_db", before},
                                                {"mean_psnr_after_db", after},
                                                {"flags_enabled", enabled}});
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"STResNet spatial-temporal residue filter toolkit"};
    app.set_version_flag("--version", STRESNET_VERSION);
    app.require_subcommand(1);

    ExtractArgs ex;
    CLI::App* extract = app.add_subcommand("extract", "build a training-sample store from YUV input");
    extract->add_option("--pristine", ex.pristine, "pristine 4:2:0 YUV file")->required();
    extract->add_option("--degraded", ex.degraded, "degraded 4:2:0 YUV file (pairs with --pristine)");
    extract->add_option("--degrade-step", ex.degrade_step, "simulate degradation with this quantization step");
    extract->add_option("--degrade-qp", ex.degrade_qp, "simulate degradation with a QP-like parameter");
    extract->add_option("--width", ex.width, "frame width")->required();
    extract->add_option("--height", ex.height, "frame height")->required();
    extract->add_option("--frames", ex.frames, "frame count")->required();
    extract->add_option("--stride", ex.stride, "extraction stride in pixels");
    extract->add_option("--qp", ex.qp, "qp tag recorded in the store");
    extract->add_option("--seed", ex.seed, "shuffle seed");
    extract->add_option("--refs", ex.refs, "per-frame reference-index file");
    extract->add_option("--out", ex.out, "output store path")->required();

    TrainArgs tr;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model on a sample store");
    train_cmd->add_option("--store", tr.store, "sample store")->required();
    train_cmd->add_option("--out", tr.out, "output model path")->required();
    train_cmd->add_option("--qp", tr.qp, "override the store's qp tag");
    train_cmd->add_option("--iterations", tr.iterations, "iteration count override");
    train_cmd->add_option("--lr", tr.lr, "base learning rate override");
    train_cmd->add_option("--beta1", tr.beta1, "Adam momentum override");
    train_cmd->add_option("--beta2", tr.beta2, "Adam momentum2 override");
    train_cmd->add_option("--epsilon", tr.epsilon, "Adam epsilon override");
    train_cmd->add_option("--batch-size", tr.batch_size, "batch size override");
    train_cmd->add_option("--holdout", tr.holdout, "samples held out for the final loss");
    train_cmd->add_option("--seed", tr.seed, "weight-init seed");
    train_cmd->add_option("--threads", tr.threads, "worker threads");
    train_cmd->add_option("--loss-log", tr.loss_log, "loss log path (default <out>.loss.txt)");

    FilterArgs fl;
    CLI::App* filter_cmd = app.add_subcommand("filter", "apply the filter with CTU-level RD flags");
    filter_cmd->add_option("--model", fl.model, "model file")->required();
    filter_cmd->add_option("--degraded", fl.degraded, "degraded 4:2:0 YUV file")->required();
    filter_cmd->add_option("--original", fl.original, "original 4:2:0 YUV file (for RD decisions)")->required();
    filter_cmd->add_option("--width", fl.width, "frame width")->required();
    filter_cmd->add_option("--height", fl.height, "frame height")->required();
    filter_cmd->add_option("--frames", fl.frames, "frame count")->required();
    filter_cmd->add_option("--mode", fl.mode, "in_loop or out_of_loop")
        ->check(CLI::IsMember({"in_loop", "out_of_loop"}));
    filter_cmd->add_option("--refs", fl.refs, "per-frame reference-index file");
    filter_cmd->add_option("--threads", fl.threads, "worker threads");
    filter_cmd->add_option("--out", fl.out, "output YUV path")->required();
    filter_cmd->add_option("--flags", fl.flags, "flag sidecar path (default <out>.flags.txt)");
    filter_cmd->add_option("--trace", fl.trace, "RD trace CSV path (default <out>.trace.csv)");

    EvalArgs ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "PSNR, BD-rate and timing reports");
    eval_cmd->add_option("--psnr", ev.psnr_files, "two YUV files to compare")->expected(2);
    eval_cmd->add_option("--width", ev.width, "frame width (with --psnr)");
    eval_cmd->add_option("--height", ev.height, "frame height (with --psnr)");
    eval_cmd->add_option("--frames", ev.frames, "frame count (with --psnr)");
    eval_cmd->add_option("--bdrate", ev.bdrate_files, "anchor and test RD CSV files")->expected(2);
    eval_cmd->add_option("--dt", ev.dt, "baseline and modified times")->expected(2);
    eval_cmd->add_option("--manifest", ev.manifest, "manifest output path");

    DemoArgs dm;
    CLI::App* demo_cmd = app.add_subcommand("demo", "end-to-end smoke run on a synthetic clip");
    demo_cmd->add_option("--workdir", dm.workdir, "output directory");
    demo_cmd->add_option("--iterations", dm.iterations, "training iterations");
    demo_cmd->add_option("--threads", dm.threads, "worker threads");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*extract)
            return run_extract(ex);
        if (*train_cmd)
            return run_train(tr);
        if (*filter_cmd)
            return run_filter(fl);
        if (*eval_cmd)
            return run_eval(ev);
        if (*demo_cmd)
            return run_demo(dm);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
