// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

// canonsplat command-line tool.
//
// Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 degenerate
// geometry. Log level comes from CANONSPLAT_LOG (trace ... off).

#include "canonsplat.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace canonsplat;
using json = records::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitGeometry = 4;

int
exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::Parse:
        return kExitIo;
    case ErrorKind::Geometry:
        return kExitGeometry;
    case ErrorKind::InvalidArgument:
    case ErrorKind::Config:
        break;
    }
    return kExitConfig;
}

void
setup_logging() {
    auto logger = spdlog::stderr_color_mt("canonsplat");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::info);
    if (const char *env = std::getenv("CANONSPLAT_LOG")) {
        const auto level = spdlog::level::from_str(env);
        // from_str maps unknown names to off; only accept real names
        if (level != spdlog::level::off || std::string(env) == "off") {
            spdlog::set_level(level);
        } else {
            spdlog::warn("CANONSPLAT_LOG='{}' is not a log level; keeping info", env);
        }
    }
}

/// Writes to `out`, or to stdout when `out` is empty.
void
emit(const json &j, const std::string &out) {
    const std::string text = j.dump(2) + "\n";
    if (out.empty()) {
        std::cout << text;
    } else {
        records::write_text(out, text);
    }
}

// ---- render ---------------------------------------------------------------

struct RenderJob {
    std::string scene;
    std::string camera;
    std::string out;
    int width = 256;
    int height = 256;
    std::vector<double> background = {0.0, 0.0, 0.0};
    unsigned jobs = 1;
};

int
cmd_render(const RenderJob &job) {
    const auto scene = ply::read_scene(job.scene);
    CameraIntrinsics k = CameraIntrinsics::from_heuristic(job.width, job.height);
    CameraPose pose;
    if (!job.camera.empty()) {
        const auto cam = records::read_json(job.camera);
        if (cam.contains("fx")) {
            k = records::intrinsics_from_json(cam);
        }
        if (cam.contains("pose")) {
            pose = records::pose_from_json(cam.at("pose"));
        }
    }
    if (!k.valid()) {
        fail(ErrorKind::Config, "camera: invalid intrinsics");
    }
    raster::RenderSettings rs;
    rs.jobs = job.jobs;
    const Vec3 bg(job.background[0], job.background[1], job.background[2]);
    const auto r = raster::render(scene, {k, pose}, bg, rs);

    const fs::path out(job.out);
    fs::create_directories(out);
    io::write_png(r.color, out / "color.png");
    io::write_pfm(r.depth, out / "depth.pfm");
    io::write_pfm(r.alpha, out / "alpha.pfm");
    double coverage = 0.0;
    for (double a : r.alpha.data()) {
        coverage += a;
    }
    json summary;
    summary["scene"] = fs::path(job.scene).filename().string();
    summary["primitives"] = scene.size();
    summary["intrinsics"] = records::to_json(k);
    summary["pose"] = records::to_json(pose);
    summary["background"] = job.background;
    summary["mean_alpha"] = coverage / static_cast<double>(r.alpha.size());
    summary["outputs"] = {"color.png", "depth.pfm", "alpha.pfm"};
    records::write_json(out / "summary.json", summary);
    spdlog::info("rendered {} primitives at {}x{} into {}", scene.size(), k.width, k.height, out.string());
    return 0;
}

// ---- estimate-pose ----------------------------------------------------------

struct PoseJob {
    std::string views;
    std::string predictor = "oracle-canonical";
    std::string out;
    bool no_refine = false;
    int query_view = 2;
    int steps = 200;
    std::uint64_t seed = 0;
};

std::vector<records::PoseRecord>
estimate_pose(const std::vector<ViewBundle> &views, const GaussianPredictor &predictor, const PoseJob &job,
              const std::string &pair_id) {
    if (job.query_view < 2 || job.query_view > static_cast<int>(views.size())) {
        fail(ErrorKind::Config, "--query-view must name a view in [2, " + std::to_string(views.size()) + "]");
    }
    const auto &query = views[static_cast<std::size_t>(job.query_view - 1)];
    const auto scene = predictor.predict(views);
    pnp::PnPConfig pc;
    pc.seed = job.seed;
    const auto coarse = pnp::coarse_pose_pnp(scene, job.query_view, query.intrinsics, pc);

    std::optional<CameraPose> gt;
    if (views.front().pose && query.pose) {
        gt = synth::relative_pose(views.front(), query);
    }
    auto make = [&](records::Stage stage, const CameraPose &pose, int steps) {
        records::PoseRecord r;
        r.pair_id = pair_id;
        r.stage = stage;
        r.pose = pose;
        r.inliers = coarse.inliers;
        r.steps_run = steps;
        if (gt) {
            r.error = metrics::pose_error(pose, *gt);
        }
        return r;
    };
    std::vector<records::PoseRecord> out = {make(records::Stage::Pnp, coarse.pose, 0)};
    spdlog::info("{}: PnP with {} inliers", pair_id, coarse.inliers);
    if (!job.no_refine) {
        RefineConfig rc;
        rc.steps = job.steps;
        const auto refined = refine_pose(scene, query.image, query.intrinsics, coarse.pose, rc);
        out.push_back(make(records::Stage::Refined, refined.pose, refined.steps_run));
    }
    return out;
}

int
cmd_estimate_pose(const PoseJob &job) {
    const auto views = records::read_views(job.views);
    if (views.size() < 2) {
        fail(ErrorKind::Config, "--views: '" + job.views + "' holds fewer than two views");
    }
    const auto predictor = make_predictor(job.predictor);
    json out = json::array();
    for (const auto &r : estimate_pose(views, *predictor, job, fs::path(job.views).filename().string())) {
        out.push_back(records::to_json(r));
    }
    emit(out, job.out);
    return 0;
}

// ---- evaluate ---------------------------------------------------------------

struct EvalJob {
    std::string manifest;
    std::string predictor = "oracle-canonical";
    std::string out;
    std::vector<double> thresholds = metrics::kDefaultAucThresholds;
    bool no_refine = false;
    int steps = 200;
    unsigned jobs = 1;
    std::uint64_t seed = 0;
};

struct PairResult {
    bool ok = false;
    std::string error;
    records::MetricsRecord metrics;
    double combined_deg = 0.0;
};

PairResult
evaluate_pair(const fs::path &dir, const evalset::OverlapRecord &overlap, const GaussianPredictor &predictor,
              const EvalJob &job) {
    PairResult res;
    const auto views = records::read_views(dir);
    if (views.size() < 2) {
        fail(ErrorKind::Io, "'" + dir.string() + "' holds fewer than two views");
    }
    const auto target = records::read_view(dir, "target");
    if (!views.front().pose || !target.pose || !views[1].pose) {
        fail(ErrorKind::Parse, "'" + dir.string() + "': evaluation needs poses for views and target");
    }
    PoseJob pj;
    pj.no_refine = job.no_refine;
    pj.steps = job.steps;
    pj.seed = job.seed;
    const auto poses = estimate_pose(views, predictor, pj, overlap.pair_id);
    const auto &err = *poses.back().error;

    // evaluation-time alignment starts from the dataset pose of the target
    const auto scene = predictor.predict(views);
    RefineConfig rc;
    rc.steps = job.steps;
    const auto aligned =
        align_target_pose(scene, target.image, target.intrinsics, synth::relative_pose(views.front(), target), rc);
    const auto render = raster::render(scene, {target.intrinsics, aligned.pose}).color;

    res.metrics.scene_id = overlap.pair_id;
    res.metrics.psnr = metrics::psnr(render, target.image);
    res.metrics.ssim = metrics::ssim(render, target.image);
    res.metrics.rot_deg = err.rotation_deg;
    res.metrics.trans_deg = err.translation_dir_deg;
    res.metrics.overlap_bin = evalset::to_string(overlap.bin);
    res.combined_deg = err.combined_deg;
    res.ok = true;
    return res;
}

int
cmd_evaluate(const EvalJob &job) {
    const fs::path manifest(job.manifest);
    const auto lines = evalset::read_json_lines(manifest);
    std::vector<evalset::OverlapRecord> overlaps;
    std::vector<fs::path> dirs;
    for (const auto &j : lines) {
        overlaps.push_back(evalset::overlap_from_json(j));
        const std::string dir = j.contains("dir") ? j.at("dir").get<std::string>() : overlaps.back().pair_id;
        dirs.push_back(manifest.parent_path() / dir);
    }
    const auto predictor = make_predictor(job.predictor);
    std::vector<PairResult> results(overlaps.size());
    parallel_for(
        overlaps.size(),
        [&](std::size_t i) {
            try {
                results[i] = evaluate_pair(dirs[i], overlaps[i], *predictor, job);
            } catch (const Error &e) {
                if (e.kind() != ErrorKind::Io && e.kind() != ErrorKind::Parse && e.kind() != ErrorKind::Geometry) {
                    throw;
                }
                results[i].error = e.what();
            }
        },
        job.jobs);

    json pairs = json::array();
    json skipped = json::array();
    std::vector<double> errors;
    struct Acc {
        int count = 0;
        double psnr = 0.0, ssim = 0.0;
    };
    std::map<std::string, Acc> bins;
    Acc overall;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto &r = results[i];
        if (!r.ok) {
            spdlog::warn("skipping pair '{}': {}", overlaps[i].pair_id, r.error);
            skipped.push_back(overlaps[i].pair_id);
            continue;
        }
        pairs.push_back(records::to_json(r.metrics));
        errors.push_back(r.combined_deg);
        for (Acc *a : {&bins[r.metrics.overlap_bin], &overall}) {
            ++a->count;
            a->psnr += r.metrics.psnr;
            a->ssim += r.metrics.ssim;
        }
    }
    auto summarize = [](const Acc &a) {
        return json{{"count", a.count}, {"psnr", a.psnr / a.count}, {"ssim", a.ssim / a.count}};
    };
    json out;
    out["pairs"] = pairs;
    json by_bin = json::object();
    for (const char *name : {"small", "medium", "large", "out-of-range"}) {
        if (bins.count(name) != 0) {
            by_bin[name] = summarize(bins[name]);
        }
    }
    out["bins"] = by_bin;
    out["overall"] = overall.count > 0 ? summarize(overall) : json{{"count", 0}};
    json auc = json::object();
    if (!errors.empty()) {
        const auto values = metrics::pose_auc(errors, job.thresholds);
        for (std::size_t t = 0; t < job.thresholds.size(); ++t) {
            std::ostringstream key;
            key << "auc" << job.thresholds[t];
            auc[key.str()] = values[t];
        }
    }
    out["pose_auc"] = auc;
    out["skipped"] = skipped;
    emit(out, job.out);
    if (!overlaps.empty() && skipped.size() * 10 > overlaps.size()) {
        spdlog::error("{} of {} pairs skipped", skipped.size(), overlaps.size());
        return kExitIo;
    }
    return 0;
}

// ---- make-evalset -------------------------------------------------------------

struct EvalsetJob {
    std::string matches;
    std::string out;
    double threshold = evalset::kDefaultMatchThreshold;
};

/// Pairs are stored as <id>.12.mmap and <id>.21.mmap.
int
cmd_make_evalset(const EvalsetJob &job) {
    std::vector<std::string> ids;
    for (const auto &entry : fs::directory_iterator(job.matches)) {
        const std::string name = entry.path().filename().string();
        const std::string suffix = ".12.mmap";
        if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
            ids.push_back(name.substr(0, name.size() - suffix.size()));
        }
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) {
        spdlog::warn("no match maps found in '{}'", job.matches);
    }
    std::vector<evalset::OverlapRecord> recs;
    std::map<std::string, int> hist = {{"small", 0}, {"medium", 0}, {"large", 0}, {"out-of-range", 0}};
    for (const auto &id : ids) {
        const fs::path dir(job.matches);
        const auto m12 = evalset::read_matchmap(dir / (id + ".12.mmap"));
        const auto m21 = evalset::read_matchmap(dir / (id + ".21.mmap"));
        recs.push_back(evalset::overlap_ratio(m12, m21, job.threshold, id));
        ++hist[evalset::to_string(recs.back().bin)];
    }
    evalset::write_manifest(recs, job.out);
    for (const char *name : {"small", "medium", "large", "out-of-range"}) {
        std::cout << name << ": " << hist[name] << "\n";
    }
    return 0;
}

// ---- ablate-fusion ------------------------------------------------------------

struct AblateJob {
    std::vector<double> noise_deg = {0.0, 1.0, 2.0};
    int trials = 5;
    int size = 256;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
    std::string out;
};

int
cmd_ablate_fusion(const AblateJob &job) {
    struct Trial {
        double canonical = 0.0;
        std::vector<double> baseline;
    };
    std::vector<Trial> trials(static_cast<std::size_t>(job.trials));
    parallel_for(
        trials.size(),
        [&](std::size_t i) {
            synth::SyntheticConfig sc;
            sc.width = sc.height = job.size;
            const std::uint64_t seed = job.seed + i;
            const auto pair = synth::make_pair(seed, sc);
            const Camera cam{pair.views[0].intrinsics, synth::relative_pose(pair.views[0], pair.held_out[0])};
            const auto &target = pair.held_out[0].image;
            trials[i].canonical = metrics::psnr(raster::render(oracle_canonical_predict(pair.views), cam).color, target);
            for (double deg : job.noise_deg) {
                const auto scene = transform_then_fuse_predict(pair.views, PoseNoise{deg, 0.0, seed});
                trials[i].baseline.push_back(metrics::psnr(raster::render(scene, cam).color, target));
            }
        },
        job.jobs);

    json levels = json::array();
    bool monotone = true;
    double prev_mean = 0.0;
    for (std::size_t l = 0; l < job.noise_deg.size(); ++l) {
        json rows = json::array();
        double sum_c = 0.0, sum_b = 0.0;
        for (std::size_t i = 0; i < trials.size(); ++i) {
            const double c = trials[i].canonical, b = trials[i].baseline[l];
            rows.push_back({{"seed", job.seed + i}, {"canonical_psnr", c}, {"baseline_psnr", b}, {"delta_db", c - b}});
            sum_c += c;
            sum_b += b;
        }
        const double n = static_cast<double>(trials.size());
        if (l > 0 && sum_b / n > prev_mean) {
            monotone = false;
        }
        prev_mean = sum_b / n;
        levels.push_back({{"noise_deg", job.noise_deg[l]},
                          {"canonical_psnr", sum_c / n},
                          {"baseline_psnr", sum_b / n},
                          {"mean_delta_db", (sum_c - sum_b) / n},
                          {"trials", rows}});
        spdlog::info("noise {:>5.2f} deg: canonical {:.2f} dB, transform-then-fuse {:.2f} dB", job.noise_deg[l],
                     sum_c / n, sum_b / n);
    }
    emit(json{{"levels", levels}, {"baseline_monotone", monotone}}, job.out);
    return 0;
}

// ---- synth --------------------------------------------------------------------

struct SynthJob {
    std::string out;
    int count = 3;
    int size = 256;
    int views = 2;
    double min_baseline = 15.0;
    double max_baseline = 30.0;
    std::uint64_t seed = 0;
};

/// Geometric match map from view a to view b: score 1 where the surface
/// point seen by a pixel of a projects inside b at the depth b observes.
evalset::MatchMap
geometric_matches(const ViewBundle &a, const ViewBundle &b) {
    const auto &ka = a.intrinsics;
    const auto &kb = b.intrinsics;
    const CameraPose a_to_b = *b.pose * a.pose->inverse();
    evalset::MatchMap m(static_cast<std::uint32_t>(ka.width), static_cast<std::uint32_t>(ka.height));
    for (int row = 0; row < ka.height; ++row) {
        for (int col = 0; col < ka.width; ++col) {
            const Vec3 x = a_to_b.apply(unproject(pixel_center(col, row), (*a.depth)(col, row), ka));
            if (x.z() <= 0.0) {
                continue;
            }
            const Vec2 p = project(x, kb);
            const int bc = static_cast<int>(std::floor(p.x())), br = static_cast<int>(std::floor(p.y()));
            if (bc < 0 || br < 0 || bc >= kb.width || br >= kb.height) {
                continue;
            }
            if (std::abs((*b.depth)(bc, br) - x.z()) < 0.02 * x.z()) {
                m.at(static_cast<std::uint32_t>(col), static_cast<std::uint32_t>(row)) = 1.0F;
            }
        }
    }
    return m;
}

int
cmd_synth(const SynthJob &job) {
    const fs::path out(job.out);
    fs::create_directories(out / "matches");
    synth::SyntheticConfig sc;
    sc.width = sc.height = job.size;
    sc.num_views = job.views;
    sc.min_baseline_deg = job.min_baseline;
    sc.max_baseline_deg = job.max_baseline;
    for (int i = 0; i < job.count; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "pair_%04d", i);
        const auto pair = synth::make_pair(job.seed + static_cast<std::uint64_t>(i), sc);
        for (std::size_t v = 0; v < pair.views.size(); ++v) {
            records::write_view(out / id, "view" + std::to_string(v + 1), pair.views[v]);
        }
        records::write_view(out / id, "target", pair.held_out.front());
        evalset::write_matchmap(geometric_matches(pair.views[0], pair.views[1]),
                                out / "matches" / (std::string(id) + ".12.mmap"));
        evalset::write_matchmap(geometric_matches(pair.views[1], pair.views[0]),
                                out / "matches" / (std::string(id) + ".21.mmap"));
    }
    spdlog::info("wrote {} synthetic pairs to {}", job.count, out.string());
    return 0;
}

} // namespace

int
main(int argc, char **argv) {
    setup_logging();
    CLI::App app{"canonsplat: canonical-space Gaussian splatting toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key = value config file ([subcommand] sections); flags win");

    RenderJob render;
    auto *sub_render = app.add_subcommand("render", "render a stored scene to PNG/PFM");
    sub_render->add_option("--scene", render.scene, "scene PLY")->required()->check(CLI::ExistingFile);
    sub_render->add_option("--camera", render.camera, "camera JSON (intrinsics and/or pose)")
        ->check(CLI::ExistingFile);
    sub_render->add_option("--width", render.width, "image width when the camera has no intrinsics")
        ->check(CLI::PositiveNumber);
    sub_render->add_option("--height", render.height, "image height when the camera has no intrinsics")
        ->check(CLI::PositiveNumber);
    sub_render->add_option("--background", render.background, "background r,g,b")->expected(3)->delimiter(',');
    sub_render->add_option("--jobs", render.jobs, "tile threads");
    sub_render->add_option("--out", render.out, "output directory")->required();

    PoseJob pose;
    auto *sub_pose = app.add_subcommand("estimate-pose", "PnP + photometric refinement of a view pair");
    sub_pose->add_option("--views", pose.views, "pair directory (view1.*, view2.*, ...)")
        ->required()
        ->check(CLI::ExistingDirectory);
    sub_pose->add_option("--predictor", pose.predictor, "oracle-canonical | oracle-transform-fuse | from-file:<ply>");
    sub_pose->add_flag("--no-refine", pose.no_refine, "stop after PnP");
    sub_pose->add_option("--query-view", pose.query_view, "1-based view whose pose is estimated");
    sub_pose->add_option("--steps", pose.steps, "refinement steps")->check(CLI::NonNegativeNumber);
    sub_pose->add_option("--seed", pose.seed, "RANSAC seed");
    sub_pose->add_option("--out", pose.out, "output JSON (default stdout)");

    EvalJob eval;
    auto *sub_eval = app.add_subcommand("evaluate", "per-bin NVS metrics and pose AUC over a manifest");
    sub_eval->add_option("--manifest", eval.manifest, "JSON-lines manifest of pairs")
        ->required()
        ->check(CLI::ExistingFile);
    sub_eval->add_option("--predictor", eval.predictor, "predictor name");
    sub_eval->add_option("--thresholds-deg", eval.thresholds, "AUC thresholds")->delimiter(',');
    sub_eval->add_flag("--no-refine", eval.no_refine, "PnP-only pose estimates");
    sub_eval->add_option("--steps", eval.steps, "refinement/alignment steps")->check(CLI::NonNegativeNumber);
    sub_eval->add_option("--jobs", eval.jobs, "pairs evaluated in parallel");
    sub_eval->add_option("--seed", eval.seed, "RANSAC seed");
    sub_eval->add_option("--out", eval.out, "output JSON (default stdout)");

    EvalsetJob es;
    auto *sub_es = app.add_subcommand("make-evalset", "overlap ratios and bins from match maps");
    sub_es->add_option("--matches", es.matches, "directory of <id>.12.mmap / <id>.21.mmap")
        ->required()
        ->check(CLI::ExistingDirectory);
    sub_es->add_option("--threshold", es.threshold, "valid-match score threshold (strict >)");
    sub_es->add_option("--out", es.out, "manifest (JSON lines)")->required();

    AblateJob ab;
    auto *sub_ab = app.add_subcommand("ablate-fusion", "canonical vs transform-then-fuse under pose noise");
    sub_ab->add_option("--noise-deg", ab.noise_deg, "rotation noise levels")->delimiter(',');
    sub_ab->add_option("--trials", ab.trials, "seeded scenes")->check(CLI::PositiveNumber);
    sub_ab->add_option("--size", ab.size, "image size")->check(CLI::Range(16, 4096));
    sub_ab->add_option("--seed", ab.seed, "first scene seed");
    sub_ab->add_option("--jobs", ab.jobs, "trials in parallel");
    sub_ab->add_option("--out", ab.out, "output JSON (default stdout)");

    SynthJob sy;
    auto *sub_sy = app.add_subcommand("synth", "write synthetic pair directories and match maps");
    sub_sy->add_option("--out", sy.out, "output directory")->required();
    sub_sy->add_option("--count", sy.count, "pairs")->check(CLI::NonNegativeNumber);
    sub_sy->add_option("--size", sy.size, "image size")->check(CLI::Range(16, 4096));
    sub_sy->add_option("--views", sy.views, "input views per pair")->check(CLI::Range(2, 16));
    sub_sy->add_option("--min-baseline", sy.min_baseline, "smallest yaw between outer views (deg)");
    sub_sy->add_option("--max-baseline", sy.max_baseline, "largest yaw between outer views (deg)");
    sub_sy->add_option("--seed", sy.seed, "first scene seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (sub_render->parsed()) {
            return cmd_render(render);
        }
        if (sub_pose->parsed()) {
            return cmd_estimate_pose(pose);
        }
        if (sub_eval->parsed()) {
            return cmd_evaluate(eval);
        }
        if (sub_es->parsed()) {
            return cmd_make_evalset(es);
        }
        if (sub_ab->parsed()) {
            return cmd_ablate_fusion(ab);
        }
        if (sub_sy->parsed()) {
            return cmd_synth(sy);
        }
    } catch (const Error &e) {
        spdlog::error("{}", e.what());
        return exit_code(e.kind());
    } catch (const fs::filesystem_error &e) {
        spdlog::error("{}", e.what());
        return kExitIo;
    }
    return kExitConfig;
}
