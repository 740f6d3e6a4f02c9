// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// JSON records and the on-disk view layout used by the command-line tools.
//
// A view directory holds view<i>.png, view<i>.pfm (optional depth) and
// view<i>.json (intrinsics, optional pose) for i = 1, 2, ...; an optional
// evaluation target uses the stem "target".

#include "canonsplat/image_io.hpp"
#include "canonsplat/metrics.hpp"
#include "canonsplat/scene.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace canonsplat::records {

using json = nlohmann::ordered_json;

inline json
to_json(const CameraIntrinsics &k) {
    return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline json
to_json(const CameraPose &p) {
    const Vec4 q = p.quat();
    return {{"rotation_quat", {q[0], q[1], q[2], q[3]}},
            {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

template <typename Fn>
auto
parse_field(const std::string &what, Fn &&fn) {
    try {
        return fn();
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::Parse, what + ": " + e.what());
    }
}

inline CameraIntrinsics
intrinsics_from_json(const nlohmann::json &j) {
    return parse_field("intrinsics", [&] {
        CameraIntrinsics k{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                           j.at("cy").get<double>(), j.at("width").get<int>(),    j.at("height").get<int>()};
        return k;
    });
}

inline CameraPose
pose_from_json(const nlohmann::json &j) {
    const auto [q, t] = parse_field("pose", [&] {
        const auto qv = j.at("rotation_quat").get<std::vector<double>>();
        const auto tv = j.at("translation").get<std::vector<double>>();
        if (qv.size() != 4 || tv.size() != 3) {
            fail(ErrorKind::Parse, "pose: rotation_quat needs 4 and translation 3 entries");
        }
        return std::pair{Vec4(qv[0], qv[1], qv[2], qv[3]), Vec3(tv[0], tv[1], tv[2])};
    });
    if (!(q.norm() > 0.0) || !q.allFinite() || !t.allFinite()) {
        fail(ErrorKind::Parse, "pose: non-finite or zero quaternion");
    }
    return CameraPose::from_quat(q, t);
}

/// Camera file: intrinsics fields at the top level plus an optional "pose".
inline json
camera_json(const CameraIntrinsics &k, const std::optional<CameraPose> &pose) {
    json j = to_json(k);
    if (pose) {
        j["pose"] = to_json(*pose);
    }
    return j;
}

inline nlohmann::json
read_json(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::Parse, "'" + path.string() + "': " + e.what());
    }
}

inline void
write_text(const std::filesystem::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    }
    out << text;
    if (!out) {
        fail(ErrorKind::Io, "failed writing '" + path.string() + "'");
    }
}

inline void
write_json(const std::filesystem::path &path, const json &j) {
    write_text(path, j.dump(2) + "\n");
}

inline void
write_view(const std::filesystem::path &dir, const std::string &stem, const ViewBundle &v) {
    std::filesystem::create_directories(dir);
    io::write_png(v.image, dir / (stem + ".png"));
    if (v.depth) {
        io::write_pfm(*v.depth, dir / (stem + ".pfm"));
    }
    write_json(dir / (stem + ".json"), camera_json(v.intrinsics, v.pose));
}

/// PNG colors are 8-bit, so a read view differs from the written one by at
/// most half a quantization step.
inline ViewBundle
read_view(const std::filesystem::path &dir, const std::string &stem) {
    ViewBundle v;
    v.image = io::read_png(dir / (stem + ".png"));
    if (v.image.channels() != 3) {
        fail(ErrorKind::Parse, "'" + (dir / (stem + ".png")).string() + "': expected an RGB image");
    }
    const auto cam = read_json(dir / (stem + ".json"));
    v.intrinsics = intrinsics_from_json(cam);
    if (cam.contains("pose")) {
        v.pose = pose_from_json(cam.at("pose"));
    }
    if (std::filesystem::exists(dir / (stem + ".pfm"))) {
        v.depth = io::read_pfm(dir / (stem + ".pfm"));
    }
    if (v.intrinsics.width != v.width() || v.intrinsics.height != v.height()) {
        fail(ErrorKind::Parse, "'" + (dir / (stem + ".json")).string() + "': intrinsics size does not match image");
    }
    v.validate();
    return v;
}

/// view1, view2, ... until the first missing index.
inline std::vector<ViewBundle>
read_views(const std::filesystem::path &dir) {
    if (!std::filesystem::is_directory(dir)) {
        fail(ErrorKind::Io, "'" + dir.string() + "' is not a directory");
    }
    std::vector<ViewBundle> views;
    for (int i = 1; std::filesystem::exists(dir / ("view" + std::to_string(i) + ".png")); ++i) {
        views.push_back(read_view(dir, "view" + std::to_string(i)));
    }
    return views;
}

enum class Stage { Pnp, Refined };

struct PoseRecord {
    std::string pair_id;
    Stage stage = Stage::Pnp;
    CameraPose pose;
    std::optional<metrics::PoseError> error;
    int inliers = 0;
    int steps_run = 0;
};

inline json
to_json(const PoseRecord &r) {
    json j;
    j["pair_id"] = r.pair_id;
    j["stage"] = r.stage == Stage::Pnp ? "pnp" : "refined";
    const json p = to_json(r.pose);
    j["rotation_quat"] = p["rotation_quat"];
    j["translation"] = p["translation"];
    if (r.error) {
        j["rot_err_deg"] = r.error->rotation_deg;
        j["trans_err_deg"] = r.error->translation_dir_deg;
    }
    j["inliers"] = r.inliers;
    j["steps_run"] = r.steps_run;
    return j;
}

struct MetricsRecord {
    std::string scene_id;
    double psnr = 0.0;
    double ssim = 0.0;
    std::optional<double> lpips;
    double rot_deg = 0.0;
    double trans_deg = 0.0;
    std::string overlap_bin;
};

inline json
to_json(const MetricsRecord &r) {
    json j;
    j["scene_id"] = r.scene_id;
    j["psnr"] = r.psnr;
    j["ssim"] = r.ssim;
    if (r.lpips) {
        j["lpips"] = *r.lpips;
    }
    j["rot_deg"] = r.rot_deg;
    j["trans_deg"] = r.trans_deg;
    j["overlap_bin"] = r.overlap_bin;
    return j;
}

} // namespace canonsplat::records
