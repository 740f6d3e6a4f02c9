// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "canonsplat/scene.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

// Binary little-endian PLY in the 3DGS ecosystem layout:
//   x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3
// opacity stored as logit, scale as natural log, rotation w-first, f_rest
// channel-major. Pixel-alignment metadata travels in extra int properties
// and a header comment; viewers ignore both.
namespace canonsplat::ply {

static_assert(std::endian::native == std::endian::little, "PLY I/O assumes a little-endian host");

namespace detail {

inline double
logit(double p) {
    p = std::clamp(p, 1e-12, 1.0 - 1e-12);
    return std::log(p) - std::log1p(-p);
}

inline double
sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

struct Property {
    std::string name;
    std::string type;
    std::size_t offset = 0;
};

inline std::size_t
type_size(const std::string &t) {
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
    if (t == "double" || t == "float64") return 8;
    return 0;
}

template <typename T>
T
load(const char *p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

inline double
read_value(const char *p, const std::string &t) {
    if (t == "float" || t == "float32") return load<float>(p);
    if (t == "double" || t == "float64") return load<double>(p);
    if (t == "int" || t == "int32") return load<std::int32_t>(p);
    if (t == "uint" || t == "uint32") return load<std::uint32_t>(p);
    if (t == "short" || t == "int16") return load<std::int16_t>(p);
    if (t == "ushort" || t == "uint16") return load<std::uint16_t>(p);
    if (t == "char" || t == "int8") return load<std::int8_t>(p);
    return load<std::uint8_t>(p);
}

[[noreturn]] inline void
parse_error(const std::string &path, const std::string &msg) {
    fail(ErrorKind::Parse, "PLY " + path + ": " + msg);
}

} // namespace detail

/// Property names in on-disk order for a given SH degree.
inline std::vector<std::string>
property_names(int sh_degree, bool pixel_aligned) {
    std::vector<std::string> names = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
    const int rest = 3 * (sh::num_coeffs(sh_degree) - 1);
    for (int i = 0; i < rest; ++i) {
        names.push_back("f_rest_" + std::to_string(i));
    }
    names.insert(names.end(), {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"});
    if (pixel_aligned) {
        names.insert(names.end(), {"source_view", "source_pixel"});
    }
    return names;
}

inline std::string
encode(const CanonicalScene &scene) {
    const auto report = validate_scene(scene);
    require(report.ok(), "write_scene: scene violates invariant '" +
                             (report.ok() ? std::string() : report.violations.front().invariant) + "'");
    const int degree = scene.primitives.empty() ? 0 : scene.primitives.front().sh_degree();
    const int ncoef = sh::num_coeffs(degree);
    const bool aligned = scene.pixel_aligned();

    std::ostringstream out;
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "comment canonsplat num_views " << scene.num_views << " view_height " << scene.view_height
        << " view_width " << scene.view_width << "\n";
    out << "element vertex " << scene.size() << "\n";
    for (const auto &name : property_names(degree, aligned)) {
        const bool is_int = name == "source_view" || name == "source_pixel";
        out << "property " << (is_int ? "int" : "float") << " " << name << "\n";
    }
    out << "end_header\n";

    std::string body;
    const std::size_t stride = (9 + 3 * (ncoef - 1) + 8) * 4 + (aligned ? 8 : 0);
    body.reserve(stride * scene.size());
    auto put_f = [&](double v) {
        const auto f = static_cast<float>(v);
        body.append(reinterpret_cast<const char *>(&f), 4);
    };
    auto put_i = [&](int v) {
        const auto i = static_cast<std::int32_t>(v);
        body.append(reinterpret_cast<const char *>(&i), 4);
    };
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const auto &g = scene.primitives[i];
        put_f(g.center.x());
        put_f(g.center.y());
        put_f(g.center.z());
        put_f(0.0);
        put_f(0.0);
        put_f(0.0);
        for (int c = 0; c < 3; ++c) {
            put_f(g.sh[c]);
        }
        for (int c = 0; c < 3; ++c) {
            for (int m = 1; m < ncoef; ++m) {
                put_f(g.sh[m * 3 + c]);
            }
        }
        put_f(detail::logit(g.opacity));
        for (int k = 0; k < 3; ++k) {
            put_f(std::log(g.scale[k]));
        }
        for (int k = 0; k < 4; ++k) {
            put_f(g.rotation[k]);
        }
        if (aligned) {
            put_i(scene.source_view[i]);
            put_i(scene.source_pixel[i]);
        }
    }
    return out.str() + body;
}

inline CanonicalScene
decode(const std::string &bytes, const std::string &path = "<memory>") {
    std::size_t pos = 0;
    auto next_line = [&]() -> std::string {
        const auto end = bytes.find('\n', pos);
        if (end == std::string::npos) {
            detail::parse_error(path, "malformed header (no end_header)");
        }
        std::string line = bytes.substr(pos, end - pos);
        pos = end + 1;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        return line;
    };

    if (next_line() != "ply") {
        detail::parse_error(path, "malformed header (missing 'ply' magic)");
    }
    CanonicalScene scene;
    std::vector<detail::Property> props;
    std::size_t count = 0;
    std::size_t stride = 0;
    bool in_vertex = false;
    bool seen_vertex = false;
    bool seen_format = false;
    std::size_t other_elements_before = 0;
    for (;;) {
        const std::string line = next_line();
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "end_header") {
            break;
        }
        if (key == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian") {
                detail::parse_error(path, "unsupported format '" + fmt + "'");
            }
            seen_format = true;
        } else if (key == "comment") {
            std::string tag, k;
            ls >> tag;
            if (tag == "canonsplat") {
                int value = 0;
                while (ls >> k >> value) {
                    if (k == "num_views") scene.num_views = value;
                    if (k == "view_height") scene.view_height = value;
                    if (k == "view_width") scene.view_width = value;
                }
            }
        } else if (key == "element") {
            std::string name;
            std::size_t n = 0;
            if (!(ls >> name >> n)) {
                detail::parse_error(path, "malformed header (bad element line)");
            }
            in_vertex = name == "vertex";
            if (in_vertex) {
                count = n;
                seen_vertex = true;
            } else if (!seen_vertex && n > 0) {
                ++other_elements_before;
            }
        } else if (key == "property") {
            std::string type, name;
            if (!(ls >> type >> name) || type == "list") {
                detail::parse_error(path, "malformed header (unsupported property '" + line + "')");
            }
            if (in_vertex) {
                const auto sz = detail::type_size(type);
                if (sz == 0) {
                    detail::parse_error(path, "unknown property type '" + type + "'");
                }
                props.push_back({name, type, stride});
                stride += sz;
            }
        } else if (!key.empty() && key != "obj_info") {
            detail::parse_error(path, "malformed header (unexpected '" + key + "')");
        }
    }
    if (!seen_format) {
        detail::parse_error(path, "malformed header (missing format line)");
    }
    if (!seen_vertex) {
        detail::parse_error(path, "malformed header (missing vertex element)");
    }
    if (other_elements_before > 0) {
        detail::parse_error(path, "unsupported layout (elements before vertex)");
    }

    std::map<std::string, const detail::Property *> by_name;
    for (const auto &p : props) {
        by_name[p.name] = &p;
    }
    auto need = [&](const std::string &name) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) {
            detail::parse_error(path, "missing required property '" + name + "'");
        }
        return it->second;
    };
    const std::vector<std::string> required = {"x",       "y",       "z",       "f_dc_0", "f_dc_1",
                                               "f_dc_2",  "opacity", "scale_0", "scale_1", "scale_2",
                                               "rot_0",   "rot_1",   "rot_2",   "rot_3"};
    for (const auto &r : required) {
        need(r);
    }
    int rest = 0;
    while (by_name.count("f_rest_" + std::to_string(rest)) != 0) {
        ++rest;
    }
    const int degree = rest % 3 == 0 ? sh::degree_for_count(rest / 3 + 1) : -1;
    if (degree < 0) {
        detail::parse_error(path, "unknown SH degree (" + std::to_string(rest) + " f_rest properties)");
    }
    const int ncoef = sh::num_coeffs(degree);
    const bool aligned = by_name.count("source_view") != 0 && by_name.count("source_pixel") != 0;

    if (bytes.size() - pos < count * stride) {
        detail::parse_error(path, "truncated payload: expected " + std::to_string(count * stride) +
                                      " bytes, found " + std::to_string(bytes.size() - pos));
    }

    scene.primitives.resize(count);
    if (aligned) {
        scene.source_view.resize(count);
        scene.source_pixel.resize(count);
    }
    auto get = [&](const char *row, const std::string &name) {
        const auto *p = by_name.at(name);
        return detail::read_value(row + p->offset, p->type);
    };
    for (std::size_t i = 0; i < count; ++i) {
        const char *row = bytes.data() + pos + i * stride;
        auto &g = scene.primitives[i];
        g.center = {get(row, "x"), get(row, "y"), get(row, "z")};
        g.sh.assign(3 * ncoef, 0.0);
        for (int c = 0; c < 3; ++c) {
            g.sh[c] = get(row, "f_dc_" + std::to_string(c));
            for (int m = 1; m < ncoef; ++m) {
                g.sh[m * 3 + c] = get(row, "f_rest_" + std::to_string(c * (ncoef - 1) + m - 1));
            }
        }
        g.opacity = detail::sigmoid(get(row, "opacity"));
        for (int k = 0; k < 3; ++k) {
            g.scale[k] = std::exp(get(row, "scale_" + std::to_string(k)));
        }
        Vec4 q(get(row, "rot_0"), get(row, "rot_1"), get(row, "rot_2"), get(row, "rot_3"));
        if (q.norm() == 0.0) {
            detail::parse_error(path, "zero-norm rotation at vertex " + std::to_string(i));
        }
        if (std::abs(q.norm() - 1.0) > 1e-6) {
            q.normalize();
        }
        g.rotation = so3::canonical(q);
        if (aligned) {
            scene.source_view[i] = static_cast<int>(get(row, "source_view"));
            scene.source_pixel[i] = static_cast<int>(get(row, "source_pixel"));
        }
    }
    if (!aligned) {
        scene.num_views = 0;
        scene.view_height = 0;
        scene.view_width = 0;
    }
    return scene;
}

inline void
write_scene(const CanonicalScene &scene, const std::filesystem::path &path) {
    const std::string bytes = encode(scene);
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        fail(ErrorKind::Io, "cannot open for writing: " + path.string());
    }
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        fail(ErrorKind::Io, "write failed: " + path.string());
    }
}

inline CanonicalScene
read_scene(const std::filesystem::path &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        fail(ErrorKind::Io, "cannot open scene: " + path.string());
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode(ss.str(), path.string());
}

} // namespace canonsplat::ply
