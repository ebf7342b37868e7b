// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include "trifield/scenegen.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "trifield/errors.hpp"
#include "trifield/image.hpp"
#include "trifield/kv.hpp"

namespace trifield {

namespace {

constexpr double kGoldenAngle = 2.399963229728653;  // radians

double smoothstep01(double s) {
    if (s <= 0.0) return 0.0;
    if (s >= 1.0) return 1.0;
    return s * s * (3.0 - 2.0 * s);
}

// Normalized distance: 1 on the primitive surface, 0 at the center.
double normalized_dist(const Primitive& pr, const double p[3]) {
    const double dx = (p[0] - pr.center[0]) / pr.radii[0];
    const double dy = (p[1] - pr.center[1]) / pr.radii[1];
    const double dz = (p[2] - pr.center[2]) / pr.radii[2];
    switch (pr.kind) {
        case PrimitiveKind::sphere:
        case PrimitiveKind::ellipsoid: return std::sqrt(dx * dx + dy * dy + dz * dz);
        case PrimitiveKind::box: return std::max({std::abs(dx), std::abs(dy), std::abs(dz)});
    }
    return 1e30;
}

std::string kind_name(PrimitiveKind k) {
    switch (k) {
        case PrimitiveKind::sphere: return "sphere";
        case PrimitiveKind::ellipsoid: return "ellipsoid";
        case PrimitiveKind::box: return "box";
    }
    return "sphere";
}

PrimitiveKind kind_from_name(const std::string& s) {
    if (s == "sphere") return PrimitiveKind::sphere;
    if (s == "ellipsoid") return PrimitiveKind::ellipsoid;
    if (s == "box") return PrimitiveKind::box;
    throw ConfigError("unknown primitive kind: " + s);
}

Primitive random_primitive(Rng& rng, PrimitiveKind kind) {
    Primitive pr;
    pr.kind = kind;
    const double r_max = 0.45;
    for (int a = 0; a < 3; ++a) {
        pr.radii[a] = rng.uniform(0.15, r_max);
        if (kind == PrimitiveKind::sphere) pr.radii[a] = pr.radii[0];
    }
    const double reach = std::max({pr.radii[0], pr.radii[1], pr.radii[2]});
    for (int a = 0; a < 3; ++a) pr.center[a] = rng.uniform(-(0.95 - reach), 0.95 - reach);
    for (int a = 0; a < 3; ++a) pr.albedo[a] = rng.uniform(0.1, 0.95);
    pr.soft_width = rng.uniform(0.1, 0.25);
    pr.density = rng.uniform(8.0, 16.0);
    return pr;
}

}  // namespace

SceneSpec make_scene(uint64_t seed, const FamilyParams& params) {
    Rng rng(fnv1a64(params.family) ^ (seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull));
    SceneSpec spec;
    spec.seed = seed;
    spec.family = params.family;
    spec.id = params.family + "_" + std::to_string(seed);

    if (params.family == "two-sphere") {
        spec.prims.push_back(random_primitive(rng, PrimitiveKind::sphere));
        spec.prims.push_back(random_primitive(rng, PrimitiveKind::sphere));
    } else if (params.family == "boxes") {
        const int n = rng.uniform_int(1, 3);
        for (int i = 0; i < n; ++i) spec.prims.push_back(random_primitive(rng, PrimitiveKind::box));
    } else if (params.family == "blobs") {
        const int n = rng.uniform_int(2, 4);
        for (int i = 0; i < n; ++i) {
            const int k = rng.uniform_int(0, 2);
            spec.prims.push_back(random_primitive(rng, static_cast<PrimitiveKind>(k)));
        }
    } else {
        throw ConfigError("unknown scene family: " + params.family);
    }
    return spec;
}

void scene_field(const SceneSpec& spec, const double p[3], double& sigma, double rgb[3]) {
    sigma = 0.0;
    rgb[0] = rgb[1] = rgb[2] = 0.0;
    for (const auto& pr : spec.prims) {
        const double nd = normalized_dist(pr, p);
        const double f = smoothstep01((1.0 - nd) / pr.soft_width);
        if (f <= 0.0) continue;
        const double contrib = pr.density * f;
        sigma += contrib;
        for (int c = 0; c < 3; ++c) rgb[c] += contrib * pr.albedo[c];
    }
    if (sigma > 0.0)
        for (int c = 0; c < 3; ++c) rgb[c] /= sigma;
}

FieldFn make_scene_field(const SceneSpec& spec) {
    return [spec](const double p[3], double& sigma, double rgb[3]) {
        scene_field(spec, p, sigma, rgb);
    };
}

CameraConfig make_orbit_camera(double azimuth, double elevation, double radius, double fov_y,
                               int resolution) {
    CameraConfig cam;
    cam.position = {radius * std::cos(elevation) * std::cos(azimuth),
                    radius * std::cos(elevation) * std::sin(azimuth),
                    radius * std::sin(elevation)};
    cam.look_at = {0, 0, 0};
    cam.up = {0, 0, 1};
    cam.fov_y = fov_y;
    cam.width = cam.height = resolution;
    return cam;
}

namespace {

// Independent integrator: accumulates exp(-cumulative optical depth)
// directly instead of the per-sample alpha product.
Tensor march_ground_truth(const SceneSpec& spec, const CameraConfig& cam, int steps) {
    const double t_near = 0.1 * spec.extent, t_far = 4.0 * spec.extent;
    const double dt = (t_far - t_near) / steps;
    RayBatch rays = generate_rays_full(cam);
    Tensor img({cam.height, cam.width, 4});
    for (int ri = 0; ri < rays.count(); ++ri) {
        const auto& o = rays.origins[static_cast<size_t>(ri)];
        const auto& d = rays.directions[static_cast<size_t>(ri)];
        double depth_sum = 0.0;
        double rgb[3] = {0, 0, 0};
        double t_prev_weight = 1.0;  // exp(-depth before current sample)
        for (int i = 0; i < steps; ++i) {
            const double t = t_near + (i + 0.5) * dt;
            const double p[3] = {o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]};
            double sigma, c3[3];
            scene_field(spec, p, sigma, c3);
            if (sigma <= 0.0) continue;
            depth_sum += sigma * dt;
            const double t_after = std::exp(-depth_sum);
            const double w = t_prev_weight - t_after;  // = T_i * alpha_i
            for (int c = 0; c < 3; ++c) rgb[c] += w * c3[c];
            t_prev_weight = t_after;
            if (t_after < 1e-7) break;
        }
        const double trans = t_prev_weight;
        const auto& px = rays.pixels[static_cast<size_t>(ri)];
        for (int c = 0; c < 3; ++c) img.at(px[1], px[0], c) = rgb[c] + trans * 1.0;  // white bg
        img.at(px[1], px[0], 3) = 1.0 - trans;
    }
    return img;
}

}  // namespace

std::vector<int> ViewDataset::train_indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < views.size(); ++i)
        if (!views[i].heldout) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> ViewDataset::heldout_indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < views.size(); ++i)
        if (views[i].heldout) out.push_back(static_cast<int>(i));
    return out;
}

ViewDataset render_ground_truth(const SceneSpec& spec, const DatasetConfig& cfg, uint64_t seed) {
    ViewDataset ds;
    ds.scene_id = spec.id;
    ds.spec = spec;
    Rng rng(seed ^ fnv1a64("cameras"));
    for (int i = 0; i < cfg.n_views; ++i) {
        const double az = std::fmod(kGoldenAngle * i, 2.0 * M_PI);
        const double el = rng.uniform(-cfg.elevation_band, cfg.elevation_band);
        View v;
        v.cam = make_orbit_camera(az, el, cfg.camera_radius * spec.extent, cfg.fov_y,
                                  cfg.resolution);
        v.image = march_ground_truth(spec, v.cam, cfg.gt_samples);
        v.heldout = (i % 10) == 9;
        ds.views.push_back(std::move(v));
    }
    const CameraConfig front =
        make_orbit_camera(0.0, 0.0, cfg.camera_radius * spec.extent, cfg.fov_y, cfg.resolution);
    ds.portrait = march_ground_truth(spec, front, cfg.gt_samples);
    return ds;
}

void scene_spec_to_kv(const SceneSpec& spec, const std::string& path) {
    KvFile kv;
    kv.set("family", spec.family);
    kv.set("seed", static_cast<int64_t>(spec.seed));
    kv.set("id", spec.id);
    kv.set("extent", spec.extent);
    kv.set("prim_count", static_cast<int64_t>(spec.prims.size()));
    for (size_t i = 0; i < spec.prims.size(); ++i) {
        const auto& pr = spec.prims[i];
        const std::string pfx = "prim" + std::to_string(i) + "_";
        kv.set(pfx + "kind", kind_name(pr.kind));
        for (int a = 0; a < 3; ++a) {
            const char axis = static_cast<char>('x' + a);
            kv.set(pfx + "center_" + axis, pr.center[static_cast<size_t>(a)]);
            kv.set(pfx + "radius_" + axis, pr.radii[static_cast<size_t>(a)]);
        }
        kv.set(pfx + "albedo_r", pr.albedo[0]);
        kv.set(pfx + "albedo_g", pr.albedo[1]);
        kv.set(pfx + "albedo_b", pr.albedo[2]);
        kv.set(pfx + "soft_width", pr.soft_width);
        kv.set(pfx + "density", pr.density);
    }
    kv.save(path);
}

SceneSpec scene_spec_from_kv(const std::string& path) {
    KvFile kv = KvFile::load(path);
    SceneSpec spec;
    spec.family = kv.get_string("family");
    spec.seed = static_cast<uint64_t>(kv.get_int("seed"));
    spec.id = kv.get_string("id");
    spec.extent = kv.get_double("extent");
    const int n = static_cast<int>(kv.get_int("prim_count"));
    for (int i = 0; i < n; ++i) {
        const std::string pfx = "prim" + std::to_string(i) + "_";
        Primitive pr;
        pr.kind = kind_from_name(kv.get_string(pfx + "kind"));
        for (int a = 0; a < 3; ++a) {
            const char axis = static_cast<char>('x' + a);
            pr.center[static_cast<size_t>(a)] = kv.get_double(pfx + "center_" + axis);
            pr.radii[static_cast<size_t>(a)] = kv.get_double(pfx + "radius_" + axis);
        }
        pr.albedo = {kv.get_double(pfx + "albedo_r"), kv.get_double(pfx + "albedo_g"),
                     kv.get_double(pfx + "albedo_b")};
        pr.soft_width = kv.get_double(pfx + "soft_width");
        pr.density = kv.get_double(pfx + "density");
        spec.prims.push_back(pr);
    }
    return spec;
}

void save_dataset(const ViewDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "views", ec);
    if (ec) throw IoError("cannot create dataset directory: " + dir);

    scene_spec_to_kv(ds.spec, (fs::path(dir) / "spec.kv").string());

    std::ofstream csv(fs::path(dir) / "cameras.csv", std::ios::binary);
    if (!csv) throw IoError("cannot write cameras.csv in " + dir);
    csv << "view,heldout,px,py,pz,lx,ly,lz,ux,uy,uz,fov_y,width,height\n";
    for (size_t i = 0; i < ds.views.size(); ++i) {
        const auto& v = ds.views[i];
        char name[16];
        std::snprintf(name, sizeof(name), "%03zu.png", i);
        save_png_rgba(v.image, (fs::path(dir) / "views" / name).string());
        csv << i << ',' << (v.heldout ? 1 : 0);
        for (double x : v.cam.position) csv << ',' << format_double(x);
        for (double x : v.cam.look_at) csv << ',' << format_double(x);
        for (double x : v.cam.up) csv << ',' << format_double(x);
        csv << ',' << format_double(v.cam.fov_y) << ',' << v.cam.width << ',' << v.cam.height
            << '\n';
    }
    save_png_rgba(ds.portrait, (fs::path(dir) / "portrait.png").string());
}

ViewDataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    ViewDataset ds;
    ds.spec = scene_spec_from_kv((fs::path(dir) / "spec.kv").string());
    ds.scene_id = ds.spec.id;

    std::ifstream csv(fs::path(dir) / "cameras.csv");
    if (!csv) throw IoError("cannot read cameras.csv in " + dir);
    std::string line;
    std::getline(csv, line);  // header
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::vector<std::string> cols;
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() != 14) throw IoError("malformed cameras.csv row: " + line);
        View v;
        const int idx = std::stoi(cols[0]);
        v.heldout = cols[1] == "1";
        v.cam.position = {std::stod(cols[2]), std::stod(cols[3]), std::stod(cols[4])};
        v.cam.look_at = {std::stod(cols[5]), std::stod(cols[6]), std::stod(cols[7])};
        v.cam.up = {std::stod(cols[8]), std::stod(cols[9]), std::stod(cols[10])};
        v.cam.fov_y = std::stod(cols[11]);
        v.cam.width = std::stoi(cols[12]);
        v.cam.height = std::stoi(cols[13]);
        char name[16];
        std::snprintf(name, sizeof(name), "%03d.png", idx);
        v.image = load_png_rgba((fs::path(dir) / "views" / name).string());
        ds.views.push_back(std::move(v));
    }
    ds.portrait = load_png_rgba((fs::path(dir) / "portrait.png").string());
    return ds;
}

}  // namespace trifield
