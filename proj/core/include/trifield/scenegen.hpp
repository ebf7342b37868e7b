// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trifield/renderer.hpp"
#include "trifield/tensor.hpp"

namespace trifield {

// Procedural soft-edged primitive scenes: the desk-scale stand-in for a
// large avatar corpus. Every scene is deterministic in (seed, family).

enum class PrimitiveKind { sphere, ellipsoid, box };

struct Primitive {
    PrimitiveKind kind = PrimitiveKind::sphere;
    Vec3 center{};
    Vec3 radii{0.3, 0.3, 0.3};
    Vec3 albedo{0.8, 0.2, 0.2};
    double soft_width = 0.15;  // smoothstep falloff width, fraction of radius
    double density = 12.0;     // peak density
};

struct SceneSpec {
    uint64_t seed = 0;
    std::string family = "blobs";
    std::string id;
    double extent = 1.0;
    std::vector<Primitive> prims;
};

struct FamilyParams {
    std::string family = "blobs";  // blobs | two-sphere | boxes
};

SceneSpec make_scene(uint64_t seed, const FamilyParams& params = {});

// Smooth analytic density/color of the spec; usable as a renderer FieldFn.
void scene_field(const SceneSpec& spec, const double p[3], double& sigma, double rgb[3]);
FieldFn make_scene_field(const SceneSpec& spec);

struct View {
    Tensor image;  // [H, W, 4]
    CameraConfig cam;
    bool heldout = false;
};

struct ViewDataset {
    std::string scene_id;
    SceneSpec spec;
    std::vector<View> views;
    Tensor portrait;  // frontal render, [H, W, 4]

    std::vector<int> train_indices() const;
    std::vector<int> heldout_indices() const;
};

struct DatasetConfig {
    int n_views = 60;          // every 10th is tagged held-out
    int resolution = 64;
    double camera_radius = 2.7;
    double fov_y = 1.1;
    double elevation_band = 0.5236;  // +/- 30 degrees
    int gt_samples = 256;            // marching steps of the analytic renderer
};

// Analytic ground-truth multi-view renders (independent ray-marcher over the
// spec field, matching the neural renderer's compositing conventions).
ViewDataset render_ground_truth(const SceneSpec& spec, const DatasetConfig& cfg, uint64_t seed);

CameraConfig make_orbit_camera(double azimuth, double elevation, double radius, double fov_y,
                               int resolution);

// Directory layout: scenes/<id>/spec.kv, views/NNN.png, cameras.csv,
// portrait.png.
void save_dataset(const ViewDataset& ds, const std::string& dir);
ViewDataset load_dataset(const std::string& dir);

SceneSpec scene_spec_from_kv(const std::string& path);
void scene_spec_to_kv(const SceneSpec& spec, const std::string& path);

}  // namespace trifield
