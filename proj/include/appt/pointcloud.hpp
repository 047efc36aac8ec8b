#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "appt/tensor.hpp"

namespace appt {

// Unordered raw points: coords is [N,3]; features, when present, is [N,C].
struct PointCloud {
    Tensor coords;
    Tensor features; // undefined when C == 0
    int label = -1;

    int n_points() const { return coords.rows(); }
    int n_features() const { return features.defined() ? features.cols() : 0; }
};

// XYZ text: one point per line, 3 or 3+C whitespace-separated decimals,
// '#' comments and blank lines ignored, constant column count.
PointCloud parse_xyz(std::istream& in);

// OFF meshes, vertices only; faces are read past and dropped. Both the
// two-line header and the counts-on-magic-line dialect are accepted.
PointCloud parse_off(std::istream& in);

PointCloud load_cloud(const std::string& path); // dispatch on extension

// Translate centroid to the origin, scale the farthest point to norm 1.
// An all-identical cloud maps to all zeros (scale 1).
PointCloud normalize_unit_sphere(const PointCloud& cloud);

struct SampledCentroids {
    std::vector<int> indices; // distinct, in selection order
    Tensor coords;            // [n_s, 3]
};

// Greedy farthest point sampling. The first index is drawn uniformly from the
// seeded generator; every next pick maximizes the minimum distance to the
// chosen set, ties resolved to the smallest index.
SampledCentroids fps(const PointCloud& cloud, int n_s, uint64_t seed);
SampledCentroids fps_from(const PointCloud& cloud, int n_s, int start_index);

// Centroid-anchored neighborhoods. groups is [n_s, k, 3+C]: per neighbor the
// coordinates relative to the centroid, then raw features. Each group holds
// the k nearest points by Euclidean distance (the centroid itself included),
// ties resolved to the smallest index.
struct PointGroups {
    Tensor groups;          // [n_s, k, 3+C]
    Tensor centroid_coords; // [n_s, 3]
    uint64_t id = 0;        // provenance marker

    int n_groups() const { return groups.dim(0); }
    int group_size() const { return groups.dim(1); }
    int point_width() const { return groups.dim(2); }
    // View of the same storage as one row per neighbor, for the embed stage.
    Tensor flat_rows() const {
        return groups.reshape({groups.dim(0) * groups.dim(1), groups.dim(2)});
    }
};

PointGroups knn_group(const PointCloud& cloud, const SampledCentroids& centroids, int k);

enum class SurfaceKind { Sphere, Cube, Cylinder, Torus };

SurfaceKind parse_surface_kind(const std::string& name); // ConfigError lists valid kinds
std::string surface_kind_name(SurfaceKind kind);
const std::vector<std::string>& surface_kind_names();

// n points on the surface of the named primitive plus isotropic Gaussian
// noise; deterministic under seed. label is the kind's ordinal.
PointCloud gen_synthetic(SurfaceKind kind, int n, double noise_sigma, uint64_t seed);

struct DatasetManifest {
    struct Entry {
        std::string path; // relative to the manifest's directory
        int label = -1;
    };
    std::vector<Entry> entries;
    std::vector<std::string> class_names;
    std::string split; // "train" or "test"
};

// Line-oriented text: "path<TAB>label" rows; the class table and split tag
// ride along in '#' comment lines.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

} // namespace appt
