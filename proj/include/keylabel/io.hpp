#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "keylabel/dense.hpp"
#include "keylabel/geometry.hpp"
#include "keylabel/image.hpp"

namespace kpl::io {

namespace fs = std::filesystem;

/// Write through a sibling temp file and rename into place.
void write_file_atomic(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);

// PNG. Colour is 8-bit RGB, depth 16-bit grey, masks 1-bit grey.
void write_png(const fs::path& path, const ColorImage& image);
void write_png(const fs::path& path, const DepthImage& image);
void write_mask_png(const fs::path& path, const Mask& mask);
std::string encode_png(const ColorImage& image);
ColorImage read_color_png(const fs::path& path);
DepthImage read_depth_png(const fs::path& path);
Mask read_mask_png(const fs::path& path);

/// Zero-padded frame file name, e.g. 000042.png.
std::string frame_filename(std::size_t frame);

// PLY point sets.
enum class PlyFormat { Ascii, BinaryLittleEndian };

/// x y z as double plus a uint32 `scene` property.
void write_dense_ply(const fs::path& path, const DenseModel& model, PlyFormat format = PlyFormat::BinaryLittleEndian);
DenseModel read_dense_ply(const fs::path& path);

/// Points (and normals / colours when present) from any vertex-element PLY;
/// faces and unknown properties are ignored.
ScenePointCloud read_point_cloud_ply(const fs::path& path);
void write_point_cloud_ply(const fs::path& path, const ScenePointCloud& cloud,
                           PlyFormat format = PlyFormat::BinaryLittleEndian);
void write_points_ply(const fs::path& path, std::span<const Point3> points, PlyFormat format = PlyFormat::Ascii);

// Trajectories: one "timestamp tx ty tz qx qy qz qw" row per frame.
struct Trajectory {
    std::vector<double> timestamps;
    std::vector<RigidTransformd> poses;
};

/// Parses and re-gauges so the first pose is the identity. Throws
/// MissingFile or MalformedRow (context holds file:line).
Trajectory read_trajectory(const fs::path& path);
void write_trajectory(const fs::path& path, const Trajectory& trajectory);
/// Left-multiply by the inverse of the first pose.
std::vector<RigidTransformd> regauge(std::span<const RigidTransformd> poses);

}  // namespace kpl::io
