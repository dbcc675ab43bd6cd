// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pointblend/head.hpp"
#include "pointblend/scene.hpp"

namespace pointblend::io {

enum class ErrorKind {
  MissingFile,
  MalformedHeader,
  UnsupportedLayout,
  TruncatedBody,
  BadMagic,
  BadVersion,
  SizeMismatch,
  UnsupportedImage,
  NonOrthonormalRotation,
  ParseError,
  BadManifest,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

const char* error_kind_name(ErrorKind kind);

// --- Point clouds (polygon file format, ascii / binary little-endian) ----

/// Reads the x,y,z properties of the vertex element; other properties
/// (colors, normals, ...) are skipped. Distinct error kinds for malformed
/// headers, unsupported element layouts and truncated bodies.
PointCloud load_point_cloud(const std::filesystem::path& path);

void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                      bool binary = true);

// --- Cameras (versioned text, bit-exact round-trip) ----------------------

struct NamedCamera {
  std::string id;
  Camera camera;
};

std::vector<NamedCamera> load_cameras(const std::filesystem::path& path);
void save_cameras(const std::vector<NamedCamera>& cameras, const std::filesystem::path& path);

// --- Descriptor sets (flat binary, float32 little-endian) ----------------

void save_descriptors(const DescriptorSet& set, const std::filesystem::path& path);
DescriptorSet load_descriptors(const std::filesystem::path& path);

// --- Images (8-bit RGB/RGBA PNG) ------------------------------------------

/// Bytes map linearly to [0,1]. Anything but 8-bit RGB/RGBA is rejected.
Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path);

// --- Scene bundles (fit output: cloud + descriptors + mu + head) ---------

struct SceneBundle {
  Scene scene;
  HeadConfig head;
  std::filesystem::path cloud_path;  // as recorded in the bundle
};

SceneBundle load_scene_bundle(const std::filesystem::path& path);
void save_scene_bundle(const std::filesystem::path& path, const Scene& scene,
                       const HeadConfig& head, const std::filesystem::path& cloud_path,
                       const std::filesystem::path& descriptors_path);

/// Standalone head files (same JSON schema as the bundle's head block).
HeadConfig load_head(const std::filesystem::path& path);
void save_head(const HeadConfig& head, const std::filesystem::path& path);

// --- Composition manifests -------------------------------------------------

struct ManifestEntry {
  std::filesystem::path cloud;
  std::optional<std::filesystem::path> descriptors;  // absent = initialize
  Eigen::Matrix4d transform = Eigen::Matrix4d::Identity();
  double alpha_scale = 1.0;  // per-entry manipulation factor p
  double mu = 1.0;           // per-entry manipulation exponent
  std::string label;
};

struct SceneManifest {
  std::vector<ManifestEntry> entries;

  static SceneManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// True when a JSON file holds a composition manifest rather than a scene
/// bundle.
bool is_manifest_file(const std::filesystem::path& path);

/// Loads every entry, applies rigid transforms and per-entry alpha
/// manipulation (activated alphas scaled by p^mu, stored back through
/// atanh), and concatenates clouds and descriptors in entry order.
Scene compose_scenes(const SceneManifest& manifest, int descriptor_dim = DescriptorSet::kDefaultDim,
                     std::uint64_t seed = 0);

}  // namespace pointblend::io
