#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mer/model.hpp"
#include "mer/tensor.hpp"

namespace mer {

/// One micro-expression instance. Frames are [1,128,128] in [0,1]; flows are
/// [2,128,128] (u, v) in pixels for onset->apex and apex->offset.
struct MESample {
  std::string subject_id;
  int label = 0;
  Tensor onset, apex, offset;
  Tensor flow_oa, flow_ao;
};

struct ManifestEntry {
  std::string subject;
  int label = 0;
  std::string onset, apex, offset, flow_oa, flow_ao;  // relative to the manifest directory
};

/// `manifest.jsonl` (one object per sample) plus `dataset.json` holding
/// {"version", "num_classes"}.
struct DatasetManifest {
  int version = 1;
  std::size_t num_classes = 0;
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  /// Sorted unique subject ids.
  std::vector<std::string> subjects() const;
};

inline constexpr const char* kManifestFile = "manifest.jsonl";
inline constexpr const char* kDatasetMetaFile = "dataset.json";

struct SynthOptions {
  std::size_t num_classes = 3;
  std::size_t subjects = 6;
  std::size_t per_subject_per_class = 10;
  std::uint64_t seed = 7;
  /// Peak displacement in pixels at apex.
  float magnitude = 1.5f;
  std::size_t frame_size = 128;
};

/// Writes PGM frames, TSR flows, manifest.jsonl and dataset.json into out_dir.
DatasetManifest generate_synthetic_dataset(const SynthOptions& opts, const std::filesystem::path& out_dir);

/// Grid cell (row-major index into the 4x4 grid) that carries class `label`.
std::size_t synthetic_class_cell(std::size_t label);
/// Motion direction (radians, image axes: x right, y down) of class `label`.
double synthetic_class_angle(std::size_t label, std::size_t num_classes);

/// Reads and validates a manifest directory.
DatasetManifest load_manifest(const std::filesystem::path& dir);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& dir);
/// Rejects missing or unparsable files, labels >= num_classes, duplicate
/// paths and empty manifests.
void validate_manifest(const DatasetManifest& m, bool check_files = true);

MESample load_sample(const DatasetManifest& m, const ManifestEntry& e);

struct PrepOptions {
  std::size_t grid = 4;
  std::size_t input_size = 48;
  /// Estimate flows with Horn-Schunck instead of using the stored fields.
  bool estimated_flow = false;
  float hs_lambda = 0.1f;
  int hs_iterations = 200;
};

/// Network-ready tensors of one sample, flattened.
struct PreparedSample {
  std::string subject;
  int label = 0;
  std::vector<float> s_onset, s_apex;  // [1,s,s]
  std::vector<float> l_onset, l_apex;  // [n*n,s,s]
  std::vector<float> t_flow;           // [2,2,s,s]
};

PreparedSample prepare_sample(const MESample& sample, const PrepOptions& opts);

struct Dataset {
  std::size_t num_classes = 0;
  PrepOptions prep;
  std::vector<PreparedSample> samples;

  std::vector<std::string> subjects() const;
  std::vector<std::size_t> class_counts(std::span<const std::size_t> indices) const;
};

Dataset load_dataset(const DatasetManifest& m, const PrepOptions& opts);

/// Stacks the selected samples into model inputs.
ModelInputs make_batch(const Dataset& ds, std::span<const std::size_t> indices);
std::vector<int> batch_labels(const Dataset& ds, std::span<const std::size_t> indices);

/// Permutes labels across all samples (chance-level control).
void shuffle_labels(Dataset& ds, std::uint64_t seed);

}  // namespace mer
