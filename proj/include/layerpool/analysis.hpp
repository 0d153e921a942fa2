#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "layerpool/model.hpp"
#include "layerpool/tensor.hpp"
#include "layerpool/training.hpp"

namespace layerpool {

struct DegenerateError : DataError {
  using DataError::DataError;
};

struct DumpRow {
  std::string example_id;
  std::int32_t label = 0;
  std::vector<Real> vector;
};

/// CLS vectors of one layer at one epoch, one row per evaluated example.
struct LayerDump {
  std::size_t epoch = 0;
  std::size_t layer = 0;  // 1-based, 1 = nearest the embeddings
  std::vector<DumpRow> rows;
};

struct ProjectedPoint {
  std::string example_id;
  std::int32_t label = 0;
  std::vector<Real> coords;  // k coordinates; x = coords[0], y = coords[1]
};

struct Projection2D {
  std::vector<std::vector<Real>> components;  // k orthonormal H-vectors
  std::vector<Real> explained_variance;       // descending
  std::vector<ProjectedPoint> points;
};

/// PCA by SVD of the mean-centred data. Components follow the sign
/// convention "first non-zero coordinate positive"; explained variance is
/// sigma^2 / (n - 1).
Projection2D pca_project(const LayerDump& dump, std::size_t k = 2);

/// Mean distance of each point to its class centroid divided by the mean
/// pairwise distance between class centroids. Lower is tighter and better
/// separated. Infinite when all centroids coincide.
Real cluster_score(const Projection2D& projection);

std::string dump_file_name(std::size_t epoch, std::size_t layer);
std::string layer_dump_csv(const LayerDump& dump);
void write_layer_dump(const std::filesystem::path& path, const LayerDump& dump);
/// Epoch and layer are recovered from the `dump_e{E}_l{L}.csv` file name.
LayerDump read_layer_dump(const std::filesystem::path& path);

/// Evaluates `examples` in eval mode and collects the requested layers'
/// CLS vectors. Example ids are the given strings.
std::vector<LayerDump> collect_layer_dumps(Model& model, std::span<const Example> examples,
                                           std::span<const std::string> example_ids, std::size_t epoch,
                                           std::span<const std::size_t> layers);

/// Writes one CSV per requested layer into `dir`; returns the paths.
std::vector<std::filesystem::path> dump_trace(Model& model, std::span<const Example> examples,
                                              std::span<const std::string> example_ids, std::size_t epoch,
                                              std::span<const std::size_t> layers, const std::filesystem::path& dir);

struct ProjectionSummary {
  std::size_t epoch = 0;
  std::size_t layer = 0;
  Real score = 0.0;
  std::vector<Real> explained_variance;
};

std::string projection_csv(const Projection2D& projection);
/// Projects every dump in `dumps_dir`, writing `proj_e{E}_l{L}.csv` files and
/// `cluster_scores.csv` into `out_dir`. Summaries are sorted by (epoch, layer).
std::vector<ProjectionSummary> project_directory(const std::filesystem::path& dumps_dir,
                                                 const std::filesystem::path& out_dir);

}  // namespace layerpool
