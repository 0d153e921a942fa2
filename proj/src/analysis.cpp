#include "layerpool/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <regex>
#include <set>

#include <Eigen/Dense>

#include "layerpool/io.hpp"

namespace layerpool {

namespace fs = std::filesystem;

Projection2D pca_project(const LayerDump& dump, std::size_t k) {
  const std::size_t n = dump.rows.size();
  if (n < 2) throw ContractError("PCA needs at least two vectors");
  const std::size_t h = dump.rows.front().vector.size();
  if (h == 0) throw ContractError("PCA on zero-length vectors");
  if (k == 0 || k > h) throw ContractError("cannot extract " + std::to_string(k) + " components from " +
                                           std::to_string(h) + "-dimensional data");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(h));
  bool all_same = true;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = dump.rows[i].vector;
    if (v.size() != h) throw ShapeError("dump rows differ in length");
    for (std::size_t j = 0; j < h; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
      all_same = all_same && v[j] == dump.rows.front().vector[j];
    }
  }
  if (all_same) throw DegenerateError("all vectors are identical; PCA has zero variance");

  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centred = x.rowwise() - mean;
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeFullV);
  const Eigen::VectorXd& sigma = svd.singularValues();
  const Eigen::MatrixXd& v = svd.matrixV();

  Projection2D out;
  for (std::size_t c = 0; c < k; ++c) {
    const auto col = static_cast<Eigen::Index>(c);
    Eigen::VectorXd comp = v.col(col);
    const double scale = comp.cwiseAbs().maxCoeff();
    for (Eigen::Index j = 0; j < comp.size(); ++j) {
      if (std::abs(comp(j)) > 1e-12 * scale) {
        if (comp(j) < 0.0) comp = -comp;
        break;
      }
    }
    out.components.emplace_back(comp.data(), comp.data() + comp.size());
    const double s = col < sigma.size() ? sigma(col) : 0.0;
    out.explained_variance.push_back(s * s / static_cast<double>(n - 1));
  }
  for (std::size_t i = 0; i < n; ++i) {
    ProjectedPoint p{dump.rows[i].example_id, dump.rows[i].label, {}};
    for (std::size_t c = 0; c < k; ++c) {
      double dot = 0.0;
      for (std::size_t j = 0; j < h; ++j)
        dot += centred(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * out.components[c][j];
      p.coords.push_back(dot);
    }
    out.points.push_back(std::move(p));
  }
  return out;
}

Real cluster_score(const Projection2D& projection) {
  std::map<std::int32_t, std::vector<const ProjectedPoint*>> by_class;
  for (const ProjectedPoint& p : projection.points) by_class[p.label].push_back(&p);
  if (by_class.size() < 2) throw ContractError("cluster score needs at least two classes");
  const std::size_t dim = projection.points.front().coords.size();

  auto distance = [dim](const std::vector<Real>& a, const std::vector<Real>& b) {
    Real s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(s);
  };

  std::vector<std::vector<Real>> centroids;
  Real within = 0.0;
  for (const auto& [label, pts] : by_class) {
    std::vector<Real> c(dim, 0.0);
    for (const ProjectedPoint* p : pts)
      for (std::size_t j = 0; j < dim; ++j) c[j] += p->coords[j];
    for (Real& v : c) v /= static_cast<Real>(pts.size());
    for (const ProjectedPoint* p : pts) within += distance(p->coords, c);
    centroids.push_back(std::move(c));
  }
  within /= static_cast<Real>(projection.points.size());

  Real between = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < centroids.size(); ++a)
    for (std::size_t b = a + 1; b < centroids.size(); ++b) {
      between += distance(centroids[a], centroids[b]);
      ++pairs;
    }
  between /= static_cast<Real>(pairs);
  if (between == 0.0) return within == 0.0 ? 0.0 : std::numeric_limits<Real>::infinity();
  return within / between;
}

// ---- dump files -------------------------------------------------------------------

std::string dump_file_name(std::size_t epoch, std::size_t layer) {
  return "dump_e" + std::to_string(epoch) + "_l" + std::to_string(layer) + ".csv";
}

std::string layer_dump_csv(const LayerDump& dump) {
  const std::size_t h = dump.rows.empty() ? 0 : dump.rows.front().vector.size();
  std::string out = "example_id,label";
  for (std::size_t j = 0; j < h; ++j) out += ",v" + std::to_string(j);
  out += '\n';
  for (const DumpRow& r : dump.rows) {
    if (r.example_id.find_first_of(",\n") != std::string::npos) {
      throw DataError("example id '" + r.example_id + "' cannot be written to CSV");
    }
    if (r.vector.size() != h) throw ShapeError("dump rows differ in length");
    out += r.example_id + "," + std::to_string(r.label);
    for (Real v : r.vector) out += "," + format_real(v);
    out += '\n';
  }
  return out;
}

void write_layer_dump(const fs::path& path, const LayerDump& dump) { write_file_atomic(path, layer_dump_csv(dump)); }

namespace {

const std::regex kDumpName(R"(dump_e(\d+)_l(\d+)\.csv)");

}  // namespace

LayerDump read_layer_dump(const fs::path& path) {
  std::smatch m;
  const std::string name = path.filename().string();
  if (!std::regex_match(name, m, kDumpName)) throw DataError("not a layer dump file name: " + name);
  LayerDump dump;
  dump.epoch = std::stoul(m[1].str());
  dump.layer = std::stoul(m[2].str());
  const auto lines = split(read_file(path), '\n');
  if (lines.empty() || lines.front().rfind("example_id,label", 0) != 0) {
    throw DataError(name + ": missing header");
  }
  const std::size_t h = split(lines.front(), ',').size() - 2;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto cells = split(lines[i], ',');
    if (cells.size() != h + 2) throw DataError(name + ": line " + std::to_string(i + 1) + " has wrong arity");
    DumpRow row{cells[0], static_cast<std::int32_t>(std::stol(cells[1])), {}};
    for (std::size_t j = 0; j < h; ++j) row.vector.push_back(parse_real(cells[j + 2]));
    dump.rows.push_back(std::move(row));
  }
  return dump;
}

std::vector<LayerDump> collect_layer_dumps(Model& model, std::span<const Example> examples,
                                           std::span<const std::string> example_ids, std::size_t epoch,
                                           std::span<const std::size_t> layers) {
  const std::size_t depth = model.config().encoder.layers;
  for (std::size_t l : layers) {
    if (l < 1 || l > depth) {
      throw ContractError("layer " + std::to_string(l) + " requested from a " + std::to_string(depth) +
                          "-layer encoder");
    }
  }
  if (example_ids.size() != examples.size()) throw ContractError("one example id per example required");
  std::vector<LayerDump> dumps;
  for (std::size_t l : layers) dumps.push_back(LayerDump{epoch, l, {}});
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto trace = model.trace_values(examples[i].input);
    for (std::size_t d = 0; d < layers.size(); ++d) {
      const auto v = trace[layers[d] - 1].values();
      dumps[d].rows.push_back(DumpRow{example_ids[i], examples[i].label, {v.begin(), v.end()}});
    }
  }
  return dumps;
}

std::vector<fs::path> dump_trace(Model& model, std::span<const Example> examples,
                                 std::span<const std::string> example_ids, std::size_t epoch,
                                 std::span<const std::size_t> layers, const fs::path& dir) {
  std::vector<fs::path> written;
  for (const LayerDump& d : collect_layer_dumps(model, examples, example_ids, epoch, layers)) {
    written.push_back(dir / dump_file_name(d.epoch, d.layer));
    write_layer_dump(written.back(), d);
  }
  return written;
}

std::string projection_csv(const Projection2D& projection) {
  const std::size_t k = projection.components.size();
  std::string out = "example_id,label";
  static constexpr const char* kAxes[] = {"x", "y"};
  for (std::size_t c = 0; c < k; ++c) out += "," + (c < 2 ? std::string(kAxes[c]) : "pc" + std::to_string(c));
  out += '\n';
  for (const ProjectedPoint& p : projection.points) {
    out += p.example_id + "," + std::to_string(p.label);
    for (Real v : p.coords) out += "," + format_real(v);
    out += '\n';
  }
  return out;
}

std::vector<ProjectionSummary> project_directory(const fs::path& dumps_dir, const fs::path& out_dir) {
  if (!fs::is_directory(dumps_dir)) throw DataError("not a directory: " + dumps_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dumps_dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && std::regex_match(name, kDumpName)) files.push_back(entry.path());
  }
  if (files.empty()) throw DataError("no dump_e*_l*.csv files in " + dumps_dir.string());

  std::vector<ProjectionSummary> summaries;
  for (const fs::path& f : files) {
    const LayerDump dump = read_layer_dump(f);
    const Projection2D proj = pca_project(dump, 2);
    write_file_atomic(out_dir / ("proj_e" + std::to_string(dump.epoch) + "_l" + std::to_string(dump.layer) + ".csv"),
                      projection_csv(proj));
    summaries.push_back(ProjectionSummary{dump.epoch, dump.layer, cluster_score(proj), proj.explained_variance});
  }
  std::sort(summaries.begin(), summaries.end(), [](const auto& a, const auto& b) {
    return std::pair(a.epoch, a.layer) < std::pair(b.epoch, b.layer);
  });
  std::string csv = "epoch,layer,cluster_score,explained_variance_0,explained_variance_1\n";
  for (const auto& s : summaries) {
    csv += std::to_string(s.epoch) + "," + std::to_string(s.layer) + "," + format_real(s.score) + "," +
           format_real(s.explained_variance[0]) + "," + format_real(s.explained_variance[1]) + "\n";
  }
  write_file_atomic(out_dir / "cluster_scores.csv", csv);
  return summaries;
}

}  // namespace layerpool
