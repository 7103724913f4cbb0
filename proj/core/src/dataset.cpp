#include "mer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mer/error.hpp"
#include "mer/flow.hpp"
#include "mer/image.hpp"
#include "mer/seed.hpp"
#include "mer/tsr.hpp"

namespace mer {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kGridCells = 16;
constexpr std::size_t kGridSide = 4;

// Uniform noise blurred by a separable Gaussian and stretched to [0.15, 0.85].
std::vector<float> subject_texture(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> img(size * size);
  for (auto& v : img) v = uni(rng);

  const double sigma = 2.0;
  const int radius = 6;
  std::vector<double> k(2 * radius + 1);
  double ks = 0.0;
  for (int i = -radius; i <= radius; ++i) ks += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= ks;

  const long n = static_cast<long>(size);
  auto blur = [&](const std::vector<double>& src, bool horizontal) {
    std::vector<double> dst(src.size());
    for (long y = 0; y < n; ++y)
      for (long x = 0; x < n; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const long yy = horizontal ? y : std::clamp(y + i, 0L, n - 1);
          const long xx = horizontal ? std::clamp(x + i, 0L, n - 1) : x;
          acc += k[i + radius] * src[yy * n + xx];
        }
        dst[y * n + x] = acc;
      }
    return dst;
  };
  img = blur(blur(img, true), false);
  const auto [lo, hi] = std::minmax_element(img.begin(), img.end());
  const double a = *lo, span = std::max(*hi - *lo, 1e-12);
  std::vector<float> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<float>(0.15 + 0.7 * (img[i] - a) / span);
  return out;
}

double sample_bilinear(const std::vector<float>& img, std::size_t size, double x, double y) {
  const double maxc = static_cast<double>(size - 1);
  x = std::clamp(x, 0.0, maxc);
  y = std::clamp(y, 0.0, maxc);
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, size - 1), y1 = std::min(y0 + 1, size - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  const double top = img[y0 * size + x0] * (1 - fx) + img[y0 * size + x1] * fx;
  const double bot = img[y1 * size + x0] * (1 - fx) + img[y1 * size + x1] * fx;
  return top * (1 - fy) + bot * fy;
}

std::string subject_name(std::size_t i) {
  std::ostringstream os;
  os << "s" << (i + 1 < 10 ? "0" : "") << (i + 1);
  return os.str();
}

std::string require_string(const nlohmann::json& j, const char* key, std::size_t offset) {
  if (!j.contains(key) || !j[key].is_string())
    throw ParseError(std::string("manifest: missing string field '") + key + "'", offset);
  return j[key].get<std::string>();
}

}  // namespace

std::size_t synthetic_class_cell(std::size_t label) {
  if (label >= kGridCells) throw ParameterError("synthetic data supports at most 16 classes (one grid cell each)");
  return (label * 5) % kGridCells;
}

double synthetic_class_angle(std::size_t label, std::size_t num_classes) {
  return 2.0 * std::numbers::pi * static_cast<double>(label) / static_cast<double>(num_classes) + std::numbers::pi / 4.0;
}

std::vector<std::string> DatasetManifest::subjects() const {
  std::set<std::string> s;
  for (const auto& e : entries) s.insert(e.subject);
  return {s.begin(), s.end()};
}

DatasetManifest generate_synthetic_dataset(const SynthOptions& opts, const fs::path& out_dir) {
  if (opts.num_classes < 2) throw ParameterError("need at least 2 classes");
  if (opts.num_classes > kGridCells)
    throw ParameterError("at most 16 classes are supported (one 4x4 grid cell per class), got " +
                         std::to_string(opts.num_classes));
  if (opts.subjects < 1 || opts.per_subject_per_class < 1) throw ParameterError("need at least one subject and sample");
  if (opts.frame_size % kGridSide != 0) throw GeometryError("frame size must be divisible by 4");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  const std::size_t size = opts.frame_size;
  const double cell = static_cast<double>(size) / kGridSide;
  DatasetManifest m;
  m.num_classes = opts.num_classes;
  m.root = out_dir;

  for (std::size_t s = 0; s < opts.subjects; ++s) {
    const std::string subject = subject_name(s);
    fs::create_directories(out_dir / subject, ec);
    if (ec) throw IoError("cannot create " + (out_dir / subject).string() + ": " + ec.message());
    const auto bg = subject_texture(size, derive_seed(opts.seed, 1, s));
    const Tensor background({1, size, size}, bg);

    for (std::size_t c = 0; c < opts.num_classes; ++c) {
      const std::size_t cell_idx = synthetic_class_cell(c);
      const double base_angle = synthetic_class_angle(c, opts.num_classes);
      for (std::size_t r = 0; r < opts.per_subject_per_class; ++r) {
        std::mt19937_64 rng(derive_seed(opts.seed, 2, s, c, r));
        std::uniform_real_distribution<double> jitter(-4.0, 4.0);
        std::uniform_real_distribution<double> spread(5.0, 7.0);
        std::uniform_real_distribution<double> turn(-10.0, 10.0);
        const double cx = (static_cast<double>(cell_idx % kGridSide) + 0.5) * cell + jitter(rng);
        const double cy = (static_cast<double>(cell_idx / kGridSide) + 0.5) * cell + jitter(rng);
        const double sigma = spread(rng);
        const double angle = base_angle + turn(rng) * std::numbers::pi / 180.0;
        const double ux = std::cos(angle), uy = std::sin(angle);

        std::vector<float> apex(size * size), flow(2 * size * size), back(2 * size * size);
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            const double amp = opts.magnitude * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            const float u = static_cast<float>(amp * ux), v = static_cast<float>(amp * uy);
            const std::size_t i = y * size + x;
            flow[i] = u;
            flow[size * size + i] = v;
            back[i] = -u;
            back[size * size + i] = -v;
            apex[i] = static_cast<float>(
                sample_bilinear(bg, size, static_cast<double>(x) - u, static_cast<double>(y) - v));
          }

        ManifestEntry e;
        e.subject = subject;
        e.label = static_cast<int>(c);
        const std::string stem = subject + "/" + subject + "_c" + std::to_string(c) + "_" + std::to_string(r);
        e.onset = stem + "_onset.pgm";
        e.apex = stem + "_apex.pgm";
        e.offset = stem + "_offset.pgm";
        e.flow_oa = stem + "_flow_oa.tsr";
        e.flow_ao = stem + "_flow_ao.tsr";
        save_pgm(out_dir / e.onset, background);
        save_pgm(out_dir / e.apex, Tensor({1, size, size}, std::move(apex)));
        save_pgm(out_dir / e.offset, background);
        save_tsr(out_dir / e.flow_oa, Tensor({2, size, size}, std::move(flow)));
        save_tsr(out_dir / e.flow_ao, Tensor({2, size, size}, std::move(back)));
        m.entries.push_back(std::move(e));
      }
    }
  }
  save_manifest(m, out_dir);
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& dir) {
  std::ofstream out(dir / kManifestFile, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / kManifestFile).string());
  for (const auto& e : m.entries) {
    nlohmann::ordered_json j;
    j["subject"] = e.subject;
    j["label"] = e.label;
    j["onset"] = e.onset;
    j["apex"] = e.apex;
    j["offset"] = e.offset;
    j["flow_oa"] = e.flow_oa;
    j["flow_ao"] = e.flow_ao;
    out << j.dump() << "\n";
  }
  std::ofstream meta(dir / kDatasetMetaFile, std::ios::binary | std::ios::trunc);
  if (!meta) throw IoError("cannot write " + (dir / kDatasetMetaFile).string());
  nlohmann::ordered_json j;
  j["version"] = m.version;
  j["num_classes"] = m.num_classes;
  meta << j.dump() << "\n";
  if (!out || !meta) throw IoError("write failed in " + dir.string());
}

DatasetManifest load_manifest(const fs::path& dir) {
  DatasetManifest m;
  m.root = dir;
  const fs::path path = dir / kManifestFile;
  const auto bytes = read_file_bytes(path);
  const std::string text(bytes.begin(), bytes.end());

  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": invalid JSON line", pos + e.byte - (e.byte > 0 ? 1 : 0));
      }
      if (!j.is_object()) throw ParseError(path.string() + ": line is not an object", pos);
      ManifestEntry e;
      e.subject = require_string(j, "subject", pos);
      if (!j.contains("label") || !j["label"].is_number_integer())
        throw ParseError(path.string() + ": missing integer field 'label'", pos);
      e.label = j["label"].get<int>();
      e.onset = require_string(j, "onset", pos);
      e.apex = require_string(j, "apex", pos);
      e.offset = require_string(j, "offset", pos);
      e.flow_oa = require_string(j, "flow_oa", pos);
      e.flow_ao = require_string(j, "flow_ao", pos);
      m.entries.push_back(std::move(e));
    }
    pos = end + 1;
  }

  const fs::path meta_path = dir / kDatasetMetaFile;
  if (fs::exists(meta_path)) {
    const auto mb = read_file_bytes(meta_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(mb.begin(), mb.end());
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(meta_path.string() + ": invalid JSON", e.byte);
    }
    if (!j.contains("num_classes") || !j["num_classes"].is_number_unsigned())
      throw ParseError(meta_path.string() + ": missing 'num_classes'", 0);
    m.num_classes = j["num_classes"].get<std::size_t>();
    if (j.contains("version")) m.version = j["version"].get<int>();
  } else {
    int mx = -1;
    for (const auto& e : m.entries) mx = std::max(mx, e.label);
    m.num_classes = static_cast<std::size_t>(mx + 1);
  }
  validate_manifest(m);
  return m;
}

void validate_manifest(const DatasetManifest& m, bool check_files) {
  if (m.entries.empty()) throw ContractError("manifest has no entries");
  if (m.num_classes < 2) throw ContractError("manifest declares fewer than 2 classes");
  std::set<std::string> paths;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    const std::string where = "manifest entry " + std::to_string(i);
    if (e.subject.empty()) throw ContractError(where + ": empty subject id");
    if (e.label < 0 || static_cast<std::size_t>(e.label) >= m.num_classes)
      throw ContractError(where + ": label " + std::to_string(e.label) + " outside [0," +
                          std::to_string(m.num_classes) + ")");
    for (const std::string* p : {&e.onset, &e.apex, &e.offset, &e.flow_oa, &e.flow_ao}) {
      if (!paths.insert(*p).second) throw ContractError(where + ": duplicate path " + *p);
      if (check_files && !fs::exists(m.root / *p)) throw IoError(where + ": missing file " + (m.root / *p).string());
    }
  }
}

MESample load_sample(const DatasetManifest& m, const ManifestEntry& e) {
  MESample s;
  s.subject_id = e.subject;
  s.label = e.label;
  s.onset = load_pgm(m.root / e.onset);
  s.apex = load_pgm(m.root / e.apex);
  s.offset = load_pgm(m.root / e.offset);
  s.flow_oa = load_tsr(m.root / e.flow_oa);
  s.flow_ao = load_tsr(m.root / e.flow_ao);
  const Shape& fs = s.onset.shape();
  if (s.apex.shape() != fs || s.offset.shape() != fs)
    throw DimensionError("sample " + e.apex + ": key-frames differ in size");
  const Shape flow_shape{2, fs[1], fs[2]};
  if (s.flow_oa.shape() != flow_shape || s.flow_ao.shape() != flow_shape)
    throw DimensionError("sample " + e.flow_oa + ": flow geometry " + shape_str(s.flow_oa.shape()) +
                         " does not match frames " + shape_str(fs));
  return s;
}

PreparedSample prepare_sample(const MESample& sample, const PrepOptions& opts) {
  const std::size_t s = opts.input_size;
  auto vec = [](const Tensor& t) { return std::vector<float>(t.data().begin(), t.data().end()); };
  PreparedSample p;
  p.subject = sample.subject_id;
  p.label = sample.label;
  p.s_onset = vec(resize_bilinear(sample.onset, s, s));
  p.s_apex = vec(resize_bilinear(sample.apex, s, s));
  p.l_onset = vec(grid_patches(sample.onset, opts.grid, s));
  p.l_apex = vec(grid_patches(sample.apex, opts.grid, s));
  Tensor oa = sample.flow_oa, ao = sample.flow_ao;
  if (opts.estimated_flow) {
    oa = horn_schunck_flow(sample.onset, sample.apex, opts.hs_lambda, opts.hs_iterations);
    ao = horn_schunck_flow(sample.apex, sample.offset, opts.hs_lambda, opts.hs_iterations);
  }
  p.t_flow = vec(resize_bilinear(oa, s, s));
  const auto second = vec(resize_bilinear(ao, s, s));
  p.t_flow.insert(p.t_flow.end(), second.begin(), second.end());
  return p;
}

std::vector<std::string> Dataset::subjects() const {
  std::set<std::string> s;
  for (const auto& x : samples) s.insert(x.subject);
  return {s.begin(), s.end()};
}

std::vector<std::size_t> Dataset::class_counts(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i : indices) {
    if (i >= samples.size()) throw ContractError("sample index " + std::to_string(i) + " out of range");
    const int y = samples[i].label;
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw ContractError("sample " + std::to_string(i) + " has label " + std::to_string(y) + " outside [0, " +
                          std::to_string(num_classes) + ")");
    ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

Dataset load_dataset(const DatasetManifest& m, const PrepOptions& opts) {
  Dataset ds;
  ds.num_classes = m.num_classes;
  ds.prep = opts;
  ds.samples.reserve(m.entries.size());
  for (const auto& e : m.entries) ds.samples.push_back(prepare_sample(load_sample(m, e), opts));
  return ds;
}

ModelInputs make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("make_batch: empty batch");
  const std::size_t n = indices.size(), s = ds.prep.input_size, g2 = ds.prep.grid * ds.prep.grid;
  auto stack = [&](auto member, Shape shape) {
    std::vector<float> buf;
    buf.reserve(shape_numel(shape));
    for (std::size_t i : indices) {
      const auto& v = ds.samples.at(i).*member;
      buf.insert(buf.end(), v.begin(), v.end());
    }
    return Tensor(std::move(shape), std::move(buf));
  };
  ModelInputs in;
  in.s_onset = stack(&PreparedSample::s_onset, {n, 1, s, s});
  in.s_apex = stack(&PreparedSample::s_apex, {n, 1, s, s});
  in.l_onset = stack(&PreparedSample::l_onset, {n, g2, s, s});
  in.l_apex = stack(&PreparedSample::l_apex, {n, g2, s, s});
  in.t_flow = stack(&PreparedSample::t_flow, {n, 2, 2, s, s});
  return in;
}

std::vector<int> batch_labels(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) labels.push_back(ds.samples.at(i).label);
  return labels;
}

void shuffle_labels(Dataset& ds, std::uint64_t seed) {
  std::vector<int> labels;
  for (const auto& s : ds.samples) labels.push_back(s.label);
  std::mt19937_64 rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (std::size_t i = 0; i < labels.size(); ++i) ds.samples[i].label = labels[i];
}

}  // namespace mer
