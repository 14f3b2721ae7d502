#include "hgvae/dataio.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace hgvae {

namespace {
constexpr std::string_view kDatasetMagic = "HGMD";
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

// ---------------------------------------------------------------------------
// Skeleton
// ---------------------------------------------------------------------------

void SkeletonSpec::validate() const {
  const std::size_t n = names.size();
  if (n == 0) throw DatasetError("skeleton: no joints");
  if (parents.size() != n || offsets.size() != n) throw DatasetError("skeleton: inconsistent joint tables");
  std::size_t roots = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (parents[j] == -1) {
      ++roots;
    } else if (parents[j] < 0 || static_cast<std::size_t>(parents[j]) >= n) {
      throw DatasetError("skeleton: joint '" + names[j] + "' has invalid parent " + std::to_string(parents[j]));
    }
  }
  if (roots != 1) throw DatasetError("skeleton: expected exactly one root, found " + std::to_string(roots));
  for (std::size_t j = 0; j < n; ++j) {
    // Walking up from any joint must reach the root within n steps.
    int cur = static_cast<int>(j);
    std::size_t steps = 0;
    while (cur != -1) {
      cur = parents[static_cast<std::size_t>(cur)];
      if (++steps > n) throw DatasetError("skeleton: parent chain of '" + names[j] + "' is cyclic");
    }
  }
}

SkeletonSpec SkeletonSpec::default_human() {
  SkeletonSpec s;
  auto add = [&](std::string name, int parent, double x, double y, double z) {
    s.names.push_back(std::move(name));
    s.parents.push_back(parent);
    s.offsets.push_back({x, y, z});
  };
  add("pelvis", -1, 0.0, 0.0, 0.0);
  add("left_hip", 0, 0.10, -0.05, 0.0);
  add("left_knee", 1, 0.0, -0.42, 0.0);
  add("left_ankle", 2, 0.0, -0.40, 0.0);
  add("left_foot", 3, 0.0, -0.05, 0.12);
  add("right_hip", 0, -0.10, -0.05, 0.0);
  add("right_knee", 5, 0.0, -0.42, 0.0);
  add("right_ankle", 6, 0.0, -0.40, 0.0);
  add("right_foot", 7, 0.0, -0.05, 0.12);
  add("spine", 0, 0.0, 0.25, 0.0);
  add("neck", 9, 0.0, 0.25, 0.0);
  add("head", 10, 0.0, 0.15, 0.02);
  add("left_shoulder", 10, 0.17, -0.02, 0.0);
  add("left_elbow", 12, 0.0, -0.28, 0.0);
  add("left_wrist", 13, 0.0, -0.25, 0.0);
  add("right_shoulder", 10, -0.17, -0.02, 0.0);
  add("right_elbow", 15, 0.0, -0.28, 0.0);
  add("right_wrist", 16, 0.0, -0.25, 0.0);
  return s;
}

SkeletonSpec SkeletonSpec::parse(std::string_view text) {
  SkeletonSpec s;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::string name;
    int parent = 0;
    std::array<double, 3> offset{};
    if (!(fields >> name >> parent >> offset[0] >> offset[1] >> offset[2])) {
      throw DatasetError("skeleton line " + std::to_string(line_no) + ": expected `name parent ox oy oz`");
    }
    s.names.push_back(name);
    s.parents.push_back(parent);
    s.offsets.push_back(offset);
  }
  s.validate();
  return s;
}

SkeletonSpec SkeletonSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open skeleton file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string SkeletonSpec::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "# name parent ox oy oz\n";
  for (std::size_t j = 0; j < names.size(); ++j) {
    os << names[j] << ' ' << parents[j] << ' ' << offsets[j][0] << ' ' << offsets[j][1] << ' ' << offsets[j][2]
       << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

void MotionDataset::validate() const {
  if (joints == 0 || frames == 0) throw DatasetError("dataset: joints and frames must be positive");
  if (positions.size() % sequence_size() != 0) throw DatasetError("dataset: ragged position buffer");
  if (!labels.empty() && labels.size() != count()) {
    throw DatasetError("dataset: " + std::to_string(labels.size()) + " labels for " + std::to_string(count()) +
                       " sequences");
  }
  for (double v : positions) {
    if (!std::isfinite(v)) throw DatasetError("dataset: non-finite position");
  }
}

MotionDataset MotionDataset::subset(std::span<const std::size_t> indices) const {
  MotionDataset out;
  out.joints = joints;
  out.frames = frames;
  out.provenance = provenance;
  out.positions.reserve(indices.size() * sequence_size());
  for (std::size_t i : indices) {
    if (i >= count()) throw DatasetError("dataset: sequence index out of range");
    auto s = sequence(i);
    out.positions.insert(out.positions.end(), s.begin(), s.end());
    if (labelled()) out.labels.push_back(labels[i]);
  }
  return out;
}

MotionDataset MotionDataset::window(std::size_t begin, std::size_t length) const {
  if (length == 0 || begin + length > frames) throw DatasetError("dataset: frame window out of range");
  MotionDataset out;
  out.joints = joints;
  out.frames = length;
  out.labels = labels;
  out.provenance = provenance;
  out.positions.reserve(count() * nodes() * length);
  for (std::size_t i = 0; i < count(); ++i) {
    auto s = sequence(i);
    for (std::size_t k = 0; k < nodes(); ++k) {
      auto row = s.subspan(k * frames + begin, length);
      out.positions.insert(out.positions.end(), row.begin(), row.end());
    }
  }
  return out;
}

std::string serialize_dataset(const MotionDataset& dataset) {
  dataset.validate();
  ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(dataset.joints));
  w.u32(static_cast<std::uint32_t>(dataset.frames));
  w.u64(dataset.count());
  w.string(dataset.provenance);
  w.u8(dataset.labelled() ? 1 : 0);
  for (int label : dataset.labels) w.i32(label);
  for (double v : dataset.positions) w.f64(v);
  return w.take();
}

MotionDataset deserialize_dataset(const std::string& bytes) {
  ByteReader r(bytes, "dataset");
  if (bytes.size() < kDatasetMagic.size() && kDatasetMagic.starts_with(bytes)) {
    throw TruncatedError("dataset: file is truncated");
  }
  if (bytes.size() < kDatasetMagic.size() || r.bytes(kDatasetMagic.size()) != kDatasetMagic) {
    throw BadMagicError("dataset: bad magic, expected HGMD");
  }
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw UnsupportedVersionError("dataset: unsupported container version " + std::to_string(version));
  }
  MotionDataset d;
  d.joints = r.u32();
  d.frames = r.u32();
  if (d.joints == 0 || d.frames == 0) throw DatasetError("dataset: joints and frames must be positive");
  const std::uint64_t count = r.u64();
  d.provenance = r.string();
  const std::uint8_t has_labels = r.u8();
  if (has_labels > 1) throw DatasetError("dataset: corrupt label flag");
  const std::size_t values = count * d.sequence_size();
  // Size check up front so a truncated file never yields a partial dataset.
  const std::size_t needed = (has_labels ? count * 4 : 0) + values * 8;
  if (r.remaining() < needed) throw TruncatedError("dataset: file is truncated");
  if (has_labels) {
    d.labels.resize(count);
    for (auto& label : d.labels) label = r.i32();
  }
  d.positions.resize(values);
  for (double& v : d.positions) v = r.f64();
  if (!r.at_end()) throw DatasetError("dataset: trailing bytes after the position block");
  d.validate();
  return d;
}

void save_dataset(const std::filesystem::path& path, const MotionDataset& dataset) {
  write_file_bytes(path.string(), serialize_dataset(dataset));
}

MotionDataset load_dataset(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file_bytes(path.string());
  } catch (const std::runtime_error& e) {
    throw DatasetError(e.what());
  }
  return deserialize_dataset(bytes);
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

namespace {

struct AngleProgram {
  std::array<double, 3> base{};
  std::array<double, 3> amplitude{};
  std::array<double, 3> phase{};
  double harmonic = 1.0;
};

struct ClassProgram {
  double frequency = 1.0;  // Hz
  double speed = 0.0;      // root forward velocity, m/s
  double bob = 0.0;        // root vertical oscillation amplitude
  std::vector<AngleProgram> joints;
};

bool is_limb(const std::string& name) {
  for (const char* key : {"hip", "knee", "shoulder", "elbow", "spine", "neck"}) {
    if (name.find(key) != std::string::npos) return true;
  }
  return false;
}

std::vector<ClassProgram> make_programs(const SkeletonSpec& skeleton, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ClassProgram> programs(classes);
  for (auto& p : programs) {
    p.frequency = 0.6 + 0.9 * unit(rng);
    p.speed = 1.2 * unit(rng);
    p.bob = 0.03 * unit(rng);
    p.joints.resize(skeleton.joints());
    for (std::size_t j = 0; j < skeleton.joints(); ++j) {
      AngleProgram& a = p.joints[j];
      const bool limb = is_limb(skeleton.names[j]);
      for (int axis = 0; axis < 3; ++axis) {
        // The x axis (flexion) dominates; other axes carry smaller motion.
        const double reach = axis == 0 ? 1.0 : 0.35;
        a.base[axis] = (limb ? 0.5 : 0.15) * reach * (2.0 * unit(rng) - 1.0);
        a.amplitude[axis] = limb ? 0.6 * reach * unit(rng) : 0.05 * unit(rng);
        a.phase[axis] = 2.0 * std::numbers::pi * unit(rng);
      }
      a.harmonic = unit(rng) < 0.25 ? 2.0 : 1.0;
    }
  }
  return programs;
}

}  // namespace

MotionDataset synthesize_motions(const SkeletonSpec& skeleton, const SynthOptions& options) {
  skeleton.validate();
  if (options.count == 0) throw DatasetError("synthesize: count must be at least 1");
  if (options.classes == 0) throw DatasetError("synthesize: classes must be at least 1");
  if (options.frames == 0) throw DatasetError("synthesize: frames must be at least 1");

  const auto programs = make_programs(skeleton, options.classes, options.seed);
  const std::size_t J = skeleton.joints();
  const std::size_t N = options.frames;

  // Parents must be evaluated before children.
  std::vector<std::size_t> order(J);
  std::iota(order.begin(), order.end(), 0);
  auto depth = [&](std::size_t j) {
    std::size_t d = 0;
    for (int p = skeleton.parents[j]; p != -1; p = skeleton.parents[static_cast<std::size_t>(p)]) ++d;
    return d;
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return depth(a) < depth(b); });

  MotionDataset out;
  out.joints = J;
  out.frames = N;
  out.provenance = "synthetic:seed=" + std::to_string(options.seed) + ",classes=" + std::to_string(options.classes);
  out.positions.assign(options.count * 3 * J * N, 0.0);
  out.labels.resize(options.count);

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::Matrix3d> rotation(J);
  std::vector<Eigen::Vector3d> position(J);

  for (std::size_t s = 0; s < options.count; ++s) {
    const int label = static_cast<int>(s % options.classes);
    out.labels[s] = label;
    const ClassProgram& prog = programs[static_cast<std::size_t>(label)];
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    const double amp_jitter = 1.0 + 0.1 * normal(rng);
    const double freq = prog.frequency * (1.0 + 0.05 * normal(rng));
    const double heading = 0.2 * normal(rng);
    auto seq = out.sequence(s);

    for (std::size_t t = 0; t < N; ++t) {
      const double time = static_cast<double>(t) / options.frame_rate;
      for (std::size_t j : order) {
        const AngleProgram& a = prog.joints[j];
        double angle[3];
        for (int axis = 0; axis < 3; ++axis) {
          angle[axis] = a.base[axis] +
                        amp_jitter * a.amplitude[axis] *
                            std::sin(2.0 * std::numbers::pi * freq * a.harmonic * time + a.phase[axis] + phase) +
                        options.angle_noise * normal(rng);
        }
        const Eigen::Matrix3d local = (Eigen::AngleAxisd(angle[2], Eigen::Vector3d::UnitZ()) *
                                       Eigen::AngleAxisd(angle[1], Eigen::Vector3d::UnitY()) *
                                       Eigen::AngleAxisd(angle[0], Eigen::Vector3d::UnitX()))
                                          .toRotationMatrix();
        const int parent = skeleton.parents[j];
        if (parent == -1) {
          const double travel = prog.speed * time;
          const double lift = prog.bob * std::sin(4.0 * std::numbers::pi * freq * time + phase);
          position[j] = Eigen::Vector3d(travel * std::sin(heading), 0.9 + lift, travel * std::cos(heading));
          rotation[j] = Eigen::AngleAxisd(heading, Eigen::Vector3d::UnitY()).toRotationMatrix() * local;
        } else {
          const auto p = static_cast<std::size_t>(parent);
          const Eigen::Vector3d offset(skeleton.offsets[j][0], skeleton.offsets[j][1], skeleton.offsets[j][2]);
          position[j] = position[p] + rotation[p] * offset;
          rotation[j] = rotation[p] * local;
        }
      }
      for (std::size_t j = 0; j < J; ++j) {
        for (std::size_t axis = 0; axis < 3; ++axis) seq[node_index(j, axis) * N + t] = position[j][static_cast<Eigen::Index>(axis)];
      }
    }
  }
  return out;
}

void center_sequences(MotionDataset& dataset, std::size_t root_joint, std::size_t window) {
  if (root_joint >= dataset.joints) throw DatasetError("center: root joint out of range");
  const std::size_t N = dataset.frames;
  const std::size_t span = window == 0 ? N : std::min(window, N);
  for (std::size_t s = 0; s < dataset.count(); ++s) {
    auto seq = dataset.sequence(s);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const double* root = seq.data() + node_index(root_joint, axis) * N;
      const double mean = std::accumulate(root, root + span, 0.0) / static_cast<double>(span);
      for (std::size_t j = 0; j < dataset.joints; ++j) {
        double* row = seq.data() + node_index(j, axis) * N;
        for (std::size_t t = 0; t < N; ++t) row[t] -= mean;
      }
    }
  }
}

Tensor to_node_tensor(const MotionDataset& dataset) {
  return Tensor({dataset.count(), dataset.nodes(), dataset.frames}, dataset.positions);
}

MotionDataset from_node_tensor(const Tensor& nodes, std::size_t joints, std::string provenance) {
  if (nodes.rank() != 3 || nodes.dim(1) != 3 * joints) {
    throw ShapeError("from_node_tensor: expected [count, " + std::to_string(3 * joints) + ", frames], got " +
                     shape_string(nodes.shape()));
  }
  MotionDataset d;
  d.joints = joints;
  d.frames = nodes.dim(2);
  d.positions.assign(nodes.data().begin(), nodes.data().end());
  d.provenance = std::move(provenance);
  return d;
}

Tensor encode_dataset(const MotionDataset& dataset, const DctCodec& codec) {
  if (codec.length() != dataset.frames) {
    throw ShapeError("encode_dataset: codec length " + std::to_string(codec.length()) + " vs " +
                     std::to_string(dataset.frames) + " frames");
  }
  return codec.encode(to_node_tensor(dataset));
}

FeatureMeans compute_feature_means(const MotionDataset& train) {
  if (train.count() == 0) throw DatasetError("feature means: empty training split");
  FeatureMeans m;
  m.nodes = train.nodes();
  m.frames = train.frames;
  m.values.assign(train.sequence_size(), 0.0);
  for (std::size_t s = 0; s < train.count(); ++s) {
    auto seq = train.sequence(s);
    for (std::size_t i = 0; i < seq.size(); ++i) m.values[i] += seq[i];
  }
  const double inv = 1.0 / static_cast<double>(train.count());
  for (double& v : m.values) v *= inv;
  return m;
}

DatasetSplit split_dataset(const MotionDataset& dataset, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DatasetError("split: fraction must lie in (0, 1)");
  std::vector<std::size_t> idx(dataset.count());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
  if (n_train == 0 || n_train == idx.size()) throw DatasetError("split: a side would be empty");
  std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {dataset.subset(train), dataset.subset(test)};
}

}  // namespace hgvae
