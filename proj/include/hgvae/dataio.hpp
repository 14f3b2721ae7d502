#pragma once

// Motion datasets, the skeleton definition, the HGMD container and a
// forward-kinematics generator of synthetic labelled motion.
//
// A sequence is stored as [joints][3][frames] in meters. Flattening it to
// graph nodes is joint-major with x, y, z inside each joint, so node
// k = 3 * joint + axis and the flattened [nodes][frames] layout shares the
// same memory order.

#include "hgvae/binary_io.hpp"
#include "hgvae/dct.hpp"
#include "hgvae/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hgvae {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};
class UnsupportedVersionError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

struct SkeletonSpec {
  std::vector<std::string> names;
  std::vector<int> parents;                    // -1 marks the root
  std::vector<std::array<double, 3>> offsets;  // bone vector from the parent, meters

  std::size_t joints() const { return names.size(); }
  void validate() const;

  /// 18-joint body: pelvis root, legs, spine, neck, head and arms.
  static SkeletonSpec default_human();

  /// One joint per line: `name parent_index ox oy oz` (parent -1 for the root).
  static SkeletonSpec parse(std::string_view text);
  static SkeletonSpec load(const std::filesystem::path& path);
  std::string to_text() const;
};

inline std::size_t node_index(std::size_t joint, std::size_t axis) { return 3 * joint + axis; }

struct MotionDataset {
  std::size_t joints = 18;
  std::size_t frames = 50;
  std::vector<double> positions;  // [count][joints][3][frames]
  std::vector<int> labels;        // empty, or one per sequence
  std::string provenance;

  std::size_t nodes() const { return 3 * joints; }
  std::size_t sequence_size() const { return nodes() * frames; }
  std::size_t count() const { return sequence_size() == 0 ? 0 : positions.size() / sequence_size(); }
  bool labelled() const { return !labels.empty(); }

  std::span<const double> sequence(std::size_t i) const {
    return std::span<const double>(positions).subspan(i * sequence_size(), sequence_size());
  }
  std::span<double> sequence(std::size_t i) {
    return std::span<double>(positions).subspan(i * sequence_size(), sequence_size());
  }

  void validate() const;
  MotionDataset subset(std::span<const std::size_t> indices) const;
  /// Frames [begin, begin + length) of every sequence.
  MotionDataset window(std::size_t begin, std::size_t length) const;
};

std::string serialize_dataset(const MotionDataset& dataset);
MotionDataset deserialize_dataset(const std::string& bytes);
void save_dataset(const std::filesystem::path& path, const MotionDataset& dataset);
MotionDataset load_dataset(const std::filesystem::path& path);

struct SynthOptions {
  std::size_t count = 512;
  std::size_t classes = 1;
  std::uint64_t seed = 0;
  std::size_t frames = 50;
  double frame_rate = 25.0;     // Hz after taking every second frame
  double angle_noise = 0.005;   // radians, per frame
};

/// Labelled motion from class-specific periodic joint-angle programs pushed
/// through forward kinematics. Class programs depend only on
/// (seed, classes); each sequence draws its own phase and amplitude jitter.
MotionDataset synthesize_motions(const SkeletonSpec& skeleton, const SynthOptions& options);

/// Subtracts each sequence's mean root position (over the first `window`
/// frames; 0 means all) from every joint.
void center_sequences(MotionDataset& dataset, std::size_t root_joint = 0, std::size_t window = 0);

/// [count, nodes, frames] time-domain view of the dataset.
Tensor to_node_tensor(const MotionDataset& dataset);
/// Inverse of `to_node_tensor` for a tensor [count, nodes, frames].
MotionDataset from_node_tensor(const Tensor& nodes, std::size_t joints, std::string provenance = {});

/// DCT coefficients of every node trajectory, [count, nodes, coefficients].
Tensor encode_dataset(const MotionDataset& dataset, const DctCodec& codec);

struct FeatureMeans {
  std::size_t nodes = 0;
  std::size_t frames = 0;
  std::vector<double> values;  // [nodes][frames]
};

FeatureMeans compute_feature_means(const MotionDataset& train);

struct DatasetSplit {
  MotionDataset train;
  MotionDataset test;
};

/// Shuffled split with `train_fraction` of the sequences going to train.
DatasetSplit split_dataset(const MotionDataset& dataset, double train_fraction, std::uint64_t seed);

}  // namespace hgvae
