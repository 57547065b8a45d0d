#pragma once

// Radiomics-style concepts: adaptive-threshold segmentation, gray-level
// discretization, first-order statistics, texture matrices (GLCM, GLRLM,
// GLSZM, GLDM) and voxel shape descriptors.
//
// Texture conventions:
//   * gray levels are 1..Nb, label 0 marks voxels outside the mask
//   * GLCM and GLRLM use the 13 unique 3D directions at distance 1;
//     features are computed per direction and averaged over directions
//     whose matrix is non-empty
//   * GLSZM zones and GLDM neighbourhoods use 26-connectivity
//   * entropies use log base 2 with 0 * log(0) = 0

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "volxai/volgrid.hpp"

namespace volxai::concepts {

enum class ConceptModality { PET, CT, SHAPE };
std::string_view to_string(ConceptModality m);

struct DiscretizationSpec {
  int bin_count = 32;
  void validate() const;
};

/// Voxels of `roi` with pet >= fraction * max(roi), reduced to the largest
/// 26-connected component. Mask dims equal pet dims.
Mask3 segment_adaptive(const Volume3& pet, const Box3& roi, double fraction = 0.40);

/// Largest 26-connected component. Ties prefer the lowest linear index.
Mask3 largest_component(const Mask3& m);

struct LabelVolume {
  Index3 dims{1, 1, 1};
  std::vector<int> labels;  // 0 outside the mask, 1..bin_count inside
  int bin_count = 2;

  int operator()(int x, int y, int z) const { return labels[linear_index(dims, x, y, z)]; }
  std::size_t masked_count() const;
};

/// bin = floor(Nb * (x - min) / (max - min)) + 1 clamped to [1, Nb], with
/// min/max over the masked voxels; constant regions map to bin 1.
LabelVolume discretize(const Volume3& vol, const Mask3& mask, const DiscretizationSpec& spec);

/// One named value; `value` is empty when the feature is undefined for the
/// input, and `flag` then holds the reason. A present value may still carry a
/// non-error note (for example "degenerate" for the MCC guard).
struct FeatureValue {
  std::string name;
  std::optional<double> value;
  std::string flag;
};
using FeatureSet = std::vector<FeatureValue>;

/// Value of a named feature; throws std::out_of_range when absent.
const FeatureValue& find(const FeatureSet& fs, std::string_view name);

const std::array<Index3, 13>& unique_directions();

// Normalized matrices (probabilities), one per non-empty direction where
// applicable. Rows index gray level 1..Nb (row 0 = level 1).
std::vector<Eigen::MatrixXd> glcm_matrices(const LabelVolume& lv);
std::vector<Eigen::MatrixXd> glrlm_matrices(const LabelVolume& lv);
Eigen::MatrixXd glszm_matrix(const LabelVolume& lv);
Eigen::MatrixXd gldm_matrix(const LabelVolume& lv);

/// JointAverage, SumAverage, SumEntropy, DifferenceAverage, DifferenceEntropy, MCC.
FeatureSet glcm_features(const LabelVolume& lv);
/// RunEntropy, RunLengthNonUniformityNormalized.
FeatureSet glrlm_features(const LabelVolume& lv);
/// SizeZoneNonUniformity, SizeZoneNonUniformityNormalized, ZoneEntropy.
FeatureSet glszm_features(const LabelVolume& lv);
/// SmallDependenceEmphasis, DependenceEntropy (alpha = 0).
FeatureSet gldm_features(const LabelVolume& lv);

/// Mean, Median, Maximum, Minimum, Range, Entropy, MeanAbsoluteDeviation,
/// RootMeanSquared, 10Percentile, 90Percentile.
FeatureSet firstorder_features(const Volume3& vol, const Mask3& mask,
                               const DiscretizationSpec& spec = {});

/// VoxelVolume (mm^3) and Sphericity from the exposed-face surface area.
FeatureSet shape_features(const Mask3& mask, const Vec3& spacing);

struct ConceptEntry {
  std::string name;
  ConceptModality modality;
  std::optional<double> value;
  std::string flag;
};

struct ConceptVector {
  std::string source_id;
  std::vector<ConceptEntry> entries;
};

struct RegistryEntry {
  std::string name;
  ConceptModality modality;
};

/// Fixed concept order: 2 shape, then 23 PET, then 23 CT.
const std::vector<RegistryEntry>& concept_registry();

/// Shape on the mask, then every intensity/texture feature on PET and on CT,
/// both restricted to the same PET-derived mask.
ConceptVector extract_concepts(const Volume3& pet, const Volume3& ct, const Mask3& pet_mask,
                               const DiscretizationSpec& spec, std::string source_id);

/// Crops `roi` (clipped to the grid), segments PET adaptively inside it and
/// extracts the full concept vector.
ConceptVector concepts_for_box(const MultiModalCase& c, const Box3& roi, double fraction,
                               const DiscretizationSpec& spec, std::string source_id);

/// Samples x concepts. Undefined entries are NaN and mark their column.
struct ConceptMatrix {
  std::vector<std::string> names;
  std::vector<ConceptModality> modalities;
  std::vector<std::string> sample_ids;
  Eigen::MatrixXd values;
  std::vector<double> target;
  std::vector<std::string> column_flags;  // empty when the column is usable

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

ConceptMatrix build_concept_matrix(const std::vector<ConceptVector>& rows,
                                   std::vector<double> target);

/// Header `sample_id,<names...>,target`; undefined values are written as NA.
/// A non-empty `comment` is emitted first as a `# ...` line.
std::string to_csv(const ConceptMatrix& m, const std::string& comment = {});

}  // namespace volxai::concepts
