#pragma once

// Deterministic synthetic PET/CT cohort.
//
// CT: body ellipsoid of soft tissue on air, a faint contrast sphere at the
// core of each lesion, Gaussian noise. PET: flat uptake inside the body, one isotropic
// Gaussian blob per lesion and per distractor (distractors are hot on PET
// and absent on CT), Gaussian noise. Components are combined as an uptake
// envelope (pointwise maximum), so with zero noise every blob reaches its
// drawn peak exactly at its center voxel.
//
// A lesion of radius r uses sigma = r / sqrt(2 ln 2.5), which puts the 40%
// iso-level of the blob exactly at distance r; the annotation mask is the
// set of voxels where the noiseless blob is >= 0.4 * peak.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "volxai/volgrid.hpp"

namespace volxai::phantom {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct RealRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct PhantomSpec {
  Index3 dims{40, 40, 40};
  Vec3 spacing{3.0, 3.0, 3.0};
  IntRange lesion_count{1, 5};
  RealRange lesion_radius_mm{9.0, 15.0};
  RealRange lesion_peak_uptake{3.0, 12.0};
  IntRange distractor_count{1, 3};
  RealRange distractor_radius_mm{9.0, 15.0};
  RealRange distractor_peak_uptake{3.0, 8.0};
  Vec3 body_semi_axes_mm{54.0, 45.0, 54.0};
  double tissue_value = 40.0;
  double air_value = -1000.0;
  double lesion_ct_contrast = 22.0;
  /// Radius of the CT contrast sphere relative to the lesion radius.
  double lesion_ct_radius_fraction = 0.5;
  double pet_background = 1.0;
  double noise_sigma_pet = 0.3;
  double noise_sigma_ct = 20.0;
  /// Extra clearance between blobs beyond the sum of their radii.
  double separation_margin_mm = 3.0;
  int max_placement_attempts = 5000;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const PhantomSpec& s);
PhantomSpec phantom_spec_from_json(const nlohmann::json& j, PhantomSpec base = {});

/// Sigma of the Gaussian blob whose 40% level sits at `radius_mm`.
double blob_sigma(double radius_mm);

struct Blob {
  Index3 center{};
  double radius_mm = 0.0;
  double peak = 0.0;
};

struct PhantomCase {
  MultiModalCase data;
  std::vector<Blob> lesions;
  std::vector<Blob> distractors;
  std::uint64_t seed = 0;
};

PhantomCase generate_case(const PhantomSpec& spec, std::uint64_t case_seed,
                          const std::string& id = "case");

struct DatasetSplit {
  std::vector<MultiModalCase> train;
  std::vector<MultiModalCase> test;
  std::map<std::string, std::uint64_t> seeds;
  /// Distractor blobs per case id (not part of the ground truth).
  std::map<std::string, std::vector<Blob>> distractors;
};

/// Train case i uses derive_seed(derive_seed(master, 0), i) and is named
/// train_NNNN; test case j uses derive_seed(derive_seed(master, 1), j).
std::uint64_t train_case_seed(std::uint64_t master_seed, int i);
std::uint64_t test_case_seed(std::uint64_t master_seed, int j);

DatasetSplit generate_dataset(const PhantomSpec& spec, int n_train, int n_test,
                              std::uint64_t master_seed);

/// Run-length encoding of a mask in x-fastest order; runs alternate
/// starting with a (possibly empty) run of zeros.
std::vector<std::uint32_t> rle_encode(const Mask3& m);
Mask3 rle_decode(const Index3& dims, const std::vector<std::uint32_t>& runs);

/// `<root>/<case_id>/{ct,pet}.{json,raw}`, `annotations.json`, `<root>/split.json`.
void write_dataset(const std::filesystem::path& root, const DatasetSplit& split,
                   const nlohmann::json& provenance);
DatasetSplit read_dataset(const std::filesystem::path& root);
MultiModalCase read_case(const std::filesystem::path& root, const std::string& id);

}  // namespace volxai::phantom
