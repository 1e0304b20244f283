#pragma once

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "rccm/mask.hpp"
#include "rccm/rng.hpp"
#include "rccm/tensor.hpp"

namespace rccm::synth {

enum class PlaqueClass : int { hyperechoic = 0, hypoechoic = 1, mixed = 2 };

const char* class_name(int label);

struct ClassContrast {
  double plaque = 0.5;      // mean plaque intensity in [0,1]
  double background = 0.4;  // mean background intensity in [0,1]
};

struct PhantomConfig {
  int64_t image_height = 96;
  int64_t image_width = 144;
  double pixel_spacing = 0.1;  // mm per pixel
  // indexed by PlaqueClass; mixed uses `plaque` as the area-weighted mean of
  // its bright and dark sub-regions
  std::array<ClassContrast, 3> class_contrasts{
      ClassContrast{0.75, 0.30}, ClassContrast{0.12, 0.45}, ClassContrast{0.45, 0.30}};
  double mixed_contrast_split = 0.30;  // +/- offset of the mixed sub-regions
  double speckle_scale = 0.12;         // multiplicative noise strength
  double area_min_mm2 = 6.0;
  double area_max_mm2 = 45.0;
  uint64_t seed = 0;

  void validate() const;  // also checks area feasibility for the image size
};

// One image + ground truth. Image intensities are quantized to the 8-bit
// grid k/255 so that save/load round-trips bit-exactly.
struct Sample {
  Tensor image;  // [H,W] in [0,1]
  Mask mask;     // 1 = plaque, never empty
  int class_label = 0;
  double pixel_spacing = 0.1;
  std::string id;
};

struct DatasetSplit {
  std::vector<Sample> train, val, test;
  uint64_t split_seed = 0;
};

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingManifestError : DatasetError {
  using DatasetError::DatasetError;
};
struct CorruptImageError : DatasetError {
  using DatasetError::DatasetError;
};
struct ManifestMismatchError : DatasetError {
  using DatasetError::DatasetError;
};
struct EmptyDatasetError : DatasetError {
  using DatasetError::DatasetError;
};

// Deterministic per (config, class, sample_seed): a filled, 4-connected blob
// with pixel area inside the configured range, speckled intensities.
Sample generate_phantom(const PhantomConfig& cfg, int class_label, uint64_t sample_seed,
                        std::string id = "");

// counts[c] samples of class c, ids sequential, seeded from cfg.seed.
std::vector<Sample> generate_dataset(const PhantomConfig& cfg, const std::array<int, 3>& counts);

// Directory layout: manifest.csv + one PGM per image and mask.
void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir);
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

// Stratified-per-class split with floor-then-distribute rounding.
DatasetSplit split_dataset(std::vector<Sample> samples, std::array<double, 3> ratios,
                           uint64_t seed);

// 8-bit binary PGM (P5).
void write_pgm(const std::filesystem::path& path, const Tensor& image);
void write_mask_pgm(const std::filesystem::path& path, const Mask& mask);
Tensor read_pgm(const std::filesystem::path& path);
Mask read_mask_pgm(const std::filesystem::path& path);

}  // namespace rccm::synth
