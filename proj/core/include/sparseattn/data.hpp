#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sparseattn/tensor.hpp"

namespace sparseattn {

struct LabeledImage {
  Tensor pixels;  // [H x W] in [0,1]
  std::size_t label = 0;
  std::optional<std::vector<std::uint8_t>> foreground_mask;  // row-major H*W, synthetic only
  std::string name;
};

using Dataset = std::vector<LabeledImage>;

struct SyntheticSpec {
  std::size_t image_size = 32;
  std::size_t class_count = 3;
  std::uint64_t seed = 0;
  double noise_sigma = 0.05;
  std::size_t samples_per_class = 100;
};

/// Cell-like toy images: class 0 a filled disk, class 1 a ring, class 2 a
/// two-lobed blob, each with jittered placement/size, textured intensity and
/// clipped Gaussian noise. Samples are ordered class-major and each one is a
/// pure function of (seed, class, index).
Dataset generate(const SyntheticSpec& spec);

// 8-bit PGM (P5 binary or P2 ASCII on read; P5 on write).
Tensor read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Tensor& pixels);  // clamps to [0,1], scales by 255

/// Reads `manifest` (CSV of filename,label; header row optional) in `dir`.
/// All images must share one shape and labels must be < class_count.
Dataset load_dataset(const std::string& dir, std::size_t class_count,
                     const std::string& manifest = "manifest.csv");

// Writes every image as PGM plus manifest.csv into `dir` (created if needed).
void export_dataset(const std::string& dir, const Dataset& data);

struct DatasetSplit {
  Dataset train;
  Dataset test;
  std::vector<std::string> warnings;
};

/// Stratified, seeded split. Each class contributes round(fraction * n) samples
/// to train; classes with fewer than 2 samples go entirely to train with a
/// warning.
DatasetSplit split(const Dataset& data, double train_fraction, std::uint64_t seed);

// Packs images [H x W] into one [N x H x W] tensor.
Tensor stack_images(const Dataset& data, const std::vector<std::size_t>& indices);

}  // namespace sparseattn
