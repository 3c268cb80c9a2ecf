#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "canonae/rng.hpp"
#include "canonae/tensor.hpp"

namespace canonae {

struct PointCloud {
  Tensor positions;                 // [N, dim] (dim 2 or 3)
  std::optional<Tensor> features;   // [N, F]
  std::optional<int> label;
};

struct DigitSet {
  Tensor rows;  // [N, D], each row one-hot
};

struct Sample {
  enum class Kind { PointCloud, DigitSet };
  Kind kind;
  PointCloud cloud;    // valid when kind == PointCloud
  DigitSet digits;     // valid when kind == DigitSet
};

using Dataset = std::vector<Sample>;

struct ParseError : std::runtime_error {
  int line;
  ParseError(int line_, const std::string& what) : std::runtime_error(what), line(line_) {}
};

// The eight 4-point tetromino block-center configurations, including the
// chiral pair (indices 0 and 1). Values are the fixed constants table.
extern const char* const kTetrisShapeNames[8];
Tensor tetris_shape(int cls);

// count samples cycling through the 8 classes; Gaussian position noise with
// std sigma; when augment is set each sample gets a random SO(3) rotation and
// a translation uniform in [-3,3]^3.
Dataset gen_tetris(int count, double sigma, std::uint64_t seed, bool augment);

// Distinct multisets of N one-hot rows over D classes, materialized in random
// row order. No two samples share a class-count histogram.
Dataset gen_digit_sets(int n, int d, int count, std::uint64_t seed);

// C(d+n-1, n) saturating at 2^62; used to reject impossible counts.
long long multiset_coefficient(int d, int n);

// Planar constellations for the SO(2) task: `classes` fixed asymmetric base
// shapes of n points, noise sigma, optional random rotation about the origin.
Dataset gen_clouds2d(int count, int n, int classes, double sigma, std::uint64_t seed, bool augment);

// JSON-lines, one record per sample; round-trips bit-exactly.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// FNV-1a of a file's bytes, hex; used for content hashes in manifests.
std::string file_hash(const std::string& path);
std::string string_hash(const std::string& text);

}  // namespace canonae
