#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cfil/tensor.hpp"

/// Synthetic kinship families, pair construction, family-disjoint folds and
/// the on-disk manifest format.
namespace cfil::data {

inline constexpr int kFolds = 5;

enum class Gender { Male, Female };
enum class Relation { FatherSon, FatherDaughter, MotherSon, MotherDaughter };
inline constexpr std::array<Relation, 4> kRelations{Relation::FatherSon, Relation::FatherDaughter,
                                                    Relation::MotherSon, Relation::MotherDaughter};

/// "F-S", "F-D", "M-S", "M-D"
const char* to_string(Relation r);
Relation parse_relation(const std::string& text);
Relation relation_of(Gender parent, Gender child);

/// Each family owns a latent z_f ~ N(0, I). Parent and child latents are
/// rho * z_f + sqrt(1 - rho^2) * e with independent e ~ N(0, I). An image is
/// sigmoid(gain * sum_k z_k B_k) plus pixel noise of scale sigma, clamped to
/// [0, 1], where the B_k are smooth seeded basis images.
struct SyntheticFamilyModel {
  int family_count = 200;
  int latent_dim = 32;
  double rho = 0.9;
  double sigma = 0.05;
  double gain = 1.5;
  Index image_size = 64;

  void validate() const;
};

struct Family {
  int id = 0;
  Gender parent_gender = Gender::Male;
  Gender child_gender = Gender::Male;
  Tensor<float> parent;  // [3 x S x S]
  Tensor<float> child;
};

std::vector<Family> generate(const SyntheticFamilyModel& model, std::uint64_t seed);

/// family_id -> fold in 1..5. Families are dealt round-robin after a seeded
/// shuffle within each relation, so every fold holds the same number of
/// families of each relation (within one) and fold sizes differ by at most one.
using FoldAssignment = std::map<int, int>;
FoldAssignment assign_folds(const std::vector<Family>& families, std::uint64_t seed);

struct PairSample {
  int pair_id = 0;
  std::string parent_path;  // relative to the manifest
  std::string child_path;
  bool positive = false;
  Relation relation = Relation::FatherSon;
  int family_id = 0;  // of the parent
  int fold = 1;
  Tensor<float> parent_image;
  Tensor<float> child_image;
};

struct Dataset {
  std::vector<PairSample> pairs;
};

/// Relative image paths used for a family's parent and child.
std::string parent_image_path(int family_id);
std::string child_image_path(int family_id);

/// One positive pair per family and one negative per family. Negatives pair
/// each parent with a child from another family of the same fold, via a
/// seeded cyclic shift whose offset is coprime with the group size, so every
/// child image is used in exactly one negative. Requires >= 2 families per fold.
Dataset make_pairs(const std::vector<Family>& families, const FoldAssignment& folds, std::uint64_t seed);

/// Same construction with all families treated as one group (no folds yet).
Dataset make_pairs(const std::vector<Family>& families, std::uint64_t seed);

/// train = every fold except k, test = fold k.
std::pair<std::vector<PairSample>, std::vector<PairSample>> select_split(const Dataset& dataset, int fold);

/// generate -> assign_folds -> make_pairs, each from its own derived stream.
Dataset build_dataset(const SyntheticFamilyModel& model, std::uint64_t seed);

/// Writes `dir/manifest.csv` plus every referenced image under `dir/images/`.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
void save_manifest(const Dataset& dataset, const std::filesystem::path& manifest_path);
/// Accepts a manifest file or a directory holding manifest.csv.
Dataset load_manifest(const std::filesystem::path& path);

/// Result of enumerating every protocol invariant on a dataset.
struct ProtocolReport {
  int families = 0;
  int positives = 0;
  int negatives = 0;
  std::array<int, kFolds> fold_families{};
  bool negatives_are_derangement = true;   // no negative shares a family
  bool children_used_once = true;          // each child image in exactly one negative
  bool parents_used_once = true;           // each parent image in exactly one negative
  bool folds_family_disjoint = true;       // no family id or image spans two folds
  bool fold_sizes_balanced = true;         // family counts per fold differ by <= 1
  bool relations_balanced = true;          // positive relation counts per fold differ by <= 1
  bool split_ratios_ok = true;             // every split: 4 train folds, 1 test fold, partition
  std::vector<std::string> problems;

  bool ok() const { return problems.empty(); }
};

ProtocolReport verify_protocol(const Dataset& dataset);

}  // namespace cfil::data
