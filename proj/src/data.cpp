#include "cfil/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "cfil/error.hpp"
#include "cfil/rng.hpp"
#include "cfil/serialize.hpp"

namespace cfil::data {

namespace {

constexpr const char* kManifestHeader = "pair_id,parent_path,child_path,label,relation,family_id,fold";
constexpr const char* kManifestName = "manifest.csv";
constexpr int kBasisWaves = 3;
constexpr int kMaxFrequency = 3;

std::size_t sz(Index i) { return static_cast<std::size_t>(i); }

/// Smooth basis images: a few low-frequency plane waves per channel,
/// normalised so that sum_k z_k B_k has unit variance per pixel for z ~ N(0, I).
std::vector<std::vector<double>> make_basis(const SyntheticFamilyModel& model, SeededRng& rng) {
  const Index side = model.image_size;
  const Index plane = side * side;
  std::vector<std::vector<double>> basis(sz(model.latent_dim), std::vector<double>(sz(3 * plane)));
  for (auto& b : basis) {
    for (Index c = 0; c < 3; ++c) {
      for (int w = 0; w < kBasisWaves; ++w) {
        const double fx = static_cast<double>(rng.below(kMaxFrequency + 1));
        const double fy = static_cast<double>(rng.below(kMaxFrequency + 1));
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double amp = rng.normal();
        for (Index y = 0; y < side; ++y) {
          for (Index x = 0; x < side; ++x) {
            const double t = 2.0 * std::numbers::pi * (fx * x + fy * y) / static_cast<double>(side);
            b[sz(c * plane + y * side + x)] += amp * std::cos(t + phase);
          }
        }
      }
    }
    double energy = 0.0;
    for (double v : b) energy += v * v;
    const double rms = std::sqrt(energy / static_cast<double>(b.size()));
    const double norm = rms > 0.0 ? 1.0 / (rms * std::sqrt(static_cast<double>(model.latent_dim))) : 0.0;
    for (double& v : b) v *= norm;
  }
  return basis;
}

Tensor<float> render(const std::vector<double>& latent, const std::vector<std::vector<double>>& basis,
                     const SyntheticFamilyModel& model, SeededRng& rng) {
  const Index side = model.image_size;
  std::vector<double> act(sz(3 * side * side), 0.0);
  for (std::size_t k = 0; k < basis.size(); ++k) {
    for (std::size_t p = 0; p < act.size(); ++p) act[p] += latent[k] * basis[k][p];
  }
  std::vector<float> pixels(act.size());
  for (std::size_t p = 0; p < act.size(); ++p) {
    const double v = 1.0 / (1.0 + std::exp(-model.gain * act[p])) + model.sigma * rng.normal();
    pixels[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return Tensor<float>::from(Shape{3, side, side}, std::move(pixels));
}

std::string family_stem(int family_id) {
  std::string id = std::to_string(family_id);
  if (id.size() < 5) id.insert(0, 5 - id.size(), '0');
  return "images/f" + id;
}

std::vector<int> coprime_offsets(int n) {
  std::vector<int> out;
  for (int k = 1; k < n; ++k) {
    if (std::gcd(k, n) == 1) out.push_back(k);
  }
  return out;
}

/// Appends one negative per family in `group`, pairing parent i with the
/// child at a seeded cyclic shift of a seeded order.
void derange_group(std::vector<const Family*> group, int fold, SeededRng& rng, std::vector<PairSample>& out) {
  const int n = static_cast<int>(group.size());
  if (n < 2) {
    throw ConfigError("fold " + std::to_string(fold) + " has " + std::to_string(n) +
                      " families; negatives need at least 2 to derange");
  }
  rng.shuffle(group.begin(), group.end());
  const auto offsets = coprime_offsets(n);
  const int shift = offsets[rng.below(offsets.size())];
  for (int i = 0; i < n; ++i) {
    const Family& parent = *group[static_cast<std::size_t>(i)];
    const Family& child = *group[static_cast<std::size_t>((i + shift) % n)];
    PairSample s;
    s.parent_path = parent_image_path(parent.id);
    s.child_path = child_image_path(child.id);
    s.positive = false;
    s.relation = relation_of(parent.parent_gender, child.child_gender);
    s.family_id = parent.id;
    s.fold = fold;
    s.parent_image = parent.parent;
    s.child_image = child.child;
    out.push_back(std::move(s));
  }
}

Dataset pairs_from_groups(const std::vector<Family>& families, const std::map<int, std::vector<const Family*>>& groups,
                          const std::map<int, int>& fold_of, std::uint64_t seed) {
  Dataset ds;
  for (const auto& f : families) {
    PairSample s;
    s.parent_path = parent_image_path(f.id);
    s.child_path = child_image_path(f.id);
    s.positive = true;
    s.relation = relation_of(f.parent_gender, f.child_gender);
    s.family_id = f.id;
    s.fold = fold_of.at(f.id);
    s.parent_image = f.parent;
    s.child_image = f.child;
    ds.pairs.push_back(std::move(s));
  }
  std::vector<PairSample> negatives;
  SeededRng rng(seed);
  for (const auto& [fold, group] : groups) derange_group(group, fold, rng, negatives);
  std::stable_sort(negatives.begin(), negatives.end(),
                   [](const PairSample& a, const PairSample& b) { return a.family_id < b.family_id; });
  for (auto& s : negatives) ds.pairs.push_back(std::move(s));
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) ds.pairs[i].pair_id = static_cast<int>(i);
  return ds;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int parse_int(const std::string& text, std::size_t line, const char* field) {
  int v = 0;
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end || text.empty()) {
    throw ParseError("manifest line " + std::to_string(line) + ": " + field + " '" + text + "' is not an integer");
  }
  return v;
}

}  // namespace

const char* to_string(Relation r) {
  switch (r) {
    case Relation::FatherSon: return "F-S";
    case Relation::FatherDaughter: return "F-D";
    case Relation::MotherSon: return "M-S";
    case Relation::MotherDaughter: return "M-D";
  }
  return "?";
}

Relation parse_relation(const std::string& text) {
  for (auto r : kRelations) {
    if (text == to_string(r)) return r;
  }
  throw ParseError("unknown relation '" + text + "'");
}

Relation relation_of(Gender parent, Gender child) {
  if (parent == Gender::Male) return child == Gender::Male ? Relation::FatherSon : Relation::FatherDaughter;
  return child == Gender::Male ? Relation::MotherSon : Relation::MotherDaughter;
}

void SyntheticFamilyModel::validate() const {
  if (family_count < kFolds) {
    throw ConfigError("family_count must be at least " + std::to_string(kFolds) + " for 5-fold cross-validation (one per fold), got " +
                      std::to_string(family_count));
  }
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be a finite value >= 0");
  if (!(gain > 0.0) || !std::isfinite(gain)) throw ConfigError("gain must be positive");
  if (image_size < 1) throw ConfigError("image_size must be >= 1");
}

std::vector<Family> generate(const SyntheticFamilyModel& model, std::uint64_t seed) {
  model.validate();
  const SeededRng root(seed);
  SeededRng basis_rng = root.derive(1);
  const auto basis = make_basis(model, basis_rng);
  const double keep = model.rho;
  const double fresh = std::sqrt(std::max(0.0, 1.0 - model.rho * model.rho));
  const auto g = sz(model.latent_dim);

  std::vector<Family> families(sz(model.family_count));
  for (int id = 0; id < model.family_count; ++id) {
    SeededRng rng = root.derive(1000 + static_cast<std::uint64_t>(id));
    Family& f = families[sz(id)];
    f.id = id;
    f.parent_gender = rng.below(2) == 0 ? Gender::Male : Gender::Female;
    f.child_gender = rng.below(2) == 0 ? Gender::Male : Gender::Female;
    std::vector<double> shared(g), parent(g), child(g);
    for (auto& z : shared) z = rng.normal();
    for (std::size_t k = 0; k < g; ++k) parent[k] = keep * shared[k] + fresh * rng.normal();
    for (std::size_t k = 0; k < g; ++k) child[k] = keep * shared[k] + fresh * rng.normal();
    f.parent = render(parent, basis, model, rng);
    f.child = render(child, basis, model, rng);
  }
  return families;
}

FoldAssignment assign_folds(const std::vector<Family>& families, std::uint64_t seed) {
  if (static_cast<int>(families.size()) < kFolds) {
    throw ConfigError("five-fold assignment needs at least 5 families, got " + std::to_string(families.size()));
  }
  SeededRng rng(seed);
  FoldAssignment folds;
  int dealt = 0;
  for (auto r : kRelations) {
    std::vector<int> ids;
    for (const auto& f : families) {
      if (relation_of(f.parent_gender, f.child_gender) == r) ids.push_back(f.id);
    }
    rng.shuffle(ids.begin(), ids.end());
    for (int id : ids) folds[id] = dealt++ % kFolds + 1;
  }
  return folds;
}

std::string parent_image_path(int family_id) { return family_stem(family_id) + "_parent.cft"; }
std::string child_image_path(int family_id) { return family_stem(family_id) + "_child.cft"; }

Dataset make_pairs(const std::vector<Family>& families, const FoldAssignment& folds, std::uint64_t seed) {
  std::map<int, std::vector<const Family*>> groups;
  for (const auto& f : families) {
    const auto it = folds.find(f.id);
    if (it == folds.end()) throw ConfigError("family " + std::to_string(f.id) + " has no fold");
    if (it->second < 1 || it->second > kFolds) throw ConfigError("fold outside 1..5 for family " + std::to_string(f.id));
    groups[it->second].push_back(&f);
  }
  return pairs_from_groups(families, groups, folds, seed);
}

Dataset make_pairs(const std::vector<Family>& families, std::uint64_t seed) {
  if (families.size() < 2) throw ConfigError("negatives need at least 2 families to derange");
  FoldAssignment single;
  std::map<int, std::vector<const Family*>> groups;
  for (const auto& f : families) {
    single[f.id] = 1;
    groups[1].push_back(&f);
  }
  return pairs_from_groups(families, groups, single, seed);
}

std::pair<std::vector<PairSample>, std::vector<PairSample>> select_split(const Dataset& dataset, int fold) {
  if (fold < 1 || fold > kFolds) throw ConfigError("fold must be in 1..5, got " + std::to_string(fold));
  std::pair<std::vector<PairSample>, std::vector<PairSample>> split;
  for (const auto& s : dataset.pairs) (s.fold == fold ? split.second : split.first).push_back(s);
  return split;
}

Dataset build_dataset(const SyntheticFamilyModel& model, std::uint64_t seed) {
  const SeededRng root(seed);
  const auto families = generate(model, root.derive(1).next_u64());
  const auto folds = assign_folds(families, root.derive(2).next_u64());
  return make_pairs(families, folds, root.derive(3).next_u64());
}

std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
  std::map<std::string, Tensor<float>> images;
  for (const auto& s : dataset.pairs) {
    images.emplace(s.parent_path, s.parent_image);
    images.emplace(s.child_path, s.child_image);
  }
  for (const auto& [path, t] : images) {
    if (!t.defined()) throw IoError("no pixel data for " + path);
    io::save_cft1(dir / path, t);
  }
  const auto manifest = dir / kManifestName;
  save_manifest(dataset, manifest);
  return manifest;
}

void save_manifest(const Dataset& dataset, const std::filesystem::path& manifest_path) {
  std::ofstream os(manifest_path, std::ios::binary);
  if (!os) throw IoError("cannot open " + manifest_path.string() + " for writing");
  os << kManifestHeader << '\n';
  for (const auto& s : dataset.pairs) {
    for (const auto* p : {&s.parent_path, &s.child_path}) {
      if (p->find_first_of(",\n\r") != std::string::npos) throw IoError("image path '" + *p + "' contains a separator");
    }
    os << s.pair_id << ',' << s.parent_path << ',' << s.child_path << ',' << (s.positive ? 1 : 0) << ','
       << to_string(s.relation) << ',' << s.family_id << ',' << s.fold << '\n';
  }
  if (!os) throw IoError("write failed for " + manifest_path.string());
}

Dataset load_manifest(const std::filesystem::path& path) {
  const auto manifest = std::filesystem::is_directory(path) ? path / kManifestName : path;
  std::ifstream is(manifest, std::ios::binary);
  if (!is) throw IoError("cannot open manifest " + manifest.string());
  const auto base = manifest.parent_path();

  std::string line;
  if (!std::getline(is, line) || line != kManifestHeader) {
    throw ParseError("manifest line 1: expected header '" + std::string(kManifestHeader) + "'");
  }
  Dataset ds;
  std::map<std::string, Tensor<float>> cache;
  std::set<int> ids;
  auto image = [&](const std::string& rel) {
    const auto it = cache.find(rel);
    if (it != cache.end()) return it->second;
    const auto full = base / rel;
    if (!std::filesystem::exists(full)) throw IoError("missing image file " + full.string());
    auto t = io::load_cft1(full);
    if (t.shape().rank() != 3 || t.dim(0) != 3) {
      throw ParseError(full.string() + ": expected a [3 x H x W] image, got " + t.shape().to_string());
    }
    cache.emplace(rel, t);
    return t;
  };
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 7) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": expected 7 fields, got " +
                       std::to_string(f.size()));
    }
    PairSample s;
    s.pair_id = parse_int(f[0], line_no, "pair_id");
    if (!ids.insert(s.pair_id).second) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": duplicate pair_id " + f[0]);
    }
    s.parent_path = f[1];
    s.child_path = f[2];
    if (f[3] != "0" && f[3] != "1") {
      throw ParseError("manifest line " + std::to_string(line_no) + ": label must be 0 or 1, got '" + f[3] + "'");
    }
    s.positive = f[3] == "1";
    try {
      s.relation = parse_relation(f[4]);
    } catch (const ParseError& e) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    s.family_id = parse_int(f[5], line_no, "family_id");
    s.fold = parse_int(f[6], line_no, "fold");
    if (s.fold < 1 || s.fold > kFolds) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": fold " + f[6] + " outside 1..5");
    }
    s.parent_image = image(s.parent_path);
    s.child_image = image(s.child_path);
    ds.pairs.push_back(std::move(s));
  }
  return ds;
}

ProtocolReport verify_protocol(const Dataset& dataset) {
  ProtocolReport r;
  auto fail = [&r](bool& flag, const std::string& why) {
    flag = false;
    r.problems.push_back(why);
  };

  std::map<std::string, int> child_family, parent_family;
  std::map<int, int> family_fold;
  std::map<std::string, std::set<int>> image_folds;
  for (const auto& s : dataset.pairs) {
    image_folds[s.parent_path].insert(s.fold);
    image_folds[s.child_path].insert(s.fold);
    if (!s.positive) continue;
    ++r.positives;
    if (!child_family.emplace(s.child_path, s.family_id).second || !family_fold.emplace(s.family_id, s.fold).second) {
      r.problems.push_back("family " + std::to_string(s.family_id) + " has more than one positive pair");
    }
    parent_family.emplace(s.parent_path, s.family_id);
  }
  r.families = static_cast<int>(family_fold.size());

  std::map<std::string, int> child_uses, parent_uses;
  for (const auto& s : dataset.pairs) {
    const auto ff = family_fold.find(s.family_id);
    if (ff == family_fold.end()) {
      fail(r.folds_family_disjoint, "pair " + std::to_string(s.pair_id) + " names a family with no positive pair");
    } else if (ff->second != s.fold) {
      fail(r.folds_family_disjoint, "family " + std::to_string(s.family_id) + " appears in folds " +
                                        std::to_string(ff->second) + " and " + std::to_string(s.fold));
    }
    if (s.positive) continue;
    ++r.negatives;
    ++child_uses[s.child_path];
    ++parent_uses[s.parent_path];
    const auto cf = child_family.find(s.child_path);
    if (cf == child_family.end()) {
      fail(r.negatives_are_derangement, "negative " + std::to_string(s.pair_id) + " uses an unknown child image");
    } else if (cf->second == s.family_id) {
      fail(r.negatives_are_derangement, "negative " + std::to_string(s.pair_id) + " pairs family " +
                                            std::to_string(s.family_id) + " with its own child");
    }
  }
  for (const auto& [path, fam] : child_family) {
    if (child_uses[path] != 1) {
      fail(r.children_used_once, "child image " + path + " used in " + std::to_string(child_uses[path]) + " negatives");
    }
  }
  for (const auto& [path, fam] : parent_family) {
    if (parent_uses[path] != 1) {
      fail(r.parents_used_once, "parent image " + path + " used in " + std::to_string(parent_uses[path]) + " negatives");
    }
  }
  for (const auto& [path, folds] : image_folds) {
    if (folds.size() != 1) fail(r.folds_family_disjoint, "image " + path + " appears in more than one fold");
  }
  if (r.positives != r.negatives) {
    r.problems.push_back(std::to_string(r.positives) + " positives vs " + std::to_string(r.negatives) + " negatives");
  }

  std::array<std::array<int, kFolds>, 4> relation_fold{};
  for (const auto& s : dataset.pairs) {
    if (s.positive) ++relation_fold[static_cast<std::size_t>(s.relation)][static_cast<std::size_t>(s.fold - 1)];
  }
  for (const auto& [fam, fold] : family_fold) ++r.fold_families[static_cast<std::size_t>(fold - 1)];
  const auto [lo, hi] = std::minmax_element(r.fold_families.begin(), r.fold_families.end());
  if (*hi - *lo > 1) fail(r.fold_sizes_balanced, "fold family counts differ by " + std::to_string(*hi - *lo));
  for (std::size_t rel = 0; rel < 4; ++rel) {
    const auto [a, b] = std::minmax_element(relation_fold[rel].begin(), relation_fold[rel].end());
    if (*b - *a > 1) {
      fail(r.relations_balanced, std::string(to_string(kRelations[rel])) + " counts differ by " +
                                     std::to_string(*b - *a) + " across folds");
    }
  }

  for (int k = 1; k <= kFolds; ++k) {
    const auto [train, test] = select_split(dataset, k);
    std::set<int> train_folds, test_folds, train_families, test_families;
    for (const auto& s : train) {
      train_folds.insert(s.fold);
      train_families.insert(s.family_id);
      if (const auto cf = child_family.find(s.child_path); cf != child_family.end()) train_families.insert(cf->second);
    }
    for (const auto& s : test) {
      test_folds.insert(s.fold);
      test_families.insert(s.family_id);
      if (const auto cf = child_family.find(s.child_path); cf != child_family.end()) test_families.insert(cf->second);
    }
    std::vector<int> shared;
    std::set_intersection(train_families.begin(), train_families.end(), test_families.begin(), test_families.end(),
                          std::back_inserter(shared));
    const bool partition = train.size() + test.size() == dataset.pairs.size();
    if (train_folds.size() != kFolds - 1 || test_folds.size() != 1 || !shared.empty() || !partition) {
      fail(r.split_ratios_ok, "split " + std::to_string(k) + " is not a family-disjoint 4:1 partition");
    }
  }
  return r;
}

}  // namespace cfil::data
