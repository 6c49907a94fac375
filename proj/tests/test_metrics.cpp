#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "cfil/error.hpp"
#include "cfil/metrics.hpp"
#include "cfil/rng.hpp"
#include "doctest.h"

using namespace cfil;
using namespace cfil::metrics;
using data::Relation;

namespace {

ConfusionCounts counts(std::int64_t tp, std::int64_t fn, std::int64_t fp, std::int64_t tn) {
  ConfusionCounts c;
  c.tp = tp;
  c.fn = fn;
  c.fp = fp;
  c.tn = tn;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cfil_test_metrics_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::vector<data::PairSample> samples_for(const std::vector<int>& labels, const std::vector<Relation>& relations) {
  std::vector<data::PairSample> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i].pair_id = static_cast<int>(i);
    out[i].positive = labels[i] == 1;
    out[i].relation = relations[i % relations.size()];
  }
  return out;
}

}  // namespace

TEST_CASE("confusion counts") {
  SUBCASE("hand enumeration") {
    const auto c = confusion({0.9, 0.4, 0.6, 0.2}, {1, 1, 0, 0}, 0.5);
    CHECK(c == counts(1, 1, 1, 1));
  }
  SUBCASE("perfect scorer") {
    const auto c = confusion({0.9, 0.8, 0.1, 0.3}, {1, 1, 0, 0});
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
  }
  SUBCASE("all ones") {
    const auto c = confusion({1.0, 1.0, 1.0}, {1, 0, 0});
    CHECK(c.tn == 0);
    CHECK(c.fp == 2);
  }
  SUBCASE("tie at the threshold counts positive") {
    CHECK(confusion({0.5}, {0}).fp == 1);
    CHECK(confusion({0.5}, {1}).tp == 1);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(confusion({0.1, 0.2}, {1}), InputError);
    CHECK_THROWS_AS(confusion({1.5}, {1}), InputError);
    CHECK_THROWS_AS(confusion({0.5}, {2}), InputError);
    CHECK_THROWS_AS(confusion({0.5}, {1}, 1.2), InputError);
  }
}

TEST_CASE("rates, accuracy and weighted accuracy") {
  const auto c = counts(3, 1, 2, 4);
  CHECK(*tpr(c) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(*fpr(c) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(*accuracy(c) == doctest::Approx(70.0).epsilon(1e-12));
  CHECK(*weighted_accuracy(c) == doctest::Approx(70.83333333333333).epsilon(1e-12));

  const auto perfect = counts(5, 0, 0, 7);
  CHECK(*accuracy(perfect) == 100.0);
  CHECK(*weighted_accuracy(perfect) == 100.0);

  SUBCASE("undefined rates are explicit") {
    const auto no_negatives = counts(2, 1, 0, 0);
    CHECK_FALSE(fpr(no_negatives).has_value());
    CHECK_FALSE(weighted_accuracy(no_negatives).has_value());
    CHECK(tpr(no_negatives).has_value());
    CHECK_FALSE(tpr(counts(0, 0, 1, 1)).has_value());
    CHECK_FALSE(accuracy(ConfusionCounts{}).has_value());
  }

  SUBCASE("balanced classes make ACC and WA equal") {
    for (int tp = 0; tp <= 6; ++tp) {
      for (int tn = 0; tn <= 6; ++tn) {
        const auto b = counts(tp, 6 - tp, 6 - tn, tn);
        CHECK(*accuracy(b) == *weighted_accuracy(b));
      }
    }
  }
}

TEST_CASE("roc curve and auc") {
  SUBCASE("hand example") {
    const std::vector<double> s{0.9, 0.4, 0.6, 0.2};
    const std::vector<int> l{1, 1, 0, 0};
    const auto roc = roc_curve(s, l);
    REQUIRE(roc.size() == 6);
    CHECK(roc.front().threshold == 1.0);
    CHECK(roc.back().threshold == 0.0);
    CHECK(roc.back().fpr == 1.0);
    CHECK(roc.back().tpr == 1.0);
    CHECK(auc(roc) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(mann_whitney_auc(s, l) == 0.75);
  }
  SUBCASE("perfect separation") {
    CHECK(auc(roc_curve({0.9, 0.7, 0.3, 0.1}, {1, 1, 0, 0})) == 1.0);
  }
  SUBCASE("identical scores give the diagonal") {
    const auto roc = roc_curve({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0});
    CHECK(auc(roc) == 0.5);
  }
  SUBCASE("sentinel sits above a score of exactly one") {
    const auto roc = roc_curve({1.0, 0.0}, {1, 0});
    CHECK(roc.front().threshold > 1.0);
    CHECK(roc.front().tpr == 0.0);
    CHECK(roc.back().threshold == 0.0);
    CHECK(auc(roc) == 1.0);
  }
  SUBCASE("single class is undefined") {
    CHECK_THROWS_AS(roc_curve({0.1, 0.7}, {1, 1}), UndefinedError);
    CHECK_THROWS_AS(roc_curve({0.1, 0.7}, {0, 0}), UndefinedError);
    CHECK_THROWS_AS(mann_whitney_auc({0.1}, {0}), UndefinedError);
  }
  SUBCASE("matches the pair-counting oracle and stays monotone") {
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
      SeededRng rng(seed);
      const auto n = 2 + rng.below(199);
      std::vector<double> s(n);
      std::vector<int> l(n);
      for (std::size_t i = 0; i < n; ++i) {
        l[i] = static_cast<int>(rng.below(2));
        // Coarse scores force plenty of ties.
        s[i] = seed % 2 ? static_cast<double>(rng.below(11)) / 10.0 : rng.uniform();
      }
      l[0] = 1;
      l[1] = 0;
      const auto roc = roc_curve(s, l);
      for (std::size_t i = 1; i < roc.size(); ++i) {
        REQUIRE(roc[i].threshold < roc[i - 1].threshold);
        REQUIRE(roc[i].fpr >= roc[i - 1].fpr);
        REQUIRE(roc[i].tpr >= roc[i - 1].tpr);
      }
      const double a = auc(roc);
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
      CHECK(std::abs(a - mann_whitney_auc(s, l)) < 1e-9);
    }
  }
  SUBCASE("random scorer stays near one half") {
    int inside = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      SeededRng rng(seed);
      std::vector<double> s(2000);
      std::vector<int> l(2000);
      for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = rng.uniform();
        l[i] = i % 2 ? 1 : 0;
      }
      const double a = auc(roc_curve(s, l));
      inside += a >= 0.45 && a <= 0.55;
    }
    CHECK(inside >= 18);
  }
}

TEST_CASE("evaluate splits by relation") {
  const std::vector<Relation> rels{Relation::FatherSon, Relation::MotherDaughter};
  const std::vector<int> labels{1, 1, 0, 0, 1, 0};
  const std::vector<double> scores{0.9, 0.2, 0.3, 0.1, 0.7, 0.8};
  const auto r = evaluate(scores, samples_for(labels, rels), 3);
  CHECK(r.fold == 3);
  CHECK(r.overall == counts(2, 1, 1, 2));
  CHECK(r.per_relation.size() == 2);
  // F-S gets indices 0, 2, 4 and M-D gets 1, 3, 5.
  CHECK(*r.relation_accuracy(Relation::FatherSon) == 100.0);
  CHECK(*r.relation_accuracy(Relation::MotherDaughter) == doctest::Approx(100.0 / 3.0));
  CHECK_FALSE(r.relation_accuracy(Relation::MotherSon).has_value());
  CHECK(*r.mva() == doctest::Approx((100.0 + 100.0 / 3.0) / 2.0));
  CHECK(r.auc == doctest::Approx(mann_whitney_auc(scores, labels)).epsilon(1e-12));
  CHECK_THROWS_AS(evaluate({0.5}, samples_for(labels, rels), 1), InputError);
}

TEST_CASE("aggregation across folds") {
  auto make = [](int fold, ConfusionCounts fs, ConfusionCounts md) {
    EvalReport r;
    r.fold = fold;
    r.per_relation[Relation::FatherSon] = fs;
    r.per_relation[Relation::MotherDaughter] = md;
    r.overall = fs;
    r.overall += md;
    r.auc = 0.5 + 0.1 * fold;
    return r;
  };

  SUBCASE("identical folds reproduce a single fold") {
    const auto one = make(1, counts(3, 1, 2, 4), counts(5, 0, 1, 4));
    const auto s = aggregate({one, one, one});
    CHECK(s.folds == 3);
    CHECK(s.relation_mean.at(Relation::FatherSon) == doctest::Approx(*accuracy(counts(3, 1, 2, 4))));
    CHECK(s.mva == doctest::Approx(*one.mva()));
    CHECK(*s.wa == doctest::Approx(*one.wa()));
  }
  SUBCASE("relation means are plain means over folds") {
    const auto a = make(1, counts(4, 1, 0, 0), counts(1, 0, 0, 1));
    const auto b = make(2, counts(5, 0, 0, 0), counts(1, 0, 0, 1));
    const auto s = aggregate({a, b});
    CHECK(s.relation_mean.at(Relation::FatherSon) == doctest::Approx(90.0));
    CHECK(s.relation_mean.at(Relation::MotherDaughter) == 100.0);
    CHECK(s.mva == doctest::Approx(95.0));
    CHECK(s.mean_auc == doctest::Approx(0.65));
  }
  SUBCASE("weighted accuracy comes from pooled counts") {
    const auto a = make(1, counts(9, 1, 0, 1), counts(0, 0, 0, 0));
    const auto b = make(2, counts(1, 0, 5, 5), counts(0, 0, 0, 0));
    CHECK(*a.wa() == doctest::Approx(95.0));
    CHECK(*b.wa() == doctest::Approx(75.0));
    // Averaging the fold values would give 85; pooling gives (10/11 + 6/11) / 2.
    const auto s = aggregate({make(1, counts(9, 1, 0, 1), counts(1, 0, 0, 1)),
                              make(2, counts(1, 0, 5, 5), counts(1, 0, 0, 1))});
    CHECK(s.pooled == counts(12, 1, 5, 8));
    CHECK(*s.wa == doctest::Approx(100.0 * (12.0 / 13.0 + 8.0 / 13.0) / 2.0));
    CHECK(*s.wa != doctest::Approx(85.0));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(aggregate({}), InputError);
    auto a = make(1, counts(1, 0, 0, 1), counts(1, 0, 0, 1));
    auto b = a;
    b.per_relation.erase(Relation::MotherDaughter);
    CHECK_THROWS_AS(aggregate({a, b}), InputError);
  }
}

TEST_CASE("export files") {
  const std::vector<int> labels{1, 0, 1, 0, 1, 0, 1, 1};
  const std::vector<double> scores{0.91, 0.12, 0.47, 0.55, 0.73, 0.05, 1.0, 0.3};
  const auto r = evaluate(scores, samples_for(labels, {Relation::FatherSon, Relation::MotherSon}), 2);
  const auto dir = scratch_dir("export");
  export_report(r, dir);

  const auto csv = slurp(dir / "roc.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(r.roc.size() + 1));
  CHECK(csv.rfind("threshold,fpr,tpr\n", 0) == 0);
  const auto back = read_roc_csv(dir / "roc.csv");
  REQUIRE(back.size() == r.roc.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].threshold == r.roc[i].threshold);
    CHECK(back[i].fpr == r.roc[i].fpr);
    CHECK(back[i].tpr == r.roc[i].tpr);
  }
  CHECK(std::abs(auc(back) - r.auc) < 1e-9);

  const auto report = slurp(dir / "report.csv");
  CHECK(report.rfind("metric,name,value\n", 0) == 0);
  CHECK(report.find("acc,F-S,") != std::string::npos);
  CHECK(report.find("auc,overall,") != std::string::npos);
  const auto svg = slurp(dir / "roc.svg");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);

  const auto again = scratch_dir("export_again");
  export_report(r, again);
  for (const char* f : {"roc.csv", "report.csv", "roc.svg"}) CHECK(slurp(dir / f) == slurp(again / f));

  SUBCASE("undefined values are spelled out") {
    auto only_pos = r;
    only_pos.overall = counts(3, 1, 0, 0);
    bool found = false;
    for (const auto& row : report_rows(only_pos)) {
      if (row[0] == "wa") {
        CHECK(row[2] == "undefined");
        found = true;
      }
    }
    CHECK(found);
  }
  SUBCASE("io errors name the path") {
    const auto blocker = scratch_dir("blocker");
    { std::ofstream(blocker) << "x"; }
    try {
      export_report(r, blocker / "sub");
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("blocker") != std::string::npos);
    }
    CHECK_THROWS_AS(read_roc_csv(blocker / "missing.csv"), IoError);
  }
}
