#include "cfil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "cfil/error.hpp"

namespace cfil::metrics {

namespace {

void check_inputs(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw InputError(std::to_string(scores.size()) + " scores for " + std::to_string(labels.size()) + " labels");
  }
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw InputError("score " + std::to_string(s) + " outside [0, 1]");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw InputError("label " + std::to_string(l) + " is not binary");
  }
}

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

// Percentages come from the fraction in lowest terms, so equal rates give
// bitwise-equal results however they were formed.
std::optional<double> percent(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  const std::int64_t g = std::gcd(num, den);
  return 100.0 * static_cast<double>(num / g) / static_cast<double>(den / g);
}

std::string number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string number(const std::optional<double>& v) { return v ? number(*v) : "undefined"; }

std::string svg_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::ofstream open_for_writing(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

void write_svg(const EvalReport& report, const std::filesystem::path& path) {
  constexpr double size = 400.0, margin = 50.0;
  auto x = [&](double fpr) { return svg_coord(margin + fpr * size); };
  auto y = [&](double tpr) { return svg_coord(margin + (1.0 - tpr) * size); };
  std::ofstream os = open_for_writing(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"500\" viewBox=\"0 0 500 500\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"500\" height=\"500\" fill=\"white\"/>\n"
     << "<rect x=\"50\" y=\"50\" width=\"400\" height=\"400\" fill=\"none\" stroke=\"black\"/>\n"
     << "<line x1=\"50\" y1=\"450\" x2=\"450\" y2=\"50\" stroke=\"#999999\" stroke-dasharray=\"4 4\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    os << "<text x=\"" << x(v) << "\" y=\"470\" font-size=\"12\" text-anchor=\"middle\">" << svg_coord(v)
       << "</text>\n"
       << "<text x=\"42\" y=\"" << y(v) << "\" font-size=\"12\" text-anchor=\"end\">" << svg_coord(v) << "</text>\n";
  }
  os << "<text x=\"250\" y=\"492\" font-size=\"14\" text-anchor=\"middle\">False positive rate</text>\n"
     << "<text x=\"14\" y=\"250\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 14 250)\">"
        "True positive rate</text>\n"
     << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < report.roc.size(); ++i) {
    os << (i ? " " : "") << x(report.roc[i].fpr) << ',' << y(report.roc[i].tpr);
  }
  char title[96];
  std::snprintf(title, sizeof title, "ROC, fold %d, AUC %.4f", report.fold, report.auc);
  os << "\"/>\n<text x=\"250\" y=\"32\" font-size=\"16\" text-anchor=\"middle\">" << title << "</text>\n</svg>\n";
  if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  tn += o.tn;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

ConfusionCounts confusion(const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
  check_inputs(scores, labels);
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw InputError("threshold outside [0, 1]");
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) {
      (predicted ? c.tp : c.fn) += 1;
    } else {
      (predicted ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

std::optional<double> tpr(const ConfusionCounts& c) { return ratio(c.tp, c.positives()); }
std::optional<double> fpr(const ConfusionCounts& c) { return ratio(c.fp, c.negatives()); }

std::optional<double> accuracy(const ConfusionCounts& c) {
  return percent(c.tp + c.tn, c.total());
}

std::optional<double> weighted_accuracy(const ConfusionCounts& c) {
  const std::int64_t p = c.positives(), n = c.negatives();
  if (p == 0 || n == 0) return std::nullopt;
  return percent(c.tp * n + c.tn * p, 2 * p * n);
}

std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels);
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  const auto negatives = static_cast<std::int64_t>(labels.size()) - positives;
  if (positives == 0 || negatives == 0) {
    throw UndefinedError("ROC curve needs both classes, got " + std::to_string(positives) + " positives and " +
                         std::to_string(negatives) + " negatives");
  }
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double top = *std::max_element(scores.begin(), scores.end());
  std::vector<RocPoint> points{{top >= 1.0 ? std::nextafter(1.0, 2.0) : 1.0, 0.0, 0.0}};
  std::int64_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[order[k]];
    while (k < order.size() && scores[order[k]] == s) {
      (labels[order[k]] == 1 ? tp : fp) += 1;
      ++k;
    }
    points.push_back({s, static_cast<double>(fp) / static_cast<double>(negatives),
                      static_cast<double>(tp) / static_cast<double>(positives)});
  }
  if (points.back().threshold > 0.0) points.push_back({0.0, 1.0, 1.0});
  return points;
}

double auc(const std::vector<RocPoint>& points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  }
  return area;
}

double mann_whitney_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels);
  double ordered = 0.0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      ordered += scores[i] > scores[j] ? 1.0 : (scores[i] == scores[j] ? 0.5 : 0.0);
    }
  }
  if (pairs == 0) throw UndefinedError("Mann-Whitney statistic needs both classes");
  return ordered / static_cast<double>(pairs);
}

std::optional<double> EvalReport::relation_accuracy(data::Relation r) const {
  const auto it = per_relation.find(r);
  if (it == per_relation.end()) return std::nullopt;
  return accuracy(it->second);
}

std::optional<double> EvalReport::mva() const {
  if (per_relation.empty()) return std::nullopt;
  double total = 0.0;
  for (const auto& [r, c] : per_relation) total += *accuracy(c);
  return total / static_cast<double>(per_relation.size());
}

EvalReport evaluate(const std::vector<double>& scores, const std::vector<data::PairSample>& samples, int fold,
                    double threshold) {
  if (scores.size() != samples.size()) {
    throw InputError(std::to_string(scores.size()) + " scores for " + std::to_string(samples.size()) + " samples");
  }
  EvalReport r;
  r.fold = fold;
  std::vector<int> labels;
  std::map<data::Relation, std::pair<std::vector<double>, std::vector<int>>> by_relation;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int l = samples[i].positive ? 1 : 0;
    labels.push_back(l);
    auto& [s, ls] = by_relation[samples[i].relation];
    s.push_back(scores[i]);
    ls.push_back(l);
  }
  r.overall = confusion(scores, labels, threshold);
  for (const auto& [rel, sl] : by_relation) r.per_relation[rel] = confusion(sl.first, sl.second, threshold);
  r.roc = roc_curve(scores, labels);
  r.auc = auc(r.roc);
  return r;
}

Summary aggregate(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw InputError("aggregate needs at least one report");
  std::set<data::Relation> relations;
  for (const auto& [rel, c] : reports.front().per_relation) relations.insert(rel);
  Summary s;
  s.folds = static_cast<int>(reports.size());
  for (const auto& rep : reports) {
    std::set<data::Relation> here;
    for (const auto& [rel, c] : rep.per_relation) here.insert(rel);
    if (here != relations) {
      throw InputError("aggregate: fold " + std::to_string(rep.fold) + " covers a different set of relations");
    }
    for (const auto& [rel, c] : rep.per_relation) s.relation_mean[rel] += *accuracy(c);
    s.pooled += rep.overall;
    s.mean_auc += rep.auc;
  }
  for (auto& [rel, v] : s.relation_mean) {
    v /= static_cast<double>(reports.size());
    s.mva += v;
  }
  if (!s.relation_mean.empty()) s.mva /= static_cast<double>(s.relation_mean.size());
  s.mean_auc /= static_cast<double>(reports.size());
  s.wa = weighted_accuracy(s.pooled);
  return s;
}

std::vector<std::array<std::string, 3>> report_rows(const EvalReport& r) {
  std::vector<std::array<std::string, 3>> rows;
  rows.push_back({"fold", "overall", std::to_string(r.fold)});
  for (auto rel : data::kRelations) {
    if (r.per_relation.count(rel)) rows.push_back({"acc", data::to_string(rel), number(r.relation_accuracy(rel))});
  }
  rows.push_back({"acc", "overall", number(r.acc())});
  rows.push_back({"mva", "overall", number(r.mva())});
  rows.push_back({"wa", "overall", number(r.wa())});
  rows.push_back({"tpr", "overall", number(tpr(r.overall))});
  rows.push_back({"fpr", "overall", number(fpr(r.overall))});
  rows.push_back({"auc", "overall", number(r.auc)});
  rows.push_back({"count", "tp", std::to_string(r.overall.tp)});
  rows.push_back({"count", "tn", std::to_string(r.overall.tn)});
  rows.push_back({"count", "fp", std::to_string(r.overall.fp)});
  rows.push_back({"count", "fn", std::to_string(r.overall.fn)});
  return rows;
}

void export_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  {
    std::ofstream os = open_for_writing(dir / "roc.csv");
    os << "threshold,fpr,tpr\n";
    for (const auto& p : report.roc) os << number(p.threshold) << ',' << number(p.fpr) << ',' << number(p.tpr) << '\n';
    if (!os) throw IoError("write failed for " + (dir / "roc.csv").string());
  }
  {
    std::ofstream os = open_for_writing(dir / "report.csv");
    os << "metric,name,value\n";
    for (const auto& row : report_rows(report)) os << row[0] << ',' << row[1] << ',' << row[2] << '\n';
    if (!os) throw IoError("write failed for " + (dir / "report.csv").string());
  }
  write_svg(report, dir / "roc.svg");
}

std::vector<RocPoint> read_roc_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "threshold,fpr,tpr") throw ParseError(path.string() + " line 1: bad header");
  std::vector<RocPoint> points;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    RocPoint p;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf%c", &p.threshold, &p.fpr, &p.tpr, &tail) != 3) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": malformed row");
    }
    points.push_back(p);
  }
  return points;
}

}  // namespace cfil::metrics
