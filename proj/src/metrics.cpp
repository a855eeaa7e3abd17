#include "hoverpost/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "hoverpost/error.hpp"
#include "hoverpost/parallel.hpp"
#include "json.hpp"

namespace hoverpost {

namespace {

using json = nlohmann::json;

int class_of(const ClassTable& table, std::uint32_t label, const char* side) {
  const auto it = table.find(label);
  if (it == table.end())
    throw Error(ErrorCode::kMissingClass, std::string(side) + " label " + std::to_string(label) + " has no class");
  return it->second;
}

std::vector<Point> centroids(InstanceView map, const std::vector<std::uint32_t>& labels) {
  std::unordered_map<std::uint32_t, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) index[labels[i]] = i;
  std::vector<double> rs(labels.size(), 0.0), cs(labels.size(), 0.0), n(labels.size(), 0.0);
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      const std::uint32_t l = map(r, c);
      if (!l) continue;
      const std::size_t i = index[l];
      rs[i] += r;
      cs[i] += c;
      n[i] += 1.0;
    }
  }
  std::vector<Point> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = {rs[i] / n[i], cs[i] / n[i]};
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

json tile_json(const TileReport& t, bool with_name) {
  json per_pq = json::object();
  for (const auto& [c, v] : t.per_class_pq) per_pq[std::to_string(c)] = v;
  json per_f = json::object();
  for (const auto& [c, v] : t.per_class_f) per_f[std::to_string(c)] = v;
  json j = {{"pq_b", t.pq_b}, {"f_d", t.f_d}, {"per_class_pq", per_pq}, {"per_class_f", per_f}};
  j["pq_m"] = t.pq_m ? json(*t.pq_m) : json(nullptr);
  if (with_name) j["name"] = t.name;
  return j;
}

}  // namespace

IouTable iou_matrix(InstanceView gt, InstanceView pred) {
  if (gt.shape() != pred.shape())
    throw Error(ErrorCode::kShapeMismatch, "gt " + gt.shape().str() + " vs pred " + pred.shape().str());
  std::unordered_map<std::uint32_t, std::size_t> gt_area, pred_area;
  std::unordered_map<std::uint64_t, std::size_t> inter;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::uint32_t g = gt[i];
    const std::uint32_t p = pred[i];
    if (g) ++gt_area[g];
    if (p) ++pred_area[p];
    if (g && p) ++inter[(std::uint64_t{g} << 32) | p];
  }
  IouTable t;
  for (const auto& [l, a] : gt_area) t.gt_labels.push_back(l);
  for (const auto& [l, a] : pred_area) t.pred_labels.push_back(l);
  std::sort(t.gt_labels.begin(), t.gt_labels.end());
  std::sort(t.pred_labels.begin(), t.pred_labels.end());
  t.entries.reserve(inter.size());
  for (const auto& [key, n] : inter) {
    IouEntry e;
    e.gt = static_cast<std::uint32_t>(key >> 32);
    e.pred = static_cast<std::uint32_t>(key & 0xFFFFFFFFu);
    e.intersection = n;
    const std::size_t uni = gt_area[e.gt] + pred_area[e.pred] - n;
    e.iou = static_cast<double>(n) / static_cast<double>(uni);
    t.entries.push_back(e);
  }
  std::sort(t.entries.begin(), t.entries.end(),
            [](const IouEntry& a, const IouEntry& b) { return std::tie(a.gt, a.pred) < std::tie(b.gt, b.pred); });
  return t;
}

MatchSet match_instances(const IouTable& table) {
  MatchSet m;
  std::vector<std::uint32_t> gt_hit, pred_hit;
  for (const auto& e : table.entries) {
    if (e.iou > 0.5) {
      m.pairs.push_back({e.gt, e.pred, e.iou});
      gt_hit.push_back(e.gt);
      pred_hit.push_back(e.pred);
    }
  }
  std::sort(gt_hit.begin(), gt_hit.end());
  std::sort(pred_hit.begin(), pred_hit.end());
  std::set_difference(table.gt_labels.begin(), table.gt_labels.end(), gt_hit.begin(), gt_hit.end(),
                      std::back_inserter(m.unmatched_gt));
  std::set_difference(table.pred_labels.begin(), table.pred_labels.end(), pred_hit.begin(), pred_hit.end(),
                      std::back_inserter(m.unmatched_pred));
  return m;
}

PanopticScores panoptic_quality(const MatchSet& matches, const PqOptions& opts) {
  PanopticScores s;
  s.tp = matches.pairs.size();
  s.fp = matches.unmatched_pred.size();
  s.fn = matches.unmatched_gt.size();
  if (s.tp + s.fp + s.fn == 0) {
    const double v = opts.empty_is_perfect ? 1.0 : 0.0;
    s.dq = s.sq = s.pq = v;
    return s;
  }
  const double tp = static_cast<double>(s.tp);
  s.dq = tp / (tp + 0.5 * static_cast<double>(s.fp) + 0.5 * static_cast<double>(s.fn));
  if (s.tp) {
    double sum = 0.0;
    for (const auto& p : matches.pairs) sum += p.iou;
    s.sq = sum / tp;
  }
  s.pq = s.dq * s.sq;
  return s;
}

PanopticScores panoptic_quality(InstanceView gt, InstanceView pred, const PqOptions& opts) {
  return panoptic_quality(match_instances(iou_matrix(gt, pred)), opts);
}

MulticlassPq multiclass_pq(const IouTable& table, const ClassTable& gt_classes, const ClassTable& pred_classes,
                           int num_classes, const PqOptions& opts) {
  MulticlassPq out;
  double sum = 0.0;
  for (int c = 1; c <= num_classes; ++c) {
    IouTable sub;
    for (std::uint32_t l : table.gt_labels) {
      if (class_of(gt_classes, l, "gt") == c) sub.gt_labels.push_back(l);
    }
    for (std::uint32_t l : table.pred_labels) {
      if (class_of(pred_classes, l, "pred") == c) sub.pred_labels.push_back(l);
    }
    if (sub.gt_labels.empty() && sub.pred_labels.empty()) continue;
    for (const auto& e : table.entries) {
      if (gt_classes.at(e.gt) == c && pred_classes.at(e.pred) == c) sub.entries.push_back(e);
    }
    const PanopticScores s = panoptic_quality(match_instances(sub), opts);
    out.per_class[c] = s;
    sum += s.pq;
  }
  if (out.per_class.empty()) {
    out.mpq = opts.empty_is_perfect ? 1.0 : 0.0;
  } else {
    out.mpq = sum / static_cast<double>(out.per_class.size());
  }
  return out;
}

MulticlassPq multiclass_pq(InstanceView gt, const ClassTable& gt_classes, InstanceView pred,
                           const ClassTable& pred_classes, int num_classes, const PqOptions& opts) {
  return multiclass_pq(iou_matrix(gt, pred), gt_classes, pred_classes, num_classes, opts);
}

DetectionMatch detection_f1(std::span<const Point> gt, std::span<const Point> pred, double radius) {
  struct Cand {
    double d;
    std::size_t g, p;
  };
  std::vector<Cand> cands;
  const double r2 = radius * radius;
  for (std::size_t g = 0; g < gt.size(); ++g) {
    for (std::size_t p = 0; p < pred.size(); ++p) {
      const double dr = gt[g][0] - pred[p][0];
      const double dc = gt[g][1] - pred[p][1];
      const double d2 = dr * dr + dc * dc;
      if (d2 <= r2) cands.push_back({d2, g, p});
    }
  }
  std::sort(cands.begin(), cands.end(),
            [](const Cand& a, const Cand& b) { return std::tie(a.d, a.g, a.p) < std::tie(b.d, b.g, b.p); });
  std::vector<char> gused(gt.size(), 0), pused(pred.size(), 0);
  DetectionMatch m;
  for (const auto& c : cands) {
    if (gused[c.g] || pused[c.p]) continue;
    gused[c.g] = pused[c.p] = 1;
    m.pairs.emplace_back(c.g, c.p);
  }
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (!gused[g]) m.unmatched_gt.push_back(g);
  }
  for (std::size_t p = 0; p < pred.size(); ++p) {
    if (!pused[p]) m.unmatched_pred.push_back(p);
  }
  const double tp = static_cast<double>(m.pairs.size());
  const double den = 2.0 * tp + static_cast<double>(m.unmatched_gt.size() + m.unmatched_pred.size());
  m.f1 = den == 0.0 ? 1.0 : 2.0 * tp / den;
  return m;
}

std::optional<double> classification_f1(const DetectionMatch& match, std::span<const int> gt_classes,
                                        std::span<const int> pred_classes, int cls, const FScoreCoefficients& coeff) {
  if (cls <= 0) throw Error(ErrorCode::kUnknownClass, "class " + std::to_string(cls) + " is not a nucleus class");
  double tp = 0, fp_c = 0, fn_c = 0, fp_d = 0, fn_d = 0;
  for (const auto& [g, p] : match.pairs) {
    const int gc = gt_classes[g];
    const int pc = pred_classes[p];
    if (gc == cls && pc == cls) {
      tp += 1;
    } else if (pc == cls) {
      fp_c += 1;
    } else if (gc == cls) {
      fn_c += 1;
    }
  }
  for (std::size_t p : match.unmatched_pred) fp_d += pred_classes[p] == cls ? 1 : 0;
  for (std::size_t g : match.unmatched_gt) fn_d += gt_classes[g] == cls ? 1 : 0;
  const double den =
      2 * tp + coeff.fp_class * fp_c + coeff.fn_class * fn_c + coeff.fp_det * fp_d + coeff.fn_det * fn_d;
  if (tp + fp_c + fn_c + fp_d + fn_d == 0) return std::nullopt;
  if (den == 0.0) return 0.0;
  return 2 * tp / den;
}

std::string_view scheme_name(ClassScheme scheme) {
  switch (scheme) {
    case ClassScheme::kPanNuke: return "pannuke";
    case ClassScheme::kCoNSeP: return "consep";
    case ClassScheme::kCommon: return "common";
  }
  return "";
}

ClassMapping ClassMapping::to_common() {
  ClassMapping m;
  m.target = ClassScheme::kCommon;
  using enum ClassScheme;
  // PanNuke: 1 neoplastic, 2 inflammatory, 3 connective, 4 dead, 5 epithelial.
  m.table[{kPanNuke, 1}] = kNeoplastic;
  m.table[{kPanNuke, 2}] = kInflammatory;
  m.table[{kPanNuke, 3}] = kMiscellaneous;
  m.table[{kPanNuke, 4}] = kMiscellaneous;
  m.table[{kPanNuke, 5}] = kEpithelial;
  // CoNSeP: 1 other, 2 inflammatory, 3 healthy epithelial,
  // 4 dysplastic/malignant epithelial, 5 fibroblast, 6 muscle, 7 endothelial.
  m.table[{kCoNSeP, 1}] = kMiscellaneous;
  m.table[{kCoNSeP, 2}] = kInflammatory;
  m.table[{kCoNSeP, 3}] = kEpithelial;
  m.table[{kCoNSeP, 4}] = kNeoplastic;
  m.table[{kCoNSeP, 5}] = kMiscellaneous;
  m.table[{kCoNSeP, 6}] = kMiscellaneous;
  m.table[{kCoNSeP, 7}] = kMiscellaneous;
  for (int c : {kNeoplastic, kInflammatory, kEpithelial, kMiscellaneous}) m.table[{kCommon, c}] = c;
  return m;
}

ClassMapping ClassMapping::identity(ClassScheme scheme, std::span<const int> ids) {
  ClassMapping m;
  m.target = scheme;
  for (int c : ids) m.table[{scheme, c}] = c;
  return m;
}

SchemedClasses remap_classes(const SchemedClasses& labels, const ClassMapping& mapping) {
  SchemedClasses out{mapping.target, {}};
  for (const auto& [label, cls] : labels.classes) {
    if (cls == 0) {
      out.classes[label] = 0;
      continue;
    }
    const auto it = mapping.table.find({labels.scheme, cls});
    if (it == mapping.table.end()) {
      throw Error(ErrorCode::kUnmappedClass,
                  std::string(scheme_name(labels.scheme)) + " class " + std::to_string(cls) + " has no mapping");
    }
    out.classes[label] = it->second;
  }
  return out;
}

TileReport evaluate_tile(const EvalTile& tile, const EvalOptions& opts) {
  TileReport r;
  r.name = tile.name;
  const IouTable table = iou_matrix(tile.gt, tile.pred);
  r.pq_b = panoptic_quality(match_instances(table), opts.pq).pq;

  const auto gt_pts = centroids(tile.gt, table.gt_labels);
  const auto pred_pts = centroids(tile.pred, table.pred_labels);
  const DetectionMatch det = detection_f1(gt_pts, pred_pts, opts.radius);
  r.f_d = det.f1;

  if (opts.num_classes > 0) {
    const MulticlassPq mc = multiclass_pq(table, tile.gt_classes, tile.pred_classes, opts.num_classes, opts.pq);
    r.pq_m = mc.mpq;
    for (const auto& [c, s] : mc.per_class) r.per_class_pq[c] = s.pq;
    std::vector<int> gc, pc;
    for (std::uint32_t l : table.gt_labels) gc.push_back(class_of(tile.gt_classes, l, "gt"));
    for (std::uint32_t l : table.pred_labels) pc.push_back(class_of(tile.pred_classes, l, "pred"));
    for (int c = 1; c <= opts.num_classes; ++c) {
      if (auto f = classification_f1(det, gc, pc, c, opts.coeff)) r.per_class_f[c] = *f;
    }
  }
  return r;
}

DatasetReport evaluate_dataset(std::span<const EvalTile> tiles, const EvalOptions& opts) {
  DatasetReport rep;
  rep.tiles.resize(tiles.size());
  parallel_for(tiles.size(), opts.threads, [&](std::size_t i) { rep.tiles[i] = evaluate_tile(tiles[i], opts); });

  std::vector<double> pq_b, pq_m, f_d;
  std::map<int, std::vector<double>> per_pq, per_f;
  for (const auto& t : rep.tiles) {
    pq_b.push_back(t.pq_b);
    f_d.push_back(t.f_d);
    if (t.pq_m) pq_m.push_back(*t.pq_m);
    for (const auto& [c, v] : t.per_class_pq) per_pq[c].push_back(v);
    for (const auto& [c, v] : t.per_class_f) per_f[c].push_back(v);
  }
  rep.mean.name = "mean";
  rep.mean.pq_b = mean(pq_b);
  rep.mean.f_d = mean(f_d);
  if (!pq_m.empty()) rep.mean.pq_m = mean(pq_m);
  for (const auto& [c, v] : per_pq) rep.mean.per_class_pq[c] = mean(v);
  for (const auto& [c, v] : per_f) rep.mean.per_class_f[c] = mean(v);
  return rep;
}

std::string report_json(const DatasetReport& report) {
  json tiles = json::array();
  for (const auto& t : report.tiles) tiles.push_back(tile_json(t, true));
  const json doc = {{"tiles", tiles}, {"mean", tile_json(report.mean, false)}};
  return doc.dump();
}

}  // namespace hoverpost
