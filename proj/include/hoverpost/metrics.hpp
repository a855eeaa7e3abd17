#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hoverpost/tensor.hpp"
#include "hoverpost/types.hpp"

namespace hoverpost {

struct IouEntry {
  std::uint32_t gt = 0;
  std::uint32_t pred = 0;
  std::size_t intersection = 0;
  double iou = 0.0;
};

/// Sparse IoU table: one entry per overlapping (gt, pred) pair, sorted by
/// (gt, pred), plus the full label sets of both maps.
struct IouTable {
  std::vector<std::uint32_t> gt_labels;
  std::vector<std::uint32_t> pred_labels;
  std::vector<IouEntry> entries;
};

IouTable iou_matrix(InstanceView gt, InstanceView pred);

struct MatchPair {
  std::uint32_t gt = 0;
  std::uint32_t pred = 0;
  double iou = 0.0;
};

struct MatchSet {
  std::vector<MatchPair> pairs;
  std::vector<std::uint32_t> unmatched_gt;
  std::vector<std::uint32_t> unmatched_pred;
};

/// Pairs every (gt, pred) with IoU > 0.5. Such pairs are unique per label,
/// so no assignment step is needed.
MatchSet match_instances(const IouTable& table);

struct PanopticScores {
  double dq = 0.0;
  double sq = 0.0;
  double pq = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct PqOptions {
  /// Score a tile with no instances on either side as 1 (otherwise 0).
  bool empty_is_perfect = true;
};

PanopticScores panoptic_quality(const MatchSet& matches, const PqOptions& opts = {});
PanopticScores panoptic_quality(InstanceView gt, InstanceView pred, const PqOptions& opts = {});

struct MulticlassPq {
  /// Classes present in gt or pred only.
  std::map<int, PanopticScores> per_class;
  double mpq = 0.0;
};

/// Per-class PQ over classes 1..num_classes and their mean over the classes
/// present in either map.
MulticlassPq multiclass_pq(InstanceView gt, const ClassTable& gt_classes, InstanceView pred,
                           const ClassTable& pred_classes, int num_classes, const PqOptions& opts = {});
MulticlassPq multiclass_pq(const IouTable& table, const ClassTable& gt_classes, const ClassTable& pred_classes,
                           int num_classes, const PqOptions& opts = {});

using Point = std::array<double, 2>;

struct DetectionMatch {
  double f1 = 0.0;
  /// (gt index, pred index) in matching order.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> unmatched_gt;
  std::vector<std::size_t> unmatched_pred;
};

inline constexpr double kDetectionRadius = 12.0;

/// Greedy centroid pairing in ascending distance (ties by gt then pred
/// index), each point used once, distance <= radius. F1 = 2TP/(2TP+FP+FN);
/// two empty sets score 1.
DetectionMatch detection_f1(std::span<const Point> gt, std::span<const Point> pred,
                            double radius = kDetectionRadius);

struct FScoreCoefficients {
  double fp_class = 2.0;  // a0
  double fn_class = 2.0;  // a1
  double fp_det = 1.0;    // a2
  double fn_det = 1.0;    // a3
};

/// Per-class F-score over a detection match. `gt_classes[i]` / `pred_classes[j]`
/// are the classes of gt point i / pred point j. Empty (0/0) -> nullopt.
std::optional<double> classification_f1(const DetectionMatch& match, std::span<const int> gt_classes,
                                        std::span<const int> pred_classes, int cls,
                                        const FScoreCoefficients& coeff = {});

enum class ClassScheme { kPanNuke, kCoNSeP, kCommon };

std::string_view scheme_name(ClassScheme scheme);

/// Common four-class scheme shared by both datasets.
enum CommonClass : int { kNeoplastic = 1, kInflammatory = 2, kEpithelial = 3, kMiscellaneous = 4 };

/// Class ids tagged with the scheme they are expressed in.
struct SchemedClasses {
  ClassScheme scheme = ClassScheme::kCommon;
  ClassTable classes;
};

/// (scheme, source class) -> class in `target`. Class 0 always maps to 0.
struct ClassMapping {
  ClassScheme target = ClassScheme::kCommon;
  std::map<std::pair<ClassScheme, int>, int> table;

  /// PanNuke and CoNSeP type ids to the common scheme; common ids map to
  /// themselves, so applying it twice is the same as once.
  static ClassMapping to_common();
  static ClassMapping identity(ClassScheme scheme, std::span<const int> ids);
};

SchemedClasses remap_classes(const SchemedClasses& labels, const ClassMapping& mapping);

struct EvalTile {
  std::string name;
  InstanceMap gt;
  ClassTable gt_classes;
  InstanceMap pred;
  ClassTable pred_classes;
};

struct EvalOptions {
  /// 0 disables the class-aware metrics.
  int num_classes = 0;
  double radius = kDetectionRadius;
  FScoreCoefficients coeff;
  PqOptions pq;
  int threads = 1;
};

struct TileReport {
  std::string name;
  double pq_b = 0.0;
  std::optional<double> pq_m;
  std::map<int, double> per_class_pq;
  double f_d = 0.0;
  std::map<int, double> per_class_f;
};

struct DatasetReport {
  std::vector<TileReport> tiles;
  /// Means over tiles; per-class means skip tiles where the class is absent.
  TileReport mean;
};

TileReport evaluate_tile(const EvalTile& tile, const EvalOptions& opts);
DatasetReport evaluate_dataset(std::span<const EvalTile> tiles, const EvalOptions& opts);

/// Compact JSON with sorted keys; identical reports give identical bytes.
std::string report_json(const DatasetReport& report);

}  // namespace hoverpost
