#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lungquant/types.hpp"

namespace lungquant::eval {

// ---------------------------------------------------------------------------
// Synthetic phantoms: the desk-scale ground truth used across the test suite.

struct PhantomConfig {
    Dims3 dims{96, 72, 48};
    Vec3 spacing{2.0, 2.0, 3.0};
};

struct Phantom {
    CtVolume image;
    BinaryMask3D lungs;
    BinaryMask3D lesions;
    double target_fraction = 0.0;
    double achieved_percentage = 0.0; // 100 * |lesion| / |lung|, exact by construction
};

/// Body ellipsoid near 0 HU on a -1000 HU air background, two textured lung
/// ellipsoids near -800 HU, and GGO-like lesion blobs in [-600, -100] HU
/// sized so the lesion fraction hits the target. Bit-identical under seed.
Phantom generate_phantom(std::uint64_t seed, double lesion_fraction_target,
                         const PhantomConfig& cfg = {});

// ---------------------------------------------------------------------------
// Metric aggregation

struct MaskCase {
    std::string case_id;
    BinaryMask3D mask;
};

struct DiceSummary {
    double mean = 0.0;
    double stddev = 0.0; // sample std, 0 for a single case
    std::vector<std::pair<std::string, double>> per_case;
};

DiceSummary summarize_dice(std::vector<std::pair<std::string, double>> per_case);

/// Per-case Dice between predictions and references paired by case_id;
/// unpaired cases on either side are an error.
DiceSummary evaluate_segmentation(const std::vector<MaskCase>& pred,
                                  const std::vector<MaskCase>& ref);

struct QuantCase {
    std::string case_id;
    std::string source; // dataset name for the per-source breakdown
    double p = 0.0;
};

struct MaeSummary {
    double overall = 0.0;
    std::map<std::string, double> per_source;
    std::map<std::string, std::size_t> cases_per_source;
    std::size_t n_cases = 0;
};

MaeSummary evaluate_quantification(const std::vector<QuantCase>& pred,
                                   const std::vector<QuantCase>& ref);

/// Reference severity score; MosMed category 1 admits both CT-SS 1 and 2,
/// so references are small sets of accepted values.
struct CtssRef {
    std::vector<int> allowed;
};

struct CtssSummary {
    std::size_t total = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
    std::map<int, std::size_t> misclassified_by_distance; // |pred - ref| >= 1
};

CtssSummary evaluate_ctss(const std::vector<std::pair<std::string, int>>& pred,
                          const std::vector<std::pair<std::string, CtssRef>>& ref);

/// Severity categories 0..4 map to CT-SS {0}, {1,2}, {3}, {4}, {5}.
CtssRef mosmed_ctss_reference(int category);

/// Category from the affected percentage: 0 for P=0, then the four
/// left-open bands (0,25], (25,50], (50,75], (75,100].
int mosmed_category_from_percentage(double p);

// ---------------------------------------------------------------------------
// Whole-run summary (JSON + text tables + optional overlays)

struct CaseEvaluation {
    std::string case_id;
    std::string source;
    std::optional<double> dice_lung;
    std::optional<double> dice_lesion;
    double p_pred = 0.0;
    std::optional<double> p_ref;
    int ct_ss_pred = 0;
    std::optional<CtssRef> ct_ss_ref;
};

struct EvaluationSummary {
    std::vector<CaseEvaluation> per_case;
    std::optional<DiceSummary> lung_dice;
    std::optional<DiceSummary> lesion_dice;
    std::optional<MaeSummary> mae;
    std::optional<CtssSummary> ctss;
};

/// Computes all applicable aggregates from the per-case records.
EvaluationSummary summarize(std::vector<CaseEvaluation> per_case);

std::string summary_to_json(const EvaluationSummary& s);
std::string summary_to_text_tables(const EvaluationSummary& s);

/// Axial overlay: grayscale slice with reference (green) and predicted
/// (blue) mask contours, written as an RGB PNG.
void write_overlay_png(const CtVolume& vol, const BinaryMask3D& pred, const BinaryMask3D& ref,
                       int z, const std::string& path);

} // namespace lungquant::eval
