#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lungquant/preprocess.hpp"
#include "lungquant/refine.hpp"
#include "lungquant/types.hpp"
#include "lungquant/unet.hpp"

namespace lungquant::cascade {

/// Quantification output for one case.
struct SeverityReport {
    std::string case_id;
    double lung_volume_ml = 0.0;
    double lesion_volume_ml = 0.0;
    double percentage_p = 0.0; // lesion volume as % of lung volume
    int ct_ss = 0;             // 1..5
    std::vector<std::string> stage_warnings;
};

/// Severity class from the affected percentage; boundaries 5/25/50/75 map
/// to the upper class. Throws when p is outside [0, 100].
int ct_severity_score(double p);

/// P = 100 * |lesion| / |lung| plus physical volumes and the CT-SS.
/// Requires lesion to be a subset of lung and lung nonempty.
SeverityReport quantify(const BinaryMask3D& lung, const BinaryMask3D& lesion,
                        const Vec3& spacing, std::string case_id = {});

/// Voxelwise OR of the two stage outputs; the definitive lung mask.
BinaryMask3D final_lung_mask(const BinaryMask3D& unet1_mask, const BinaryMask3D& unet2_mask);

/// Geometry context handed to a predictor (set when the lesion stage crops).
struct PredictContext {
    Dims3 original_dims;
    std::optional<refine::BoundingBox> crop;
};

/// A segmentation backend for one cascade stage: either a trained network
/// or an oracle that rasterizes ground truth through the same geometry.
class MaskPredictor {
public:
    virtual ~MaskPredictor() = default;
    virtual preprocess::HuWindow window() const = 0;
    virtual Dims3 input_dims() const = 0;
    /// `prepared` is the windowed, resampled (and, for the lesion stage,
    /// cropped) volume on the predictor's input grid.
    virtual BinaryMask3D predict(const CtVolume& prepared, const PredictContext& ctx) const = 0;
};

class UnetPredictor : public MaskPredictor {
public:
    UnetPredictor(std::shared_ptr<unet::UNetModel> model, preprocess::HuWindow window)
        : model_(std::move(model)), window_(window) {}

    preprocess::HuWindow window() const override { return window_; }
    Dims3 input_dims() const override { return model_->config().input_dims; }
    BinaryMask3D predict(const CtVolume& prepared, const PredictContext& ctx) const override;

private:
    std::shared_ptr<unet::UNetModel> model_;
    preprocess::HuWindow window_;
};

/// Stands in for a trained network by pushing a known full-resolution mask
/// through the same crop/resample geometry as the real stage.
class OraclePredictor : public MaskPredictor {
public:
    OraclePredictor(BinaryMask3D truth, preprocess::HuWindow window, Dims3 grid_dims)
        : truth_(std::move(truth)), window_(window), dims_(grid_dims) {}

    preprocess::HuWindow window() const override { return window_; }
    Dims3 input_dims() const override { return dims_; }
    BinaryMask3D predict(const CtVolume& prepared, const PredictContext& ctx) const override;

private:
    BinaryMask3D truth_;
    preprocess::HuWindow window_;
    Dims3 dims_;
};

/// Lung stage: window, resample to the predictor grid, predict, refine at
/// predictor resolution, resample back to the original grid.
BinaryMask3D segment_lungs(const CtVolume& vol, const MaskPredictor& unet1,
                           std::vector<std::string>* warnings = nullptr);

/// Lesion stage: bounding box around the refined lungs (2.5 cm padding),
/// crop, window, resample, predict, then map back onto the original grid.
BinaryMask3D segment_lesions(const CtVolume& vol, const BinaryMask3D& refined_lungs,
                             const MaskPredictor& unet2);

struct PipelineResult {
    BinaryMask3D lung_mask;   // final union on the original grid
    BinaryMask3D lesion_mask; // original grid
    SeverityReport report;
};

/// Full cascade; failures surface as StageError with the stage name.
PipelineResult run_pipeline(const CtVolume& vol, const MaskPredictor& unet1,
                            const MaskPredictor& unet2, std::string case_id = {});

std::string severity_report_to_json(const SeverityReport& report);
SeverityReport severity_report_from_json(const std::string& text);

} // namespace lungquant::cascade
