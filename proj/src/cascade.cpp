#include "lungquant/cascade.hpp"

#include <cmath>

#include <json.hpp>

#include "lungquant/errors.hpp"

namespace lungquant::cascade {

int ct_severity_score(double p) {
    if (!(p >= 0.0 && p <= 100.0))
        throw Error("ct_severity_score: percentage outside [0, 100]: " + std::to_string(p));
    if (p < 5.0) return 1;
    if (p < 25.0) return 2;
    if (p < 50.0) return 3;
    if (p < 75.0) return 4;
    return 5;
}

SeverityReport quantify(const BinaryMask3D& lung, const BinaryMask3D& lesion,
                        const Vec3& spacing, std::string case_id) {
    if (!lung.voxels.same_dims(lesion.voxels))
        throw Error("quantify: lung and lesion dims differ");
    std::size_t n_lung = 0, n_lesion = 0, outside = 0;
    const auto& lu = lung.voxels.vec();
    const auto& le = lesion.voxels.vec();
    for (std::size_t i = 0; i < lu.size(); ++i) {
        n_lung += lu[i];
        n_lesion += le[i];
        if (le[i] && !lu[i]) ++outside;
    }
    if (n_lung == 0) throw Error("quantify: empty lung mask");
    if (outside > 0)
        throw Error("quantify: lesion mask is not a subset of the lung mask (" +
                    std::to_string(outside) + " voxels outside)");

    SeverityReport rep;
    rep.case_id = std::move(case_id);
    const double vv = voxel_volume_ml(spacing);
    rep.lung_volume_ml = static_cast<double>(n_lung) * vv;
    rep.lesion_volume_ml = static_cast<double>(n_lesion) * vv;
    rep.percentage_p = 100.0 * static_cast<double>(n_lesion) / static_cast<double>(n_lung);
    rep.ct_ss = ct_severity_score(rep.percentage_p);
    return rep;
}

BinaryMask3D final_lung_mask(const BinaryMask3D& unet1_mask, const BinaryMask3D& unet2_mask) {
    if (!unet1_mask.voxels.same_dims(unet2_mask.voxels))
        throw Error("final_lung_mask: dims mismatch");
    BinaryMask3D out = unet1_mask;
    const auto& b = unet2_mask.voxels.vec();
    for (std::size_t i = 0; i < out.voxels.size(); ++i)
        out.voxels[i] = out.voxels[i] | b[i];
    return out;
}

BinaryMask3D UnetPredictor::predict(const CtVolume& prepared, const PredictContext&) const {
    return model_->predict_mask(prepared);
}

BinaryMask3D OraclePredictor::predict(const CtVolume& prepared, const PredictContext& ctx) const {
    BinaryMask3D stage_truth = ctx.crop ? refine::crop(truth_, *ctx.crop) : truth_;
    BinaryMask3D out = preprocess::resample(stage_truth, prepared.dims());
    out.spacing = prepared.spacing;
    out.origin = prepared.origin;
    return out;
}

BinaryMask3D segment_lungs(const CtVolume& vol, const MaskPredictor& unet1,
                           std::vector<std::string>* warnings) {
    const CtVolume windowed = preprocess::window_and_normalize(vol, unet1.window());
    const CtVolume prepared = preprocess::resample(windowed, unet1.input_dims());

    PredictContext ctx{vol.dims(), std::nullopt};
    const BinaryMask3D raw = unet1.predict(prepared, ctx);

    const refine::RefineResult refined = refine::refine_lung_mask(raw);
    if (warnings) {
        if (refined.used_fallback_threshold)
            warnings->push_back("segment_lungs: refinement fell back to the 30% threshold");
        if (refined.forced_largest_component)
            warnings->push_back("segment_lungs: all components below threshold, kept the largest");
    }
    return preprocess::resample_mask_to_original(refined.mask, vol);
}

BinaryMask3D segment_lesions(const CtVolume& vol, const BinaryMask3D& refined_lungs,
                             const MaskPredictor& unet2) {
    if (refined_lungs.foreground_count() == 0)
        throw Error("segment_lesions: empty refined lung mask");
    if (!(refined_lungs.dims() == vol.dims()))
        throw Error("segment_lesions: lung mask dims do not match the volume");

    const refine::BoundingBox box = refine::bounding_box(refined_lungs, 25.0);
    const CtVolume cropped = refine::crop(vol, box);
    const CtVolume windowed = preprocess::window_and_normalize(cropped, unet2.window());
    const CtVolume prepared = preprocess::resample(windowed, unet2.input_dims());

    PredictContext ctx{vol.dims(), box};
    const BinaryMask3D on_grid = unet2.predict(prepared, ctx);

    BinaryMask3D on_crop = preprocess::resample_mask_to_original(on_grid, cropped);
    return refine::uncrop_mask(on_crop, box, vol.dims());
}

PipelineResult run_pipeline(const CtVolume& vol, const MaskPredictor& unet1,
                            const MaskPredictor& unet2, std::string case_id) {
    std::vector<std::string> warnings;

    BinaryMask3D lungs_refined;
    try {
        lungs_refined = segment_lungs(vol, unet1, &warnings);
    } catch (const std::exception& e) {
        throw StageError("segment_lungs", e.what());
    }

    BinaryMask3D lesions;
    try {
        lesions = segment_lesions(vol, lungs_refined, unet2);
    } catch (const std::exception& e) {
        throw StageError("segment_lesions", e.what());
    }

    PipelineResult result;
    try {
        result.lung_mask = final_lung_mask(lungs_refined, lesions);
    } catch (const std::exception& e) {
        throw StageError("final_lung_mask", e.what());
    }
    result.lesion_mask = std::move(lesions);

    try {
        result.report = quantify(result.lung_mask, result.lesion_mask, vol.spacing, std::move(case_id));
    } catch (const std::exception& e) {
        throw StageError("quantify", e.what());
    }
    result.report.stage_warnings = std::move(warnings);
    return result;
}

std::string severity_report_to_json(const SeverityReport& report) {
    nlohmann::json j;
    j["case_id"] = report.case_id;
    j["lung_volume_ml"] = report.lung_volume_ml;
    j["lesion_volume_ml"] = report.lesion_volume_ml;
    j["percentage_p"] = report.percentage_p;
    j["ct_ss"] = report.ct_ss;
    j["stage_warnings"] = report.stage_warnings;
    return j.dump(2);
}

SeverityReport severity_report_from_json(const std::string& text) {
    SeverityReport rep;
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        rep.case_id = j.at("case_id").get<std::string>();
        rep.lung_volume_ml = j.at("lung_volume_ml").get<double>();
        rep.lesion_volume_ml = j.at("lesion_volume_ml").get<double>();
        rep.percentage_p = j.at("percentage_p").get<double>();
        rep.ct_ss = j.at("ct_ss").get<int>();
        if (j.contains("stage_warnings"))
            rep.stage_warnings = j.at("stage_warnings").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("invalid severity report JSON: ") + e.what());
    }
    return rep;
}

} // namespace lungquant::cascade
