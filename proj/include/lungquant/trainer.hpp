#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lungquant/augment.hpp"
#include "lungquant/preprocess.hpp"
#include "lungquant/types.hpp"
#include "lungquant/unet.hpp"

namespace lungquant::train {

/// Train/validation/test fractions, applied within each dataset source.
struct SplitPlan {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
    std::uint64_t seed = 0;
    bool per_source = true;

    void validate() const;
};

struct SplitResult {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

/// Deterministic per-source proportional split (largest-remainder rounding).
/// Ids must be disjoint; empty sources are an error.
SplitResult split_dataset(const std::map<std::string, std::vector<std::string>>& ids_by_source,
                          const SplitPlan& plan);

enum class LossKind { Dice, DiceWeightedCE };

struct TrainConfig {
    int epochs = 300;
    double learning_rate = 1e-4;
    int batch_size = 1;
    LossKind loss = LossKind::Dice;
    std::uint64_t seed = 0;
    std::optional<augment::AugmentationSpec> augmentation; // applied during data prep
};

/// A prepared training pair on the network grid: normalized image + mask.
struct TrainSample {
    std::string case_id;
    Grid3<float> image;
    BinaryMask3D mask;
};

struct EpochRecord {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_dice = 0.0; // NaN when there is no validation set
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_val_dice = 0.0;
    bool fell_back_to_last_epoch = false; // no validation cases
};

/// ADAM training loop; returns with the model holding the weights of the
/// best-validation-Dice epoch (or the last epoch when val is empty).
/// Aborts with diagnostics on a non-finite loss.
TrainResult train(unet::UNetModel& model, const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& val_set, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Manifests and the two-stage cascade trainer

struct ManifestEntry {
    std::string case_id;
    std::string image_path;
    std::optional<std::string> lung_mask_path;
    std::optional<std::string> lesion_mask_path;
    std::optional<int> severity_category; // MosMed-style 0..4, for evaluation
    std::string source_dataset;
};

std::vector<ManifestEntry> load_manifest(const std::string& path);
std::uint64_t manifest_file_hash(const std::string& path);

/// Everything needed to train one stage of the cascade.
struct StageTrainSpec {
    unet::UNetConfig net;
    TrainConfig train;
    preprocess::HuWindow window;
    double val_fraction = 0.2; // taken per source before training
};

/// Windows, resamples and (optionally) augments one stage's data. For the
/// lesion stage the volumes are cropped to the lung bounding box first,
/// using the reference lung mask when present, the predicted one otherwise.
/// Prepared images go through the LUNGQUANT_CACHE directory when set.
std::vector<TrainSample> prepare_lung_samples(const std::vector<ManifestEntry>& entries,
                                              const StageTrainSpec& spec);
std::vector<TrainSample> prepare_lesion_samples(const std::vector<ManifestEntry>& entries,
                                                const StageTrainSpec& spec,
                                                unet::UNetModel* lung_model,
                                                const preprocess::HuWindow& lung_window);

struct CascadeTrainResult {
    std::string unet1_checkpoint;
    std::string unet2_checkpoint;
    TrainResult lungs;
    TrainResult lesions;
};

/// Trains U-net 1 on the lung-annotated cases, derives lung crops, then
/// trains U-net 2 on the cropped lesion-annotated cases. Checkpoints,
/// sidecars and per-epoch history land in out_dir.
CascadeTrainResult train_cascade(const std::vector<ManifestEntry>& entries,
                                 const StageTrainSpec& lungs_spec,
                                 const StageTrainSpec& lesions_spec, const std::string& out_dir,
                                 std::uint64_t manifest_hash = 0);

/// One JSON object per epoch.
void write_history_jsonl(const std::vector<EpochRecord>& history, const std::string& path);

} // namespace lungquant::train
