// lungquant: phantom generation, cascade training, quantification and
// evaluation workflows over NIfTI volumes.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "lungquant/cascade.hpp"
#include "lungquant/classical_seg.hpp"
#include "lungquant/errors.hpp"
#include "lungquant/eval_harness.hpp"
#include "lungquant/trainer.hpp"
#include "lungquant/volume_io.hpp"

namespace fs = std::filesystem;
using namespace lungquant;
using nlohmann::json;

namespace {

std::vector<double> parse_number_list(const std::string& csv) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        const std::size_t comma = csv.find(',', pos);
        const std::string tok = csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
        out.push_back(std::stod(tok));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (out.empty()) throw Error("empty number list");
    return out;
}

// runs fn(i) for i in [0, n) on up to `jobs` threads; first error wins
void parallel_cases(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::optional<std::string> error;
    std::vector<std::thread> workers_v;
    for (int w = 0; w < workers; ++w)
        workers_v.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (const std::exception& e) {
                    std::lock_guard lock(err_mutex);
                    if (!error) error = e.what();
                    return;
                }
            }
        });
    for (auto& t : workers_v) t.join();
    if (error) throw Error(*error);
}

// ---------------------------------------------------------------------------
// phantom

int cmd_phantom(int count, const std::string& fractions_csv, std::uint64_t seed,
                const std::string& out_dir, const std::string& dims_csv, int jobs) {
    const std::vector<double> fractions = parse_number_list(fractions_csv);
    Dims3 dims{96, 72, 48};
    if (!dims_csv.empty()) {
        const auto v = parse_number_list(dims_csv);
        if (v.size() != 3) throw Error("--dims expects X,Y,Z");
        dims = {static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2])};
    }
    fs::create_directories(out_dir);

    std::vector<json> entries(static_cast<std::size_t>(count));
    parallel_cases(static_cast<std::size_t>(count), jobs, [&](std::size_t i) {
        const double fraction = fractions[i % fractions.size()];
        const eval::Phantom ph = eval::generate_phantom(Rng::derive_seed(seed, i), fraction,
                                                        {dims, {2.0, 2.0, 3.0}});
        char name[32];
        std::snprintf(name, sizeof(name), "phantom_%03zu", i);
        const std::string base = (fs::path(out_dir) / name).string();
        io::save_volume(ph.image, base + "_image.nii.gz");
        io::save_mask(ph.lungs, base + "_lung.nii.gz");
        io::save_mask(ph.lesions, base + "_lesion.nii.gz");

        json e;
        e["case_id"] = name;
        e["image_path"] = std::string(name) + "_image.nii.gz";
        e["lung_mask_path"] = std::string(name) + "_lung.nii.gz";
        e["lesion_mask_path"] = std::string(name) + "_lesion.nii.gz";
        e["source_dataset"] = "phantom";
        e["target_lesion_fraction"] = fraction;
        e["achieved_percentage"] = ph.achieved_percentage;
        entries[i] = std::move(e);
    });

    json manifest = json::array();
    for (auto& e : entries) manifest.push_back(std::move(e));
    std::ofstream mf(fs::path(out_dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw Error("failed to write manifest");
    std::cout << "wrote " << count << " phantom cases to " << out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

train::StageTrainSpec stage_spec_from_json(const json& j, bool lesion_stage) {
    train::StageTrainSpec spec;
    spec.window = lesion_stage ? preprocess::kLesionWindow : preprocess::kLungWindow;
    spec.net.input_dims = {200, 150, 100};
    if (j.contains("net")) {
        const auto& n = j.at("net");
        spec.net.depth = n.value("depth", spec.net.depth);
        spec.net.convs_per_block = n.value("convs_per_block", spec.net.convs_per_block);
        spec.net.base_channels = n.value("base_channels", spec.net.base_channels);
        if (n.contains("input_dims")) {
            const auto& d = n.at("input_dims");
            spec.net.input_dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
        }
    }
    spec.net.validate();
    if (j.contains("train")) {
        const auto& t = j.at("train");
        spec.train.epochs = t.value("epochs", 300);
        spec.train.learning_rate = t.value("learning_rate", 1e-4);
        spec.train.batch_size = t.value("batch_size", 1);
        spec.train.seed = t.value("seed", std::uint64_t{0});
        const std::string loss = t.value("loss", lesion_stage ? "dice+weighted_ce" : "dice");
        if (loss == "dice")
            spec.train.loss = train::LossKind::Dice;
        else if (loss == "dice+weighted_ce")
            spec.train.loss = train::LossKind::DiceWeightedCE;
        else
            throw Error("unknown loss '" + loss + "' (expected dice or dice+weighted_ce)");
        int aug_factor = lesion_stage ? 2 : 0;
        if (t.contains("augmentation_factor")) aug_factor = t.at("augmentation_factor").get<int>();
        if (aug_factor > 0) {
            augment::AugmentationSpec aug;
            aug.factor = aug_factor;
            aug.rng_seed = spec.train.seed;
            spec.train.augmentation = aug;
        }
    }
    if (j.contains("window")) {
        spec.window.lo = j.at("window").at(0).get<double>();
        spec.window.hi = j.at("window").at(1).get<double>();
        spec.window.validate();
    }
    spec.val_fraction = j.value("val_fraction", 0.2);
    if (spec.val_fraction < 0.0 || spec.val_fraction >= 1.0)
        throw Error("val_fraction must lie in [0, 1)");
    return spec;
}

// deterministic per-source validation split over prepared samples
void split_prepared(const std::vector<train::TrainSample>& samples,
                    const std::vector<train::ManifestEntry>& entries, double val_fraction,
                    std::uint64_t seed, std::vector<train::TrainSample>& tr,
                    std::vector<train::TrainSample>& va) {
    if (val_fraction <= 0.0) {
        tr = samples;
        return;
    }
    std::map<std::string, std::string> source_of;
    for (const auto& e : entries) source_of[e.case_id] = e.source_dataset;
    std::map<std::string, std::vector<std::string>> by_source;
    for (const auto& s : samples) {
        std::string base = s.case_id;
        if (const auto pos = base.rfind("_aug"); pos != std::string::npos) base = base.substr(0, pos);
        const auto it = source_of.find(base);
        by_source[it != source_of.end() ? it->second : "unknown"].push_back(s.case_id);
    }
    train::SplitPlan plan;
    plan.train = 1.0 - val_fraction;
    plan.val = val_fraction;
    plan.test = 0.0;
    plan.seed = seed;
    const auto split = train::split_dataset(by_source, plan);
    for (const auto& s : samples) {
        const bool in_val =
            std::find(split.val.begin(), split.val.end(), s.case_id) != split.val.end();
        (in_val ? va : tr).push_back(s);
    }
}

int cmd_train(const std::string& task, const std::string& manifest_path,
              const std::string& config_path, const std::string& out_dir,
              const std::string& unet1_ckpt) {
    // validate config and manifest before any compute
    json cfg_json;
    {
        std::ifstream f(config_path);
        if (!f) throw Error("cannot open config: " + config_path);
        try {
            f >> cfg_json;
        } catch (const json::exception& e) {
            throw Error("invalid config JSON: " + std::string(e.what()));
        }
    }
    const bool lesion_stage = task == "lesions";
    const train::StageTrainSpec spec = stage_spec_from_json(cfg_json, lesion_stage);
    const auto entries = train::load_manifest(manifest_path);

    std::vector<std::string> problems;
    bool any_usable = false;
    for (const auto& e : entries) {
        if (!fs::exists(e.image_path)) problems.push_back("missing image: " + e.image_path);
        if (!lesion_stage && e.lung_mask_path) any_usable = true;
        if (lesion_stage && e.lesion_mask_path) {
            any_usable = true;
            if (!e.lung_mask_path && unet1_ckpt.empty())
                problems.push_back("case '" + e.case_id +
                                   "' has no lung mask; pass --unet1 to derive crops");
        }
    }
    if (!any_usable)
        problems.push_back(std::string("manifest has no cases with ") +
                           (lesion_stage ? "lesion" : "lung") + " masks");
    if (!problems.empty()) {
        for (const auto& p : problems) std::cerr << "error: " << p << "\n";
        return 2;
    }

    fs::create_directories(out_dir);
    const std::uint64_t mhash = train::manifest_file_hash(manifest_path);

    std::unique_ptr<unet::UNetModel> lung_model;
    preprocess::HuWindow lung_window = preprocess::kLungWindow;
    if (lesion_stage && !unet1_ckpt.empty()) {
        auto loaded = unet::load_checkpoint(unet1_ckpt);
        lung_model = std::move(loaded.model);
        lung_window = loaded.info.window;
    }
    const std::vector<train::TrainSample> samples =
        lesion_stage ? train::prepare_lesion_samples(entries, spec, lung_model.get(), lung_window)
                     : train::prepare_lung_samples(entries, spec);

    std::vector<train::TrainSample> tr, va;
    split_prepared(samples, entries, spec.val_fraction, spec.train.seed, tr, va);

    unet::UNetModel model(spec.net, Rng::derive_seed(spec.train.seed, lesion_stage ? 2 : 1));
    const train::TrainResult result = train::train(model, tr, va, spec.train);
    if (result.fell_back_to_last_epoch)
        std::cerr << "warning: no validation cases; keeping the last epoch\n";

    unet::CheckpointInfo info;
    info.config = spec.net;
    info.window = spec.window;
    info.metrics["best_epoch"] = result.best_epoch;
    if (std::isfinite(result.best_val_dice)) info.metrics["best_val_dice"] = result.best_val_dice;
    info.notes["loss"] = spec.train.loss == train::LossKind::Dice ? "dice" : "dice+weighted_ce";
    info.notes["learning_rate"] = std::to_string(spec.train.learning_rate);
    info.notes["seed"] = std::to_string(spec.train.seed);
    {
        std::ostringstream h;
        h << std::hex << mhash;
        info.notes["manifest_hash"] = h.str();
    }
    const std::string ckpt =
        (fs::path(out_dir) / (lesion_stage ? "unet2.ckpt" : "unet1.ckpt")).string();
    unet::save_checkpoint(model, info, ckpt);
    train::write_history_jsonl(result.history,
                               (fs::path(out_dir) /
                                (lesion_stage ? "unet2_history.jsonl" : "unet1_history.jsonl"))
                                   .string());
    std::cout << "checkpoint: " << ckpt << "\n";
    if (std::isfinite(result.best_val_dice))
        std::cout << "best epoch " << result.best_epoch << " validation Dice "
                  << result.best_val_dice << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// augment

int cmd_augment(const std::string& manifest_path, const std::string& task, int factor,
                std::uint64_t seed, const std::string& out_dir) {
    const bool lesion_task = task == "lesions";
    const auto entries = train::load_manifest(manifest_path);

    std::vector<std::pair<CtVolume, BinaryMask3D>> pairs;
    std::vector<const train::ManifestEntry*> used;
    for (const auto& e : entries) {
        const auto& mask_path = lesion_task ? e.lesion_mask_path : e.lung_mask_path;
        if (!mask_path) continue;
        pairs.emplace_back(io::load_volume(e.image_path), io::load_mask(*mask_path));
        used.push_back(&e);
    }
    if (pairs.empty())
        throw Error("manifest has no cases with " + std::string(lesion_task ? "lesion" : "lung") +
                    " masks");

    augment::AugmentationSpec spec;
    spec.factor = factor;
    spec.rng_seed = seed;
    const auto augmented = augment::augment_dataset(pairs, spec);

    fs::create_directories(out_dir);
    json manifest = json::array();
    for (const auto& a : augmented) {
        const std::string id =
            used[a.source_index]->case_id + "_aug" + std::to_string(a.copy_index);
        const std::string image_name = id + "_image.nii.gz";
        const std::string mask_name = id + "_mask.nii.gz";
        io::save_volume(a.image, (fs::path(out_dir) / image_name).string());
        io::save_mask(a.mask, (fs::path(out_dir) / mask_name).string());

        json e;
        e["case_id"] = id;
        e["source_case_id"] = used[a.source_index]->case_id;
        e["image_path"] = image_name;
        e[lesion_task ? "lesion_mask_path" : "lung_mask_path"] = mask_name;
        e["source_dataset"] = used[a.source_index]->source_dataset;
        auto& transforms = e["transforms"] = json::array();
        for (const auto& t : a.transforms) {
            json tj;
            tj["name"] = t.name;
            for (const auto& [k, v] : t.params) tj[k] = v;
            transforms.push_back(std::move(tj));
        }
        manifest.push_back(std::move(e));
    }
    std::ofstream mf(fs::path(out_dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw Error("failed to write augmentation manifest");
    std::cout << "wrote " << augmented.size() << " augmented pairs to " << out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// quantify

int cmd_quantify(const std::string& image_path, const std::string& unet1_path,
                 const std::string& unet2_path, const std::string& out_dir) {
    const CtVolume vol = io::load_volume(image_path);
    auto u1 = unet::load_checkpoint(unet1_path);
    auto u2 = unet::load_checkpoint(unet2_path);
    cascade::UnetPredictor p1(std::shared_ptr<unet::UNetModel>(std::move(u1.model)), u1.info.window);
    cascade::UnetPredictor p2(std::shared_ptr<unet::UNetModel>(std::move(u2.model)), u2.info.window);

    std::string case_id = fs::path(image_path).filename().string();
    for (const char* suffix : {".nii.gz", ".nii", "_image"}) {
        const auto pos = case_id.rfind(suffix);
        if (pos != std::string::npos) case_id = case_id.substr(0, pos);
    }

    const cascade::PipelineResult res = cascade::run_pipeline(vol, p1, p2, case_id);

    fs::create_directories(out_dir);
    const fs::path base = fs::path(out_dir) / case_id;
    io::save_mask(res.lung_mask, base.string() + "_lung.nii.gz");
    io::save_mask(res.lesion_mask, base.string() + "_lesion.nii.gz");
    std::ofstream rf(base.string() + "_report.json");
    rf << cascade::severity_report_to_json(res.report) << "\n";
    if (!rf) throw Error("failed to write report");

    std::cout << "case " << case_id << ": P = " << res.report.percentage_p
              << "%, CT-SS = " << res.report.ct_ss << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate

int cmd_evaluate(const std::string& pred_dir, const std::string& ref_manifest,
                 const std::string& out_dir, bool overlays, int jobs) {
    const auto entries = train::load_manifest(ref_manifest);
    if (entries.empty()) throw Error("reference manifest is empty");

    std::vector<std::string> unpaired;
    std::vector<eval::CaseEvaluation> cases(entries.size());
    fs::create_directories(out_dir);
    std::mutex unpaired_mutex;

    parallel_cases(entries.size(), jobs, [&](std::size_t i) {
        const auto& e = entries[i];
        const fs::path base = fs::path(pred_dir) / e.case_id;
        const std::string report_path = base.string() + "_report.json";
        if (!fs::exists(report_path)) {
            std::lock_guard lock(unpaired_mutex);
            unpaired.push_back(e.case_id);
            return;
        }
        std::ifstream rf(report_path);
        std::stringstream buf;
        buf << rf.rdbuf();
        const cascade::SeverityReport rep = cascade::severity_report_from_json(buf.str());

        eval::CaseEvaluation ce;
        ce.case_id = e.case_id;
        ce.source = e.source_dataset;
        ce.p_pred = rep.percentage_p;
        ce.ct_ss_pred = rep.ct_ss;

        std::optional<BinaryMask3D> ref_lung, ref_lesion;
        if (e.lung_mask_path) ref_lung = io::load_mask(*e.lung_mask_path);
        if (e.lesion_mask_path) ref_lesion = io::load_mask(*e.lesion_mask_path);

        const std::string pred_lung_path = base.string() + "_lung.nii.gz";
        const std::string pred_lesion_path = base.string() + "_lesion.nii.gz";
        std::optional<BinaryMask3D> pred_lung, pred_lesion;
        if (fs::exists(pred_lung_path)) pred_lung = io::load_mask(pred_lung_path);
        if (fs::exists(pred_lesion_path)) pred_lesion = io::load_mask(pred_lesion_path);

        if (ref_lung && pred_lung) ce.dice_lung = unet::dice_metric(*ref_lung, *pred_lung);
        if (ref_lesion && pred_lesion) ce.dice_lesion = unet::dice_metric(*ref_lesion, *pred_lesion);

        // reference P and CT-SS when both reference masks exist; a bare
        // severity category (MosMed-style 0..4) also yields a CT-SS reference
        if (ref_lung && ref_lesion && ref_lung->foreground_count() > 0) {
            std::size_t lesion_n = 0;
            for (std::size_t v = 0; v < ref_lesion->voxels.size(); ++v)
                lesion_n += ref_lesion->voxels[v];
            const double p_ref = std::min(
                100.0, 100.0 * static_cast<double>(lesion_n) /
                           static_cast<double>(ref_lung->foreground_count()));
            ce.p_ref = p_ref;
            ce.ct_ss_ref = eval::CtssRef{{cascade::ct_severity_score(p_ref)}};
        } else if (e.severity_category) {
            ce.ct_ss_ref = eval::mosmed_ctss_reference(*e.severity_category);
        }

        if (overlays && ref_lung && pred_lung) {
            const CtVolume vol = io::load_volume(e.image_path);
            const int mid = vol.dims().z / 2;
            eval::write_overlay_png(vol, *pred_lung, *ref_lung, mid,
                                    (fs::path(out_dir) / (e.case_id + "_lung_overlay.png")).string());
            if (ref_lesion && pred_lesion)
                eval::write_overlay_png(
                    vol, *pred_lesion, *ref_lesion, mid,
                    (fs::path(out_dir) / (e.case_id + "_lesion_overlay.png")).string());
        }
        cases[i] = std::move(ce);
    });

    if (!unpaired.empty()) {
        for (const auto& id : unpaired) std::cerr << "error: unpaired case '" << id << "'\n";
        return 2;
    }

    const eval::EvaluationSummary summary = eval::summarize(std::move(cases));
    std::ofstream jf(fs::path(out_dir) / "summary.json");
    jf << eval::summary_to_json(summary) << "\n";
    const std::string tables = eval::summary_to_text_tables(summary);
    std::ofstream tf(fs::path(out_dir) / "tables.txt");
    tf << tables;
    if (!jf || !tf) throw Error("failed to write evaluation outputs");
    std::cout << tables;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"LungQuant: cascaded U-net lung and COVID-19 lesion quantification"};
    app.require_subcommand(1);

    auto* phantom = app.add_subcommand("phantom", "Generate synthetic CT phantoms with ground truth");
    int ph_count = 10;
    std::string ph_fractions = "0.02,0.1,0.3,0.6,0.8";
    std::uint64_t ph_seed = 0;
    std::string ph_out;
    std::string ph_dims;
    int ph_jobs = 2;
    phantom->add_option("--count", ph_count, "Number of cases")->check(CLI::PositiveNumber);
    phantom->add_option("--lesion-fractions", ph_fractions,
                        "Comma-separated lesion fraction targets, cycled over cases");
    phantom->add_option("--seed", ph_seed, "Base RNG seed");
    phantom->add_option("--out", ph_out, "Output directory")->required();
    phantom->add_option("--dims", ph_dims, "Voxel grid X,Y,Z (default 96,72,48)");
    phantom->add_option("--jobs", ph_jobs, "Concurrent cases");

    auto* trainc = app.add_subcommand("train", "Train one stage of the cascade");
    std::string tr_task, tr_manifest, tr_config, tr_out, tr_unet1;
    trainc->add_option("--task", tr_task, "lungs or lesions")
        ->required()
        ->check(CLI::IsMember({"lungs", "lesions"}));
    trainc->add_option("--manifest", tr_manifest, "Dataset manifest JSON")->required();
    trainc->add_option("--config", tr_config, "Training config JSON")->required();
    trainc->add_option("--out", tr_out, "Output directory")->required();
    trainc->add_option("--unet1", tr_unet1,
                       "Lung checkpoint used to derive crops when lung masks are absent");

    auto* augmentc =
        app.add_subcommand("augment", "Materialize augmented image/mask pairs from a manifest");
    std::string a_manifest, a_task = "lungs", a_out;
    int a_factor = 2;
    std::uint64_t a_seed = 0;
    augmentc->add_option("--manifest", a_manifest, "Dataset manifest JSON")->required();
    augmentc->add_option("--task", a_task, "Which mask to transform with the image")
        ->check(CLI::IsMember({"lungs", "lesions"}));
    augmentc->add_option("--factor", a_factor, "Augmented copies per input pair")
        ->check(CLI::NonNegativeNumber);
    augmentc->add_option("--seed", a_seed, "RNG seed");
    augmentc->add_option("--out", a_out, "Output directory")->required();

    auto* quant = app.add_subcommand("quantify", "Run the full pipeline on one CT volume");
    std::string q_image, q_unet1, q_unet2, q_out;
    quant->add_option("--image", q_image, "Input CT (NIfTI)")->required();
    quant->add_option("--unet1", q_unet1, "Lung checkpoint")->required();
    quant->add_option("--unet2", q_unet2, "Lesion checkpoint")->required();
    quant->add_option("--out", q_out, "Output directory")->required();

    auto* evalc = app.add_subcommand("evaluate", "Score predictions against reference annotations");
    std::string e_pred, e_ref, e_out;
    bool e_overlays = false;
    int e_jobs = 2;
    evalc->add_option("--pred-dir", e_pred, "Directory holding quantify outputs")->required();
    evalc->add_option("--ref-manifest", e_ref, "Reference manifest JSON")->required();
    evalc->add_option("--out", e_out, "Output directory")->required();
    evalc->add_flag("--overlays", e_overlays, "Write axial overlay PNGs");
    evalc->add_option("--jobs", e_jobs, "Concurrent cases");

    auto* classic =
        app.add_subcommand("classical-seg", "Reference lung segmentation without a trained model");
    std::string c_image, c_out;
    classic->add_option("--image", c_image, "Input CT (NIfTI)")->required();
    classic->add_option("--out", c_out, "Output mask path (NIfTI)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (phantom->parsed())
            return cmd_phantom(ph_count, ph_fractions, ph_seed, ph_out, ph_dims, ph_jobs);
        if (trainc->parsed()) return cmd_train(tr_task, tr_manifest, tr_config, tr_out, tr_unet1);
        if (augmentc->parsed()) return cmd_augment(a_manifest, a_task, a_factor, a_seed, a_out);
        if (quant->parsed()) return cmd_quantify(q_image, q_unet1, q_unet2, q_out);
        if (evalc->parsed()) return cmd_evaluate(e_pred, e_ref, e_out, e_overlays, e_jobs);
        if (classic->parsed()) {
            const BinaryMask3D mask = classical::classical_lung_segmentation(io::load_volume(c_image));
            if (const fs::path parent = fs::path(c_out).parent_path(); !parent.empty())
                fs::create_directories(parent);
            io::save_mask(mask, c_out);
            std::cout << "wrote " << c_out << "\n";
            return 0;
        }
    } catch (const StageError& e) {
        std::cerr << "error in stage " << e.stage() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
