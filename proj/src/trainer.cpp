#include "lungquant/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "lungquant/cascade.hpp"
#include "lungquant/errors.hpp"
#include "lungquant/refine.hpp"
#include "lungquant/rng.hpp"
#include "lungquant/volume_io.hpp"

namespace lungquant::train {

namespace fs = std::filesystem;

void SplitPlan::validate() const {
    if (train < 0.0 || val < 0.0 || test < 0.0)
        throw Error("SplitPlan: fractions must be nonnegative");
    if (std::fabs(train + val + test - 1.0) > 1e-9)
        throw Error("SplitPlan: fractions must sum to 1");
}

SplitResult split_dataset(const std::map<std::string, std::vector<std::string>>& ids_by_source,
                          const SplitPlan& plan) {
    plan.validate();
    if (ids_by_source.empty()) throw Error("split_dataset: no sources");

    std::map<std::string, std::vector<std::string>> grouped;
    if (plan.per_source) {
        grouped = ids_by_source;
    } else {
        auto& all = grouped["all"];
        for (const auto& [_, ids] : ids_by_source) all.insert(all.end(), ids.begin(), ids.end());
    }

    // duplicate ids across (or within) sources would leak between partitions
    {
        std::vector<std::string> seen;
        for (const auto& [_, ids] : grouped) seen.insert(seen.end(), ids.begin(), ids.end());
        std::sort(seen.begin(), seen.end());
        if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
            throw Error("split_dataset: duplicate case ids");
    }

    SplitResult out;
    for (const auto& [source, ids_in] : grouped) {
        if (ids_in.empty()) throw Error("split_dataset: empty source '" + source + "'");
        std::vector<std::string> ids = ids_in;
        std::sort(ids.begin(), ids.end());
        Rng rng(Rng::derive_seed(plan.seed, fnv1a64(source.data(), source.size())));
        for (std::size_t i = ids.size(); i > 1; --i)
            std::swap(ids[i - 1], ids[rng.uniform_index(i)]);

        const double fractions[3] = {plan.train, plan.val, plan.test};
        const std::size_t n = ids.size();
        std::size_t counts[3];
        double remainders[3];
        std::size_t assigned = 0;
        for (int k = 0; k < 3; ++k) {
            const double exact = fractions[k] * static_cast<double>(n);
            counts[k] = static_cast<std::size_t>(exact);
            remainders[k] = exact - static_cast<double>(counts[k]);
            assigned += counts[k];
        }
        while (assigned < n) { // largest remainder, ties to the earlier partition
            int best = 0;
            for (int k = 1; k < 3; ++k)
                if (remainders[k] > remainders[best]) best = k;
            ++counts[best];
            remainders[best] = -1.0;
            ++assigned;
        }

        std::size_t pos = 0;
        for (std::size_t i = 0; i < counts[0]; ++i) out.train.push_back(ids[pos++]);
        for (std::size_t i = 0; i < counts[1]; ++i) out.val.push_back(ids[pos++]);
        for (std::size_t i = 0; i < counts[2]; ++i) out.test.push_back(ids[pos++]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::vector<std::vector<float>> snapshot_params(unet::UNetModel& model) {
    std::vector<std::vector<float>> snap;
    for (const auto& p : model.params()) snap.emplace_back(p.value, p.value + p.n);
    return snap;
}

void restore_params(unet::UNetModel& model, const std::vector<std::vector<float>>& snap) {
    auto params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i)
        std::copy(snap[i].begin(), snap[i].end(), params[i].value);
}

double validation_dice(unet::UNetModel& model, const std::vector<TrainSample>& val_set) {
    double sum = 0.0;
    for (const auto& s : val_set) {
        CtVolume v;
        v.voxels = s.image;
        BinaryMask3D pred = model.predict_mask(v);
        sum += unet::dice_metric(s.mask, pred);
    }
    return sum / static_cast<double>(val_set.size());
}

} // namespace

TrainResult train(unet::UNetModel& model, const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& val_set, const TrainConfig& cfg) {
    if (train_set.empty()) throw Error("train: empty training set");
    if (cfg.epochs < 1) throw Error("train: epochs must be >= 1");
    if (cfg.batch_size < 1) throw Error("train: batch_size must be >= 1");
    const Dims3 want = model.config().input_dims;
    for (const auto& s : train_set)
        if (!(s.image.dims() == want) || !(s.mask.dims() == want))
            throw Error("train: sample '" + s.case_id + "' is not on the network grid " + want.str());

    unet::ClassWeights weights;
    if (cfg.loss == LossKind::DiceWeightedCE) {
        std::vector<const BinaryMask3D*> masks;
        for (const auto& s : train_set) masks.push_back(&s.mask);
        weights = unet::compute_class_weights(masks);
    }

    nn::Adam adam(cfg.learning_rate);
    auto params = model.params();

    TrainResult result;
    std::vector<std::vector<float>> best_snap;
    double best_val = -1.0;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng(Rng::derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_index(i)]);

        double epoch_loss = 0.0;
        std::size_t batch_start = 0;
        while (batch_start < order.size()) {
            const std::size_t batch_end =
                std::min(batch_start + static_cast<std::size_t>(cfg.batch_size), order.size());
            const double inv_batch = 1.0 / static_cast<double>(batch_end - batch_start);
            model.zero_grad();
            for (std::size_t bi = batch_start; bi < batch_end; ++bi) {
                const TrainSample& s = train_set[order[bi]];
                nn::Tensor probs = model.forward(nn::tensor_from_grid(s.image), true);
                const Grid3<float> fg = nn::grid_from_channel(probs, 1);
                unet::LossValueGrad lg = cfg.loss == LossKind::Dice
                                             ? unet::dice_loss_grad(fg, s.mask)
                                             : unet::combined_loss_grad(fg, s.mask, weights);
                if (!std::isfinite(lg.value))
                    throw Error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                ", case '" + s.case_id + "'");
                epoch_loss += lg.value;

                nn::Tensor gprobs(probs.c, probs.z, probs.y, probs.x);
                float* g1 = gprobs.chan(1);
                for (std::size_t i = 0; i < lg.grad.size(); ++i)
                    g1[i] = static_cast<float>(lg.grad[i] * inv_batch);
                model.backward(gprobs);
            }
            adam.step(params);
            batch_start = batch_end;
        }
        epoch_loss /= static_cast<double>(train_set.size());

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss;
        rec.val_dice = std::numeric_limits<double>::quiet_NaN();
        if (!val_set.empty()) {
            rec.val_dice = validation_dice(model, val_set);
            if (rec.val_dice > best_val) {
                best_val = rec.val_dice;
                result.best_epoch = epoch;
                best_snap = snapshot_params(model);
            }
        }
        result.history.push_back(rec);
    }

    if (val_set.empty()) {
        result.fell_back_to_last_epoch = true;
        result.best_epoch = cfg.epochs;
        result.best_val_dice = std::numeric_limits<double>::quiet_NaN();
    } else {
        restore_params(model, best_snap);
        result.best_val_dice = best_val;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Manifests

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open manifest: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("invalid manifest JSON in " + path + ": " + e.what());
    }
    if (!j.is_array()) throw ParseError("manifest must be a JSON array: " + path);

    const fs::path base = fs::path(path).parent_path();
    auto resolve = [&](std::string p) {
        return fs::path(p).is_absolute() ? p : (base / p).string();
    };

    std::vector<ManifestEntry> out;
    for (const auto& e : j) {
        ManifestEntry m;
        try {
            m.case_id = e.at("case_id").get<std::string>();
            m.image_path = resolve(e.at("image_path").get<std::string>());
            if (e.contains("lung_mask_path") && !e.at("lung_mask_path").is_null())
                m.lung_mask_path = resolve(e.at("lung_mask_path").get<std::string>());
            if (e.contains("lesion_mask_path") && !e.at("lesion_mask_path").is_null())
                m.lesion_mask_path = resolve(e.at("lesion_mask_path").get<std::string>());
            if (e.contains("severity_category") && !e.at("severity_category").is_null())
                m.severity_category = e.at("severity_category").get<int>();
            m.source_dataset = e.value("source_dataset", std::string("unknown"));
        } catch (const nlohmann::json::exception& ex) {
            throw ParseError("invalid manifest entry in " + path + ": " + ex.what());
        }
        out.push_back(std::move(m));
    }
    return out;
}

std::uint64_t manifest_file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open manifest: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(f.gcount()), h);
    return h;
}

// ---------------------------------------------------------------------------
// Data preparation

namespace {

// content-addressed cache of prepared (windowed + resampled) image grids
std::optional<fs::path> cache_dir() {
    const char* env = std::getenv("LUNGQUANT_CACHE");
    if (!env || !*env) return std::nullopt;
    fs::path dir(env);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) return std::nullopt;
    return dir;
}

std::optional<fs::path> cache_key_path(const std::string& image_path,
                                       const preprocess::HuWindow& w, Dims3 dims) {
    const auto dir = cache_dir();
    if (!dir) return std::nullopt;
    std::error_code ec;
    const auto size = fs::file_size(image_path, ec);
    if (ec) return std::nullopt;
    std::ostringstream key;
    key << image_path << "|" << size << "|" << w.lo << ":" << w.hi << "|" << dims.str() << "|v1";
    const std::string ks = key.str();
    std::ostringstream name;
    name << std::hex << fnv1a64(ks.data(), ks.size()) << ".lqprep";
    return *dir / name.str();
}

std::optional<Grid3<float>> cache_load(const fs::path& p, Dims3 dims) {
    std::ifstream f(p, std::ios::binary);
    if (!f) return std::nullopt;
    Dims3 stored;
    f.read(reinterpret_cast<char*>(&stored), sizeof(stored));
    if (!f || !(stored == dims)) return std::nullopt;
    Grid3<float> g(dims);
    f.read(reinterpret_cast<char*>(g.data()), static_cast<std::streamsize>(g.size() * sizeof(float)));
    if (!f) return std::nullopt;
    return g;
}

void cache_store(const fs::path& p, const Grid3<float>& g) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) return; // cache failures are non-fatal
    const Dims3 dims = g.dims();
    f.write(reinterpret_cast<const char*>(&dims), sizeof(dims));
    f.write(reinterpret_cast<const char*>(g.data()), static_cast<std::streamsize>(g.size() * sizeof(float)));
}

Grid3<float> prepare_image(const CtVolume& vol, const preprocess::HuWindow& w, Dims3 dims) {
    return preprocess::resample(preprocess::window_and_normalize(vol, w), dims).voxels;
}

Grid3<float> prepare_image_cached(const std::string& image_path, const CtVolume& vol,
                                  const preprocess::HuWindow& w, Dims3 dims) {
    const auto key = cache_key_path(image_path, w, dims);
    if (key) {
        if (auto hit = cache_load(*key, dims)) return std::move(*hit);
    }
    Grid3<float> g = prepare_image(vol, w, dims);
    if (key) cache_store(*key, g);
    return g;
}

std::vector<std::pair<CtVolume, BinaryMask3D>> maybe_augment(
    std::vector<std::pair<CtVolume, BinaryMask3D>> pairs,
    const std::optional<augment::AugmentationSpec>& spec,
    std::vector<std::string>* augmented_ids, const std::vector<std::string>& base_ids) {
    if (!spec || spec->factor == 0) return pairs;
    auto extra = augment::augment_dataset(pairs, *spec);
    for (auto& a : extra) {
        if (augmented_ids)
            augmented_ids->push_back(base_ids[a.source_index] + "_aug" + std::to_string(a.copy_index));
        pairs.emplace_back(std::move(a.image), std::move(a.mask));
    }
    return pairs;
}

} // namespace

std::vector<TrainSample> prepare_lung_samples(const std::vector<ManifestEntry>& entries,
                                              const StageTrainSpec& spec) {
    std::vector<TrainSample> samples;
    for (const auto& e : entries) {
        if (!e.lung_mask_path) continue;
        const CtVolume vol = io::load_volume(e.image_path);
        const BinaryMask3D mask = io::load_mask(*e.lung_mask_path);
        if (!(mask.dims() == vol.dims()))
            throw Error("prepare_lung_samples: mask/image dims differ for case '" + e.case_id + "'");

        std::vector<std::pair<CtVolume, BinaryMask3D>> pairs;
        pairs.emplace_back(vol, mask);
        std::vector<std::string> ids{e.case_id};
        std::vector<std::string> aug_ids;
        pairs = maybe_augment(std::move(pairs), spec.train.augmentation, &aug_ids, ids);

        for (std::size_t i = 0; i < pairs.size(); ++i) {
            TrainSample s;
            s.case_id = i == 0 ? e.case_id : aug_ids[i - 1];
            s.image = i == 0 ? prepare_image_cached(e.image_path, pairs[i].first, spec.window,
                                                    spec.net.input_dims)
                             : prepare_image(pairs[i].first, spec.window, spec.net.input_dims);
            s.mask = preprocess::resample(pairs[i].second, spec.net.input_dims);
            samples.push_back(std::move(s));
        }
    }
    if (samples.empty()) throw Error("prepare_lung_samples: no lung-annotated cases in manifest");
    return samples;
}

std::vector<TrainSample> prepare_lesion_samples(const std::vector<ManifestEntry>& entries,
                                                const StageTrainSpec& spec,
                                                unet::UNetModel* lung_model,
                                                const preprocess::HuWindow& lung_window) {
    std::vector<TrainSample> samples;
    for (const auto& e : entries) {
        if (!e.lesion_mask_path) continue;
        const CtVolume vol = io::load_volume(e.image_path);
        const BinaryMask3D lesion = io::load_mask(*e.lesion_mask_path);
        if (!(lesion.dims() == vol.dims()))
            throw Error("prepare_lesion_samples: mask/image dims differ for case '" + e.case_id + "'");

        // lung crop from the reference mask when provided, predicted otherwise
        BinaryMask3D lungs;
        if (e.lung_mask_path) {
            lungs = io::load_mask(*e.lung_mask_path);
        } else {
            if (!lung_model)
                throw Error("prepare_lesion_samples: case '" + e.case_id +
                            "' has no lung mask and no lung model was supplied");
            cascade::UnetPredictor pred(
                std::shared_ptr<unet::UNetModel>(lung_model, [](unet::UNetModel*) {}), lung_window);
            lungs = cascade::segment_lungs(vol, pred);
        }
        const refine::BoundingBox box = refine::bounding_box(lungs, 25.0);
        const CtVolume cropped = refine::crop(vol, box);
        const BinaryMask3D lesion_cropped = refine::crop(lesion, box);

        std::vector<std::pair<CtVolume, BinaryMask3D>> pairs;
        pairs.emplace_back(cropped, lesion_cropped);
        std::vector<std::string> ids{e.case_id};
        std::vector<std::string> aug_ids;
        pairs = maybe_augment(std::move(pairs), spec.train.augmentation, &aug_ids, ids);

        for (std::size_t i = 0; i < pairs.size(); ++i) {
            TrainSample s;
            s.case_id = i == 0 ? e.case_id : aug_ids[i - 1];
            s.image = prepare_image(pairs[i].first, spec.window, spec.net.input_dims);
            s.mask = preprocess::resample(pairs[i].second, spec.net.input_dims);
            samples.push_back(std::move(s));
        }
    }
    if (samples.empty()) throw Error("prepare_lesion_samples: no lesion-annotated cases in manifest");
    return samples;
}

// ---------------------------------------------------------------------------
// Cascade

namespace {

// peels off a deterministic per-source validation subset
void split_samples(const std::vector<TrainSample>& all, const std::vector<ManifestEntry>& entries,
                   double val_fraction, std::uint64_t seed, std::vector<TrainSample>& train_out,
                   std::vector<TrainSample>& val_out) {
    if (val_fraction <= 0.0) {
        train_out = all;
        return;
    }
    std::map<std::string, std::string> source_of;
    for (const auto& e : entries) source_of[e.case_id] = e.source_dataset;

    std::map<std::string, std::vector<std::string>> by_source;
    for (const auto& s : all) {
        // augmented copies follow their parent case
        std::string base = s.case_id;
        if (const auto pos = base.rfind("_aug"); pos != std::string::npos) base = base.substr(0, pos);
        const auto it = source_of.find(base);
        by_source[it != source_of.end() ? it->second : "unknown"].push_back(s.case_id);
    }
    SplitPlan plan;
    plan.train = 1.0 - val_fraction;
    plan.val = val_fraction;
    plan.test = 0.0;
    plan.seed = seed;
    const SplitResult split = split_dataset(by_source, plan);

    auto in = [](const std::vector<std::string>& ids, const std::string& id) {
        return std::find(ids.begin(), ids.end(), id) != ids.end();
    };
    for (const auto& s : all)
        (in(split.val, s.case_id) ? val_out : train_out).push_back(s);
}

} // namespace

void write_history_jsonl(const std::vector<EpochRecord>& history, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot open history file: " + path);
    for (const auto& r : history) {
        nlohmann::json j;
        j["epoch"] = r.epoch;
        j["train_loss"] = r.train_loss;
        if (std::isfinite(r.val_dice)) j["val_dice"] = r.val_dice;
        f << j.dump() << "\n";
    }
    if (!f) throw Error("history write failed: " + path);
}

CascadeTrainResult train_cascade(const std::vector<ManifestEntry>& entries,
                                 const StageTrainSpec& lungs_spec,
                                 const StageTrainSpec& lesions_spec, const std::string& out_dir,
                                 std::uint64_t manifest_hash) {
    fs::create_directories(out_dir);
    CascadeTrainResult result;

    auto make_info = [&](const StageTrainSpec& spec, const TrainResult& tr) {
        unet::CheckpointInfo info;
        info.config = spec.net;
        info.window = spec.window;
        info.metrics["best_epoch"] = static_cast<double>(tr.best_epoch);
        if (std::isfinite(tr.best_val_dice)) info.metrics["best_val_dice"] = tr.best_val_dice;
        info.notes["loss"] = spec.train.loss == LossKind::Dice ? "dice" : "dice+weighted_ce";
        info.notes["learning_rate"] = std::to_string(spec.train.learning_rate);
        info.notes["epochs"] = std::to_string(spec.train.epochs);
        info.notes["seed"] = std::to_string(spec.train.seed);
        std::ostringstream h;
        h << std::hex << manifest_hash;
        info.notes["manifest_hash"] = h.str();
        return info;
    };

    // stage 1: lungs
    {
        const auto all = prepare_lung_samples(entries, lungs_spec);
        std::vector<TrainSample> tr, va;
        split_samples(all, entries, lungs_spec.val_fraction, lungs_spec.train.seed, tr, va);
        unet::UNetModel model(lungs_spec.net, Rng::derive_seed(lungs_spec.train.seed, 1));
        result.lungs = train(model, tr, va, lungs_spec.train);
        result.unet1_checkpoint = (fs::path(out_dir) / "unet1.ckpt").string();
        unet::save_checkpoint(model, make_info(lungs_spec, result.lungs), result.unet1_checkpoint);
        write_history_jsonl(result.lungs.history, (fs::path(out_dir) / "unet1_history.jsonl").string());
    }

    // stage 2: lesions, cropped through the trained lung model when needed
    {
        auto loaded = unet::load_checkpoint(result.unet1_checkpoint);
        const auto all = prepare_lesion_samples(entries, lesions_spec, loaded.model.get(),
                                                loaded.info.window);
        std::vector<TrainSample> tr, va;
        split_samples(all, entries, lesions_spec.val_fraction, lesions_spec.train.seed, tr, va);
        unet::UNetModel model(lesions_spec.net, Rng::derive_seed(lesions_spec.train.seed, 2));
        result.lesions = train(model, tr, va, lesions_spec.train);
        result.unet2_checkpoint = (fs::path(out_dir) / "unet2.ckpt").string();
        unet::save_checkpoint(model, make_info(lesions_spec, result.lesions), result.unet2_checkpoint);
        write_history_jsonl(result.lesions.history,
                            (fs::path(out_dir) / "unet2_history.jsonl").string());
    }
    return result;
}

} // namespace lungquant::train
