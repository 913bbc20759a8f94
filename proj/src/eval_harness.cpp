#include "lungquant/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

#include "lungquant/errors.hpp"
#include "lungquant/rng.hpp"
#include "lungquant/unet.hpp"

namespace lungquant::eval {

// ---------------------------------------------------------------------------
// Phantom generation

namespace {

struct Ellipsoid {
    double cx, cy, cz; // center, voxel coordinates
    double ax, ay, az; // semi-axes, voxels

    bool contains(int x, int y, int z, double shrink = 1.0) const {
        const double dx = (x - cx) / (ax * shrink);
        const double dy = (y - cy) / (ay * shrink);
        const double dz = (z - cz) / (az * shrink);
        return dx * dx + dy * dy + dz * dz <= 1.0;
    }
};

} // namespace

Phantom generate_phantom(std::uint64_t seed, double lesion_fraction_target,
                         const PhantomConfig& cfg) {
    if (!(lesion_fraction_target >= 0.0 && lesion_fraction_target < 1.0))
        throw Error("generate_phantom: lesion fraction must lie in [0, 1)");
    const Dims3 d = cfg.dims;
    if (d.x < 16 || d.y < 16 || d.z < 8)
        throw Error("generate_phantom: dims too small for the body/lung geometry");

    Rng rng(seed);
    auto jitter = [&] { return 1.0 + 0.04 * (rng.uniform() - 0.5); };

    const double cx = (d.x - 1) / 2.0, cy = (d.y - 1) / 2.0, cz = (d.z - 1) / 2.0;
    const Ellipsoid body{cx, cy, cz, 0.45 * d.x * jitter(), 0.42 * d.y * jitter(),
                         0.48 * d.z * jitter()};
    Ellipsoid lungs_el[2];
    for (int s = 0; s < 2; ++s) {
        const double side = s == 0 ? -1.0 : 1.0;
        lungs_el[s] = {cx + side * 0.22 * d.x * jitter(),
                       cy - 0.02 * d.y * jitter(),
                       cz,
                       0.14 * d.x * jitter(),
                       0.26 * d.y * jitter(),
                       0.36 * d.z * jitter()};
    }

    Phantom ph;
    ph.target_fraction = lesion_fraction_target;
    ph.image.voxels = Grid3<float>(d);
    ph.image.spacing = cfg.spacing;
    ph.lungs.voxels = Grid3<std::uint8_t>(d);
    ph.lungs.spacing = cfg.spacing;
    ph.lesions.voxels = Grid3<std::uint8_t>(d);
    ph.lesions.spacing = cfg.spacing;

    std::vector<std::size_t> lung_indices;
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                const std::size_t i = ph.image.voxels.index(x, y, z);
                const bool in_body = body.contains(x, y, z);
                // keep lungs strictly interior to the body
                const bool in_lung = in_body && body.contains(x, y, z, 0.97) &&
                                     (lungs_el[0].contains(x, y, z) || lungs_el[1].contains(x, y, z));
                if (in_lung) {
                    ph.lungs.voxels[i] = 1;
                    lung_indices.push_back(i);
                    ph.image.voxels[i] = static_cast<float>(
                        std::clamp(rng.normal(-800.0, 40.0), -920.0, -700.0));
                } else if (in_body) {
                    ph.image.voxels[i] =
                        static_cast<float>(std::clamp(rng.normal(20.0, 25.0), -60.0, 100.0));
                } else {
                    ph.image.voxels[i] = -1000.0f;
                }
            }
    if (lung_indices.empty()) throw Error("generate_phantom: degenerate lung geometry");

    const std::size_t target_count =
        static_cast<std::size_t>(std::llround(lesion_fraction_target * lung_indices.size()));
    if (lesion_fraction_target > 0.0 && target_count == 0)
        throw Error("generate_phantom: target lesion fraction unreachable at this resolution");

    if (target_count > 0) {
        // smooth bump field over the lungs; the top-k voxels become the lesion
        const int n_bumps = 3 + static_cast<int>(rng.uniform_index(3));
        struct Bump {
            double cx, cy, cz, sx, sy, sz;
        };
        std::vector<Bump> bumps;
        for (int bi = 0; bi < n_bumps; ++bi) {
            const Ellipsoid& host = lungs_el[rng.uniform_index(2)];
            const double u = rng.uniform(-0.6, 0.6), v = rng.uniform(-0.6, 0.6),
                         w = rng.uniform(-0.6, 0.6);
            const double width = rng.uniform(0.25, 0.5);
            bumps.push_back({host.cx + u * host.ax, host.cy + v * host.ay, host.cz + w * host.az,
                             width * host.ax, width * host.ay, width * host.az});
        }
        std::vector<std::pair<float, std::size_t>> field(lung_indices.size());
        const std::size_t plane = static_cast<std::size_t>(d.x) * d.y;
        for (std::size_t k = 0; k < lung_indices.size(); ++k) {
            const std::size_t i = lung_indices[k];
            const int z = static_cast<int>(i / plane);
            const int y = static_cast<int>((i % plane) / d.x);
            const int x = static_cast<int>(i % d.x);
            double g = 0.0;
            for (const auto& b : bumps) {
                const double dx = (x - b.cx) / b.sx;
                const double dy = (y - b.cy) / b.sy;
                const double dz = (z - b.cz) / b.sz;
                g += std::exp(-0.5 * (dx * dx + dy * dy + dz * dz));
            }
            field[k] = {static_cast<float>(-g), i}; // negated: sort ascending = field descending
        }
        std::sort(field.begin(), field.end());

        const float vmax = -field.front().first;
        const float vthr = -field[target_count - 1].first;
        const float span = std::max(vmax - vthr, 1e-6f);
        for (std::size_t k = 0; k < target_count; ++k) {
            const std::size_t i = field[k].second;
            ph.lesions.voxels[i] = 1;
            const float t = (-field[k].first - vthr) / span;
            const double hu = -600.0 + 450.0 * t + rng.normal(0.0, 25.0);
            ph.image.voxels[i] = static_cast<float>(std::clamp(hu, -640.0, -110.0));
        }
    }

    ph.achieved_percentage =
        100.0 * static_cast<double>(target_count) / static_cast<double>(lung_indices.size());
    return ph;
}

// ---------------------------------------------------------------------------
// Aggregation

DiceSummary summarize_dice(std::vector<std::pair<std::string, double>> per_case) {
    if (per_case.empty()) throw Error("summarize_dice: no cases");
    DiceSummary s;
    s.per_case = std::move(per_case);
    double sum = 0.0;
    for (const auto& [_, v] : s.per_case) sum += v;
    s.mean = sum / static_cast<double>(s.per_case.size());
    if (s.per_case.size() > 1) {
        double sq = 0.0;
        for (const auto& [_, v] : s.per_case) sq += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(sq / static_cast<double>(s.per_case.size() - 1));
    }
    return s;
}

namespace {

template <typename T>
const T* find_case(const std::vector<T>& items, const std::string& id) {
    for (const auto& it : items)
        if (it.case_id == id) return &it;
    return nullptr;
}

} // namespace

DiceSummary evaluate_segmentation(const std::vector<MaskCase>& pred,
                                  const std::vector<MaskCase>& ref) {
    if (pred.size() != ref.size())
        throw Error("evaluate_segmentation: prediction/reference case counts differ");
    std::vector<std::pair<std::string, double>> per_case;
    per_case.reserve(pred.size());
    for (const auto& p : pred) {
        const MaskCase* r = find_case(ref, p.case_id);
        if (!r) throw Error("evaluate_segmentation: unpaired case '" + p.case_id + "'");
        per_case.emplace_back(p.case_id, unet::dice_metric(r->mask, p.mask));
    }
    return summarize_dice(std::move(per_case));
}

MaeSummary evaluate_quantification(const std::vector<QuantCase>& pred,
                                   const std::vector<QuantCase>& ref) {
    if (pred.size() != ref.size())
        throw Error("evaluate_quantification: prediction/reference case counts differ");
    if (pred.empty()) throw Error("evaluate_quantification: no cases");
    MaeSummary s;
    std::map<std::string, double> sums;
    double total = 0.0;
    for (const auto& p : pred) {
        const QuantCase* r = find_case(ref, p.case_id);
        if (!r) throw Error("evaluate_quantification: unpaired case '" + p.case_id + "'");
        const double err = std::fabs(p.p - r->p);
        total += err;
        sums[r->source] += err;
        ++s.cases_per_source[r->source];
    }
    s.n_cases = pred.size();
    s.overall = total / static_cast<double>(pred.size());
    for (const auto& [src, sum] : sums)
        s.per_source[src] = sum / static_cast<double>(s.cases_per_source[src]);
    return s;
}

CtssSummary evaluate_ctss(const std::vector<std::pair<std::string, int>>& pred,
                          const std::vector<std::pair<std::string, CtssRef>>& ref) {
    if (pred.size() != ref.size())
        throw Error("evaluate_ctss: prediction/reference case counts differ");
    if (pred.empty()) throw Error("evaluate_ctss: no cases");
    CtssSummary s;
    for (const auto& [id, score] : pred) {
        if (score < 0 || score > 5)
            throw Error("evaluate_ctss: invalid predicted score " + std::to_string(score));
        const auto it = std::find_if(ref.begin(), ref.end(),
                                     [&](const auto& r) { return r.first == id; });
        if (it == ref.end()) throw Error("evaluate_ctss: unpaired case '" + id + "'");
        const auto& allowed = it->second.allowed;
        if (allowed.empty()) throw Error("evaluate_ctss: empty reference set for '" + id + "'");
        int dist = 99;
        for (int a : allowed) {
            if (a < 0 || a > 5)
                throw Error("evaluate_ctss: invalid reference score " + std::to_string(a));
            dist = std::min(dist, std::abs(score - a));
        }
        ++s.total;
        if (dist == 0)
            ++s.correct;
        else
            ++s.misclassified_by_distance[dist];
    }
    s.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.total);
    return s;
}

CtssRef mosmed_ctss_reference(int category) {
    switch (category) {
        case 0: return {{0}};
        case 1: return {{1, 2}};
        case 2: return {{3}};
        case 3: return {{4}};
        case 4: return {{5}};
        default: throw Error("mosmed_ctss_reference: invalid category " + std::to_string(category));
    }
}

int mosmed_category_from_percentage(double p) {
    if (!(p >= 0.0 && p <= 100.0))
        throw Error("mosmed_category_from_percentage: percentage outside [0, 100]");
    if (p == 0.0) return 0;
    if (p <= 25.0) return 1;
    if (p <= 50.0) return 2;
    if (p <= 75.0) return 3;
    return 4;
}

// ---------------------------------------------------------------------------
// Summary

EvaluationSummary summarize(std::vector<CaseEvaluation> per_case) {
    EvaluationSummary s;
    s.per_case = std::move(per_case);

    std::vector<std::pair<std::string, double>> lung_dice, lesion_dice;
    std::vector<QuantCase> p_pred, p_ref;
    std::vector<std::pair<std::string, int>> ss_pred;
    std::vector<std::pair<std::string, CtssRef>> ss_ref;
    for (const auto& c : s.per_case) {
        if (c.dice_lung) lung_dice.emplace_back(c.case_id, *c.dice_lung);
        if (c.dice_lesion) lesion_dice.emplace_back(c.case_id, *c.dice_lesion);
        if (c.p_ref) {
            p_pred.push_back({c.case_id, c.source, c.p_pred});
            p_ref.push_back({c.case_id, c.source, *c.p_ref});
        }
        if (c.ct_ss_ref) {
            ss_pred.emplace_back(c.case_id, c.ct_ss_pred);
            ss_ref.emplace_back(c.case_id, *c.ct_ss_ref);
        }
    }
    if (!lung_dice.empty()) s.lung_dice = summarize_dice(std::move(lung_dice));
    if (!lesion_dice.empty()) s.lesion_dice = summarize_dice(std::move(lesion_dice));
    if (!p_pred.empty()) s.mae = evaluate_quantification(p_pred, p_ref);
    if (!ss_pred.empty()) s.ctss = evaluate_ctss(ss_pred, ss_ref);
    return s;
}

std::string summary_to_json(const EvaluationSummary& s) {
    nlohmann::json j;
    auto& cases = j["per_case"] = nlohmann::json::array();
    for (const auto& c : s.per_case) {
        nlohmann::json cj;
        cj["case_id"] = c.case_id;
        cj["source"] = c.source;
        if (c.dice_lung) cj["dice_lung"] = *c.dice_lung;
        if (c.dice_lesion) cj["dice_lesion"] = *c.dice_lesion;
        cj["p_pred"] = c.p_pred;
        if (c.p_ref) cj["p_ref"] = *c.p_ref;
        cj["ct_ss_pred"] = c.ct_ss_pred;
        if (c.ct_ss_ref) cj["ct_ss_ref"] = c.ct_ss_ref->allowed;
        cases.push_back(std::move(cj));
    }
    auto dice_json = [](const DiceSummary& d) {
        return nlohmann::json{{"mean", d.mean}, {"std", d.stddev}, {"n", d.per_case.size()}};
    };
    if (s.lung_dice) j["lung_dice"] = dice_json(*s.lung_dice);
    if (s.lesion_dice) j["lesion_dice"] = dice_json(*s.lesion_dice);
    if (s.mae) {
        j["mae"] = {{"overall", s.mae->overall}, {"n", s.mae->n_cases}};
        for (const auto& [src, v] : s.mae->per_source) j["mae"]["per_source"][src] = v;
    }
    if (s.ctss) {
        j["ct_ss"] = {{"total", s.ctss->total},
                      {"correct", s.ctss->correct},
                      {"accuracy", s.ctss->accuracy}};
        for (const auto& [dist, n] : s.ctss->misclassified_by_distance)
            j["ct_ss"]["misclassified"][std::to_string(dist) + "-class"] = n;
    }
    return j.dump(2);
}

namespace {

std::string format_dice(double mean, double stddev) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f +/- %.2f", mean, stddev);
    return buf;
}

// groups per-case values by source and appends "<source> | mean +/- std" rows
void append_dice_table(std::ostringstream& out, const std::string& title,
                       const std::vector<CaseEvaluation>& cases, bool lesion) {
    std::map<std::string, std::vector<std::pair<std::string, double>>> by_source;
    std::vector<std::pair<std::string, double>> all;
    for (const auto& c : cases) {
        const auto& v = lesion ? c.dice_lesion : c.dice_lung;
        if (!v) continue;
        by_source[c.source].emplace_back(c.case_id, *v);
        all.emplace_back(c.case_id, *v);
    }
    if (all.empty()) return;
    out << title << "\n";
    out << "  Test set             | Dice coefficient\n";
    out << "  ---------------------+-----------------\n";
    for (auto& [src, vals] : by_source) {
        const DiceSummary d = summarize_dice(std::move(vals));
        out << "  " << src << std::string(src.size() < 21 ? 21 - src.size() : 1, ' ') << "| "
            << format_dice(d.mean, d.stddev) << "\n";
    }
    const DiceSummary d = summarize_dice(std::move(all));
    out << "  all                  | " << format_dice(d.mean, d.stddev) << "\n\n";
}

} // namespace

std::string summary_to_text_tables(const EvaluationSummary& s) {
    std::ostringstream out;
    append_dice_table(out, "Lung segmentation", s.per_case, false);
    append_dice_table(out, "COVID-19 lesion segmentation", s.per_case, true);

    if (s.mae) {
        out << "Affected lung percentage\n";
        out << "  Source               | MAE of P\n";
        out << "  ---------------------+---------\n";
        for (const auto& [src, v] : s.mae->per_source) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.1f%%", v);
            out << "  " << src << std::string(src.size() < 21 ? 21 - src.size() : 1, ' ') << "| "
                << buf << "\n";
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.1f%%", s.mae->overall);
        out << "  all                  | " << buf << "\n\n";
    }

    if (s.ctss) {
        // per-source accuracy rows in the layout of the severity table
        std::map<std::string, std::array<std::size_t, 3>> rows; // correct, 1-class, 2-class+
        std::map<std::string, std::size_t> totals;
        for (const auto& c : s.per_case) {
            if (!c.ct_ss_ref) continue;
            int dist = 99;
            for (int a : c.ct_ss_ref->allowed) dist = std::min(dist, std::abs(c.ct_ss_pred - a));
            auto& r = rows[c.source];
            ++totals[c.source];
            if (dist == 0)
                ++r[0];
            else if (dist == 1)
                ++r[1];
            else
                ++r[2];
        }
        out << "CT severity score\n";
        out << "  Dataset              | Accuracy | 1-class misclassification | 2-class misclassification\n";
        out << "  ---------------------+----------+---------------------------+--------------------------\n";
        auto row = [&](const std::string& name, std::size_t correct, std::size_t one,
                       std::size_t two, std::size_t total) {
            out << "  " << name << std::string(name.size() < 21 ? 21 - name.size() : 1, ' ') << "| "
                << correct << "/" << total << std::string(8, ' ') << "| " << one << "/" << total
                << std::string(24, ' ') << "| " << (two == 0 ? "0" : std::to_string(two) + "/" + std::to_string(total))
                << "\n";
        };
        std::size_t c_all = 0, one_all = 0, two_all = 0, t_all = 0;
        for (const auto& [src, r] : rows) {
            row(src, r[0], r[1], r[2], totals[src]);
            c_all += r[0];
            one_all += r[1];
            two_all += r[2];
            t_all += totals[src];
        }
        row("all", c_all, one_all, two_all, t_all);
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// PNG overlay output

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

void put_chunk(std::vector<unsigned char>& out, const char type[4],
               const std::vector<unsigned char>& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const auto crc = crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<unsigned char>& rgb) {
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<std::size_t>(height) * (1 + 3 * width));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0); // filter: none
        raw.insert(raw.end(), rgb.begin() + static_cast<std::size_t>(y) * 3 * width,
                   rgb.begin() + static_cast<std::size_t>(y + 1) * 3 * width);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw Error("PNG deflate failed");
    comp.resize(comp_len);

    std::vector<unsigned char> png = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<unsigned char> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(width));
    put_u32(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8); // bit depth
    ihdr.push_back(2); // color type: RGB
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(png, "IHDR", ihdr);
    put_chunk(png, "IDAT", comp);
    put_chunk(png, "IEND", {});

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
    if (!f) throw Error("write failed: " + path);
}

bool is_contour(const Grid3<std::uint8_t>& m, int x, int y, int z) {
    if (!m(x, y, z)) return false;
    const int n[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    for (const auto& o : n) {
        const int xx = x + o[0], yy = y + o[1];
        if (!m.in_bounds(xx, yy, z) || !m(xx, yy, z)) return true;
    }
    return false;
}

} // namespace

void write_overlay_png(const CtVolume& vol, const BinaryMask3D& pred, const BinaryMask3D& ref,
                       int z, const std::string& path) {
    const Dims3 d = vol.dims();
    if (z < 0 || z >= d.z) throw Error("write_overlay_png: slice index out of range");
    if (!(pred.dims() == d) || !(ref.dims() == d))
        throw Error("write_overlay_png: mask dims do not match the volume");

    std::vector<unsigned char> rgb(static_cast<std::size_t>(d.x) * d.y * 3);
    for (int y = 0; y < d.y; ++y)
        for (int x = 0; x < d.x; ++x) {
            const float hu = vol.voxels(x, y, z);
            const double t = std::clamp((hu + 1000.0) / 1300.0, 0.0, 1.0); // display window
            unsigned char r = static_cast<unsigned char>(t * 255.0);
            unsigned char g = r, b = r;
            if (is_contour(ref.voxels, x, y, z)) {
                r = 40;
                g = 220;
                b = 40;
            }
            if (is_contour(pred.voxels, x, y, z)) {
                r = 50;
                g = 90;
                b = 235;
            }
            const std::size_t o = (static_cast<std::size_t>(y) * d.x + x) * 3;
            rgb[o] = r;
            rgb[o + 1] = g;
            rgb[o + 2] = b;
        }
    write_png_rgb(path, d.x, d.y, rgb);
}

} // namespace lungquant::eval
