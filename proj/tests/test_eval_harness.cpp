#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "lungquant/cascade.hpp"
#include "lungquant/eval_harness.hpp"
#include "test_support.hpp"

using namespace lungquant;
using namespace lungquant::eval;

TEST_CASE("generate_phantom") {
    const PhantomConfig cfg{{64, 48, 32}, {2.0, 2.0, 3.0}};

    SUBCASE("target fraction 0.10 is achieved within half a point") {
        const Phantom ph = generate_phantom(1, 0.10, cfg);
        CHECK(ph.achieved_percentage >= 9.5);
        CHECK(ph.achieved_percentage <= 10.5);
        const double measured = 100.0 * static_cast<double>(ph.lesions.foreground_count()) /
                                static_cast<double>(ph.lungs.foreground_count());
        CHECK(measured == doctest::Approx(ph.achieved_percentage));
    }
    SUBCASE("target 0 gives an empty lesion mask") {
        CHECK(generate_phantom(2, 0.0, cfg).lesions.foreground_count() == 0);
    }
    SUBCASE("a fixed seed reproduces the phantom bit for bit") {
        const Phantom a = generate_phantom(3, 0.25, cfg);
        const Phantom b = generate_phantom(3, 0.25, cfg);
        CHECK(a.image.voxels.vec() == b.image.voxels.vec());
        CHECK(a.lungs.voxels.vec() == b.lungs.voxels.vec());
        CHECK(a.lesions.voxels.vec() == b.lesions.voxels.vec());
    }
    SUBCASE("masks satisfy the geometric invariants") {
        const Phantom ph = generate_phantom(4, 0.3, cfg);
        for (std::size_t i = 0; i < ph.lungs.voxels.size(); ++i) {
            if (ph.lesions.voxels[i]) CHECK(ph.lungs.voxels[i] == 1);       // lesion inside lung
            if (ph.lungs.voxels[i]) CHECK(ph.image.voxels[i] > -999.0f);    // lung not in outside air
        }
    }
    SUBCASE("unreachable targets are errors") {
        CHECK_THROWS_AS(generate_phantom(5, 1.0, cfg), Error);
        CHECK_THROWS_AS(generate_phantom(5, -0.1, cfg), Error);
        CHECK_THROWS_AS(generate_phantom(5, 1e-9, cfg), Error); // rounds to zero voxels
    }
    SUBCASE("HU populations are separated for the two windows") {
        const Phantom ph = generate_phantom(6, 0.2, cfg);
        for (std::size_t i = 0; i < ph.image.voxels.size(); ++i) {
            const float hu = ph.image.voxels[i];
            if (ph.lesions.voxels[i]) {
                CHECK(hu >= -640.0f);
                CHECK(hu <= -110.0f);
            } else if (ph.lungs.voxels[i]) {
                CHECK(hu >= -920.0f);
                CHECK(hu <= -700.0f);
            }
        }
    }
}

TEST_CASE("evaluate_segmentation") {
    const Dims3 d{12, 12, 12};

    SUBCASE("all-perfect predictions score 1.00 +/- 0.00") {
        std::vector<MaskCase> pred, ref;
        for (int i = 0; i < 4; ++i) {
            const BinaryMask3D m = lqtest::random_mask(d, 100 + i, 0.3);
            pred.push_back({"c" + std::to_string(i), m});
            ref.push_back({"c" + std::to_string(i), m});
        }
        const DiceSummary s = evaluate_segmentation(pred, ref);
        CHECK(s.mean == doctest::Approx(1.0));
        CHECK(s.stddev == doctest::Approx(0.0));
        CHECK(s.per_case.size() == 4);
    }
    SUBCASE("matches hand-computed Dice on three synthetic pairs") {
        std::vector<MaskCase> pred, ref;
        for (int i = 0; i < 3; ++i) {
            pred.push_back({"c" + std::to_string(i), lqtest::random_mask(d, 200 + i, 0.3)});
            ref.push_back({"c" + std::to_string(i), lqtest::random_mask(d, 300 + i, 0.3)});
        }
        const DiceSummary s = evaluate_segmentation(pred, ref);
        double mean = 0.0;
        for (int i = 0; i < 3; ++i) {
            const double want = lqtest::dice_oracle(pred[i].mask, ref[i].mask);
            CHECK(s.per_case[i].second == doctest::Approx(want));
            mean += want;
        }
        CHECK(s.mean == doctest::Approx(mean / 3.0));
    }
    SUBCASE("unpaired cases are an error") {
        std::vector<MaskCase> pred{{"a", lqtest::random_mask(d, 1)}};
        std::vector<MaskCase> ref{{"b", lqtest::random_mask(d, 2)}};
        CHECK_THROWS_AS(evaluate_segmentation(pred, ref), Error);
    }
}

TEST_CASE("evaluate_quantification") {
    SUBCASE("identical predictions give MAE 0") {
        std::vector<QuantCase> v{{"a", "s1", 5.0}, {"b", "s1", 10.0}};
        CHECK(evaluate_quantification(v, v).overall == doctest::Approx(0.0));
    }
    SUBCASE("two cases off by 2 and 4 points give MAE 3") {
        std::vector<QuantCase> pred{{"a", "", 7.0}, {"b", "", 14.0}};
        std::vector<QuantCase> ref{{"a", "s", 5.0}, {"b", "s", 10.0}};
        CHECK(evaluate_quantification(pred, ref).overall == doctest::Approx(3.0));
    }
    SUBCASE("per-source MAEs recombine into the overall value") {
        std::vector<QuantCase> pred{{"a", "", 7.0}, {"b", "", 14.0}, {"c", "", 1.0}};
        std::vector<QuantCase> ref{{"a", "s1", 5.0}, {"b", "s1", 10.0}, {"c", "s2", 2.0}};
        const MaeSummary s = evaluate_quantification(pred, ref);
        double weighted = 0.0;
        for (const auto& [src, mae] : s.per_source)
            weighted += mae * static_cast<double>(s.cases_per_source.at(src));
        CHECK(weighted / static_cast<double>(s.n_cases) == doctest::Approx(s.overall));
        CHECK(s.per_source.at("s1") == doctest::Approx(3.0));
        CHECK(s.per_source.at("s2") == doctest::Approx(1.0));
    }
    SUBCASE("unpaired cases are an error") {
        std::vector<QuantCase> pred{{"a", "", 1.0}};
        std::vector<QuantCase> ref{{"x", "s", 1.0}};
        CHECK_THROWS_AS(evaluate_quantification(pred, ref), Error);
    }
}

TEST_CASE("evaluate_ctss") {
    SUBCASE("47 correct of 50 with 3 off-by-one") {
        std::vector<std::pair<std::string, int>> pred;
        std::vector<std::pair<std::string, CtssRef>> ref;
        for (int i = 0; i < 50; ++i) {
            const int truth = 1 + i % 5;
            int guess = truth;
            if (i < 3) guess = truth == 5 ? 4 : truth + 1; // three off-by-one cases
            pred.emplace_back("c" + std::to_string(i), guess);
            ref.push_back({"c" + std::to_string(i), CtssRef{{truth}}});
        }
        const CtssSummary s = evaluate_ctss(pred, ref);
        CHECK(s.total == 50);
        CHECK(s.correct == 47);
        CHECK(s.accuracy == doctest::Approx(47.0 / 50.0));
        CHECK(s.misclassified_by_distance.at(1) == 3);
        CHECK(s.misclassified_by_distance.count(2) == 0);
    }
    SUBCASE("all correct leaves an empty histogram") {
        std::vector<std::pair<std::string, int>> pred{{"a", 2}};
        std::vector<std::pair<std::string, CtssRef>> ref{{"a", CtssRef{{2}}}};
        const CtssSummary s = evaluate_ctss(pred, ref);
        CHECK(s.accuracy == doctest::Approx(1.0));
        CHECK(s.misclassified_by_distance.empty());
    }
    SUBCASE("one case off by two lands in the 2-class bucket") {
        std::vector<std::pair<std::string, int>> pred{{"a", 4}};
        std::vector<std::pair<std::string, CtssRef>> ref{{"a", CtssRef{{2}}}};
        CHECK(evaluate_ctss(pred, ref).misclassified_by_distance.at(2) == 1);
    }
    SUBCASE("invalid scores are errors") {
        std::vector<std::pair<std::string, int>> pred{{"a", 7}};
        std::vector<std::pair<std::string, CtssRef>> ref{{"a", CtssRef{{2}}}};
        CHECK_THROWS_AS(evaluate_ctss(pred, ref), Error);
    }
}

TEST_CASE("mosmed_ctss_reference") {
    CHECK(mosmed_ctss_reference(0).allowed == std::vector<int>{0});
    CHECK(mosmed_ctss_reference(1).allowed == std::vector<int>{1, 2});
    CHECK(mosmed_ctss_reference(2).allowed == std::vector<int>{3});
    CHECK(mosmed_ctss_reference(3).allowed == std::vector<int>{4});
    CHECK(mosmed_ctss_reference(4).allowed == std::vector<int>{5});
    CHECK_THROWS_AS(mosmed_ctss_reference(5), Error);
    CHECK_THROWS_AS(mosmed_ctss_reference(-1), Error);

    SUBCASE("category 1 accepts a predicted 2 as a range match") {
        std::vector<std::pair<std::string, int>> pred{{"a", 2}};
        std::vector<std::pair<std::string, CtssRef>> ref{{"a", mosmed_ctss_reference(1)}};
        CHECK(evaluate_ctss(pred, ref).correct == 1);
    }
    SUBCASE("category ranges agree with the severity thresholds away from band edges") {
        Rng rng(88);
        for (int i = 0; i < 500; ++i) {
            const double p = rng.uniform(0.001, 100.0);
            if (std::fabs(p - 25.0) < 1e-6 || std::fabs(p - 50.0) < 1e-6 ||
                std::fabs(p - 75.0) < 1e-6)
                continue; // the band edges differ between the two scales
            const CtssRef ref = mosmed_ctss_reference(mosmed_category_from_percentage(p));
            const int ss = cascade::ct_severity_score(p);
            const bool contained =
                std::find(ref.allowed.begin(), ref.allowed.end(), ss) != ref.allowed.end();
            CAPTURE(p);
            CHECK(contained);
        }
        // explicit probes close to a boundary
        for (double p : {4.999, 5.001, 24.999, 25.001, 49.999, 50.001, 74.999, 75.001}) {
            const CtssRef ref = mosmed_ctss_reference(mosmed_category_from_percentage(p));
            const int ss = cascade::ct_severity_score(p);
            CAPTURE(p);
            CHECK(std::find(ref.allowed.begin(), ref.allowed.end(), ss) != ref.allowed.end());
        }
    }
}

TEST_CASE("summaries aggregate per-case records and render tables") {
    std::vector<CaseEvaluation> cases;
    for (int i = 0; i < 6; ++i) {
        CaseEvaluation c;
        c.case_id = "case" + std::to_string(i);
        c.source = i < 3 ? "phantomA" : "phantomB";
        c.dice_lung = 0.9 + 0.01 * i;
        c.dice_lesion = 0.6 + 0.02 * i;
        c.p_pred = 10.0 + i;
        c.p_ref = 10.0 + i + (i % 2 ? 1.0 : -1.0);
        c.ct_ss_pred = 2;
        c.ct_ss_ref = CtssRef{{i == 5 ? 3 : 2}};
        cases.push_back(c);
    }
    const EvaluationSummary s = summarize(cases);
    REQUIRE(s.lung_dice.has_value());
    REQUIRE(s.mae.has_value());
    REQUIRE(s.ctss.has_value());
    CHECK(s.lung_dice->mean == doctest::Approx(0.925));
    CHECK(s.mae->overall == doctest::Approx(1.0));
    CHECK(s.ctss->correct == 5);
    CHECK(s.ctss->misclassified_by_distance.at(1) == 1);

    const std::string json = summary_to_json(s);
    CHECK(json.find("\"accuracy\"") != std::string::npos);
    CHECK(json.find("case0") != std::string::npos);

    const std::string tables = summary_to_text_tables(s);
    CHECK(tables.find("Lung segmentation") != std::string::npos);
    CHECK(tables.find("CT severity score") != std::string::npos);
    CHECK(tables.find("1-class misclassification") != std::string::npos);
    CHECK(tables.find("5/6") != std::string::npos);
}

TEST_CASE("overlay PNGs are well-formed") {
    lqtest::TempDir tmp("overlay");
    const Phantom ph = generate_phantom(9, 0.2, {{48, 40, 24}, {2, 2, 3}});
    const std::string path = tmp.file("slice.png");
    write_overlay_png(ph.image, ph.lesions, ph.lungs, 12, path);

    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() > 100);
    const unsigned char magic[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    CHECK(std::memcmp(bytes.data(), magic, 8) == 0);
    // ends with an IEND chunk
    CHECK(std::memcmp(bytes.data() + bytes.size() - 8, "IEND", 4) == 0);

    CHECK_THROWS_AS(write_overlay_png(ph.image, ph.lesions, ph.lungs, 999, tmp.file("bad.png")),
                    Error);
}
