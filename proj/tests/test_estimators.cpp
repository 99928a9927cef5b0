#include <catch2/catch_amalgamated.hpp>

#include "tonemeter/estimators.hpp"

using namespace tonemeter;

namespace {

PatchTensor uniform_image(int h, int w, const LabColor& lab) {
    SrgbConversion c = lab_to_srgb(lab);
    REQUIRE_FALSE(c.clamped);
    PatchTensor t = PatchTensor::zeros(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float* p = t.pixel(y, x);
            p[0] = static_cast<float>(c.color.r);
            p[1] = static_cast<float>(c.color.g);
            p[2] = static_cast<float>(c.color.b);
        }
    }
    return t;
}

// two-tone image: centered square of `lesion` color covering ~frac of pixels
PatchTensor two_tone(int n, const LabColor& skin, const LabColor& lesion, double frac,
                     bool with_mask) {
    PatchTensor t = uniform_image(n, n, skin);
    SrgbConversion c = lab_to_srgb(lesion);
    int side = static_cast<int>(std::sqrt(frac) * n);
    int off = (n - side) / 2;
    std::vector<uint8_t> mask(static_cast<size_t>(n) * n, 0);
    for (int y = off; y < off + side; ++y) {
        for (int x = off; x < off + side; ++x) {
            float* p = t.pixel(y, x);
            p[0] = static_cast<float>(c.color.r);
            p[1] = static_cast<float>(c.color.g);
            p[2] = static_cast<float>(c.color.b);
            mask[static_cast<size_t>(y) * n + x] = 1;
        }
    }
    if (with_mask) t.mask = std::move(mask);
    return t;
}

}  // namespace

TEST_CASE("kmeans on a uniform image returns its color", "[estimators]") {
    LabColor skin{70, 5, 20};
    PatchTensor img = uniform_image(32, 32, skin);
    EstimatorResult r = kmeans_ita(img, KmeansConfig{3, 99, 100});
    CHECK(delta_e_1976(r.lab, skin) < 0.05);  // float pixel storage only
    CHECK(r.ita_degrees.degrees == Catch::Approx(45.0).margin(0.2));
}

TEST_CASE("kmeans picks the dominant tone of a two-tone image", "[estimators]") {
    LabColor skin{65, 8, 18};
    LabColor lesion{35, 12, 14};
    PatchTensor img = two_tone(40, skin, lesion, 0.2, false);
    EstimatorResult r = kmeans_ita(img, KmeansConfig{3, 7, 100});
    // brute-force expectation on a 2-color instance: the dominant cluster
    // centroid is the 80% color
    CHECK(delta_e_1976(r.lab, skin) < 2.0);
}

TEST_CASE("kmeans with mask equals estimator on unmasked uniform image", "[estimators]") {
    LabColor skin{65, 8, 18};
    LabColor lesion{35, 12, 14};
    PatchTensor masked = two_tone(40, skin, lesion, 0.2, true);
    EstimatorResult r = kmeans_ita(masked, KmeansConfig{3, 7, 100});
    // oracle: mean Lab over unmasked pixels (all equal to skin)
    CHECK(delta_e_1976(r.lab, skin) < 0.05);
}

TEST_CASE("kmeans is invariant to pixel permutation", "[estimators]") {
    Rng rng(5);
    PatchTensor img = PatchTensor::zeros(16, 16);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform(0.2, 0.9));
    EstimatorResult a = kmeans_ita(img, KmeansConfig{3, 42, 100});

    // permute whole pixels
    std::vector<std::array<float, 3>> px(img.pixel_count());
    for (size_t i = 0; i < px.size(); ++i) {
        px[i] = {img.data[i * 3], img.data[i * 3 + 1], img.data[i * 3 + 2]};
    }
    rng.shuffle(px);
    PatchTensor shuffled = PatchTensor::zeros(16, 16);
    for (size_t i = 0; i < px.size(); ++i) {
        shuffled.data[i * 3] = px[i][0];
        shuffled.data[i * 3 + 1] = px[i][1];
        shuffled.data[i * 3 + 2] = px[i][2];
    }
    EstimatorResult b = kmeans_ita(shuffled, KmeansConfig{3, 42, 100});
    CHECK(a.lab.L == b.lab.L);
    CHECK(a.lab.a == b.lab.a);
    CHECK(a.lab.b == b.lab.b);
}

TEST_CASE("kmeans determinism and error paths", "[estimators]") {
    LabColor skin{60, 10, 20};
    PatchTensor img = uniform_image(16, 16, skin);
    EstimatorResult r1 = kmeans_ita(img, KmeansConfig{3, 1234, 100});
    EstimatorResult r2 = kmeans_ita(img, KmeansConfig{3, 1234, 100});
    CHECK(r1.lab.L == r2.lab.L);
    CHECK(r1.cluster_sizes == r2.cluster_sizes);

    PatchTensor tiny = uniform_image(8, 8, skin);
    tiny.mask = std::vector<uint8_t>(tiny.pixel_count(), 1);
    (*tiny.mask)[0] = 0;
    (*tiny.mask)[1] = 0;
    CHECK_THROWS_AS(kmeans_ita(tiny, KmeansConfig{3, 0, 100}), validation_error);

    tiny.mask = std::vector<uint8_t>(tiny.pixel_count(), 1);  // everything masked
    CHECK_THROWS_AS(kmeans_ita(tiny, KmeansConfig{3, 0, 100}), validation_error);
}

TEST_CASE("patch baseline on a uniform image", "[estimators]") {
    LabColor skin{62, 9, 19};
    PatchTensor img = uniform_image(64, 64, skin);
    EstimatorResult r = patch_ita(img, PatchConfig{20, 50.0});
    CHECK(r.patches_used == 8);
    CHECK(delta_e_1976(r.lab, skin) < 0.05);
}

TEST_CASE("patch baseline ignores a centered lesion", "[estimators]") {
    LabColor skin{62, 9, 19};
    LabColor lesion{30, 14, 12};
    // 64x64, lesion square ~14x14 centered: border patches of 20px never touch it
    PatchTensor img = two_tone(64, skin, lesion, 0.05, false);
    EstimatorResult r = patch_ita(img, PatchConfig{20, 50.0});
    CHECK(r.patches_used == 8);
    CHECK(delta_e_1976(r.lab, skin) < 0.05);
}

TEST_CASE("patch baseline under a linear gain ramp equals mean of patch means",
          "[estimators]") {
    // gradient-lit uniform skin: +-30% gain left to right applied to the pixels
    LabColor skin{62, 9, 19};
    const int n = 64;
    PatchTensor img = uniform_image(n, n, skin);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            double gain = 1.0 + 0.3 * (2.0 * x / (n - 1) - 1.0);
            float* p = img.pixel(y, x);
            for (int c = 0; c < 3; ++c) {
                p[c] = static_cast<float>(std::min(1.0, p[c] * gain));
            }
        }
    }
    // oracle: direct average of the 8 patch-mean Lab values, computed
    // independently from the same geometry
    const int p = 20;
    const int mid_y = (n - p) / 2, mid_x = (n - p) / 2, lo = 0, hi = n - p;
    const int origins[8][2] = {{lo, lo},   {lo, hi},    {hi, lo},    {hi, hi},
                               {lo, mid_x}, {hi, mid_x}, {mid_y, lo}, {mid_y, hi}};
    LabColor want{};
    for (auto& o : origins) {
        LabColor m{};
        for (int y = o[0]; y < o[0] + p; ++y) {
            for (int x = o[1]; x < o[1] + p; ++x) {
                LabColor l = srgb_to_lab(img.srgb_at(y, x));
                m.L += l.L;
                m.a += l.a;
                m.b += l.b;
            }
        }
        want.L += m.L / (p * p);
        want.a += m.a / (p * p);
        want.b += m.b / (p * p);
    }
    want = LabColor{want.L / 8, want.a / 8, want.b / 8};

    EstimatorResult r = patch_ita(img, PatchConfig{20, 200.0});
    CHECK(r.lab.L == Catch::Approx(want.L).margin(1e-9));
    CHECK(r.lab.a == Catch::Approx(want.a).margin(1e-9));
    CHECK(r.lab.b == Catch::Approx(want.b).margin(1e-9));
}

TEST_CASE("patch baseline errors name the discard causes", "[estimators]") {
    LabColor skin{62, 9, 19};
    PatchTensor img = uniform_image(32, 32, skin);
    img.mask = std::vector<uint8_t>(img.pixel_count(), 1);  // everything lesion
    try {
        patch_ita(img, PatchConfig{10, 50.0});
        FAIL("expected validation_error");
    } catch (const validation_error& e) {
        std::string msg = e.what();
        CHECK(msg.find("mask") != std::string::npos);
    }
    PatchTensor small = uniform_image(8, 8, skin);
    CHECK_THROWS_AS(patch_ita(small, PatchConfig{20, 50.0}), validation_error);
}

TEST_CASE("shades of gray leaves gray images unchanged", "[estimators]") {
    PatchTensor img = PatchTensor::zeros(16, 16);
    Rng rng(3);
    for (size_t i = 0; i < img.pixel_count(); ++i) {
        float v = static_cast<float>(rng.uniform(0.1, 0.9));
        img.data[i * 3] = img.data[i * 3 + 1] = img.data[i * 3 + 2] = v;
    }
    ShadesOfGrayResult r = shades_of_gray(img, 6.0);
    for (size_t i = 0; i < img.data.size(); ++i) {
        REQUIRE(r.image.data[i] == Catch::Approx(img.data[i]).margin(1e-6));
    }
}

TEST_CASE("shades of gray inverts a known cast on a gray-world scene", "[estimators]") {
    PatchTensor scene = PatchTensor::zeros(32, 32);
    Rng rng(17);
    for (size_t i = 0; i < scene.pixel_count(); ++i) {
        float v = static_cast<float>(rng.uniform(0.1, 0.75));
        scene.data[i * 3] = scene.data[i * 3 + 1] = scene.data[i * 3 + 2] = v;
    }
    PatchTensor cast = scene;
    const double gains[3] = {1.2, 1.0, 0.8};
    for (size_t i = 0; i < cast.pixel_count(); ++i) {
        for (int c = 0; c < 3; ++c) {
            cast.data[i * 3 + c] = static_cast<float>(cast.data[i * 3 + c] * gains[c]);
        }
    }
    ShadesOfGrayResult r = shades_of_gray(cast, 6.0);
    double max_err = 0.0;
    for (size_t i = 0; i < scene.data.size(); ++i) {
        max_err = std::max(max_err, std::abs(static_cast<double>(r.image.data[i]) -
                                             scene.data[i]));
    }
    CHECK(max_err < 0.02);
}

TEST_CASE("shades of gray with p=1 equals gray-world", "[estimators]") {
    PatchTensor img = PatchTensor::zeros(16, 16);
    Rng rng(23);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform(0.05, 0.95));
    ShadesOfGrayResult r = shades_of_gray(img, 1.0);

    // independent gray-world implementation
    double mean[3] = {0, 0, 0};
    for (size_t i = 0; i < img.pixel_count(); ++i) {
        for (int c = 0; c < 3; ++c) mean[c] += img.data[i * 3 + c];
    }
    for (auto& m : mean) m /= static_cast<double>(img.pixel_count());
    double target = (mean[0] + mean[1] + mean[2]) / 3.0;
    for (size_t i = 0; i < img.pixel_count(); ++i) {
        for (int c = 0; c < 3; ++c) {
            double want = std::min(1.0, img.data[i * 3 + c] * target / mean[c]);
            REQUIRE(r.image.data[i * 3 + c] == Catch::Approx(want).margin(1e-6));
        }
    }
}

TEST_CASE("shades of gray is idempotent up to clamping", "[estimators]") {
    PatchTensor img = PatchTensor::zeros(16, 16);
    Rng rng(29);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform(0.1, 0.6));
    ShadesOfGrayResult once = shades_of_gray(img, 6.0);
    REQUIRE_FALSE(once.clamped);
    ShadesOfGrayResult twice = shades_of_gray(once.image, 6.0);
    for (size_t i = 0; i < img.data.size(); ++i) {
        REQUIRE(std::abs(static_cast<double>(twice.image.data[i]) - once.image.data[i]) <
                1e-6);
    }
}

TEST_CASE("shades of gray on all-black is identity", "[estimators]") {
    PatchTensor img = PatchTensor::zeros(16, 16);
    ShadesOfGrayResult r = shades_of_gray(img, 6.0);
    CHECK(r.identity);
    CHECK(r.image.data == img.data);
}
