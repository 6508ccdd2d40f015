// Visual front end: patch extraction, embedding, and the local-global
// attention pooling that softmax-weights each 2x2 window per channel. The
// pooled value for a hand-built scorer is frozen from the closed form.

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "omni/image.hpp"
#include "omni/rng.hpp"
#include "omni/vision.hpp"

using namespace omni;

namespace {

// Select-first-position scorer for C=1: logit(position) = feature value.
PoolScorer identity_scorer_c1() {
    PoolScorer s;
    s.weight1 = Tensor({2, 1}, {1.0f, 0.0f});  // local weight 1, global weight 0
    s.bias1 = Tensor::zeros({1, 1});
    s.activation = Activation::identity;
    return s;
}

}  // namespace

TEST_CASE("pooling a 1-2-3-4 window matches the frozen softmax average") {
    PatchGrid grid{2, 2, Tensor({2, 2, 1}, {1, 2, 3, 4})};
    const PoolResult r = local_global_pool_detailed(grid, identity_scorer_c1());
    // pi = softmax([1,2,3,4]); pooled = sum(pi .* [1,2,3,4]) = 3.4926529
    CHECK(r.pooled.rows == 1);
    CHECK(r.pooled.cols == 1);
    CHECK(r.pooled.features.at(0, 0, 0) == doctest::Approx(3.4926529).epsilon(1e-5));
    CHECK(r.pi.at(0, 0, 0) == doctest::Approx(0.0320586).epsilon(1e-5));
    CHECK(r.pi.at(1, 1, 0) == doctest::Approx(0.6439143).epsilon(1e-5));
}

TEST_CASE("pi sums to one per window per channel") {
    Rng rng(31);
    PatchGrid grid{4, 6, Tensor::random_uniform({4, 6, 3}, rng, 1.0f)};
    const PoolScorer scorer = PoolScorer::seeded(3, 77);
    const PoolResult r = local_global_pool_detailed(grid, scorer);
    CHECK(r.pooled.rows == 2);
    CHECK(r.pooled.cols == 3);
    for (int wi = 0; wi < 2; ++wi) {
        for (int wj = 0; wj < 3; ++wj) {
            for (int ch = 0; ch < 3; ++ch) {
                const double sum = r.pi.at(2 * wi, 2 * wj, ch) + r.pi.at(2 * wi, 2 * wj + 1, ch) +
                                   r.pi.at(2 * wi + 1, 2 * wj, ch) +
                                   r.pi.at(2 * wi + 1, 2 * wj + 1, ch);
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("pooling rejects odd grids and mismatched scorers") {
    PatchGrid odd{3, 2, Tensor({3, 2, 1})};
    CHECK_THROWS_AS(local_global_pool(odd, identity_scorer_c1()), InputError);

    PatchGrid ok{2, 2, Tensor({2, 2, 2})};
    CHECK_THROWS_AS(local_global_pool(ok, identity_scorer_c1()), ConfigError);
}

TEST_CASE("pool backward shapes follow the inputs") {
    Rng rng(13);
    PatchGrid grid{2, 4, Tensor::random_uniform({2, 4, 2}, rng, 1.0f)};
    const PoolScorer scorer = PoolScorer::seeded(2, 5);
    const Tensor dout = Tensor::full({1, 2, 2}, 1.0f);
    const PoolGrads g = local_global_pool_backward(grid, scorer, dout);
    CHECK(g.dfeatures.shape == std::vector<int>{2, 4, 2});
    CHECK(g.dweight1.shape == std::vector<int>{4, 2});
    CHECK(g.dbias1.shape == std::vector<int>{1, 2});
    CHECK(g.dfeatures.all_finite());
}

TEST_CASE("replicate padding repeats the last row and column") {
    Tensor px({3, 5, 1});
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 5; ++j) px.at(i, j, 0) = static_cast<float>(10 * i + j);
    }
    const Tensor padded = replicate_pad_to_multiple(px, 4);
    CHECK(padded.shape == std::vector<int>{4, 8, 1});
    CHECK(padded.at(3, 0, 0) == 20.0f);  // row 3 copies row 2
    CHECK(padded.at(0, 7, 0) == 4.0f);   // cols 5..7 copy col 4
    CHECK(padded.at(3, 7, 0) == 24.0f);

    // Already aligned input is returned unchanged.
    const Tensor same = replicate_pad_to_multiple(Tensor({4, 4, 1}), 4);
    CHECK(same.shape == std::vector<int>{4, 4, 1});
}

TEST_CASE("patchify produces the expected grid and respects size caps") {
    const PatchEmbedder emb = PatchEmbedder::seeded(16, 8, 3);
    Rng rng(2);

    ImageInput img = ImageInput::from_pixels(Tensor::random_uniform({32, 32, 3}, rng, 0.5f));
    for (float& v : img.pixels.data) v = std::abs(v);
    const PatchGrid grid = patchify(img, emb, 1536);
    CHECK(grid.rows == 2);
    CHECK(grid.cols == 2);
    CHECK(grid.channels() == 8);
    CHECK(grid.token_count() == 4);

    // 40x40 pads up to 64x64 (multiple of 2*16), giving a 4x4 grid.
    ImageInput odd = ImageInput::from_pixels(Tensor::full({40, 40, 3}, 0.5f));
    const PatchGrid padded = patchify(odd, emb, 1536);
    CHECK(padded.rows == 4);
    CHECK(padded.cols == 4);

    ImageInput tiny = ImageInput::from_pixels(Tensor::full({8, 8, 3}, 0.5f));
    CHECK_THROWS_WITH_AS(patchify(tiny, emb, 1536), "image 8x8 smaller than one 16px patch",
                         InputError);

    ImageInput big = ImageInput::from_pixels(Tensor::full({32, 2000, 3}, 0.5f));
    CHECK_THROWS_WITH_AS(patchify(big, emb, 1536), "image 32x2000 exceeds the 1536px cap",
                         InputError);
}

TEST_CASE("patch embedding is an affine map of the patch pixels") {
    // With weight = ones and bias = 0 every embedding channel is the sum of
    // the patch's pixels, so a constant image gives patch*patch*3*value.
    PatchEmbedder emb;
    emb.patch_size = 2;
    emb.weight = Tensor::full({12, 2}, 1.0f);
    emb.bias = Tensor::zeros({1, 2});
    ImageInput img = ImageInput::from_pixels(Tensor::full({4, 4, 3}, 0.25f));
    const PatchGrid grid = patchify(img, emb, 1536);
    CHECK(grid.rows == 2);
    for (float v : grid.features.data) CHECK(v == doctest::Approx(3.0));  // 12 * 0.25
}

TEST_CASE("frame encoding enforces the frame cap") {
    const VisionConfig cfg{4, 4, 64, 2};  // patch 4, dim 4, max_side 64, max_frames 2
    const PatchEmbedder emb = PatchEmbedder::seeded(cfg.patch_size, cfg.dim, 1);
    const PoolScorer scorer = PoolScorer::seeded(cfg.dim, 2);

    FrameSequence video;
    for (int i = 0; i < 3; ++i) {
        video.frames.push_back(ImageInput::from_pixels(Tensor::full({8, 8, 3}, 0.5f)));
    }
    CHECK_THROWS_AS(encode_frames(video, emb, scorer, cfg), InputError);

    video.frames.pop_back();
    const std::vector<PatchGrid> out = encode_frames(video, emb, scorer, cfg);
    CHECK(out.size() == 2);
    CHECK(out[0].rows == 1);
    CHECK(out[0].cols == 1);

    FrameSequence empty;
    CHECK_THROWS_AS(encode_frames(empty, emb, scorer, cfg), InputError);
}

TEST_CASE("ppm images round-trip through quantization") {
    Tensor px({2, 3, 3});
    for (std::size_t i = 0; i < px.data.size(); ++i) {
        px.data[i] = static_cast<float>(i) / static_cast<float>(px.data.size());
    }
    const std::string path = "/tmp/omni_test_vision_roundtrip.ppm";
    write_ppm(path, ImageInput::from_pixels(px));
    const ImageInput back = read_ppm(path);
    CHECK(back.height() == 2);
    CHECK(back.width() == 3);
    for (std::size_t i = 0; i < px.data.size(); ++i) {
        // 8-bit quantization: half a level of headroom.
        CHECK(std::abs(back.pixels.data[i] - px.data[i]) <= 0.5f / 255.0f + 1e-6f);
    }
    std::remove(path.c_str());

    CHECK_THROWS_AS(read_ppm("/tmp/omni_test_vision_missing.ppm"), IoError);
}
