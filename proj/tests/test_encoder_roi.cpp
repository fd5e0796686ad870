#include <doctest.h>

#include "latiq/encoder.hpp"
#include "latiq/model.hpp"
#include "latiq/roi.hpp"

using namespace latiq;

namespace {

ModelConfig small_cfg() {
    ModelConfig cfg;
    cfg.vocab_size = default_tokenizer().vocab_size();
    return cfg; // 32x32, patch 8, visual_dim 32
}

} // namespace

TEST_CASE("encode_image produces the patch grid") {
    const ModelConfig cfg = small_cfg();
    const FrozenParams frozen = make_frozen(cfg);
    Image img(32, 32);
    for (size_t i = 0; i < img.px.size(); ++i) img.px[i] = double(i % 97) / 97.0;

    VisualTokenGrid grid = encode_image(img, cfg, frozen);
    CHECK(grid.grid_h == 4);
    CHECK(grid.grid_w == 4);
    CHECK(grid.tokens.rows == 16);
    CHECK(grid.tokens.cols == cfg.visual_dim);

    // determinism: identical inputs give bit-identical grids
    VisualTokenGrid again = encode_image(img, cfg, frozen);
    CHECK(grid.tokens.a == again.tokens.a);

    // dimension mismatch is rejected with a diagnostic
    Image wrong(16, 32);
    CHECK_THROWS_AS(encode_image(wrong, cfg, frozen), std::invalid_argument);
}

TEST_CASE("all-zero image encodes to the frozen bias rows") {
    const ModelConfig cfg = small_cfg();
    const FrozenParams frozen = make_frozen(cfg);
    Image zero(32, 32);
    VisualTokenGrid grid = encode_image(zero, cfg, frozen);
    for (int n = 0; n < grid.tokens.rows; ++n)
        for (int i = 0; i < cfg.visual_dim; ++i)
            CHECK(grid.tokens.at(n, i) == frozen.enc_b[size_t(i)]);
}

TEST_CASE("project_visual shapes and zero-grid bias") {
    const ModelConfig cfg = small_cfg();
    const FrozenParams frozen = make_frozen(cfg);
    VisualTokenGrid grid;
    grid.grid_h = grid.grid_w = 4;
    grid.tokens = Mat(16, cfg.visual_dim);
    Mat out = project_visual(grid, frozen);
    CHECK(out.rows == 16);
    CHECK(out.cols == cfg.embed_dim);
    for (int n = 0; n < out.rows; ++n)
        for (int i = 0; i < cfg.embed_dim; ++i)
            CHECK(out.at(n, i) == frozen.proj_b[size_t(i)]);
}

TEST_CASE("latent_head is the trainable affine map") {
    ModelConfig cfg = small_cfg();
    Model m = init_model(cfg);
    Vec zero(size_t(cfg.embed_dim), 0.0);
    Vec g = latent_head(m, zero.data());
    REQUIRE(int(g.size()) == cfg.visual_dim);
    for (int i = 0; i < cfg.visual_dim; ++i) CHECK(g[size_t(i)] == m.dec.lat_b[size_t(i)]);
}

TEST_CASE("roi_to_patch_indices") {
    const ModelConfig cfg = small_cfg();

    // full cover
    auto all = roi_to_patch_indices(RoiSpec{0, 0, 32, 32}, cfg);
    REQUIRE(all.count() == 16);
    for (int i = 0; i < 16; ++i) CHECK(all.indices[size_t(i)] == i);

    // exactly patch (0,0)
    auto one = roi_to_patch_indices(RoiSpec{0, 0, 8, 8}, cfg);
    REQUIRE(one.count() == 1);
    CHECK(one.indices[0] == 0);

    // independent enumeration oracle for the (3,3)-(12,12) case
    RoiSpec roi{3, 3, 12, 12};
    std::vector<int> expect;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            const int px0 = c * 8, py0 = r * 8;
            if (roi.x0 < px0 + 8 && roi.x1 > px0 && roi.y0 < py0 + 8 && roi.y1 > py0)
                expect.push_back(r * 4 + c);
        }
    CHECK(expect == std::vector<int>{0, 1, 4, 5});
    auto got = roi_to_patch_indices(roi, cfg);
    CHECK(got.indices == expect);

    CHECK_THROWS_AS(roi_to_patch_indices(RoiSpec{5, 5, 5, 9}, cfg), std::invalid_argument);
    CHECK_THROWS_AS(roi_to_patch_indices(RoiSpec{-1, 0, 8, 8}, cfg), std::invalid_argument);
    CHECK_THROWS_AS(roi_to_patch_indices(RoiSpec{0, 0, 33, 8}, cfg), std::invalid_argument);
}

TEST_CASE("build_phi is the order-preserving bijection, exhaustively") {
    const ModelConfig cfg = small_cfg();

    PatchIndexSet idx;
    idx.indices = {0, 1, 4, 5};
    PhiMap phi = build_phi(idx, 4);
    CHECK(phi.patch_for_step(1) == 0);
    CHECK(phi.patch_for_step(2) == 1);
    CHECK(phi.patch_for_step(3) == 4);
    CHECK(phi.patch_for_step(4) == 5);

    PatchIndexSet single;
    single.indices = {7};
    CHECK(build_phi(single, 1).patch_for_step(1) == 7);

    CHECK_THROWS_AS(build_phi(idx, 3), std::invalid_argument); // T != T_v rejected

    // every pixel bbox on the 4x4 grid: phi hits each step exactly once and
    // preserves row-major order
    for (int x0 = 0; x0 < 32; x0 += 2)
        for (int x1 = x0 + 1; x1 <= 32; x1 += 3)
            for (int y0 = 0; y0 < 32; y0 += 2)
                for (int y1 = y0 + 1; y1 <= 32; y1 += 3) {
                    auto set = roi_to_patch_indices(RoiSpec{x0, y0, x1, y1}, cfg);
                    REQUIRE(set.count() >= 1);
                    PhiMap p = build_phi(set, set.count());
                    for (int k = 2; k <= p.steps(); ++k)
                        CHECK(p.patch_for_step(k) > p.patch_for_step(k - 1));
                    CHECK(int(p.patch_at_step.size()) == set.count());
                }
}
