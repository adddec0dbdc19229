#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <framefield/fields.hpp>
#include <framefield/rng.hpp>

#include "oracles.hpp"

using ff::Rng;
using Tensor = ff::TensorT<double>;

namespace {

Tensor random_grid(int64_t c, int64_t h, int64_t w, Rng& rng, bool grad = false) {
    std::vector<double> v(static_cast<size_t>(c * h * w));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor::from({c, h, w}, std::move(v), grad);
}

// single linear layer passing through the first `out` input dims
ff::MlpT<double> passthrough_mlp(int64_t in, int64_t out) {
    Rng rng(1);
    auto mlp = ff::MlpT<double>::make(in, {}, out, rng);
    auto& w = mlp.layers[0].weight.values();
    std::fill(w.begin(), w.end(), 0.0);
    for (int64_t o = 0; o < out; ++o) w[static_cast<size_t>(o * in + o)] = 1.0;
    std::fill(mlp.layers[0].bias.values().begin(), mlp.layers[0].bias.values().end(), 0.0);
    return mlp;
}

} // namespace

TEST_CASE("passthrough feature field returns the nearest cell's features") {
    ff::SpatialINRConfig cfg;
    cfg.grid_channels = 4;
    cfg.out_channels = 4;
    Rng rng(11);
    auto inr = ff::SpatialINRT<double>::make(cfg, rng);
    inr.mlp = passthrough_mlp(cfg.in_dim(), 4); // ignore the offset columns

    auto grid = random_grid(4, 3, 5, rng);
    std::vector<double> cs;
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 5; ++j) {
            cs.push_back(ff::normalize_index(i, 3));
            cs.push_back(ff::normalize_index(j, 5));
        }
    auto out = inr.query(grid, Tensor::from({15, 2}, std::move(cs)));
    REQUIRE(out.shape() == std::vector<int64_t>{15, 4});
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 5; ++j)
            for (int64_t c = 0; c < 4; ++c)
                REQUIRE(out.values()[static_cast<size_t>((i * 5 + j) * 4 + c)] ==
                        grid.values()[static_cast<size_t>((c * 3 + i) * 5 + j)]);
}

TEST_CASE("repeated feature queries are identical") {
    ff::SpatialINRConfig cfg;
    cfg.grid_channels = 6;
    cfg.out_channels = 5;
    cfg.hidden = {16, 16};
    Rng rng(21);
    auto inr = ff::SpatialINRT<double>::make(cfg, rng);
    auto grid = random_grid(6, 4, 4, rng);
    auto coords = Tensor::from({2, 2}, {0.13, -0.42, 0.13, -0.42});
    auto out = inr.query(grid, coords);
    for (int64_t c = 0; c < 5; ++c)
        REQUIRE(out.values()[static_cast<size_t>(c)] == out.values()[static_cast<size_t>(5 + c)]);
}

TEST_CASE("feature field is smooth inside a cell") {
    ff::SpatialINRConfig cfg;
    cfg.grid_channels = 8;
    cfg.out_channels = 8;
    Rng rng(31);
    auto inr = ff::SpatialINRT<double>::make(cfg, rng);
    auto grid = random_grid(8, 6, 6, rng);

    // both points deep inside cell (2,3)
    const double y = ff::normalize_index(2, 6) + 0.02, x = ff::normalize_index(3, 6) - 0.03;
    auto a = inr.query(grid, Tensor::from({1, 2}, {y, x}));
    auto b = inr.query(grid, Tensor::from({1, 2}, {y + 1e-6, x + 1e-6}));
    for (int64_t c = 0; c < 8; ++c)
        REQUIRE(std::fabs(a.values()[static_cast<size_t>(c)] - b.values()[static_cast<size_t>(c)]) < 1e-3);
}

TEST_CASE("materialized features equal the per-cell query loop") {
    ff::SpatialINRConfig cfg;
    cfg.grid_channels = 64;
    cfg.out_channels = 64;
    Rng rng(41);
    auto inr = ff::SpatialINRT<double>::make(cfg, rng);
    auto grid = random_grid(64, 4, 4, rng);

    auto field = inr.materialize(grid, 8, 8);
    REQUIRE(field.shape() == std::vector<int64_t>{64, 8, 8});

    for (int64_t i = 0; i < 8; ++i)
        for (int64_t j = 0; j < 8; ++j) {
            auto one = inr.query(grid, Tensor::from({1, 2}, {ff::normalize_index(i, 8), ff::normalize_index(j, 8)}),
                                 2.0 / 8, 2.0 / 8);
            for (int64_t c = 0; c < 64; ++c)
                REQUIRE(field.values()[static_cast<size_t>((c * 8 + i) * 8 + j)] ==
                        one.values()[static_cast<size_t>(c)]);
        }
}

TEST_CASE("feature field gradients match finite differences") {
    ff::SpatialINRConfig cfg;
    cfg.grid_channels = 4;
    cfg.out_channels = 3;
    cfg.hidden = {8, 8};
    Rng rng(51);
    auto inr = ff::SpatialINRT<double>::make(cfg, rng);
    auto grid = random_grid(4, 3, 3, rng, true);

    // queries parked well inside cells so the nearest-cell choice is stable
    // under the probe step; the offset channel then carries the coordinate
    // gradient
    std::vector<double> cv;
    Rng crng(52);
    for (int64_t k = 0; k < 5; ++k) {
        const int64_t i = crng.uniform_int(3), j = crng.uniform_int(3);
        cv.push_back(ff::normalize_index(i, 3) + crng.uniform(-0.2, 0.2) * (2.0 / 3.0) * 0.5);
        cv.push_back(ff::normalize_index(j, 3) + crng.uniform(-0.2, 0.2) * (2.0 / 3.0) * 0.5);
    }
    auto coords = Tensor::from({5, 2}, std::move(cv), true);

    std::vector<double> lw(static_cast<size_t>(5 * 3));
    for (auto& v : lw) v = crng.uniform(-1.0, 1.0);
    auto loss_w = Tensor::from({5, 3}, std::move(lw));

    ff::ParamList<double> leaves;
    inr.collect_params("spatial_inr.", leaves);
    leaves.push_back({"grid", grid});
    leaves.push_back({"coords", coords});

    auto res = oracle::fd_check<double>(leaves, [&] { return ff::sum(ff::mul(inr.query(grid, coords), loss_w)); });
    INFO("worst " << res.where << " rel " << res.max_rel);
    REQUIRE(res.max_rel < 1e-4);
}

TEST_CASE("cell footprint conditioning widens the head input") {
    ff::SpatialINRConfig cfg;
    cfg.grid_channels = 4;
    cfg.out_channels = 3;
    cfg.hidden = {8};
    cfg.cell_decode = true;
    REQUIRE(cfg.in_dim() == 8);
    Rng rng(61);
    auto inr = ff::SpatialINRT<double>::make(cfg, rng);
    REQUIRE(inr.mlp.in_dim() == 8);
    auto grid = random_grid(4, 3, 3, rng);
    auto out = inr.materialize(grid, 5, 5);
    REQUIRE(out.shape() == std::vector<int64_t>{3, 5, 5});
}

TEST_CASE("cell averaging agrees with the plain lookup at cell centers") {
    ff::SpatialINRConfig cfg;
    cfg.grid_channels = 5;
    cfg.out_channels = 4;
    cfg.hidden = {16};
    Rng rng(71);
    auto plain = ff::SpatialINRT<double>::make(cfg, rng);
    auto blended = plain;
    blended.cfg.local_ensemble = true;

    auto grid = random_grid(5, 4, 6, rng);
    auto coords = ff::lattice_coords<double>(4, 6);
    auto a = plain.query(grid, coords);
    auto b = blended.query(grid, coords);
    for (size_t i = 0; i < a.values().size(); ++i)
        REQUIRE(a.values()[i] == Catch::Approx(b.values()[i]).margin(1e-9));
}

TEST_CASE("cell averaging is continuous across cell boundaries") {
    ff::SpatialINRConfig cfg;
    cfg.grid_channels = 5;
    cfg.out_channels = 4;
    cfg.hidden = {16};
    cfg.local_ensemble = true;
    Rng rng(81);
    auto inr = ff::SpatialINRT<double>::make(cfg, rng);
    auto grid = random_grid(5, 4, 6, rng);

    // straddle the boundary between cells (1,2) and (1,3)
    const double yb = ff::normalize_index(1, 4) + 0.01;
    const double xb = -1.0 + 2.0 * 3.0 / 6.0;
    auto lo = inr.query(grid, Tensor::from({1, 2}, {yb, xb - 1e-6}));
    auto hi = inr.query(grid, Tensor::from({1, 2}, {yb, xb + 1e-6}));
    for (int64_t c = 0; c < 4; ++c)
        REQUIRE(std::fabs(lo.values()[static_cast<size_t>(c)] - hi.values()[static_cast<size_t>(c)]) < 1e-3);

    // while the plain nearest lookup jumps there
    auto plain = inr;
    plain.cfg.local_ensemble = false;
    auto plo = plain.query(grid, Tensor::from({1, 2}, {yb, xb - 1e-6}));
    auto phi = plain.query(grid, Tensor::from({1, 2}, {yb, xb + 1e-6}));
    double jump = 0.0;
    for (int64_t c = 0; c < 4; ++c)
        jump = std::max(jump, std::fabs(plo.values()[static_cast<size_t>(c)] - phi.values()[static_cast<size_t>(c)]));
    REQUIRE(jump > 1e-3);
}

TEST_CASE("zero motion network emits zero flows everywhere") {
    ff::TemporalINRConfig cfg;
    cfg.feat_channels = 6;
    cfg.hidden = {8, 8};
    Rng rng(91);
    auto inr = ff::TemporalINRT<double>::make(cfg, rng);
    ff::ParamList<double> params;
    inr.collect_params("temporal_inr.", params);
    for (auto& p : params) std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0);

    std::vector<double> fv(static_cast<size_t>(3 * 6));
    for (auto& v : fv) v = rng.uniform(-2.0, 2.0);
    auto out = inr.query(Tensor::from({3, 6}, std::move(fv)), 0.37);
    REQUIRE(out.shape() == std::vector<int64_t>{3, 4});
    for (double v : out.values()) REQUIRE(v == 0.0);

    auto field = inr.materialize(random_grid(6, 3, 3, rng), 0.5);
    REQUIRE(field.shape() == std::vector<int64_t>{4, 3, 3});
    for (double v : field.values()) REQUIRE(v == 0.0);
}

TEST_CASE("motion queries are deterministic and split into two flows") {
    ff::TemporalINRConfig cfg;
    cfg.feat_channels = 6;
    cfg.hidden = {8, 8};
    Rng rng(101);
    auto inr = ff::TemporalINRT<double>::make(cfg, rng);
    std::vector<double> fv(static_cast<size_t>(2 * 6));
    for (auto& v : fv) v = rng.uniform(-1.0, 1.0);
    auto feat = Tensor::from({2, 6}, std::move(fv));

    auto a = inr.query(feat, 0.25);
    auto b = inr.query(feat, 0.25);
    REQUIRE(a.values() == b.values());

    auto pair = ff::split_flows(a);
    REQUIRE(pair.flow0.shape() == std::vector<int64_t>{2, 2});
    REQUIRE(pair.flow1.shape() == std::vector<int64_t>{2, 2});
    REQUIRE(pair.flow0.values()[0] == a.values()[0]);
    REQUIRE(pair.flow1.values()[0] == a.values()[2]);
}

TEST_CASE("single-flow mode emits one flow used for both directions") {
    ff::TemporalINRConfig cfg;
    cfg.feat_channels = 4;
    cfg.hidden = {8};
    cfg.dual_flow = false;
    REQUIRE(cfg.out_dim() == 2);
    Rng rng(111);
    auto inr = ff::TemporalINRT<double>::make(cfg, rng);
    auto out = inr.query(Tensor::from({1, 4}, {0.1, -0.2, 0.3, 0.4}), 0.8);
    REQUIRE(out.shape() == std::vector<int64_t>{1, 2});
    auto pair = ff::split_flows(out);
    REQUIRE(pair.flow0.values() == pair.flow1.values());
}

TEST_CASE("motion gradients match finite differences") {
    ff::TemporalINRConfig cfg;
    cfg.feat_channels = 4;
    cfg.hidden = {8, 8};
    Rng rng(121);
    auto inr = ff::TemporalINRT<double>::make(cfg, rng);

    std::vector<double> fv(static_cast<size_t>(3 * 4));
    for (auto& v : fv) v = rng.uniform(-1.0, 1.0);
    auto feat = Tensor::from({3, 4}, std::move(fv), true);
    auto xt = Tensor::from({3, 1}, {0.2, 0.5, 0.9}, true);

    std::vector<double> lw(static_cast<size_t>(3 * 4));
    for (auto& v : lw) v = rng.uniform(-1.0, 1.0);
    auto loss_w = Tensor::from({3, 4}, std::move(lw));

    ff::ParamList<double> leaves;
    inr.collect_params("temporal_inr.", leaves);
    leaves.push_back({"features", feat});
    leaves.push_back({"time", xt});

    auto res = oracle::fd_check<double>(leaves, [&] { return ff::sum(ff::mul(inr.query(feat, xt), loss_w)); });
    INFO("worst " << res.where << " rel " << res.max_rel);
    REQUIRE(res.max_rel < 1e-4);
}

TEST_CASE("motion field is continuous in time") {
    ff::TemporalINRConfig cfg;
    cfg.feat_channels = 5;
    Rng rng(131);
    auto inr = ff::TemporalINRT<double>::make(cfg, rng);
    std::vector<double> fv(5);
    for (auto& v : fv) v = rng.uniform(-1.0, 1.0);
    auto feat = Tensor::from({1, 5}, std::move(fv));

    for (double t : {0.0, 0.31, 0.99}) {
        auto a = inr.query(feat, t);
        auto b = inr.query(feat, t + 1e-6);
        for (int64_t c = 0; c < 4; ++c)
            REQUIRE(std::fabs(a.values()[static_cast<size_t>(c)] - b.values()[static_cast<size_t>(c)]) < 1e-3);
    }
}

TEST_CASE("materialized motion equals the per-cell query loop") {
    ff::TemporalINRConfig cfg;
    cfg.feat_channels = 6;
    cfg.hidden = {8, 8};
    Rng rng(141);
    auto inr = ff::TemporalINRT<double>::make(cfg, rng);
    auto grid = random_grid(6, 5, 4, rng);

    auto field = inr.materialize(grid, 0.4);
    REQUIRE(field.shape() == std::vector<int64_t>{4, 5, 4});

    for (int64_t i = 0; i < 5; ++i)
        for (int64_t j = 0; j < 4; ++j) {
            std::vector<double> row(6);
            for (int64_t c = 0; c < 6; ++c) row[static_cast<size_t>(c)] = grid.values()[static_cast<size_t>((c * 5 + i) * 4 + j)];
            auto one = inr.query(Tensor::from({1, 6}, std::move(row)), 0.4);
            for (int64_t c = 0; c < 4; ++c)
                REQUIRE(field.values()[static_cast<size_t>((c * 5 + i) * 4 + j)] ==
                        one.values()[static_cast<size_t>(c)]);
        }
}

TEST_CASE("field parameters enumerate under their checkpoint prefixes") {
    ff::SpatialINRConfig scfg;
    scfg.grid_channels = 4;
    scfg.out_channels = 3;
    scfg.hidden = {8, 8};
    ff::TemporalINRConfig tcfg;
    tcfg.feat_channels = 3;
    tcfg.hidden = {8};
    Rng rng(151);
    auto s = ff::SpatialINRT<double>::make(scfg, rng);
    auto t = ff::TemporalINRT<double>::make(tcfg, rng);

    ff::ParamList<double> params;
    s.collect_params("spatial_inr.", params);
    t.collect_params("temporal_inr.", params);
    REQUIRE(params.size() == 2 * 3 + 2 * 2);
    REQUIRE(params[0].name == "spatial_inr.l0.w");
    REQUIRE(params[5].name == "spatial_inr.l2.b");
    REQUIRE(params[6].name == "temporal_inr.l0.w");
    REQUIRE(params.back().name == "temporal_inr.l1.b");
}
