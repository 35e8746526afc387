#include "lsm/common.hpp"
#include "lsm/map.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace lsm;

namespace {

GridStack random_stack(std::size_t n, std::size_t p, std::uint64_t seed) {
  std::vector<Grid> g;
  std::vector<std::string> names;
  for (std::size_t b = 0; b < p; ++b) {
    g.push_back(testing::random_grid(n, n, seed + b, -2, 2));
    names.push_back("b" + std::to_string(b));
  }
  return stack(g, names);
}

nn::Checkpoint checkpoint(nn::ModelSpec spec, const GridStack& s) {
  nn::Checkpoint ck;
  ck.spec = std::move(spec);
  ck.weights = nn::init_weights(ck.spec);
  std::vector<InventoryPoint> pts;
  for (std::size_t r = 0; r < s.header().nrows; r += 3)
    for (std::size_t c = 0; c < s.header().ncols; c += 3)
      if (s.valid(r, c)) pts.push_back({s.header().center_x(c), s.header().center_y(r), 1});
  ck.standardizer = fit_standardizer(feature_matrix(s, pts));
  return ck;
}

} // namespace

TEST_SUITE("map") {

TEST_CASE("class_of boundary rule") {
  const std::vector<double> b{0.2, 0.4, 0.6, 0.8};
  CHECK(class_of(0.2, b) == 1);
  CHECK(class_of(0.2000001, b) == 2);
  CHECK(class_of(-5.0, b) == 1);
  CHECK(class_of(0.8, b) == 4);
  CHECK(class_of(0.95, b) == 5);
  CHECK(class_of(0.5, {}) == 1);

  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.uniform();
    int scan = 1;
    for (std::size_t k = 0; k < b.size(); ++k)
      if (v > b[k]) scan = static_cast<int>(k) + 2;
    CHECK(class_of(v, b) == scan);
  }
}

TEST_CASE("classify keeps nodata and is monotone") {
  Grid scores = testing::random_grid(20, 20, 3);
  scores.at(4, 4) = scores.nodata();
  const std::vector<double> b{0.1, 0.3, 0.5, 0.9};
  const Grid cls = classify(scores, b);
  CHECK_FALSE(cls.valid(4, 4));
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t k = 0; k < scores.header().cell_count(); ++k)
    if (scores.is_valid_value(scores.values()[k])) pairs.push_back({scores.values()[k], cls.values()[k]});
  std::sort(pairs.begin(), pairs.end());
  for (std::size_t i = 1; i < pairs.size(); ++i) CHECK(pairs[i].second >= pairs[i - 1].second);
  CHECK_THROWS_AS(classify(scores, std::vector<double>{0.5, 0.4}), ValidationError);
}

TEST_CASE("jenks examples") {
  std::vector<double> two;
  for (int i = 0; i <= 10; ++i) {
    two.push_back(0.01 * i);
    two.push_back(0.9 + 0.01 * i);
  }
  const auto r = jenks_breaks(two, 2);
  REQUIRE(r.breaks.size() == 1);
  CHECK(r.breaks[0] >= 0.1);
  CHECK(r.breaks[0] < 0.9);
  CHECK(jenks_breaks(two, 1).breaks.empty());
  CHECK_THROWS_AS(jenks_breaks(std::vector<double>{1, 1, 2}, 3), ValidationError);
}

TEST_CASE("jenks matches exhaustive search") {
  Rng rng(17);
  for (int t = 0; t < 60; ++t) {
    const std::size_t n = 5 + rng.index(26);
    const std::size_t k = 2 + rng.index(4);
    std::vector<double> v(n);
    for (auto& x : v) x = t % 3 == 0 ? std::floor(rng.uniform() * 12.0) : rng.uniform();
    std::vector<double> distinct = v;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < k) continue;
    const auto r = jenks_breaks(v, k);
    CHECK(r.breaks.size() == k - 1);
    const double dp = within_class_ssd(v, r.breaks);
    const double best = oracle::jenks_exhaustive(v, k);
    CHECK(dp == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("jenks subsampling is seeded") {
  Rng rng(2);
  std::vector<double> v(5000);
  for (auto& x : v) x = rng.uniform();
  const auto a = jenks_breaks(v, 5, 500, 7);
  CHECK(a.sample_size == 500);
  CHECK(a.breaks == jenks_breaks(v, 5, 500, 7).breaks);
  CHECK(a.to_json().find("\"cap\": 500") != std::string::npos);
  CHECK(jenks_breaks(v, 5, 10000, 7).sample_size == 5000);
}

TEST_CASE("occupancy") {
  GridHeader h;
  h.nrows = 1;
  h.ncols = 6;
  const Grid cls(h, std::vector<double>{1, 2, 3, 4, 5, h.nodata});
  std::vector<InventoryPoint> pts;
  for (std::size_t c = 0; c < 5; ++c) pts.push_back({h.center_x(c), h.center_y(0), 1});
  const auto even = occupancy(cls, pts);
  for (double p : even.percent) CHECK(p == doctest::Approx(20.0));

  const auto top = occupancy(cls, {{h.center_x(4), h.center_y(0), 1}, {h.center_x(4), h.center_y(0), 1}});
  CHECK(top.percent[4] == 100.0);

  pts.push_back({h.center_x(5), h.center_y(0), 1});
  pts.push_back({-100.0, 0.0, 1});
  const auto r = occupancy(cls, pts);
  CHECK(r.unclassified == 2);
  std::size_t sum = r.unclassified;
  for (auto c : r.counts) sum += c;
  CHECK(sum == pts.size());
  double pct = 0.0;
  for (double p : r.percent) pct += p;
  CHECK(std::abs(pct - 100.0) < 1e-9);
  CHECK(r.to_csv().rfind("class,", 0) == 0);
}

TEST_CASE("raster inference matches the sampled inputs") {
  const GridStack raw = random_stack(16, 3, 50);
  SUBCASE("vector model") {
    const nn::Checkpoint ck = checkpoint(nn::build_cnn1d(3, 4), raw);
    const Grid scores = infer_raster(ck, raw, nullptr);
    const GridStack ready = standardize_stack(raw, *ck.standardizer);
    CHECK(scores.valid_count() == 256);
    std::vector<std::vector<double>> inputs;
    for (std::size_t c = 0; c < 16; ++c) inputs.push_back(extract_vector(ready, {raw.header().center_x(c), raw.header().center_y(c), 1}));
    const auto pred = nn::predict_batch(ck, inputs);
    for (std::size_t c = 0; c < 16; ++c) CHECK(std::abs(scores.at(c, c) - pred[c]) < 1e-12);
  }
  SUBCASE("patch model, tiled") {
    const nn::Checkpoint ck = checkpoint(nn::build_cnn2d(5, 5, 3, 9), raw);
    const Grid single = infer_raster(ck, raw, nullptr, 1);
    const Grid tiled = infer_raster(ck, raw, nullptr, 4);
    CHECK(format_ascii_grid(single) == format_ascii_grid(tiled));
    CHECK(single.valid_count() == 12 * 12);
    CHECK_FALSE(single.valid(1, 8));
    const GridStack ready = standardize_stack(raw, *ck.standardizer);
    const InventoryPoint p{raw.header().center_x(7), raw.header().center_y(9), 1};
    const auto pred = nn::predict_batch(ck, {extract_patch(ready, p, 5).data});
    CHECK(std::abs(single.at(9, 7) - pred[0]) < 1e-12);
  }
  SUBCASE("constant stack gives a constant map") {
    std::vector<Grid> g{testing::constant_grid(10, 10, 1.0), testing::constant_grid(10, 10, 2.0)};
    const GridStack flat = stack(g, {"a", "b"});
    nn::Checkpoint ck;
    ck.spec = nn::build_cnn2d(3, 3, 2, 1);
    ck.weights = nn::init_weights(ck.spec);
    const Grid s = infer_raster(ck, flat, nullptr);
    CHECK(s.valid_count() == 64);
    for (double v : s.values())
      if (s.is_valid_value(v)) CHECK(v == s.at(1, 1));
  }
  SUBCASE("mismatches") {
    const nn::Checkpoint ck = checkpoint(nn::build_cnn1d(3, 4), raw);
    const GridStack two = stack({raw.band(0), raw.band(1)}, {"a", "b"});
    CHECK_THROWS_WITH_AS(infer_raster(ck, two, nullptr), doctest::Contains("band-count"), ValidationError);
    nn::Checkpoint with_pca = ck;
    with_pca.pca_hash = "abc";
    CHECK_THROWS_AS(infer_raster(with_pca, raw, nullptr), ValidationError);
  }
}

TEST_CASE("build_map ties the pieces together") {
  Grid scores = testing::random_grid(30, 30, 8);
  scores.at(0, 0) = scores.nodata();
  const SusceptibilityMap m = build_map(scores, 5, 10000, 3);
  CHECK(m.jenks.breaks.size() == 4);
  CHECK_FALSE(m.classes.valid(0, 0));
  for (std::size_t k = 1; k < 900; ++k)
    CHECK(m.classes.values()[k] == class_of(scores.values()[k], m.jenks.breaks));
}

}
