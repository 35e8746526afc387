#include "lsm/common.hpp"
#include "lsm/grid.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace lsm;

namespace {

const char* kTwoByTwo =
    "ncols 2\n"
    "nrows 2\n"
    "xllcorner 0\n"
    "yllcorner 0\n"
    "cellsize 30\n"
    "NODATA_value -9999\n"
    "1 2\n"
    "3 4\n";

// z = a*x + b*y on cell centres.
Grid plane(std::size_t n, double a, double b, double cellsize = 30.0) {
  GridHeader h;
  h.nrows = h.ncols = n;
  h.cellsize = cellsize;
  Grid g(h, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) g.at(r, c) = a * h.center_x(c) + b * h.center_y(r);
  return g;
}

} // namespace

TEST_SUITE("grid") {

TEST_CASE("parse a 2x2 grid") {
  const Grid g = parse_ascii_grid(kTwoByTwo);
  CHECK(g.nrows() == 2);
  CHECK(g.ncols() == 2);
  CHECK(g.nodata() == -9999.0);
  CHECK(std::vector<double>(g.values().begin(), g.values().end()) == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("header keys are case-insensitive and unordered") {
  const Grid g = parse_ascii_grid("NROWS 1\nCellSize 10\nNCOLS 2\nnodata_value -1\nXLLCORNER 5\nyllcorner 6\n7 -1\n");
  CHECK(g.ncols() == 2);
  CHECK(g.header().xll == 5.0);
  CHECK(g.valid(0, 0));
  CHECK_FALSE(g.valid(0, 1));
}

TEST_CASE("parse errors carry line numbers") {
  std::string short_body = kTwoByTwo;
  short_body.replace(short_body.find("3 4"), 3, "3");
  CHECK_THROWS_WITH_AS(parse_ascii_grid(short_body, "f.asc"), doctest::Contains("expected 4 values, found 3"),
                       ValidationError);
  std::string bad_key = kTwoByTwo;
  bad_key.replace(0, 5, "ncolz");
  CHECK_THROWS_WITH_AS(parse_ascii_grid(bad_key, "f.asc"), doctest::Contains("f.asc:1"), ValidationError);
  std::string bad_token = kTwoByTwo;
  bad_token.replace(bad_token.find("3 4"), 3, "3 x");
  CHECK_THROWS_WITH_AS(parse_ascii_grid(bad_token, "f.asc"), doctest::Contains("f.asc:8"), ValidationError);
}

TEST_CASE("write then read round-trips seeded grids") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Grid g = testing::random_grid(50, 50, seed, -100, 100);
    g.at(3, 4) = g.nodata();
    const Grid back = parse_ascii_grid(format_ascii_grid(g));
    CHECK(back.header().ncols == g.header().ncols);
    CHECK(back.header().nodata == g.header().nodata);
    for (std::size_t k = 0; k < g.header().cell_count(); ++k) CHECK(back.values()[k] == g.values()[k]);
  }
}

TEST_CASE("writer output") {
  const Grid zero = testing::constant_grid(1, 1, 0.0);
  const std::string text = format_ascii_grid(zero);
  std::size_t lines = 0;
  for (char ch : text) lines += ch == '\n';
  CHECK(lines == 7);
  CHECK(text.substr(text.rfind('\n', text.size() - 2) + 1) == "0\n");

  Grid g = testing::random_grid(10, 10, 9);
  g.at(0, 0) = std::nan("");
  const std::string a = format_ascii_grid(g), b = format_ascii_grid(g);
  CHECK(fnv1a64(a) == fnv1a64(b));
  CHECK(a.find("\n-9999 ") != std::string::npos);

  const auto dir = testing::scratch_dir("grid_io");
  write_ascii_grid(g, dir / "g.asc");
  CHECK(read_text_file(dir / "g.asc") == a);
  CHECK_THROWS(write_ascii_grid(g, dir / "g.asc" / "sub" / "x.asc"));
}

TEST_CASE("resample") {
  SUBCASE("identity template") {
    Grid g = testing::random_grid(7, 9, 4);
    g.at(2, 2) = g.nodata();
    for (auto m : {ResampleMethod::nearest, ResampleMethod::bilinear}) {
      const Grid r = resample(g, g.header(), m);
      for (std::size_t k = 0; k < g.header().cell_count(); ++k) CHECK(r.values()[k] == g.values()[k]);
    }
  }
  SUBCASE("bilinear midway between rows") {
    GridHeader h;
    h.nrows = h.ncols = 2;
    h.cellsize = 10;
    const Grid g(h, std::vector<double>{0, 0, 10, 10});
    GridHeader t = h;
    t.nrows = t.ncols = 1;
    t.cellsize = 10;
    t.xll = 0;
    t.yll = 5;  // centre at (5, 10): between the two row centres
    CHECK(resample(g, t, ResampleMethod::bilinear).at(0, 0) == doctest::Approx(5.0).epsilon(1e-12));
  }
  SUBCASE("bilinear never reads across nodata") {
    GridHeader h;
    h.nrows = h.ncols = 2;
    h.cellsize = 10;
    const Grid g(h, std::vector<double>{0, h.nodata, 10, 10});
    GridHeader t = h;
    t.nrows = t.ncols = 1;
    t.xll = 5;
    t.yll = 5;
    CHECK_FALSE(resample(g, t, ResampleMethod::bilinear).valid(0, 0));
  }
  SUBCASE("nearest keeps categories") {
    GridHeader h;
    h.nrows = h.ncols = 20;
    Grid g(h, 1.0);
    lsm::Rng rng(3);
    for (auto& v : g.values()) v = rng.uniform() < 0.5 ? 1.0 : 2.0;
    GridHeader t = h;
    t.nrows = t.ncols = 10;
    t.cellsize = 60;
    const Grid r = resample(g, t, ResampleMethod::nearest);
    for (double v : r.values()) CHECK((v == 1.0 || v == 2.0));
  }
  SUBCASE("disjoint template") {
    Grid g = testing::random_grid(4, 4, 1);
    GridHeader t = g.header();
    t.xll = 1e6;
    CHECK_THROWS_AS(resample(g, t, ResampleMethod::nearest), ValidationError);
  }
  SUBCASE("resampled grids always stack") {
    GridHeader t;
    t.nrows = 6;
    t.ncols = 5;
    t.cellsize = 25;
    t.xll = 3;
    const Grid a = resample(testing::random_grid(8, 8, 1), t, ResampleMethod::bilinear);
    const Grid b = resample(testing::random_grid(9, 7, 2), t, ResampleMethod::nearest);
    CHECK_NOTHROW(stack({a, b}, {"a", "b"}));
  }
}

TEST_CASE("stack") {
  const Grid g = testing::random_grid(3, 3, 1);
  CHECK(stack({g}, {"only"}).band_count() == 1);

  Grid other = testing::constant_grid(3, 3, 1.0, 25.0);
  CHECK_THROWS_WITH_AS(stack({g, other}, {"a", "b"}), doctest::Contains("cellsize"), ValidationError);
  CHECK_THROWS_AS(stack({g, g}, {"a", "a"}), ValidationError);

  std::vector<Grid> many;
  std::vector<std::string> names;
  for (int i = 0; i < 14; ++i) {
    many.push_back(testing::random_grid(5, 5, 100 + i));
    names.push_back("f" + std::to_string(i));
  }
  const GridStack s = stack(many, names);
  CHECK(s.band_count() == 14);
  CHECK(s.band_names()[13] == "f13");
  CHECK(s.band(13).at(2, 2) == many[13].at(2, 2));
}

TEST_CASE("terrain on a constant surface") {
  const GridStack t = derive_terrain(testing::constant_grid(8, 8, 100.0));
  REQUIRE(t.band_names() == terrain_band_names());
  for (std::size_t r = 1; r < 7; ++r)
    for (std::size_t c = 1; c < 7; ++c) {
      CHECK(t.band(1).at(r, c) == 0.0);
      CHECK(t.band(4).at(r, c) == 0.0);
      CHECK_FALSE(t.band(2).valid(r, c));  // flat: aspect undefined
    }
  for (std::size_t c = 0; c < 8; ++c) {
    CHECK_FALSE(t.band(0).valid(0, c));
    CHECK_FALSE(t.band(6).valid(7, c));
  }
}

TEST_CASE("terrain on a plane rising east") {
  const std::size_t n = 9;
  const GridStack t = derive_terrain(plane(n, 1.0, 0.0));
  for (std::size_t r = 1; r + 1 < n; ++r)
    for (std::size_t c = 1; c + 1 < n; ++c) {
      CHECK(t.band(1).at(r, c) == doctest::Approx(45.0).epsilon(1e-12));
      CHECK(t.band(2).at(r, c) == doctest::Approx(270.0).epsilon(1e-12));
      CHECK(t.band(3).at(r, c) == doctest::Approx(0.0));
      // D8 flow runs west along the row, so the area counts the cells to the east.
      const double area = static_cast<double>(n - c) * 30.0;
      CHECK(t.band(5).at(r, c) == doctest::Approx(area).epsilon(1e-12));
      CHECK(t.band(6).at(r, c) == doctest::Approx(std::log(area)).epsilon(1e-12));
    }
}

TEST_CASE("terrain aspect points downslope") {
  // Rising north: water runs south, aspect 180.
  const GridStack t = derive_terrain(plane(5, 0.0, 0.5));
  CHECK(t.band(2).at(2, 2) == doctest::Approx(180.0));
  CHECK(t.band(1).at(2, 2) == doctest::Approx(std::atan(0.5) * 180.0 / M_PI));
}

TEST_CASE("terrain pit and nodata") {
  Grid dem = testing::constant_grid(7, 7, 10.0);
  dem.at(3, 3) = 9.0;
  const GridStack t = derive_terrain(dem);
  CHECK(t.band(4).at(3, 3) == doctest::Approx(1.0));
  CHECK(t.band(3).at(3, 3) == 0.0);  // zero gradient at the pit centre

  Grid holed = testing::random_grid(7, 7, 5, 0, 50);
  holed.at(3, 3) = holed.nodata();
  const GridStack th = derive_terrain(holed);
  for (std::size_t r = 2; r <= 4; ++r)
    for (std::size_t c = 2; c <= 4; ++c)
      for (std::size_t b = 0; b < th.band_count(); ++b) CHECK_FALSE(th.band(b).valid(r, c));
  CHECK(th.valid(1, 1));

  CHECK_THROWS_AS(derive_terrain(testing::constant_grid(2, 5, 1.0)), ValidationError);
}

TEST_CASE("terrain on random DEMs keeps nodata absorbing") {
  Grid dem = testing::random_grid(12, 12, 77, 0, 300);
  dem.at(5, 6) = dem.nodata();
  const GridStack t = derive_terrain(dem);
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t c = 0; c < 12; ++c) {
      const bool near_hole = r >= 4 && r <= 6 && c >= 5 && c <= 7;
      const bool border = r == 0 || c == 0 || r == 11 || c == 11;
      CHECK(t.valid(r, c) == !(near_hole || border));
      if (t.valid(r, c)) {
        CHECK(t.band(1).at(r, c) >= 0.0);
        CHECK(t.band(1).at(r, c) < 90.0);
        CHECK(t.band(2).at(r, c) >= 0.0);
        CHECK(t.band(2).at(r, c) < 360.0);
      }
    }
}

TEST_CASE("apply_mask") {
  std::vector<Grid> bands{testing::constant_grid(5, 5, 2.0), testing::constant_grid(5, 5, 3.0)};
  const GridStack s = stack(bands, {"a", "b"});
  const GridStack same = apply_mask(s, testing::constant_grid(5, 5, 1.0));
  CHECK(same.valid_count() == 25);
  CHECK(apply_mask(s, testing::constant_grid(5, 5, 0.0)).valid_count() == 0);

  Grid checker = testing::constant_grid(5, 5, 0.0);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) checker.at(r, c) = (r + c) % 2 == 0 ? 1.0 : 0.0;
  const GridStack m = apply_mask(s, checker);
  CHECK(m.valid_count() == 13);
  CHECK(m.band(1).at(0, 0) == 3.0);
  CHECK_FALSE(m.band(0).valid(0, 1));

  CHECK_THROWS_AS(apply_mask(s, testing::constant_grid(5, 4, 1.0)), ValidationError);
}

}
