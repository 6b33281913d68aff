#include "hccnet/augment.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace hccnet;

namespace {

// Chi-square statistic of observed counts against a uniform expectation.
double chi_square(const std::vector<int>& counts) {
  double total = 0.0;
  for (int c : counts) total += c;
  const double expected = total / double(counts.size());
  double chi = 0.0;
  for (int c : counts) chi += (c - expected) * (c - expected) / expected;
  return chi;
}

Volume coordinate_volume(Index n) {
  Volume v(1, {n, n, n});
  for (Index z = 0; z < n; ++z)
    for (Index y = 0; y < n; ++y)
      for (Index x = 0; x < n; ++x) v.at(0, z, y, x) = float(z * 10000 + y * 100 + x);
  return v;
}

StudyVisit visit_with_series(int count, Dims3 dims, Rng& rng) {
  StudyVisit v;
  for (int i = 0; i < count; ++i) {
    v.series.push_back(testing::random_volume(1, dims, rng));
    v.series_labels.push_back("s" + std::to_string(i));
  }
  return v;
}

std::vector<float> sorted_values(const Volume& v) {
  std::vector<float> out(v.data.data(), v.data.data() + v.data.size());
  std::sort(out.begin(), out.end());
  return out;
}

AugmentConfig no_augmentation() {
  AugmentConfig c;
  c.p_flip = c.p_rot90 = c.p_intensity = 0.0;
  return c;
}

}  // namespace

TEST_SUITE("augment") {

TEST_CASE("random crop origin is uniform over valid positions") {
  const Volume v = coordinate_volume(72);
  Rng rng(11);
  std::vector<int> z(25), y(25), x(25);
  for (int i = 0; i < 10000; ++i) {
    const Volume c = random_crop(v, 48, rng);
    REQUIRE(c.dims == Dims3{48, 48, 48});
    const auto code = Index(c.at(0, 0, 0, 0));
    ++z[std::size_t(code / 10000)];
    ++y[std::size_t(code / 100 % 100)];
    ++x[std::size_t(code % 100)];
  }
  // 24 degrees of freedom, 0.1% critical value 51.18.
  CHECK(chi_square(z) < 51.18);
  CHECK(chi_square(y) < 51.18);
  CHECK(chi_square(x) < 51.18);
}

TEST_CASE("crop edge cases") {
  Rng rng(1);
  const Volume v = coordinate_volume(9);
  CHECK(random_crop(v, 9, rng) == v);
  CHECK_THROWS(random_crop(v, 12, rng));
  Volume big(1, {72, 72, 72});
  CHECK_THROWS(random_crop(big, 96, rng));
  const Volume c = central_crop(coordinate_volume(10), 3);
  CHECK(c.at(0, 0, 0, 0) == float(3 * 10000 + 3 * 100 + 3));
}

TEST_CASE("series sampling is uniform and unmodified") {
  Rng rng(5);
  const StudyVisit visit = visit_with_series(4, {3, 3, 3}, rng);
  std::vector<int> counts(4);
  for (int i = 0; i < 10000; ++i) {
    const Volume s = sample_series(visit, rng);
    int hit = -1;
    for (int k = 0; k < 4; ++k)
      if (s == visit.series[std::size_t(k)]) hit = k;
    REQUIRE(hit >= 0);
    ++counts[std::size_t(hit)];
  }
  for (int c : counts) CHECK(std::abs(c / 10000.0 - 0.25) <= 0.02);

  const StudyVisit one = visit_with_series(1, {3, 3, 3}, rng);
  for (int i = 0; i < 10; ++i) CHECK(sample_series(one, rng) == one.series.front());
}

TEST_CASE("stacking keeps series order") {
  Rng rng(2);
  const StudyVisit visit = visit_with_series(4, {3, 6, 3}, rng);
  const Volume s = stack_series(visit);
  CHECK(s.channels == 4);
  for (Index c = 0; c < 4; ++c) CHECK(s.channel(c) == visit.series[std::size_t(c)].data);
  const StudyVisit one = visit_with_series(1, {3, 3, 3}, rng);
  CHECK(stack_series(one) == one.series.front());

  StudyVisit bad = visit;
  bad.series[1] = Volume(1, {3, 3, 3});
  CHECK_THROWS_AS(stack_series(bad), ShapeError);
}

TEST_CASE("intensity shift and scale") {
  Rng rng(9);
  Volume v = testing::random_volume(1, {3, 3, 3}, rng);
  AugmentConfig cfg;
  cfg.scale_range = {1.0, 1.0};
  cfg.shift_range = {0.0, 0.0};
  CHECK(intensity_shift_scale(v, cfg, rng) == v);

  Volume ones(1, {3, 3, 3});
  ones.data.setOnes();
  cfg.scale_range = {1.1, 1.1};
  const Volume scaled = intensity_shift_scale(ones, cfg, rng);
  for (Index i = 0; i < scaled.data.size(); ++i) CHECK(scaled.data[i] == doctest::Approx(1.1).epsilon(1e-6));

  // Scale factor is uniform on [0.9, 1.1]: 10 bins, 9 dof, 0.1% critical 27.88.
  AugmentConfig jitter;
  jitter.shift_range = {0.0, 0.0};
  std::vector<int> bins(10);
  for (int i = 0; i < 10000; ++i) {
    const double a = intensity_shift_scale(ones, jitter, rng).data[0];
    REQUIRE(a >= 0.9 - 1e-6);
    REQUIRE(a <= 1.1 + 1e-6);
    ++bins[std::min<std::size_t>(9, std::size_t((a - 0.9) / 0.02))];
  }
  CHECK(chi_square(bins) < 27.88);
}

TEST_CASE("flips and rotations permute voxels") {
  Rng rng(4);
  const Volume v = testing::random_volume(2, {6, 6, 6}, rng);
  for (int axis = 0; axis < 3; ++axis) {
    CHECK(flip(flip(v, axis), axis) == v);
    CHECK(rot90(rot90(rot90(rot90(v, axis, 1), axis, 1), axis, 1), axis, 1) == v);
    CHECK(rot90(rot90(v, axis, 1), axis, -1) == v);
    CHECK_FALSE(rot90(v, axis, 1) == v);
  }
  const auto reference = sorted_values(v);
  AugmentConfig cfg;
  cfg.p_flip = 0.5;
  cfg.p_rot90 = 1.0;
  for (int i = 0; i < 50; ++i) {
    const Volume out = random_flip_rot90(v, cfg, rng);
    CHECK(sorted_values(out) == reference);
    CHECK(out.data.sum() == doctest::Approx(v.data.sum()));
  }
  Volume flat(1, {3, 6, 6});
  CHECK_THROWS_AS(random_flip_rot90(flat, cfg, rng), ShapeError);
}

TEST_CASE("multi-crop geometry") {
  Rng rng(8);
  const StudyVisit visit = visit_with_series(4, {24, 24, 24}, rng);
  const MultiCropViews views = multi_crop(visit, AugmentConfig{}, rng, ViewSpec::global(18), ViewSpec::local(12));
  CHECK(views.global.size() == 2);
  CHECK(views.local.size() == 2);
  for (const auto& g : views.global) {
    CHECK(g.dims == Dims3{18, 18, 18});
    CHECK(g.channels == 1);
  }
  for (const auto& l : views.local) {
    CHECK(l.dims == Dims3{12, 12, 12});
    CHECK(l.channels == 1);
  }
  CHECK_FALSE(views.global[0] == views.global[1]);

  const StudyVisit single = visit_with_series(1, {9, 9, 9}, rng);
  const MultiCropViews same = multi_crop(single, no_augmentation(), rng, ViewSpec::global(9), ViewSpec::local(9));
  for (const auto& view : {same.global[0], same.global[1], same.local[0], same.local[1]})
    CHECK(view == single.series.front());

  CHECK(ViewSpec::global().crop_size == 72);
  CHECK(ViewSpec::local().crop_size == 48);
}

TEST_CASE("sequence view stacks every series") {
  Rng rng(6);
  const StudyVisit visit = visit_with_series(4, {12, 12, 12}, rng);
  const Volume v = sequence_view(visit, 9, AugmentConfig{}, rng);
  CHECK(v.channels == 4);
  CHECK(v.dims == Dims3{9, 9, 9});
}

}  // TEST_SUITE
