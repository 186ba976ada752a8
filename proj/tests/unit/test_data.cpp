#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "xscene/data/patches.hpp"
#include "xscene/data/scene.hpp"
#include "xscene/data/synth.hpp"

using namespace xscene;
using namespace xscene::data;
namespace fs = std::filesystem;

namespace {

Scene make_scene(std::size_t h, std::size_t w, std::size_t b, std::vector<float> values) {
  Scene s;
  s.name = "t";
  s.height = h;
  s.width = w;
  s.bands = b;
  s.cube = Tensor<float>(Shape{h, w, b}, std::move(values));
  return s;
}

Scene ramp_scene(std::size_t h, std::size_t w, std::size_t b) {
  std::vector<float> v(h * w * b);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i) * 0.25f - 3.0f;
  return make_scene(h, w, b, std::move(v));
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("xscene_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

void write_floats(const fs::path& p, std::size_t count) {
  std::vector<float> v(count, 1.0f);
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void write_labels(const fs::path& p, const std::vector<std::uint16_t>& v) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(std::uint16_t)));
}

}  // namespace

TEST_CASE("reflect_index mirrors without repeating the edge") {
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(-2, 5) == 2);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(6, 5) == 2);
  CHECK(reflect_index(0, 5) == 0);
  CHECK(reflect_index(4, 5) == 4);
  CHECK(reflect_index(-1, 2) == 1);
  CHECK(reflect_index(2, 2) == 0);
  CHECK(reflect_index(-7, 1) == 0);
  for (long i = -20; i < 20; ++i) CHECK(reflect_index(i, 3) < 3);
}

TEST_CASE("patch on a 2x2 scene follows the mirror layout") {
  const float a = 1, b = 2, c = 3, d = 4;
  const Scene s = make_scene(2, 2, 1, {a, b, c, d});
  const Tensor<float> p = extract_patch(s, 0, 0, 3);
  const std::vector<float> expected{d, c, d, b, a, b, d, c, d};
  CHECK(p.shape() == Shape{3, 3, 1});
  CHECK(p.storage() == expected);
}

TEST_CASE("patch centre equals the pixel spectrum") {
  const Scene s = ramp_scene(7, 6, 3);
  for (std::size_t ps : {1u, 3u, 5u, 9u}) {
    for (std::size_t r = 0; r < s.height; ++r) {
      for (std::size_t c = 0; c < s.width; ++c) {
        const Tensor<float> p = extract_patch(s, r, c, ps);
        const std::size_t mid = ps / 2;
        for (std::size_t band = 0; band < s.bands; ++band) {
          CHECK(p[(mid * ps + mid) * s.bands + band] == s.at(r, c, band));
        }
      }
    }
  }
  const Tensor<float> single = extract_patch(s, 2, 3, 1);
  CHECK(single.shape() == Shape{1, 1, 3});
  CHECK(std::equal(single.ptr(), single.ptr() + 3, s.pixel(2, 3)));
}

TEST_CASE("patch errors") {
  const Scene s = ramp_scene(4, 4, 2);
  CHECK_THROWS_AS(extract_patch(s, 0, 0, 4), ConfigError);
  CHECK_THROWS_AS(extract_patch(s, 4, 0, 3), DataError);
  CHECK_THROWS_AS(extract_patch(s, 0, 9, 3), DataError);
}

TEST_CASE("normalization examples") {
  SUBCASE("minmax") {
    const Scene s = normalize_scene(make_scene(1, 3, 1, {2, 4, 6}), Normalization::MinMax);
    CHECK(s.cube.storage() == std::vector<float>{0.0f, 0.5f, 1.0f});
  }
  SUBCASE("constant band") {
    const Scene s = normalize_scene(make_scene(1, 3, 2, {5, 1, 5, 2, 5, 3}), Normalization::MinMax);
    CHECK(s.at(0, 0, 0) == 0.0f);
    CHECK(s.at(0, 1, 0) == 0.0f);
    CHECK(s.at(0, 2, 0) == 0.0f);
    CHECK(s.at(0, 2, 1) == 1.0f);
    const Scene z = normalize_scene(make_scene(1, 3, 2, {5, 1, 5, 2, 5, 3}), Normalization::ZScore);
    CHECK(z.at(0, 1, 0) == 0.0f);
  }
  SUBCASE("zscore") {
    const Scene s = normalize_scene(make_scene(1, 3, 1, {1, 2, 3}), Normalization::ZScore);
    const double k = std::sqrt(1.5);  // 1 / sqrt(2/3)
    CHECK(s.cube[0] == doctest::Approx(-k).epsilon(1e-6));
    CHECK(s.cube[1] == doctest::Approx(0.0));
    CHECK(s.cube[2] == doctest::Approx(k).epsilon(1e-6));
    CHECK(k == doctest::Approx(1.2247).epsilon(1e-4));
  }
  SUBCASE("none and names") {
    const Scene s = normalize_scene(make_scene(1, 3, 1, {1, 2, 3}), Normalization::None);
    CHECK(s.cube.storage() == std::vector<float>{1, 2, 3});
    CHECK(parse_normalization("zscore") == Normalization::ZScore);
    CHECK(normalization_name(Normalization::MinMax) == "minmax");
    CHECK_THROWS_AS(parse_normalization("bogus"), ConfigError);
  }
}

TEST_CASE("bundle round trip is bitwise") {
  const fs::path dir = scratch_dir("roundtrip");
  Scene s = ramp_scene(5, 4, 3);
  s.cube[7] = -0.0f;
  s.cube[8] = 1e-40f;  // subnormal
  s.name = "ramp";
  LabelMap l;
  l.height = 5;
  l.width = 4;
  l.labels = {0, 1, 2, 2, 0, 1, 1, 0, 0, 0, 2, 2, 2, 2, 0, 1, 0, 0, 0, 0};
  l.class_names = {"x", "y"};
  l.expected_counts = l.class_counts();
  save_scene(dir, s, l);
  const SceneBundle back = load_scene(dir);
  CHECK(bitwise_equal(back.scene.cube, s.cube));
  CHECK(back.scene.name == "ramp");
  CHECK(back.labels.labels == l.labels);
  CHECK(back.labels.class_names == l.class_names);
  CHECK(back.labels.expected_counts == std::vector<std::size_t>{4, 6});
  fs::remove_all(dir);
}

TEST_CASE("bundle is band-sequential little-endian") {
  const fs::path dir = scratch_dir("bsq");
  write_text(dir / "meta.json", R"({"height":1,"width":2,"bands":2,"dtype":"f32","layout":"bsq"})");
  {
    const float vals[4] = {1.0f, 2.0f, 10.0f, 20.0f};  // band 0 px0, px1, band 1 px0, px1
    std::ofstream out(dir / "cube.bin", std::ios::binary);
    out.write(reinterpret_cast<const char*>(vals), sizeof(vals));
  }
  write_labels(dir / "gt.bin", {1, 0});
  const SceneBundle b = load_scene(dir);
  CHECK(b.scene.at(0, 0, 0) == 1.0f);
  CHECK(b.scene.at(0, 1, 0) == 2.0f);
  CHECK(b.scene.at(0, 0, 1) == 10.0f);
  CHECK(b.scene.at(0, 1, 1) == 20.0f);
  CHECK(b.labels.num_classes() == 1);
  fs::remove_all(dir);
}

TEST_CASE("bundle errors") {
  const fs::path dir = scratch_dir("errors");
  write_text(dir / "meta.json", R"({"height":10,"width":10,"bands":4,"dtype":"f32","layout":"bsq"})");
  write_labels(dir / "gt.bin", std::vector<std::uint16_t>(100, 0));

  SUBCASE("missing file names the path") {
    try {
      load_scene(dir);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("cube.bin") != std::string::npos);
    }
  }
  SUBCASE("shape mismatch 399 vs 400") {
    write_floats(dir / "cube.bin", 399);
    try {
      load_scene(dir);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("shape mismatch") != std::string::npos);
      CHECK(std::string(e.what()).find("399") != std::string::npos);
    }
  }
  SUBCASE("unknown dtype") {
    write_floats(dir / "cube.bin", 400);
    write_text(dir / "meta.json", R"({"height":10,"width":10,"bands":4,"dtype":"f16","layout":"bsq"})");
    CHECK_THROWS_AS(load_scene(dir), DataError);
  }
  SUBCASE("label above class count") {
    write_floats(dir / "cube.bin", 400);
    std::vector<std::uint16_t> labels(100, 1);
    labels[42] = 3;
    write_labels(dir / "gt.bin", labels);
    write_text(dir / "classes.json", R"({"names":["a","b"]})");
    CHECK_THROWS_AS(load_scene(dir), DataError);
  }
  SUBCASE("manifest count disagreement") {
    write_floats(dir / "cube.bin", 400);
    write_labels(dir / "gt.bin", std::vector<std::uint16_t>(100, 1));
    write_text(dir / "classes.json", R"({"names":["a","b"],"counts":[99,1]})");
    CHECK_THROWS_AS(load_scene(dir), DataError);
  }
  fs::remove_all(dir);
}

TEST_CASE("enumerate_labeled") {
  LabelMap empty{2, 2, {0, 0, 0, 0}, {}, {}};
  CHECK(enumerate_labeled(empty).empty());

  LabelMap three{1, 3, {0, 2, 2}, {}, {}};
  const auto refs = enumerate_labeled(three);
  REQUIRE(refs.size() == 2);
  CHECK(refs[0] == SampleRef{0, 1, 2});
  CHECK(refs[1] == SampleRef{0, 2, 2});
  const auto groups = group_by_class(refs, 2);
  CHECK(groups[0].empty());
  CHECK(groups[1].size() == 2);
}

TEST_CASE("batch_stream") {
  std::vector<SampleRef> refs;
  for (std::size_t i = 0; i < 1000; ++i) refs.push_back({i / 40, i % 40, std::uint16_t(1)});

  SUBCASE("250 refs give two full batches") {
    const std::span<const SampleRef> first(refs.data(), 250);
    const auto batches = batch_stream(first, 100, 3, 0);
    REQUIRE(batches.size() == 2);
    CHECK(batches[0].size() == 100);
    CHECK(batches[1].size() == 100);
    CHECK(batch_stream(first, 100, 3, 0, false).size() == 3);
  }
  SUBCASE("same seed and epoch reproduce the order") {
    CHECK(batch_stream(refs, 64, 11, 4) == batch_stream(refs, 64, 11, 4));
  }
  SUBCASE("epochs differ") {
    const auto e0 = batch_stream(refs, 1000, 11, 0);
    const auto e1 = batch_stream(refs, 1000, 11, 1);
    CHECK(e0 != e1);
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& r : e1[0]) seen.insert({r.row, r.col});
    CHECK(seen.size() == 1000);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(batch_stream({}, 10, 0, 0), DataError);
    CHECK_THROWS_AS(batch_stream(refs, 0, 0, 0), ConfigError);
  }
  SUBCASE("cycling stream wraps to a new epoch") {
    CyclingStream stream({refs.begin(), refs.begin() + 250}, 100, 5);
    stream.next();
    stream.next();
    CHECK(stream.epoch() == 0);
    stream.next();
    CHECK(stream.epoch() == 1);
    CyclingStream tiny({refs.begin(), refs.begin() + 30}, 100, 5);
    CHECK(tiny.next().size() == 30);
  }
}

TEST_CASE("make_batch") {
  const Scene s = ramp_scene(6, 6, 2);
  const std::vector<SampleRef> refs{{1, 1, 2}, {5, 0, 1}};
  const PatchBatch batch = make_batch(s, refs, 3);
  CHECK(batch.patches.shape() == Shape{2, 3, 3, 2});
  CHECK(batch.labels == std::vector<int>{1, 0});
  const Tensor<float> second = extract_patch(s, 5, 0, 3);
  CHECK(std::equal(second.ptr(), second.ptr() + second.size(), batch.patches.ptr() + 18));

  const auto unl = enumerate_all(2, 3);
  CHECK(unl.size() == 6);
  CHECK_FALSE(make_batch(s, unl, 3).labeled());
}

TEST_CASE("subsample is seeded and ordered") {
  const auto all = enumerate_all(20, 20);
  const auto a = subsample(all, 50, 1);
  CHECK(a.size() == 50);
  CHECK(a == subsample(all, 50, 1));
  CHECK(a != subsample(all, 50, 2));
  CHECK(std::is_sorted(a.begin(), a.end(), [](auto& x, auto& y) { return x.row * 20 + x.col < y.row * 20 + y.col; }));
  CHECK(subsample(all, 0, 1).size() == 400);
}

namespace {

// class-conditional per-band means straight from the cube
std::vector<std::vector<double>> class_means(const SceneBundle& b, std::size_t classes, std::vector<std::size_t>& n) {
  std::vector<std::vector<double>> m(classes, std::vector<double>(b.scene.bands, 0.0));
  n.assign(classes, 0);
  for (std::size_t r = 0; r < b.scene.height; ++r) {
    for (std::size_t c = 0; c < b.scene.width; ++c) {
      const auto l = b.labels.at(r, c) - 1;
      ++n[l];
      for (std::size_t band = 0; band < b.scene.bands; ++band) m[l][band] += b.scene.at(r, c, band);
    }
  }
  for (std::size_t k = 0; k < classes; ++k) {
    for (auto& v : m[k]) v /= static_cast<double>(n[k]);
  }
  return m;
}

}  // namespace

TEST_CASE("synthetic pair: identity shift without noise") {
  SynthParams p;
  p.shift = ShiftSpec::identity();
  p.noise_sigma = 0.0;
  const DomainPair d = synth_domain_pair(p);
  std::vector<std::size_t> ns, nt;
  CHECK(class_means(d.source, p.num_classes, ns) == class_means(d.target, p.num_classes, nt));
  CHECK(ns == nt);
}

TEST_CASE("synthetic pair: gain and offset") {
  SynthParams p;
  p.shift = ShiftSpec::uniform(1.3, 0.1);
  p.noise_sigma = 0.05;
  p.seed = 17;
  const DomainPair d = synth_domain_pair(p);
  std::vector<std::size_t> ns, nt;
  const auto ms = class_means(d.source, p.num_classes, ns);
  const auto mt = class_means(d.target, p.num_classes, nt);
  for (std::size_t c = 0; c < p.num_classes; ++c) {
    // mt - 1.3 ms - 0.1 has variance sigma^2 (1 + 1.69) / n
    const double tol = 3.0 * p.noise_sigma * std::sqrt(1.0 + 1.69) / std::sqrt(static_cast<double>(ns[c]));
    for (std::size_t b = 0; b < p.bands; ++b) CHECK(std::abs(mt[c][b] - (1.3 * ms[c][b] + 0.1)) < tol);
  }
}

TEST_CASE("synthetic pair: seeds and layout") {
  SynthParams p;
  p.seed = 1;
  const DomainPair a = synth_domain_pair(p);
  const DomainPair a2 = synth_domain_pair(p);
  p.seed = 2;
  const DomainPair b = synth_domain_pair(p);
  CHECK(bitwise_equal(a.source.scene.cube, a2.source.scene.cube));
  CHECK(bitwise_equal(a.target.scene.cube, a2.target.scene.cube));
  CHECK_FALSE(bitwise_equal(a.source.scene.cube, b.source.scene.cube));
  CHECK(a.source.labels.labels == b.source.labels.labels);
  CHECK(a.source.labels.class_counts() == b.target.labels.class_counts());
  CHECK(a.source.labels.num_classes() == p.num_classes);

  const auto protos = class_prototypes(p.num_classes, p.bands);
  for (std::size_t i = 0; i < protos.size(); ++i) {
    for (std::size_t j = i + 1; j < protos.size(); ++j) CHECK(protos[i] != protos[j]);
  }
}

TEST_CASE("synthetic pair: parameter errors and bundle round trip") {
  SynthParams p;
  p.shift = ShiftSpec::uniform(0.0, 0.1);
  CHECK_THROWS_AS(synth_domain_pair(p), ConfigError);
  p.shift = ShiftSpec::identity();
  p.num_classes = 1;
  CHECK_THROWS_AS(synth_domain_pair(p), ConfigError);
  p.num_classes = 3;
  p.bands = 1;
  CHECK_THROWS_AS(synth_domain_pair(p), ConfigError);
  p.bands = 4;
  p.shift.gain = {1.0, 2.0};
  CHECK_THROWS_AS(synth_domain_pair(p), ConfigError);

  p.shift = ShiftSpec{{1.0, 1.1, 0.9, 1.2}, {0.0}};
  const DomainPair d = synth_domain_pair(p);
  const fs::path dir = scratch_dir("synth");
  save_scene(dir / "target", d.target.scene, d.target.labels);
  const SceneBundle back = load_scene(dir / "target");
  CHECK(bitwise_equal(back.scene.cube, d.target.scene.cube));
  CHECK(back.labels.class_counts() == d.target.labels.class_counts());
  fs::remove_all(dir);
}
