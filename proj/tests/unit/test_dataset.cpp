#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <vector>

#include "octforce/dataset.hpp"
#include "octforce/streams.hpp"
#include "support/oracles.hpp"

using namespace octforce;
using data::DatasetHeader;
using data::SplitSpec;
using streams::SequenceSample;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("octforce_" + name)).string();
}

std::vector<SequenceSample> make_samples(std::size_t n, int t_s, int d_c, int stride,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SequenceSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    SequenceSample s;
    s.t_s = t_s;
    s.d_c = d_c;
    s.first_scan = i * static_cast<std::size_t>(stride);
    s.label = rng.uniform(0, 400);
    s.window.resize(static_cast<std::size_t>(t_s) * d_c);
    for (auto& v : s.window) v = static_cast<float>(rng.uniform(0, 1));
    out.push_back(std::move(s));
  }
  return out;
}

DatasetHeader make_header(const std::vector<SequenceSample>& samples, int stride) {
  DatasetHeader h;
  h.t_s = static_cast<std::uint32_t>(samples[0].t_s);
  h.d_c = static_cast<std::uint32_t>(samples[0].d_c);
  h.stride = static_cast<std::uint32_t>(stride);
  h.seed = 7;
  h.preset_name = "needle1";
  return h;
}

}  // namespace

TEST_CASE("save/load round-trips bit for bit", "[dataset]") {
  auto samples = make_samples(23, 5, 6, 2, 1);
  const auto path = temp_path("roundtrip.bin");
  data::save_dataset(samples, make_header(samples, 2), path);
  auto [header, loaded] = data::load_dataset(path);

  CHECK(header.t_s == 5);
  CHECK(header.d_c == 6);
  CHECK(header.stride == 2);
  CHECK(header.n_samples == 23);
  CHECK(header.preset_name == "needle1");
  CHECK(header.label_units == "mN");
  REQUIRE(loaded.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(std::memcmp(&loaded[i].label, &samples[i].label, sizeof(double)) == 0);
    REQUIRE(loaded[i].window.size() == samples[i].window.size());
    CHECK(std::memcmp(loaded[i].window.data(), samples[i].window.data(),
                      samples[i].window.size() * sizeof(float)) == 0);
    CHECK(loaded[i].first_scan == samples[i].first_scan);
  }
  std::filesystem::remove(path);
}

TEST_CASE("corrupted containers raise distinct errors", "[dataset]") {
  auto samples = make_samples(4, 3, 4, 1, 2);
  const auto path = temp_path("corrupt.bin");
  data::save_dataset(samples, make_header(samples, 1), path);

  auto bytes = [&]() {
    std::ifstream in(path, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  }();

  SECTION("bad magic") {
    auto mutated = bytes;
    mutated[0] = 'X';
    std::ofstream(path, std::ios::binary).write(mutated.data(), static_cast<std::streamsize>(mutated.size()));
    CHECK_THROWS_AS(data::load_dataset(path), BadMagicError);
  }
  SECTION("version mismatch") {
    auto mutated = bytes;
    mutated[8] = 99;
    std::ofstream(path, std::ios::binary).write(mutated.data(), static_cast<std::streamsize>(mutated.size()));
    CHECK_THROWS_AS(data::load_dataset(path), VersionMismatchError);
  }
  SECTION("truncated payload") {
    std::ofstream(path, std::ios::binary)
        .write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 1));
    CHECK_THROWS_AS(data::load_dataset(path), TruncatedFileError);
  }
  SECTION("trailing bytes") {
    auto mutated = bytes;
    mutated.push_back('\0');
    std::ofstream(path, std::ios::binary).write(mutated.data(), static_cast<std::streamsize>(mutated.size()));
    CHECK_THROWS_AS(data::load_dataset(path), DataError);
  }
  std::filesystem::remove(path);
}

TEST_CASE("a 90000-sample container loads intact", "[dataset]") {
  auto samples = make_samples(90000, 2, 3, 1, 3);
  const auto path = temp_path("large.bin");
  data::save_dataset(samples, make_header(samples, 1), path);
  auto [header, loaded] = data::load_dataset(path);
  CHECK(header.n_samples == 90000);
  CHECK(loaded.size() == 90000);
  CHECK(loaded.back().label == samples.back().label);
  std::filesystem::remove(path);
}

TEST_CASE("disjoint windows split exactly 64/16/20", "[dataset]") {
  const int t_s = 5;
  auto samples = make_samples(100, t_s, 4, /*stride=*/t_s, 4);
  auto splits = data::split(samples, SplitSpec{});
  CHECK(splits.train.size() == 64);
  CHECK(splits.val.size() == 16);
  CHECK(splits.test.size() == 20);
}

TEST_CASE("stride-1 splits drop exactly t_s - 1 windows at each cut", "[dataset]") {
  const int t_s = 6;
  const std::size_t n = 200;
  auto samples = make_samples(n, t_s, 4, /*stride=*/1, 5);
  auto splits = data::split(samples, SplitSpec{});
  const std::size_t cut1 = 128, cut2 = 160;  // floor(200*.64), floor(200*.8)
  CHECK(splits.train.size() == cut1);
  CHECK(splits.val.size() == cut2 - cut1 - (t_s - 1));
  CHECK(splits.test.size() == n - cut2 - (t_s - 1));

  // overlap oracle: collect every source-scan index per split, demand
  // pairwise-disjoint sets
  auto scan_set = [&](const std::vector<SequenceSample>& split) {
    std::set<std::size_t> s;
    for (const auto& w : split)
      for (int r = 0; r < w.t_s; ++r) s.insert(w.first_scan + static_cast<std::size_t>(r));
    return s;
  };
  auto a = scan_set(splits.train), b = scan_set(splits.val), c = scan_set(splits.test);
  for (auto i : b) CHECK(a.count(i) == 0);
  for (auto i : c) {
    CHECK(a.count(i) == 0);
    CHECK(b.count(i) == 0);
  }
}

TEST_CASE("a 90000-window stride-1 dataset yields 18000 test windows minus the cut", "[dataset]") {
  const int t_s = 3;
  auto samples = make_samples(90000, t_s, 2, 1, 6);
  auto splits = data::split(samples, SplitSpec{});
  CHECK(splits.test.size() == 18000 - (t_s - 1));
}

TEST_CASE("split rejects configurations that empty a block", "[dataset]") {
  auto samples = make_samples(3, 8, 4, 1, 7);
  CHECK_THROWS_AS(data::split(samples, SplitSpec{}), DataError);
  SplitSpec bad;
  bad.train_frac = 0.5;
  bad.val_frac = 0.2;
  bad.test_frac = 0.2;
  CHECK_THROWS_AS(data::split(make_samples(100, 2, 2, 2, 8), bad), InvalidArgument);
}

TEST_CASE("single-pass statistics match the two-pass oracle", "[dataset]") {
  auto samples = make_samples(60, 4, 7, 1, 9);
  auto st = data::stats(samples);
  for (int j = 0; j < 7; ++j) {
    std::vector<double> xs;
    for (const auto& s : samples)
      for (int r = 0; r < 4; ++r) xs.push_back(s.window[static_cast<std::size_t>(r * 7 + j)]);
    double mean, sd;
    oracles::two_pass_mean_std(xs, mean, sd);
    CHECK(std::abs(st.pixel_mean[static_cast<std::size_t>(j)] - mean) <=
          1e-9 * std::max(1.0, std::abs(mean)));
    CHECK(std::abs(st.pixel_std[static_cast<std::size_t>(j)] - sd) <=
          1e-9 * std::max(1.0, std::abs(sd)));
  }

  auto zero = make_samples(5, 2, 3, 1, 10);
  for (auto& s : zero) {
    s.label = 0;
    for (auto& v : s.window) v = 0.f;
  }
  auto zst = data::stats(zero);
  for (double m : zst.pixel_mean) CHECK(m == 0.0);
  for (double sd : zst.pixel_std) CHECK(sd == 0.0);
  CHECK(zst.label_mean == 0.0);
}

TEST_CASE("training statistics never touch validation or test samples", "[dataset]") {
  // NaN poison stands in for access tracking: any read of the poisoned
  // splits would contaminate the statistics.
  auto train = make_samples(30, 3, 4, 1, 11);
  auto poisoned = make_samples(30, 3, 4, 1, 12);
  for (auto& s : poisoned) {
    s.label = std::numeric_limits<double>::quiet_NaN();
    for (auto& v : s.window) v = std::numeric_limits<float>::quiet_NaN();
  }
  auto st = data::stats(train);
  for (double m : st.pixel_mean) CHECK(std::isfinite(m));
  for (double sd : st.pixel_std) CHECK(std::isfinite(sd));
  CHECK(std::isfinite(st.label_mean));
}
