#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <set>

#include "cardio/cloud.hpp"
#include "cardio/geometry.hpp"
#include "cardio/kdtree.hpp"
#include "cardio/rng.hpp"
#include "testutil.hpp"

using namespace cardio;

namespace {

LabeledPointCloud random_cloud(Rng& rng, std::size_t n, std::size_t n_classes = kNumClasses) {
  LabeledPointCloud cloud;
  for (std::size_t i = 0; i < n; ++i) {
    cloud.points.push_back({rng.uniform() * 80 - 40, rng.uniform() * 80 - 40,
                            rng.uniform() * 100 - 50});
    cloud.labels.push_back(static_cast<std::uint8_t>(rng.uniform_below(n_classes)));
  }
  return cloud;
}

// Independent greedy max-min selection, O(N^2), ties to the smaller index.
std::vector<std::size_t> fps_oracle(const std::vector<Vec3>& pts,
                                    const std::vector<std::size_t>& cand, std::size_t n,
                                    std::size_t start) {
  std::vector<std::size_t> out{start};
  while (out.size() < n) {
    std::size_t best_i = SIZE_MAX;
    double best_d = -1.0;
    for (std::size_t i : cand) {
      if (std::find(out.begin(), out.end(), i) != out.end()) continue;
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t j : out) d = std::min(d, dist2(pts[i], pts[j]));
      if (d > best_d || (d == best_d && i < best_i)) {
        best_d = d;
        best_i = i;
      }
    }
    out.push_back(best_i);
  }
  return out;
}

// O(N^2) exact kNN oracle with (distance, index) ordering.
std::vector<std::size_t> knn_oracle(const std::vector<Vec3>& pts, const Vec3& q, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t i = 0; i < pts.size(); ++i) d.emplace_back(dist2(pts[i], q), i);
  std::sort(d.begin(), d.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(d[i].second);
  return out;
}

}  // namespace

TEST_CASE("fps on colinear points") {
  LabeledPointCloud cloud;
  for (double x : {0.0, 1.0, 2.0, 9.0}) cloud.push_back({x, 0, 0}, 0);
  auto picks = fps(cloud, 2, 0);
  REQUIRE(picks == std::vector<std::size_t>{0, 3});
}

TEST_CASE("fps with n == N covers every index") {
  Rng rng(3);
  auto cloud = random_cloud(rng, 17);
  auto picks = fps(cloud, 17, 5);
  std::set<std::size_t> unique(picks.begin(), picks.end());
  REQUIRE(unique.size() == 17);
}

TEST_CASE("fps selection radii are non-increasing") {
  Rng rng(11);
  auto cloud = random_cloud(rng, 60);
  auto picks = fps(cloud, 25, 0);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t s = 1; s < picks.size(); ++s) {
    double radius = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < s; ++j)
      radius = std::min(radius, dist2(cloud.points[picks[s]], cloud.points[picks[j]]));
    REQUIRE(radius <= prev + 1e-12);
    prev = radius;
  }
}

TEST_CASE("fps rejects n > N") {
  Rng rng(4);
  auto cloud = random_cloud(rng, 5);
  REQUIRE_THROWS_AS(fps(cloud, 6, 0), std::invalid_argument);
}

TEST_CASE("fps matches the brute-force oracle") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed * 31 + 1);
    const std::size_t n = 8 + rng.uniform_below(56);
    auto cloud = random_cloud(rng, n);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const std::size_t want = 1 + rng.uniform_below(n);
    const std::size_t start = rng.uniform_below(n);
    REQUIRE(fps(cloud, want, start) == fps_oracle(cloud.points, all, want, start));
  }
}

TEST_CASE("fps geometry is invariant to point order") {
  Rng rng(21);
  auto cloud = random_cloud(rng, 48);
  auto picks = fps_auto(cloud, 12);
  std::set<std::array<double, 3>> geo;
  for (auto i : picks) geo.insert({cloud.points[i].x, cloud.points[i].y, cloud.points[i].z});

  std::vector<std::size_t> perm(cloud.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);
  LabeledPointCloud shuffled;
  for (auto i : perm) shuffled.push_back(cloud.points[i], cloud.labels[i]);
  auto picks2 = fps_auto(shuffled, 12);
  std::set<std::array<double, 3>> geo2;
  for (auto i : picks2) geo2.insert({shuffled.points[i].x, shuffled.points[i].y, shuffled.points[i].z});
  REQUIRE(geo == geo2);
}

TEST_CASE("knn group with a coincident centroid") {
  Rng rng(5);
  auto cloud = random_cloud(rng, 10);
  LabeledPointCloud centers;
  centers.push_back(cloud.points[4], cloud.labels[4]);
  auto g = knn_group(cloud, centers, 1);
  REQUIRE(g.neighbor(0, 0) == 4);
  REQUIRE(g.offset(0, 0) == Vec3{0, 0, 0});
}

TEST_CASE("knn group matches the brute-force oracle") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed + 100);
    auto cloud = random_cloud(rng, 5 + rng.uniform_below(60));
    auto centers = random_cloud(rng, 4);
    const std::size_t k = 1 + rng.uniform_below(std::min<std::size_t>(cloud.size(), 7));
    auto g = knn_group(cloud, centers, k);
    for (std::size_t j = 0; j < centers.size(); ++j) {
      auto expect = knn_oracle(cloud.points, centers.points[j], k);
      for (std::size_t i = 0; i < k; ++i) {
        REQUIRE(g.neighbor(j, i) == expect[i]);
        // offsets are the exact difference; centroid + offset rebuilds the
        // neighbor up to one rounding step
        const Vec3& nb = cloud.points[g.neighbor(j, i)];
        REQUIRE(g.offset(j, i) == nb - centers.points[j]);
        Vec3 rebuilt = centers.points[j] + g.offset(j, i);
        REQUIRE(rebuilt.x == Catch::Approx(nb.x).margin(1e-9));
        REQUIRE(rebuilt.y == Catch::Approx(nb.y).margin(1e-9));
        REQUIRE(rebuilt.z == Catch::Approx(nb.z).margin(1e-9));
      }
    }
  }
}

TEST_CASE("knn group rejects k > N") {
  Rng rng(6);
  auto cloud = random_cloud(rng, 5);
  REQUIRE_THROWS_AS(knn_group(cloud, cloud, 6), std::invalid_argument);
}

TEST_CASE("adaptive quotas: alpha 0 is uniform") {
  std::array<std::size_t, kNumClasses> counts{10, 10, 10, 10, 10, 10};
  auto plan = adaptive_quotas(counts, 0.0, 60);
  for (auto q : plan.quotas) REQUIRE(q == 10);
}

TEST_CASE("adaptive quotas: direct evaluation of the ratio formula") {
  std::array<std::size_t, kNumClasses> counts{100, 300, 0, 0, 0, 0};
  auto plan = adaptive_quotas(counts, 1.0, 80);
  // r = [0.75, 0.25] -> quotas [60, 20]
  REQUIRE(plan.quotas[0] == 60);
  REQUIRE(plan.quotas[1] == 20);
  for (std::size_t c = 2; c < kNumClasses; ++c) REQUIRE(plan.quotas[c] == 0);
}

TEST_CASE("adaptive quotas: all classes empty is an error") {
  std::array<std::size_t, kNumClasses> counts{};
  REQUIRE_THROWS_AS(adaptive_quotas(counts, 1.0, 10), std::invalid_argument);
}

TEST_CASE("adaptive quotas: sum and rarity ordering over random histograms") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 900);
    std::array<std::size_t, kNumClasses> counts{};
    for (auto& c : counts) c = rng.uniform_below(400);
    std::size_t population = 0;
    for (auto c : counts) population += c;
    if (population == 0) continue;
    const double alpha = rng.uniform() * 2.0;
    const std::size_t target = 1 + rng.uniform_below(300);
    auto plan = adaptive_quotas(counts, alpha, target);
    REQUIRE(plan.quota_sum() == std::min(target, population));
    // independent oracle: recompute ratios and floors directly
    double normalizer = 0;
    for (auto c : counts)
      if (c > 0) normalizer += std::pow(static_cast<double>(c), -alpha);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (counts[c] == 0) {
        REQUIRE(plan.quotas[c] == 0);
        continue;
      }
      const double share = std::pow(static_cast<double>(counts[c]), -alpha) / normalizer *
                           static_cast<double>(std::min(target, population));
      REQUIRE(plan.quotas[c] >= static_cast<std::size_t>(std::floor(share)));
      REQUIRE(plan.quotas[c] <= static_cast<std::size_t>(std::floor(share)) + 1);
    }
    // rarer classes never get fewer points than a strictly more common one
    if (alpha > 0) {
      for (std::size_t a = 0; a < kNumClasses; ++a)
        for (std::size_t b = 0; b < kNumClasses; ++b)
          if (counts[a] > 0 && counts[b] > counts[a])
            REQUIRE(plan.quotas[a] + 1 >= plan.quotas[b]);  // +1 absorbs remainder ties
    }
  }
}

TEST_CASE("class-balanced fps takes whole classes at full quota") {
  Rng rng(31);
  auto cloud = random_cloud(rng, 30, 2);
  const auto counts = class_counts(cloud);
  SamplingPlan plan;
  plan.quotas = counts;
  plan.total = cloud.size();
  auto picked = class_balanced_fps(cloud, plan);
  REQUIRE(picked.size() == cloud.size());
  REQUIRE(class_counts(picked) == counts);
}

TEST_CASE("class-balanced fps labels come from their subsets") {
  Rng rng(32);
  auto cloud = random_cloud(rng, 64);
  auto avail = class_counts(cloud);
  auto plan = adaptive_quotas(avail, 0.5, 24);
  auto picked = class_balanced_fps(cloud, plan);
  REQUIRE(picked.size() == 24);
  auto counts = class_counts(picked);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    REQUIRE(counts[c] <= avail[c]);
    // clipping only lowers overfull classes; others can only gain
    if (plan.quotas[c] <= avail[c]) REQUIRE(counts[c] >= plan.quotas[c]);
  }
  // provenance indices point back at points with the same label
  for (std::size_t i = 0; i < picked.size(); ++i)
    REQUIRE(cloud.labels[picked.provenance[i]] == picked.labels[i]);
}

TEST_CASE("class-balanced fps matches per-class brute force") {
  LabeledPointCloud cloud;
  cloud.push_back({0, 0, 0}, 0);
  cloud.push_back({1, 0, 0}, 0);
  cloud.push_back({5, 0, 0}, 0);
  cloud.push_back({6, 0, 0}, 0);
  cloud.push_back({0, 3, 0}, 1);
  cloud.push_back({0, 4, 0}, 1);
  cloud.push_back({0, 9, 0}, 1);
  cloud.push_back({0, 10, 0}, 1);
  SamplingPlan plan;
  plan.quotas = {2, 2, 0, 0, 0, 0};
  plan.total = 4;
  auto picked = class_balanced_fps(cloud, plan);

  auto c0 = indices_of_class(cloud, 0);
  auto start0 = nearest_to_centroid(cloud.points, c0);
  auto oracle0 = fps_oracle(cloud.points, c0, 2, start0);
  auto c1 = indices_of_class(cloud, 1);
  auto start1 = nearest_to_centroid(cloud.points, c1);
  auto oracle1 = fps_oracle(cloud.points, c1, 2, start1);
  REQUIRE(picked.provenance[0] == oracle0[0]);
  REQUIRE(picked.provenance[1] == oracle0[1]);
  REQUIRE(picked.provenance[2] == oracle1[0]);
  REQUIRE(picked.provenance[3] == oracle1[1]);
}

TEST_CASE("class-balanced fps clips oversized quotas and redistributes") {
  Rng rng(33);
  auto cloud = random_cloud(rng, 40, 3);  // classes 3..5 empty
  auto counts = class_counts(cloud);
  SamplingPlan plan;
  plan.quotas = {counts[0] + 10, 2, 2, 0, 0, 0};
  plan.total = counts[0] + 14;
  auto picked = class_balanced_fps(cloud, plan);
  const std::size_t want = std::min<std::size_t>(plan.total, cloud.size());
  REQUIRE(picked.size() == want);
  auto got = class_counts(picked);
  for (std::size_t c = 0; c < kNumClasses; ++c) REQUIRE(got[c] <= counts[c]);
}

TEST_CASE("jitter: sigma 0 is the identity and labels never change") {
  Rng rng(41);
  auto cloud = random_cloud(rng, 20);
  auto same = jitter(cloud, 0.0, rng);
  REQUIRE(same.points == cloud.points);
  auto moved = jitter(cloud, 1.5, rng);
  REQUIRE(moved.labels == cloud.labels);
}

TEST_CASE("jitter empirical std matches sigma") {
  Rng rng(42);
  LabeledPointCloud cloud;
  for (int i = 0; i < 10000 / 4; ++i)
    for (int j = 0; j < 4; ++j) cloud.push_back({0, 0, 0}, 0);
  auto moved = jitter(cloud, 0.5, rng);
  double ss = 0;
  for (const auto& p : moved.points) ss += p.x * p.x;
  const double std_x = std::sqrt(ss / static_cast<double>(moved.size()));
  REQUIRE(std_x == Catch::Approx(0.5).margin(0.02));
}

TEST_CASE("kd-tree nearest matches linear scan with tie rule") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed + 77);
    auto cloud = random_cloud(rng, 3 + rng.uniform_below(200));
    // inject exact duplicates to force distance ties
    cloud.push_back(cloud.points[0], 0);
    cloud.push_back(cloud.points[1], 0);
    KdTree tree(cloud.points);
    for (int q = 0; q < 20; ++q) {
      Vec3 query{rng.uniform() * 100 - 50, rng.uniform() * 100 - 50, rng.uniform() * 100 - 50};
      if (q % 4 == 0) query = cloud.points[rng.uniform_below(cloud.size())];
      auto hit = tree.nearest(query);
      std::size_t best = 0;
      double best_d2 = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double d2 = dist2(cloud.points[i], query);
        if (d2 < best_d2) {
          best_d2 = d2;
          best = i;
        }
      }
      REQUIRE(hit.dist2 == best_d2);
      REQUIRE(hit.index == best);
    }
  }
}

TEST_CASE("lpc1 round-trip preserves every point and label") {
  Rng rng(55);
  auto cloud = random_cloud(rng, 321);
  // store via float32, so compare against the float-truncated original
  for (auto& p : cloud.points)
    p = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)};
  const std::string path = "lpc1_roundtrip_test.bin";
  save_lpc1(path, cloud);
  auto reread = load_lpc1(path);
  REQUIRE(reread.points == cloud.points);
  REQUIRE(reread.labels == cloud.labels);
  REQUIRE(digest_file(path) == digest_file(path));
  std::remove(path.c_str());
}

TEST_CASE("ply round-trip reimports to an identical cloud") {
  Rng rng(56);
  auto cloud = random_cloud(rng, 77);
  for (auto& p : cloud.points)
    p = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)};
  const std::string path = "ply_roundtrip_test.ply";
  save_ply(path, cloud);
  auto reread = load_ply(path);
  REQUIRE(reread.points == cloud.points);
  REQUIRE(reread.labels == cloud.labels);
  std::remove(path.c_str());
}

TEST_CASE("resample without replacement has no duplicates") {
  Rng rng(57);
  auto cloud = random_cloud(rng, 50);
  auto small = resample(cloud, 20, rng);
  REQUIRE(small.size() == 20);
  std::set<std::uint32_t> seen(small.provenance.begin(), small.provenance.end());
  REQUIRE(seen.size() == 20);

  auto big = resample(cloud, 130, rng);
  REQUIRE(big.size() == 130);  // with replacement when short
}
