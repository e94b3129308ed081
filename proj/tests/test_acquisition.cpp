#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "cardio/acquisition.hpp"
#include "cardio/metrics.hpp"
#include "cardio/phantom.hpp"
#include "testutil.hpp"

using namespace cardio;

namespace {

ShapeModel sphere_model(double radius) {
  ShapeModel model;
  detail::ShellSpec spec{0, {radius, radius, radius}, {0, 0, 0}, 2.0};
  auto [top, bottom] = detail::append_shell(spec, 36, 48, model.mean, model.triangles);
  model.mitral_vertex = top;
  model.apex_vertex = bottom;
  return model;
}

Plane plane_z(double origin_z, double thickness) {
  Plane p;
  p.origin = {0, 0, origin_z};
  p.normal = {0, 0, 1};
  p.u = {1, 0, 0};
  p.v = {0, 1, 0};
  p.thickness = thickness;
  return p;
}

SlicePlan single_plane_plan(const Plane& p) {
  SlicePlan plan;
  plan.sax = {p};
  plan.lax_2ch = p;
  plan.lax_2ch.origin.z += 1000;  // park the LAX planes far away
  plan.lax_4ch = plan.lax_2ch;
  return plan;
}

struct RigidMotion {
  double angle;
  Vec3 axis_u;  // unit
  Vec3 shift;

  Vec3 apply(const Vec3& p) const {
    // Rodrigues rotation
    const double c = std::cos(angle), s = std::sin(angle);
    const Vec3 r = p * c + axis_u.cross(p) * s + axis_u * (axis_u.dot(p) * (1 - c));
    return r + shift;
  }
};

HeartInstance moved_instance(const HeartInstance& inst, const RigidMotion& motion) {
  HeartInstance out = inst;
  for (Vec3& p : out.surface.points) p = motion.apply(p);
  out.apex = motion.apply(inst.apex);
  out.mitral_center = motion.apply(inst.mitral_center);
  return out;
}

const ShapeModel& small_model() {
  static ShapeModel model = build_default_model(5, 10, 12, 16);
  return model;
}

}  // namespace

TEST_CASE("slicing a sphere yields the analytic circle band") {
  auto model = sphere_model(10.0);
  auto inst = instance_from_coefficients(model, {});
  auto plan = single_plane_plan(plane_z(0.0, 1.0));
  auto sliced = slice(inst, plan);
  REQUIRE(sliced.slices[0].points.size() > 0);
  for (const Vec3& p : sliced.slices[0].points.points) {
    REQUIRE(std::abs(p.z) <= 0.5 + 1e-12);
    const double in_plane = std::sqrt(p.x * p.x + p.y * p.y);
    REQUIRE(in_plane == Catch::Approx(std::sqrt(100.0 - p.z * p.z)).margin(1e-9));
  }
}

TEST_CASE("a plane missing the anatomy gives an empty slice with a warning") {
  auto model = sphere_model(10.0);
  auto inst = instance_from_coefficients(model, {});
  auto plan = single_plane_plan(plane_z(20.0, 1.0));
  plan.lax_2ch.origin.z += 1000;
  plan.lax_4ch.origin.z += 2000;
  auto sliced = slice(inst, plan);
  REQUIRE(sliced.slices[0].points.size() == 0);
  REQUIRE(sliced.empty_slice_warning);
}

TEST_CASE("sliced points are a subset of the instance vertices") {
  auto inst = sample_instance(small_model(), 10);
  auto plan = default_slice_plan(inst);
  auto sliced = slice(inst, plan);
  std::set<std::uint32_t> unique;
  for (const auto& sl : sliced.slices)
    for (std::uint32_t p : sl.points.provenance) {
      REQUIRE(p < inst.surface.size());
      unique.insert(p);
    }
  REQUIRE(unique.size() <= inst.surface.size());
  // captured points carry their source coordinates and labels
  for (const auto& sl : sliced.slices)
    for (std::size_t i = 0; i < sl.points.size(); ++i) {
      REQUIRE(sl.points.points[i] == inst.surface.points[sl.points.provenance[i]]);
      REQUIRE(sl.points.labels[i] == inst.surface.labels[sl.points.provenance[i]]);
    }
}

TEST_CASE("misalignment level none is bit-identical") {
  auto inst = sample_instance(small_model(), 11);
  auto plan = default_slice_plan(inst);
  auto sliced = slice(inst, plan);
  Rng rng(8);
  auto out = misalign(sliced, plan, level_by_name("none"), rng);
  for (std::size_t s = 0; s < sliced.slices.size(); ++s)
    REQUIRE(out.slices[s].points.points == sliced.slices[s].points.points);
}

TEST_CASE("level table is strictly increasing with zeroed none") {
  const auto& levels = misalignment_levels();
  REQUIRE(levels.size() == 5);
  REQUIRE(levels[0].name == "none");
  REQUIRE(levels[0].sigma_trans_mm == 0.0);
  REQUIRE(levels[0].sigma_rot_deg == 0.0);
  for (std::size_t i = 1; i < levels.size(); ++i) {
    REQUIRE(levels[i].sigma_trans_mm > levels[i - 1].sigma_trans_mm);
    REQUIRE(levels[i].sigma_rot_deg > levels[i - 1].sigma_rot_deg);
  }
}

TEST_CASE("a forced in-plane translation shifts every point exactly") {
  auto model = sphere_model(10.0);
  auto inst = instance_from_coefficients(model, {});
  auto plan = single_plane_plan(plane_z(0.0, 4.0));
  auto sliced = slice(inst, plan);
  auto original = sliced.slices[0].points;
  apply_in_plane_rigid(sliced.slices[0].points, plan.sax[0], 2.0, 0.0, 0.0);
  for (std::size_t i = 0; i < original.size(); ++i) {
    const Vec3 d = sliced.slices[0].points.points[i] - original.points[i];
    REQUIRE(d.x == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(d.y == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(d.z == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("mean displacement follows the Rayleigh formula") {
  // one point at the slice centroid reference: use a small square of points
  auto model = sphere_model(10.0);
  auto inst = instance_from_coefficients(model, {});
  auto plan = single_plane_plan(plane_z(0.0, 2.0));
  auto sliced = slice(inst, plan);
  MisalignmentLevel level{"test", 2.0, 0.0};
  Rng rng(17);
  double mean_disp = 0.0;
  const int draws = 1000;
  for (int d = 0; d < draws; ++d) {
    auto moved = misalign(sliced, plan, level, rng);
    // translation-only: every point moves by the same in-plane offset
    const Vec3 delta = moved.slices[0].points.points[0] - sliced.slices[0].points.points[0];
    mean_disp += delta.norm();
  }
  mean_disp /= draws;
  const double rayleigh_mean = 2.0 * std::sqrt(std::numbers::pi / 2.0);  // ~2.507
  REQUIRE(mean_disp == Catch::Approx(rayleigh_mean).epsilon(0.05));
}

TEST_CASE("misalignment preserves pairwise distances within a slice") {
  auto inst = sample_instance(small_model(), 12);
  auto plan = default_slice_plan(inst);
  auto sliced = slice(inst, plan);
  Rng rng(9);
  auto moved = misalign(sliced, plan, level_by_name("severe"), rng);
  for (std::size_t s = 0; s < sliced.slices.size(); ++s) {
    const auto& before = sliced.slices[s].points.points;
    const auto& after = moved.slices[s].points.points;
    for (std::size_t i = 0; i + 1 < before.size(); i += 7)
      for (std::size_t j = i + 1; j < before.size(); j += 11) {
        const double da = (before[i] - before[j]).norm();
        const double db = (after[i] - after[j]).norm();
        REQUIRE(db == Catch::Approx(da).margin(1e-9));
      }
  }
}

TEST_CASE("slice and misalign commute with global rigid motion") {
  auto inst = sample_instance(small_model(), 13);
  RigidMotion motion{0.6, Vec3{1, 2, 0.5}.normalized(), {14, -8, 3}};
  auto rotated = moved_instance(inst, motion);

  auto plan_a = default_slice_plan(inst);
  auto plan_b = default_slice_plan(rotated);
  Rng rng_a(21), rng_b(21);
  auto out_a = misalign(slice(inst, plan_a), plan_a, level_by_name("medium"), rng_a);
  auto out_b = misalign(slice(rotated, plan_b), plan_b, level_by_name("medium"), rng_b);

  REQUIRE(out_a.slices.size() == out_b.slices.size());
  for (std::size_t s = 0; s < out_a.slices.size(); ++s) {
    const auto& pa = out_a.slices[s].points.points;
    const auto& pb = out_b.slices[s].points.points;
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i)
      REQUIRE((motion.apply(pa[i]) - pb[i]).norm() < 1e-6);
  }
}

TEST_CASE("records have the exact point counts") {
  const auto& model = small_model();
  auto inst = sample_instance(model, 14);
  auto plan = default_slice_plan(inst);
  Rng rng(31);
  auto rec = make_record(model, inst, plan, level_by_name("medium"), rng, 7500, 16384);
  REQUIRE(rec.sparse.size() == 7500);
  REQUIRE(rec.dense_gt.size() == 16384);
  rec.sparse.validate();
  rec.dense_gt.validate();
}

TEST_CASE("same seeds give identical record bytes") {
  const auto& model = small_model();
  auto inst = sample_instance(model, 15);
  auto plan = default_slice_plan(inst);
  Rng rng_a(77), rng_b(77);
  auto ra = make_record(model, inst, plan, level_by_name("mild"), rng_a, 600, 800);
  auto rb = make_record(model, inst, plan, level_by_name("mild"), rng_b, 600, 800);
  save_record("rec_a_test.lpc", ra);
  save_record("rec_b_test.lpc", rb);
  REQUIRE(digest_file("rec_a_test.lpc") == digest_file("rec_b_test.lpc"));
  auto [sparse, dense] = load_record("rec_a_test.lpc");
  REQUIRE(sparse.size() == 600);
  REQUIRE(dense.size() == 800);
  std::remove("rec_a_test.lpc");
  std::remove("rec_b_test.lpc");
}

TEST_CASE("generate_split writes a reproducible manifest") {
  namespace fs = std::filesystem;
  const auto& model = small_model();
  const std::string dir_a = "split_test_a", dir_b = "split_test_b";
  auto ma = generate_split(model, 5, 10, {"none"}, dir_a, 42, 400, 500, 2);
  auto mb = generate_split(model, 5, 10, {"none"}, dir_b, 42, 400, 500, 1);
  REQUIRE(ma.records.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    REQUIRE(ma.records[i].level == "none");
    REQUIRE(ma.records[i].digest == mb.records[i].digest);  // thread-count independent
  }
  auto loaded = load_manifest((fs::path(dir_a) / "manifest.txt").string());
  REQUIRE(loaded.records.size() == 10);
  REQUIRE(loaded.base_seed == 42);
  for (std::size_t i = 0; i < 10; ++i) {
    REQUIRE(loaded.records[i].digest == ma.records[i].digest);
    REQUIRE(digest_file((fs::path(dir_a) / loaded.records[i].path).string()) ==
            loaded.records[i].digest);
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("level mix draws roughly uniformly") {
  namespace fs = std::filesystem;
  const auto& model = small_model();
  std::vector<std::string> mix;
  for (const auto& l : misalignment_levels()) mix.push_back(l.name);
  const std::string dir = "split_test_mix";
  auto m = generate_split(model, 5, 1000, mix, dir, 7, 60, 60, 2);
  std::map<std::string, int> counts;
  for (const auto& r : m.records) counts[r.level]++;
  for (const auto& l : misalignment_levels()) {
    REQUIRE(counts[l.name] >= 150);
    REQUIRE(counts[l.name] <= 250);
  }
  fs::remove_all(dir);
}

TEST_CASE("an unwritable output directory fails before any work") {
  const auto& model = small_model();
  REQUIRE_THROWS_AS(generate_split(model, 5, 3, {"none"}, "/proc/not_writable/x", 1, 60, 60, 1),
                    std::runtime_error);
}

TEST_CASE("corruption grows with the misalignment level") {
  const auto& model = small_model();
  std::vector<double> mean_sacd(misalignment_levels().size(), 0.0);
  const int pairs = 10;
  for (int s = 0; s < pairs; ++s) {
    auto inst = sample_instance(model, 900 + s);
    auto plan = default_slice_plan(inst);
    for (std::size_t li = 0; li < misalignment_levels().size(); ++li) {
      Rng rng(1000 + s);  // identical draws across levels: paired comparison
      auto rec = make_record(model, inst, plan, misalignment_levels()[li], rng, 1500, 3000);
      mean_sacd[li] += sa_cd(rec.sparse, rec.dense_gt) / pairs;
    }
  }
  for (std::size_t li = 1; li < mean_sacd.size(); ++li) REQUIRE(mean_sacd[li] > mean_sacd[li - 1]);
}
