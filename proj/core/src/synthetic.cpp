#include "instformer/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "instformer/error.hpp"
#include "instformer/metrics.hpp"
#include "instformer/rng.hpp"

namespace instformer {

namespace {

double draw(Rng& rng, const Range& r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng); }

bool coin(Rng& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

struct Primitive {
  enum class Kind { box, cylinder } kind = Kind::box;
  Vec3 size = Vec3::Zero();  // box: full extents; cylinder: (radius, height, unused), axis along y
};

PointSet sample_surface(const Primitive& prim, std::size_t count, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointSet out;
  out.reserve(count);
  if (prim.kind == Primitive::Kind::box) {
    const Vec3 h = 0.5 * prim.size;
    const double a[3] = {prim.size.y() * prim.size.z(), prim.size.x() * prim.size.z(), prim.size.x() * prim.size.y()};
    const double total = a[0] + a[1] + a[2];
    for (std::size_t k = 0; k < count; ++k) {
      double pick = u(rng) * total;
      const int axis = pick < a[0] ? 0 : (pick < a[0] + a[1] ? 1 : 2);
      const double side = u(rng) < 0.5 ? -1.0 : 1.0;
      Vec3 p(h.x() * (2.0 * u(rng) - 1.0), h.y() * (2.0 * u(rng) - 1.0), h.z() * (2.0 * u(rng) - 1.0));
      p[axis] = side * h[axis];
      out.push_back(p);
    }
  } else {
    const double r = prim.size.x();
    const double height = prim.size.y();
    const double lateral = 2.0 * std::numbers::pi * r * height;
    const double cap = std::numbers::pi * r * r;
    for (std::size_t k = 0; k < count; ++k) {
      const double pick = u(rng) * (lateral + 2.0 * cap);
      const double theta = 2.0 * std::numbers::pi * u(rng);
      if (pick < lateral) {
        out.emplace_back(r * std::cos(theta), height * (u(rng) - 0.5), r * std::sin(theta));
      } else {
        const double rad = r * std::sqrt(u(rng));
        const double y = pick < lateral + cap ? -0.5 * height : 0.5 * height;
        out.emplace_back(rad * std::cos(theta), y, rad * std::sin(theta));
      }
    }
  }
  return out;
}

Quat axis_angle(const Vec3& axis, double angle) {
  const Vec3 a = axis.normalized() * std::sin(0.5 * angle);
  return Quat{std::cos(0.5 * angle), a.x(), a.y(), a.z()}.canonical();
}

/// A part placed in the generator frame: x_world = R * x_local + t.
struct Placed {
  std::size_t geometry;  // index into the shared local clouds
  Quat rotation;
  Vec3 translation;
};

struct Layout {
  std::vector<Primitive> geometries;
  std::vector<Placed> parts;
  std::vector<std::pair<std::size_t, std::size_t>> adjacency;

  std::size_t add_geometry(Primitive p) {
    geometries.push_back(p);
    return geometries.size() - 1;
  }
  std::size_t place(std::size_t geometry, const Vec3& t, const Quat& q = Quat::identity()) {
    parts.push_back({geometry, q, t});
    return parts.size() - 1;
  }
  void connect(std::size_t a, std::size_t b) { adjacency.emplace_back(std::min(a, b), std::max(a, b)); }
};

Layout chair_layout(const GeneratorSpec& s, Rng& rng) {
  Layout l;
  const double sw = draw(rng, s.seat_width), sd = draw(rng, s.seat_depth), st = draw(rng, s.seat_thickness);
  const double ll = draw(rng, s.leg_length), lw = draw(rng, s.leg_width);
  const double bh = draw(rng, s.back_height), bt = draw(rng, s.back_thickness), tilt = draw(rng, s.back_tilt);

  const auto seat_g = l.add_geometry({Primitive::Kind::box, Vec3(sw, st, sd)});
  const auto leg_g = l.add_geometry({Primitive::Kind::box, Vec3(lw, ll, lw)});
  const auto back_g = l.add_geometry({Primitive::Kind::box, Vec3(sw, bh, bt)});

  const auto seat = l.place(seat_g, Vec3(0.0, ll + 0.5 * st, 0.0));
  const double lx = 0.5 * sw - 0.5 * lw - 0.01, lz = 0.5 * sd - 0.5 * lw - 0.01;
  for (double sx : {-1.0, 1.0})
    for (double sz : {-1.0, 1.0}) l.connect(seat, l.place(leg_g, Vec3(sx * lx, 0.5 * ll, sz * lz)));

  // The back hinges backwards about the rear top edge of the seat.
  const double seat_top = ll + st;
  const Quat q = axis_angle(Vec3::UnitX(), -tilt);
  const Vec3 hinge(0.0, seat_top, -0.5 * sd);
  const Vec3 local_center(0.0, 0.5 * bh, 0.5 * bt);
  l.connect(seat, l.place(back_g, hinge + q.to_matrix() * local_center, q));

  const double ah = draw(rng, s.arm_height), aw = draw(rng, s.arm_width);
  const double ad = 0.7 * sd;
  const bool left = coin(rng, s.arm_probability);
  const bool right = coin(rng, s.arm_probability);
  if (left || right) {
    const auto arm_g = l.add_geometry({Primitive::Kind::box, Vec3(aw, ah, ad)});
    const double ax = 0.5 * sw - 0.5 * aw;
    const double az = 0.5 * sd - 0.5 * ad;
    if (left) l.connect(seat, l.place(arm_g, Vec3(-ax, seat_top + 0.5 * ah, az)));
    if (right) l.connect(seat, l.place(arm_g, Vec3(ax, seat_top + 0.5 * ah, az)));
  }
  return l;
}

Layout table_layout(const GeneratorSpec& s, Rng& rng) {
  Layout l;
  const double tw = draw(rng, s.top_width), td = draw(rng, s.top_depth), tt = draw(rng, s.top_thickness);
  const double ll = draw(rng, s.table_leg_length), lr = draw(rng, s.table_leg_radius);
  const auto top_g = l.add_geometry({Primitive::Kind::box, Vec3(tw, tt, td)});
  const auto leg_g = l.add_geometry({Primitive::Kind::cylinder, Vec3(lr, ll, 0.0)});
  const auto top = l.place(top_g, Vec3(0.0, ll + 0.5 * tt, 0.0));
  const double lx = 0.5 * tw - lr - 0.03, lz = 0.5 * td - lr - 0.03;
  std::size_t legs[2][2];
  for (int ix = 0; ix < 2; ++ix)
    for (int iz = 0; iz < 2; ++iz) {
      legs[ix][iz] = l.place(leg_g, Vec3((ix ? 1.0 : -1.0) * lx, 0.5 * ll, (iz ? 1.0 : -1.0) * lz));
      l.connect(top, legs[ix][iz]);
    }
  if (coin(rng, s.stretcher_probability)) {
    // Side stretchers run front to back between the leg surfaces.
    const double len = 2.0 * lz - 2.0 * lr;
    const double thick = 1.2 * lr;
    const auto bar_g = l.add_geometry({Primitive::Kind::box, Vec3(thick, thick, len)});
    for (int ix = 0; ix < 2; ++ix) {
      const auto bar = l.place(bar_g, Vec3((ix ? 1.0 : -1.0) * lx, 0.3 * ll, 0.0));
      l.connect(bar, legs[ix][0]);
      l.connect(bar, legs[ix][1]);
    }
  }
  return l;
}

Layout lamp_layout(const GeneratorSpec& s, Rng& rng) {
  Layout l;
  const double br = draw(rng, s.base_radius), bh = draw(rng, s.base_height);
  const double pl = draw(rng, s.pole_length), pr = draw(rng, s.pole_radius);
  const double sr = draw(rng, s.shade_radius), sh = draw(rng, s.shade_height);
  const auto base = l.place(l.add_geometry({Primitive::Kind::cylinder, Vec3(br, bh, 0.0)}), Vec3(0.0, 0.5 * bh, 0.0));
  const auto pole =
      l.place(l.add_geometry({Primitive::Kind::cylinder, Vec3(pr, pl, 0.0)}), Vec3(0.0, bh + 0.5 * pl, 0.0));
  const auto shade =
      l.place(l.add_geometry({Primitive::Kind::cylinder, Vec3(sr, sh, 0.0)}), Vec3(0.0, bh + pl + 0.5 * sh, 0.0));
  l.connect(base, pole);
  l.connect(pole, shade);
  return l;
}

void check_range(const Range& r, const char* name) {
  if (!(r.lo > 0.0) || !(r.hi >= r.lo) || !std::isfinite(r.hi))
    throw InvalidArgument(std::string("GeneratorSpec: range ") + name + " must satisfy 0 < lo <= hi");
}

}  // namespace

void GeneratorSpec::validate() const {
  if (n_pc < 4) throw InvalidArgument("GeneratorSpec: n_pc must be >= 4");
  if (oversample < 1) throw InvalidArgument("GeneratorSpec: oversample must be >= 1");
  for (const auto& [r, name] : {std::pair{seat_width, "seat_width"}, {seat_depth, "seat_depth"},
                                {seat_thickness, "seat_thickness"}, {leg_length, "leg_length"}, {leg_width, "leg_width"},
                                {back_height, "back_height"}, {back_thickness, "back_thickness"},
                                {arm_height, "arm_height"}, {arm_width, "arm_width"}, {top_width, "top_width"},
                                {top_depth, "top_depth"}, {top_thickness, "top_thickness"},
                                {table_leg_length, "table_leg_length"}, {table_leg_radius, "table_leg_radius"},
                                {base_radius, "base_radius"}, {base_height, "base_height"}, {pole_length, "pole_length"},
                                {pole_radius, "pole_radius"}, {shade_radius, "shade_radius"},
                                {shade_height, "shade_height"}})
    check_range(r, name);
  if (back_tilt.lo < 0.0 || back_tilt.hi < back_tilt.lo || back_tilt.hi > 0.6)
    throw InvalidArgument("GeneratorSpec: back_tilt must satisfy 0 <= lo <= hi <= 0.6");
  for (double p : {arm_probability, stretcher_probability})
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("GeneratorSpec: probabilities must lie in [0, 1]");
  if (leg_width.hi * 2.0 + 0.02 >= std::min(seat_width.lo, seat_depth.lo))
    throw InvalidArgument("GeneratorSpec: legs do not fit under the seat");
  if (table_leg_radius.hi * 2.0 + 0.06 >= std::min(top_width.lo, top_depth.lo) * 0.5)
    throw InvalidArgument("GeneratorSpec: table legs do not fit under the top");
  if (pole_radius.hi >= std::min(base_radius.lo, shade_radius.lo))
    throw InvalidArgument("GeneratorSpec: pole must be thinner than base and shade");
}

Split split_of(std::uint64_t id) {
  const auto bucket = mix64(id ^ 0x5b17ULL) % 10;
  if (bucket < 7) return Split::train;
  if (bucket < 8) return Split::val;
  return Split::test;
}

GeneratedSample generate_one(const GeneratorSpec& spec, std::size_t index) {
  spec.validate();
  const auto category = static_cast<std::uint64_t>(spec.category);
  Rng rng(derive_seed({spec.seed, category, index}));
  Layout layout;
  switch (spec.category) {
    case Category::chair: layout = chair_layout(spec, rng); break;
    case Category::table: layout = table_layout(spec, rng); break;
    case Category::lamp: layout = lamp_layout(spec, rng); break;
  }

  std::vector<PointSet> local;
  for (const auto& g : layout.geometries) {
    const auto dense = sample_surface(g, spec.n_pc * spec.oversample, rng);
    const auto keep = fps(dense, spec.n_pc, rng());
    PointSet pts;
    for (auto k : keep) pts.push_back(dense[k]);
    local.push_back(std::move(pts));
  }

  PointSet world;
  for (const auto& p : layout.parts) {
    const auto posed = apply_pose(Pose{p.rotation, p.translation}, local[p.geometry]);
    world.insert(world.end(), posed.begin(), posed.end());
  }
  const Aabb box = aabb_of(world);
  const double scale = 1.0 / box.extent().maxCoeff();
  const Vec3 center = box.center();

  // Canonical clouds are computed once per geometry so interchangeable parts share them exactly.
  std::vector<PointSet> canonical;
  std::vector<Pose> local_pose;
  for (const auto& pts : local) {
    PointSet scaled;
    for (const auto& x : pts) scaled.push_back(scale * x);
    auto [canon, pose] = pca_canonicalize(scaled);
    for (auto& x : canon) x = x.cast<float>().cast<double>();
    canonical.push_back(std::move(canon));
    local_pose.push_back(pose);
  }

  GeneratedSample out;
  AssemblySample& s = out.sample;
  s.id = derive_seed({spec.seed, category, index, 0x1d});
  s.category = spec.category;
  s.split = split_of(s.id);
  for (const auto& p : layout.parts) {
    const Pose& lp = local_pose[p.geometry];
    const Quat q = (p.rotation * lp.rotation).normalized();
    const Vec3 t = p.rotation.to_matrix() * lp.translation + scale * (p.translation - center);
    s.parts.emplace_back(canonical[p.geometry]);
    s.gt_poses.push_back(make_pose(q, t));
  }
  for (const auto& x : world) out.reference.push_back(scale * (x - center));
  s.partition = cluster_equivalent(s.parts);
  s.adjacency = layout.adjacency;
  std::sort(s.adjacency.begin(), s.adjacency.end());
  s.contacts = contact_pairs(s);
  s.validate();
  return out;
}

std::vector<AssemblySample> generate(const GeneratorSpec& spec, std::size_t count) {
  if (count == 0) throw InvalidArgument("generate: count must be >= 1");
  spec.validate();
  std::vector<AssemblySample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_one(spec, i).sample);
  return out;
}

std::vector<std::size_t> drop_survivors(std::size_t n, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument("part_drop: probability must lie in [0, 1)");
  if (n == 0) throw InvalidArgument("part_drop: no parts");
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < n; ++i)
      if (!(u(rng) < p)) keep.push_back(i);
    if (!keep.empty()) return keep;
  }
}

AssemblySample subset(const AssemblySample& sample, std::span<const std::size_t> survivors) {
  const std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> new_index(sample.n_parts(), none);
  AssemblySample out;
  out.id = sample.id;
  out.category = sample.category;
  out.split = sample.split;
  for (std::size_t k = 0; k < survivors.size(); ++k) {
    const auto i = survivors[k];
    if (i >= sample.n_parts() || new_index[i] != none) throw InvalidArgument("subset: invalid survivor list");
    new_index[i] = k;
    out.parts.push_back(sample.parts[i]);
    out.gt_poses.push_back(sample.gt_poses[i]);
  }
  out.partition = sample.partition.restricted(survivors);
  for (const auto& [i, j] : sample.adjacency)
    if (new_index[i] != none && new_index[j] != none)
      out.adjacency.emplace_back(std::min(new_index[i], new_index[j]), std::max(new_index[i], new_index[j]));
  std::sort(out.adjacency.begin(), out.adjacency.end());
  for (const auto& c : sample.contacts) {
    if (new_index[c.i] == none || new_index[c.j] == none) continue;
    ContactPair r{new_index[c.i], new_index[c.j], c.c_ij, c.c_ji};
    if (r.i > r.j) {
      std::swap(r.i, r.j);
      std::swap(r.c_ij, r.c_ji);
    }
    out.contacts.push_back(r);
  }
  std::sort(out.contacts.begin(), out.contacts.end(),
            [](const ContactPair& a, const ContactPair& b) { return std::pair{a.i, a.j} < std::pair{b.i, b.j}; });
  return out;
}

AssemblySample part_drop(const AssemblySample& sample, double p, std::uint64_t seed) {
  const auto keep = drop_survivors(sample.n_parts(), p, seed);
  if (keep.size() == sample.n_parts()) return sample;
  return subset(sample, keep);
}

}  // namespace instformer
