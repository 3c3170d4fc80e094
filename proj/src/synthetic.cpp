#include "keylabel/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <set>

#include "keylabel/spatial_grid.hpp"

namespace kpl::synth {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSurfaceEps = 1e-9;
constexpr double kVisibilityTol = 1e-6;
constexpr int kClickMargin = 4;
constexpr int kClickRedraws = 100;
constexpr double kMaxIncidence = 70.0 * kPi / 180.0;

double deg(double d) { return d * kPi / 180.0; }

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t a = 0, std::uint64_t b = 0)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
    return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double object_height(const ObjectShape& shape)
{
    double h = 0.0;
    for (const auto& part : shape.parts) {
        const double top = part.pose.translation().z() + part.size.z();
        h = std::max(h, top);
    }
    return h;
}

RigidTransformd look_at(const Point3& eye, const Point3& target)
{
    const Eigen::Vector3d z = (target - eye).normalized();
    const Eigen::Vector3d down(0.0, 0.0, -1.0);
    const Eigen::Vector3d x = down.cross(z).normalized();
    const Eigen::Vector3d y = z.cross(x);
    Eigen::Matrix3d r;
    r.col(0) = x;
    r.col(1) = y;
    r.col(2) = z;
    return RigidTransformd(r, eye);
}

// Ray/primitive intersection in the primitive's local frame.
std::optional<RayHit> intersect_local(const Primitive& prim, const Point3& o, const Eigen::Vector3d& d)
{
    if (prim.kind == PrimitiveKind::Box) {
        const Eigen::Vector3d lo(-prim.size.x() / 2 - kSurfaceEps, -prim.size.y() / 2 - kSurfaceEps, -kSurfaceEps);
        const Eigen::Vector3d hi(prim.size.x() / 2 + kSurfaceEps, prim.size.y() / 2 + kSurfaceEps,
                                 prim.size.z() + kSurfaceEps);
        double tmin = -std::numeric_limits<double>::infinity();
        double tmax = std::numeric_limits<double>::infinity();
        int axis = -1;
        double sign = 0.0;
        for (int i = 0; i < 3; ++i) {
            if (std::abs(d[i]) < 1e-300) {
                if (o[i] < lo[i] || o[i] > hi[i])
                    return std::nullopt;
                continue;
            }
            double t0 = (lo[i] - o[i]) / d[i];
            double t1 = (hi[i] - o[i]) / d[i];
            double s = -1.0;
            if (t0 > t1) {
                std::swap(t0, t1);
                s = 1.0;
            }
            if (t0 > tmin) {
                tmin = t0;
                axis = i;
                sign = s;
            }
            tmax = std::min(tmax, t1);
        }
        if (tmin > tmax || tmin <= 0.0 || axis < 0)
            return std::nullopt;
        RayHit hit;
        hit.t = tmin;
        hit.object = true;
        hit.normal[axis] = sign;
        return hit;
    }

    const double r = prim.size.x() + kSurfaceEps;
    const double h = prim.size.z();
    std::optional<RayHit> best;
    auto consider = [&](double t, const Eigen::Vector3d& n) {
        if (t > 0.0 && (!best || t < best->t))
            best = RayHit{t, true, n};
    };
    const double a = d.x() * d.x() + d.y() * d.y();
    if (a > 1e-300) {
        const double b = 2.0 * (o.x() * d.x() + o.y() * d.y());
        const double c = o.x() * o.x() + o.y() * o.y() - r * r;
        const double disc = b * b - 4.0 * a * c;
        if (disc >= 0.0) {
            const double sq = std::sqrt(disc);
            for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
                const Point3 p = o + t * d;
                if (p.z() >= -kSurfaceEps && p.z() <= h + kSurfaceEps)
                    consider(t, Eigen::Vector3d(p.x(), p.y(), 0.0).normalized());
            }
        }
    }
    if (std::abs(d.z()) > 1e-300) {
        for (double zc : {h + kSurfaceEps, -kSurfaceEps}) {
            const double t = (zc - o.z()) / d.z();
            const Point3 p = o + t * d;
            if (p.x() * p.x() + p.y() * p.y() <= r * r)
                consider(t, Eigen::Vector3d(0.0, 0.0, zc > 0.0 ? 1.0 : -1.0));
        }
    }
    return best;
}

bool inside_primitive(const Primitive& prim, const Point3& p_object)
{
    const Point3 p = prim.pose.inverse() * p_object;
    if (prim.kind == PrimitiveKind::Box)
        return std::abs(p.x()) < prim.size.x() / 2 - kSurfaceEps && std::abs(p.y()) < prim.size.y() / 2 - kSurfaceEps &&
               p.z() > kSurfaceEps && p.z() < prim.size.z() - kSurfaceEps;
    return p.x() * p.x() + p.y() * p.y() < std::pow(prim.size.x() - kSurfaceEps, 2) && p.z() > kSurfaceEps &&
           p.z() < prim.size.z() - kSurfaceEps;
}

bool inside_shape(const ObjectShape& shape, const Point3& p_object)
{
    for (const auto& part : shape.parts)
        if (inside_primitive(part, p_object))
            return true;
    return false;
}

// Ray caster for one scene with every frame change precomputed.
class Caster {
public:
    Caster(const ObjectShape& shape, const RigidTransformd& object_in_table, double table_size)
        : shape_(shape), half_table_(table_size / 2)
    {
        const RigidTransformd table_to_object = object_in_table.inverse();
        for (const auto& part : shape.parts) {
            const RigidTransformd to_local = part.pose.inverse() * table_to_object;
            to_local_r_.push_back(to_local.rotationMatrix());
            to_local_t_.push_back(to_local.translation());
            normal_to_table_.push_back((object_in_table * part.pose).rotationMatrix());
        }
    }

    std::optional<RayHit> cast(const Point3& origin, const Eigen::Vector3d& dir) const
    {
        std::optional<RayHit> best;
        for (std::size_t i = 0; i < shape_.parts.size(); ++i) {
            auto hit = intersect_local(shape_.parts[i], to_local_r_[i] * origin + to_local_t_[i], to_local_r_[i] * dir);
            if (hit && (!best || hit->t < best->t)) {
                hit->normal = normal_to_table_[i] * hit->normal;
                best = hit;
            }
        }
        if (std::abs(dir.z()) > 1e-300) {
            const double t = -origin.z() / dir.z();
            const Point3 p = origin + t * dir;
            if (t > 0.0 && std::abs(p.x()) <= half_table_ && std::abs(p.y()) <= half_table_ && (!best || t < best->t))
                best = RayHit{t, false, Eigen::Vector3d::UnitZ()};
        }
        return best;
    }

    bool visible(const CameraIntrinsics& intr, const RigidTransformd& camera, const Point3& point_table) const
    {
        const Point3 pc = camera.inverse() * point_table;
        if (!(pc.z() > 0.0))
            return false;
        if (!intr.contains(project(intr, pc)))
            return false;
        const Eigen::Vector3d delta = point_table - camera.translation();
        const double len = delta.norm();
        const auto hit = cast(camera.translation(), delta / len);
        return hit && hit->t >= len - kVisibilityTol;
    }

private:
    const ObjectShape& shape_;
    double half_table_;
    std::vector<Eigen::Matrix3d> to_local_r_;
    std::vector<Eigen::Vector3d> to_local_t_;
    std::vector<Eigen::Matrix3d> normal_to_table_;
};

int steps(double extent, double spacing) { return std::max(1, static_cast<int>(std::lround(extent / spacing))); }

std::vector<Point3> sample_primitive(const Primitive& prim, double spacing)
{
    std::vector<Point3> local;
    const bool on_table = std::abs(prim.pose.translation().z()) < 1e-12;
    if (prim.kind == PrimitiveKind::Box) {
        const double a = prim.size.x() / 2, b = prim.size.y() / 2, h = prim.size.z();
        const int nx = steps(2 * a, spacing), ny = steps(2 * b, spacing), nz = steps(h, spacing);
        for (int i = 0; i <= nx; ++i)
            for (int j = 0; j <= ny; ++j) {
                const double x = -a + 2 * a * i / nx, y = -b + 2 * b * j / ny;
                local.emplace_back(x, y, h);
                if (!on_table)
                    local.emplace_back(x, y, 0.0);
            }
        for (int k = 0; k <= nz; ++k) {
            const double z = h * k / nz;
            for (int j = 0; j <= ny; ++j) {
                const double y = -b + 2 * b * j / ny;
                local.emplace_back(a, y, z);
                local.emplace_back(-a, y, z);
            }
            for (int i = 0; i <= nx; ++i) {
                const double x = -a + 2 * a * i / nx;
                local.emplace_back(x, b, z);
                local.emplace_back(x, -b, z);
            }
        }
    } else {
        const double r = prim.size.x(), h = prim.size.z();
        const int na = steps(2 * kPi * r, spacing), nz = steps(h, spacing);
        for (int k = 0; k <= nz; ++k)
            for (int i = 0; i < na; ++i) {
                const double th = 2 * kPi * i / na;
                local.emplace_back(r * std::cos(th), r * std::sin(th), h * k / nz);
            }
        const int nr = steps(r, spacing);
        for (int ring = 0; ring <= nr; ++ring) {
            const double rr = r * ring / nr;
            const int n = std::max(1, steps(2 * kPi * rr, spacing));
            for (int i = 0; i < n; ++i) {
                const double th = 2 * kPi * i / n;
                local.emplace_back(rr * std::cos(th), rr * std::sin(th), h);
                if (!on_table)
                    local.emplace_back(rr * std::cos(th), rr * std::sin(th), 0.0);
            }
        }
    }
    std::vector<Point3> out;
    out.reserve(local.size());
    for (const auto& p : local)
        out.push_back(prim.pose * p);
    return out;
}

std::vector<Point3> primitive_candidates(const Primitive& prim)
{
    std::vector<Point3> c;
    if (prim.kind == PrimitiveKind::Box) {
        const double a = prim.size.x() / 2, b = prim.size.y() / 2, h = prim.size.z();
        const std::vector<Eigen::Vector2d> corners{{a, b}, {-a, -b}, {-a, b}, {a, -b}};
        for (const auto& xy : corners)
            c.emplace_back(xy.x(), xy.y(), h);
        for (const auto& xy : corners)
            c.emplace_back(xy.x(), xy.y(), 0.5 * h);
        c.emplace_back(0.0, 0.0, h);
        c.emplace_back(0.0, b, h);
        c.emplace_back(a, 0.0, h);
        c.emplace_back(0.0, -b, h);
        c.emplace_back(-a, 0.0, h);
        c.emplace_back(a, 0.0, 0.6 * h);
        c.emplace_back(0.0, b, 0.6 * h);
        c.emplace_back(-a, 0.0, 0.6 * h);
        c.emplace_back(0.0, -b, 0.6 * h);
        for (const auto& xy : corners)
            c.emplace_back(xy.x(), xy.y(), 0.8 * h);
    } else {
        const double r = prim.size.x(), h = prim.size.z();
        for (int i : {0, 4, 2, 6, 1, 5, 3, 7})
            c.emplace_back(r * std::cos(i * kPi / 4), r * std::sin(i * kPi / 4), h);
        c.emplace_back(0.0, 0.0, h);
        for (int i : {0, 4, 2, 6, 1, 5, 3, 7})
            c.emplace_back(r * std::cos(i * kPi / 4), r * std::sin(i * kPi / 4), 0.5 * h);
        for (int i : {1, 5, 3, 7})
            c.emplace_back(r * std::cos(i * kPi / 4), r * std::sin(i * kPi / 4), 0.75 * h);
    }
    for (auto& p : c)
        p = prim.pose * p;
    return c;
}

}  // namespace

void WorldSpec::validate() const
{
    auto fail = [](const std::string& what) { throw Error(Errc::SpecInvalid, what); };
    if (object != "box" && object != "cylinder" && object != "composite")
        fail("object must be box, cylinder or composite");
    if ((box_size.array() <= 0.0).any() || !(cylinder_radius > 0.0) || !(cylinder_height > 0.0))
        fail("object dimensions must be positive");
    if (num_scenes < 1)
        fail("num_scenes must be >= 1");
    if (num_keypoints < 1)
        fail("num_keypoints must be >= 1");
    if (frames_per_scene < 1 || !(fps > 0.0))
        fail("frames_per_scene and fps must be positive");
    if (!(camera_distance_min > 0.0) || camera_distance_max < camera_distance_min)
        fail("camera distance range invalid");
    if (elevation_max_deg < elevation_min_deg || elevation_max_deg >= 90.0 || elevation_min_deg <= 0.0)
        fail("elevation range invalid");
    if (annotation_frames < 1 || !(table_size > 0.0) || !(cloud_spacing > 0.0))
        fail("annotation_frames, table_size and cloud_spacing must be positive");
    if (noise.depth_sigma < 0.0 || noise.click_sigma < 0.0 || noise.trajectory_drift < 0.0)
        fail("noise levels must be non-negative");
    try {
        intrinsics.validate();
    } catch (const Error& e) {
        fail(std::string("intrinsics: ") + e.what());
    }
}

ObjectShape make_shape(const WorldSpec& spec)
{
    ObjectShape shape;
    if (spec.object == "box") {
        shape.parts.push_back({PrimitiveKind::Box, spec.box_size, RigidTransformd()});
    } else if (spec.object == "cylinder") {
        shape.parts.push_back({PrimitiveKind::Cylinder,
                               Eigen::Vector3d(spec.cylinder_radius, spec.cylinder_radius, spec.cylinder_height),
                               RigidTransformd()});
    } else {
        // Box base with a cylinder standing on it.
        shape.parts.push_back({PrimitiveKind::Box, spec.box_size, RigidTransformd()});
        const double r = std::min({spec.cylinder_radius, spec.box_size.x() / 3, spec.box_size.y() / 3});
        shape.parts.push_back(
            {PrimitiveKind::Cylinder, Eigen::Vector3d(r, r, spec.cylinder_height),
             RigidTransformd(Eigen::Quaterniond::Identity(), Eigen::Vector3d(0.0, 0.0, spec.box_size.z()))});
    }
    return shape;
}

std::vector<Point3> keypoint_candidates(const ObjectShape& shape)
{
    std::vector<std::vector<Point3>> lists;
    for (const auto& part : shape.parts)
        lists.push_back(primitive_candidates(part));
    // Interleave parts, dropping points buried inside another part.
    std::vector<Point3> out;
    for (std::size_t i = 0;; ++i) {
        bool any = false;
        for (const auto& list : lists) {
            if (i >= list.size())
                continue;
            any = true;
            if (!inside_shape(shape, list[i]))
                out.push_back(list[i]);
        }
        if (!any)
            break;
    }
    return out;
}

std::optional<RayHit> SyntheticWorld::cast(const SyntheticScene& scene, const Point3& origin,
                                           const Eigen::Vector3d& dir) const
{
    return Caster(shape, scene.object_in_table, spec.table_size).cast(origin, dir);
}

bool SyntheticWorld::visibleFrom(const SyntheticScene& scene, const RigidTransformd& camera,
                                 const Point3& point_table) const
{
    return Caster(shape, scene.object_in_table, spec.table_size).visible(spec.intrinsics, camera, point_table);
}

Render SyntheticWorld::render(std::size_t s, std::size_t t, bool noisy, bool with_color) const
{
    const SyntheticScene& scene = scenes.at(s);
    const CameraIntrinsics& intr = spec.intrinsics;
    const RigidTransformd& cam = scene.cameras.at(t);
    const Eigen::Matrix3d rot = cam.rotationMatrix();
    Render out;
    out.depth = DepthImage(intr.width, intr.height);
    out.object_mask = Mask(intr.width, intr.height);
    if (with_color)
        out.color = ColorImage(intr.width, intr.height, 3);

    auto rng = make_rng(spec.seed, 0xD0, s, t);
    std::normal_distribution<double> noise(0.0, 1.0);
    const bool add_noise = noisy && spec.noise.depth_sigma > 0.0;
    const Eigen::Vector3d light = Eigen::Vector3d(0.3, -0.4, 1.0).normalized();
    const Caster caster(shape, scene.object_in_table, spec.table_size);

    for (int v = 0; v < intr.height; ++v) {
        for (int u = 0; u < intr.width; ++u) {
            const Eigen::Vector3d dc((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
            const auto hit = caster.cast(cam.translation(), rot * dc);
            // Draw noise for every pixel so the stream does not depend on content.
            const double n = add_noise ? noise(rng) * spec.noise.depth_sigma : 0.0;
            if (!hit)
                continue;
            const double z = hit->t + n;
            const double raw = std::round(z * intr.depth_scale);
            if (raw >= 1.0 && raw <= 65535.0)
                out.depth.at(u, v) = static_cast<std::uint16_t>(raw);
            out.object_mask.at(u, v) = hit->object ? 1 : 0;
            if (with_color) {
                const double shade = 0.35 + 0.65 * std::abs(hit->normal.dot(light));
                std::array<double, 3> base{200, 120, 40};
                if (!hit->object) {
                    const Point3 p = cam.translation() + hit->t * (rot * dc);
                    const bool check = (static_cast<int>(std::floor(p.x() / 0.05)) +
                                        static_cast<int>(std::floor(p.y() / 0.05))) % 2 == 0;
                    base = check ? std::array<double, 3>{150, 150, 150} : std::array<double, 3>{100, 100, 110};
                }
                for (int c = 0; c < 3; ++c)
                    out.color.at(u, v, c) = static_cast<std::uint8_t>(std::clamp(base[c] * shade, 0.0, 255.0));
            }
        }
    }
    return out;
}

std::vector<std::optional<Pixel>> SyntheticWorld::keypointPixels(std::size_t s, std::size_t t) const
{
    const SyntheticScene& scene = scenes.at(s);
    const RigidTransformd& cam = scene.cameras.at(t);
    std::vector<std::optional<Pixel>> out;
    for (const auto& kp : keypoints_object) {
        const Point3 x = scene.object_in_table * kp;
        if (visibleFrom(scene, cam, x))
            out.emplace_back(project(spec.intrinsics, Point3(cam.inverse() * x)));
        else
            out.emplace_back(std::nullopt);
    }
    return out;
}

std::vector<Point3> SyntheticWorld::keypointsInScene(std::size_t s) const
{
    std::vector<Point3> out;
    for (const auto& kp : keypoints_object)
        out.push_back(scenes.at(s).object_in_scene * kp);
    return out;
}

Scene SyntheticWorld::makeScene(std::size_t s) const
{
    Scene scene;
    scene.id = scenes.at(s).id;
    scene.intrinsics = spec.intrinsics;
    scene.poses = scenes.at(s).recorded_poses;
    scene.fps = spec.fps;
    auto cache = std::make_shared<std::map<std::size_t, DepthImage>>();
    scene.depth_source = [this, s, cache](std::size_t t) {
        auto it = cache->find(t);
        if (it == cache->end())
            it = cache->emplace(t, render(s, t).depth).first;
        return it->second;
    };
    scene.color_source = [this, s](std::size_t t) { return render(s, t, true, true).color; };
    return scene;
}

std::vector<Scene> SyntheticWorld::makeScenes() const
{
    std::vector<Scene> out;
    for (std::size_t s = 0; s < scenes.size(); ++s)
        out.push_back(makeScene(s));
    return out;
}

namespace {

struct ClickPlanner {
    const SyntheticWorld& world;
    SyntheticScene& scene;
    std::size_t scene_index;
    std::mt19937_64& rng;
    std::set<std::size_t> used_frames;
    std::set<int> clicked;

    bool withinMargin(const Pixel& px) const
    {
        const auto& intr = world.spec.intrinsics;
        return px.x() >= kClickMargin && px.y() >= kClickMargin && px.x() <= intr.width - 1 - kClickMargin &&
               px.y() <= intr.height - 1 - kClickMargin;
    }

    static bool wellViewed(const RayHit& hit, const Eigen::Vector3d& ray)
    {
        return hit.object && -hit.normal.dot(ray.normalized()) > std::cos(kMaxIncidence);
    }

    /// Visible, away from the border, and readable: within the click-noise
    /// radius some well-viewed object surface touches the keypoint and no
    /// well-viewed surface lies far from it (an occluding face, say).
    bool clickable(const RigidTransformd& cam, const Point3& x) const
    {
        if (!world.visibleFrom(scene, cam, x))
            return false;
        const auto& intr = world.spec.intrinsics;
        const Point3 pc = cam.inverse() * x;
        const Pixel px = project(intr, pc);
        if (!withinMargin(px))
            return false;
        const double radius = std::max(2.0, 2.0 * world.spec.noise.click_sigma);
        const double footprint = pc.z() / std::min(intr.fx, intr.fy);
        const double near = 1.5 * footprint / std::cos(kMaxIncidence);
        const double far = radius * footprint / std::cos(kMaxIncidence);
        const Eigen::Matrix3d rot = cam.rotationMatrix();
        bool support = false;
        for (double ring : {0.5, 0.5 * radius, radius}) {
            for (int i = 0; i < 16; ++i) {
                const double a = 2 * kPi * i / 16;
                const Pixel q = px + ring * Pixel(std::cos(a), std::sin(a));
                const Eigen::Vector3d ray = rot * Eigen::Vector3d((q.x() - intr.cx) / intr.fx,
                                                                  (q.y() - intr.cy) / intr.fy, 1.0);
                const auto hit = world.cast(scene, cam.translation(), ray);
                if (!hit || !wellViewed(*hit, ray))
                    continue;
                const double gap = (cam.translation() + hit->t * ray - x).norm();
                if (gap > far)
                    return false;
                support = support || gap <= near;
            }
        }
        return support;
    }

    /// Try to click keypoint k on frame f; the frame's camera may be snapped.
    bool tryClick(int k, std::size_t f, AnnotationFile& out)
    {
        const auto& spec = world.spec;
        const auto& intr = spec.intrinsics;
        const Point3 x = scene.object_in_table * world.keypoints_object[static_cast<std::size_t>(k)];
        RigidTransformd cam = scene.cameras[f];
        if (!clickable(cam, x))
            return false;
        Pixel px = project(intr, Point3(cam.inverse() * x));
        if (spec.snap_clicks) {
            const Point3 p = cam.inverse() * x;
            const double z = std::round(p.z() * intr.depth_scale) / intr.depth_scale;
            const Pixel snapped(std::round(px.x()), std::round(px.y()));
            const Point3 target = backproject<double>(intr, snapped, z);
            const RigidTransformd moved(cam.rotation(), x - cam.rotation() * target);
            if (!clickable(moved, x))
                return false;
            cam = moved;
            px = snapped;
        }
        scene.cameras[f] = cam;
        if (spec.noise.click_sigma > 0.0) {
            // An annotator aims at the object's faces: redraw clicks that miss
            // it or land on a sliver of surface seen nearly edge-on.
            std::normal_distribution<double> n(0.0, spec.noise.click_sigma);
            const Eigen::Matrix3d rot = cam.rotationMatrix();
            for (int attempt = 0; attempt < kClickRedraws; ++attempt) {
                Pixel trial = px + Pixel(n(rng), n(rng));
                trial.x() = std::clamp(trial.x(), 0.0, intr.width - 1.0);
                trial.y() = std::clamp(trial.y(), 0.0, intr.height - 1.0);
                const Pixel centre(std::round(trial.x()), std::round(trial.y()));
                const Eigen::Vector3d dir((centre.x() - intr.cx) / intr.fx, (centre.y() - intr.cy) / intr.fy, 1.0);
                const Eigen::Vector3d ray = rot * dir;
                const auto hit = world.cast(scene, cam.translation(), ray);
                if (hit && wellViewed(*hit, ray)) {
                    px = trial;
                    break;
                }
            }
        }
        AnnotationEntry entry;
        entry.scene = scene.id;
        entry.frame = f;
        entry.keypoint = k;
        entry.pixel = px;
        entry.timestamp = "synthetic";
        entry.author = "synthetic-oracle";
        out.entries.push_back(entry);
        used_frames.insert(f);
        clicked.insert(k);
        return true;
    }
};

}  // namespace

SyntheticWorld generate(const WorldSpec& spec)
{
    spec.validate();
    SyntheticWorld world;
    world.spec = spec;
    world.shape = make_shape(spec);
    const auto candidates = keypoint_candidates(world.shape);
    if (static_cast<std::size_t>(spec.num_keypoints) > candidates.size())
        throw Error(Errc::SpecInvalid,
                    "object offers only " + std::to_string(candidates.size()) + " keypoint candidates");
    world.keypoints_object.assign(candidates.begin(), candidates.begin() + spec.num_keypoints);

    world.annotations.object = spec.object;
    world.annotations.num_keypoints = spec.num_keypoints;
    for (int k = 0; k < spec.num_keypoints; ++k)
        world.annotations.keypoint_names.push_back("kp" + std::to_string(k));

    const double height = object_height(world.shape);
    const std::size_t frames = static_cast<std::size_t>(spec.frames_per_scene);
    std::vector<std::mt19937_64> click_rngs;

    for (int s = 0; s < spec.num_scenes; ++s) {
        auto rng = make_rng(spec.seed, 0x5C, static_cast<std::uint64_t>(s));
        SyntheticScene scene;
        char id[32];
        std::snprintf(id, sizeof id, "scene_%02d", s);
        scene.id = id;

        const double yaw = uniform(rng, 0.0, 2 * kPi);
        const Eigen::Vector3d offset(uniform(rng, -0.02, 0.02), uniform(rng, -0.02, 0.02), 0.0);
        scene.object_in_table =
            RigidTransformd(Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ())), offset);

        const double rel_azimuth = 2 * kPi * s / spec.num_scenes + deg(uniform(rng, -20.0, 20.0));
        const double azimuth0 = yaw + rel_azimuth;
        const double elevation = deg(uniform(rng, spec.elevation_min_deg, spec.elevation_max_deg));
        const double distance = uniform(rng, spec.camera_distance_min, spec.camera_distance_max);
        const Point3 target = scene.object_in_table * Point3(0.0, 0.0, height / 2) +
                              Eigen::Vector3d(uniform(rng, -0.01, 0.01), uniform(rng, -0.01, 0.01), 0.0);
        for (std::size_t t = 0; t < frames; ++t) {
            const double frac = frames > 1 ? static_cast<double>(t) / static_cast<double>(frames - 1) : 0.0;
            const double az = azimuth0 + deg(spec.sweep_deg) * frac;
            const Point3 eye = target + distance * Eigen::Vector3d(std::cos(elevation) * std::cos(az),
                                                                   std::cos(elevation) * std::sin(az),
                                                                   std::sin(elevation));
            scene.cameras.push_back(look_at(eye, target));
        }
        world.scenes.push_back(std::move(scene));
        click_rngs.push_back(make_rng(spec.seed, 0xC1, static_cast<std::uint64_t>(s)));
    }

    // Clicks: each scene gets `annotation_frames` base frames; the i-th click
    // at a base uses frame base + i so every click frame can be snapped alone.
    std::vector<ClickPlanner> planners;
    for (std::size_t s = 0; s < world.scenes.size(); ++s)
        planners.push_back({world, world.scenes[s], s, click_rngs[s], {}, {}});
    const std::size_t bases = static_cast<std::size_t>(spec.annotation_frames);
    for (auto& planner : planners) {
        for (std::size_t a = 0; a < bases; ++a) {
            const std::size_t base = a * frames / bases;
            const std::size_t limit = std::min(frames, (a + 1) * frames / bases);
            std::size_t f = base;
            for (int k = 0; k < spec.num_keypoints && f < limit; ++k) {
                if (planner.clicked.count(k))
                    continue;
                const Point3 x = planner.scene.object_in_table * world.keypoints_object[static_cast<std::size_t>(k)];
                if (!planner.clickable(planner.scene.cameras[base], x))
                    continue;
                if (planner.tryClick(k, f, world.annotations))
                    ++f;
            }
        }
    }
    // A keypoint nobody clicked yet gets a click wherever some free frame sees it.
    for (int k = 0; k < spec.num_keypoints; ++k) {
        bool seen = false;
        for (const auto& planner : planners)
            seen = seen || planner.clicked.count(k) > 0;
        for (std::size_t s = 0; s < planners.size() && !seen; ++s) {
            for (std::size_t f = frames; f-- > 0 && !seen;) {
                if (planners[s].used_frames.count(f))
                    continue;
                seen = planners[s].tryClick(k, f, world.annotations);
            }
        }
    }

    // Recorded trajectories relative to the first camera, with optional drift.
    for (std::size_t s = 0; s < world.scenes.size(); ++s) {
        auto& scene = world.scenes[s];
        auto rng = make_rng(spec.seed, 0xDF, s);
        std::normal_distribution<double> n(0.0, 1.0);
        const RigidTransformd first_inv = scene.cameras[0].inverse();
        Eigen::Vector3d drift = Eigen::Vector3d::Zero();
        for (std::size_t t = 0; t < frames; ++t) {
            if (t > 0 && spec.noise.trajectory_drift > 0.0)
                drift += spec.noise.trajectory_drift * Eigen::Vector3d(n(rng), n(rng), n(rng));
            const RigidTransformd rel = first_inv * scene.cameras[t];
            scene.recorded_poses.push_back(RigidTransformd(rel.rotation(), rel.translation() + drift));
        }
        scene.object_in_scene = first_inv * scene.object_in_table;
    }

    const RigidTransformd world_from_object = world.scenes[0].object_in_scene;
    for (const auto& kp : world.keypoints_object)
        world.keypoints_world.push_back(world_from_object * kp);
    for (const auto& scene : world.scenes)
        world.scene_transforms.push_back(scene.object_in_scene * world_from_object.inverse());

    // Scene clouds: analytic surface samples seen by a few trajectory cameras.
    for (std::size_t s = 0; s < world.scenes.size() && spec.scene_clouds; ++s) {
        auto& scene = world.scenes[s];
        std::vector<RigidTransformd> viewers;
        for (std::size_t i = 0; i < 5; ++i)
            viewers.push_back(scene.cameras[i * (frames - 1) / 4]);
        const RigidTransformd table_to_scene = scene.cameras[0].inverse();

        const Caster caster(world.shape, scene.object_in_table, spec.table_size);
        DynamicGrid dedup(spec.cloud_spacing);
        auto add = [&](const Point3& p_table, bool is_object) {
            bool seen = false;
            for (const auto& cam : viewers)
                if ((seen = caster.visible(spec.intrinsics, cam, p_table)))
                    break;
            if (!seen || dedup.anyWithin(p_table, 1e-7))
                return;
            dedup.insert(p_table);
            scene.cloud.points.push_back(table_to_scene * p_table);
            scene.cloud_is_object.push_back(is_object ? 1 : 0);
        };
        for (const auto& part : world.shape.parts)
            for (const auto& p : sample_primitive(part, spec.cloud_spacing))
                if (!inside_shape(world.shape, p))
                    add(scene.object_in_table * p, true);
        const RigidTransformd table_to_object = scene.object_in_table.inverse();
        const int n = steps(spec.table_size, spec.cloud_spacing);
        for (int i = 0; i <= n; ++i)
            for (int j = 0; j <= n; ++j) {
                const Point3 p(-spec.table_size / 2 + spec.table_size * i / n,
                               -spec.table_size / 2 + spec.table_size * j / n, 0.0);
                if (inside_shape(world.shape, table_to_object * Point3(p.x(), p.y(), 1e-4)))
                    continue;
                add(p, false);
            }
    }
    return world;
}

std::vector<int> clicked_keypoints(const SyntheticWorld& world, std::size_t scene)
{
    std::set<int> ids;
    for (const auto& e : world.annotations.entries)
        if (e.scene == world.scenes.at(scene).id)
            ids.insert(e.keypoint);
    return {ids.begin(), ids.end()};
}

}  // namespace kpl::synth
