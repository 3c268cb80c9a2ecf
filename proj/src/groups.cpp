#include "canonae/groups.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace canonae {

namespace {

using nlohmann::json;

constexpr double kFrameEps = 1e-9;

double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm3(const Vec3& a) { return std::sqrt(dot3(a, a)); }
Vec3 cross3v(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[static_cast<std::size_t>(i) * 3 + k] * b[static_cast<std::size_t>(k) * 3 + j];
      c[static_cast<std::size_t>(i) * 3 + j] = s;
    }
  return c;
}

Mat3 mat3_transpose(const Mat3& a) {
  Mat3 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[static_cast<std::size_t>(i) * 3 + j] = a[static_cast<std::size_t>(j) * 3 + i];
  return t;
}

Vec3 mat3_apply(const Mat3& a, const Vec3& v) {
  Vec3 r{};
  for (int i = 0; i < 3; ++i)
    r[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i) * 3] * v[0] +
                                     a[static_cast<std::size_t>(i) * 3 + 1] * v[1] +
                                     a[static_cast<std::size_t>(i) * 3 + 2] * v[2];
  return r;
}

[[noreturn]] void kind_error(const GroupElement& a, const GroupElement& b) {
  throw std::invalid_argument("group elements of different kinds: " + a.kind_name() + " vs " + b.kind_name());
}

}  // namespace

GroupElement GroupElement::rot2_angle(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  return rot2({c, -s, s, c});
}

GroupElement GroupElement::perm(std::vector<int> sigma) {
  const int n = static_cast<int>(sigma.size());
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (int v : sigma) {
    if (v < 0 || v >= n || seen[static_cast<std::size_t>(v)])
      throw std::invalid_argument("perm: sigma is not a bijection on {0.." + std::to_string(n - 1) + "}");
    seen[static_cast<std::size_t>(v)] = 1;
  }
  return GroupElement(Perm{std::move(sigma)});
}

std::string GroupElement::kind_name() const {
  switch (kind()) {
    case Kind::Rot2: return "rot2";
    case Kind::Rot3: return "rot3";
    case Kind::Transl: return "transl";
    case Kind::Perm: return "perm";
    case Kind::SE3: return "se3";
  }
  return "?";
}

double GroupElement::angle() const {
  const auto& r = as<Rot2>();
  return std::atan2(r.m[2], r.m[0]);
}

GroupElement identity_like(const GroupElement& g) {
  switch (g.kind()) {
    case GroupElement::Kind::Rot2: return GroupElement::rot2({1, 0, 0, 1});
    case GroupElement::Kind::Rot3: return GroupElement::rot3({1, 0, 0, 0, 1, 0, 0, 0, 1});
    case GroupElement::Kind::Transl:
      return GroupElement::transl(std::vector<double>(g.as<Transl>().v.size(), 0.0));
    case GroupElement::Kind::Perm: {
      std::vector<int> id(g.as<Perm>().sigma.size());
      std::iota(id.begin(), id.end(), 0);
      return GroupElement::perm(std::move(id));
    }
    case GroupElement::Kind::SE3: return GroupElement::se3({1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0});
  }
  throw std::logic_error("identity_like: bad kind");
}

GroupElement compose(const GroupElement& a, const GroupElement& b) {
  if (a.kind() != b.kind()) kind_error(a, b);
  switch (a.kind()) {
    case GroupElement::Kind::Rot2: {
      const auto& x = a.as<Rot2>().m;
      const auto& y = b.as<Rot2>().m;
      return GroupElement::rot2({x[0] * y[0] + x[1] * y[2], x[0] * y[1] + x[1] * y[3],
                                 x[2] * y[0] + x[3] * y[2], x[2] * y[1] + x[3] * y[3]});
    }
    case GroupElement::Kind::Rot3:
      return GroupElement::rot3(mat3_mul(a.as<Rot3>().m, b.as<Rot3>().m));
    case GroupElement::Kind::Transl: {
      const auto& x = a.as<Transl>().v;
      const auto& y = b.as<Transl>().v;
      if (x.size() != y.size()) kind_error(a, b);
      std::vector<double> v(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) v[i] = x[i] + y[i];
      return GroupElement::transl(std::move(v));
    }
    case GroupElement::Kind::Perm: {
      // apply(compose(a,b), x) = apply(a, apply(b, x)) with gathering rows
      const auto& x = a.as<Perm>().sigma;
      const auto& y = b.as<Perm>().sigma;
      if (x.size() != y.size()) kind_error(a, b);
      std::vector<int> s(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) s[i] = y[static_cast<std::size_t>(x[i])];
      return GroupElement::perm(std::move(s));
    }
    case GroupElement::Kind::SE3: {
      const auto& x = a.as<SE3>();
      const auto& y = b.as<SE3>();
      const Mat3 r = mat3_mul(x.rot, y.rot);
      const Vec3 rt = mat3_apply(x.rot, y.t);
      return GroupElement::se3(r, {rt[0] + x.t[0], rt[1] + x.t[1], rt[2] + x.t[2]});
    }
  }
  throw std::logic_error("compose: bad kind");
}

GroupElement inverse(const GroupElement& g) {
  switch (g.kind()) {
    case GroupElement::Kind::Rot2: {
      const auto& m = g.as<Rot2>().m;
      return GroupElement::rot2({m[0], m[2], m[1], m[3]});
    }
    case GroupElement::Kind::Rot3:
      return GroupElement::rot3(mat3_transpose(g.as<Rot3>().m));
    case GroupElement::Kind::Transl: {
      std::vector<double> v = g.as<Transl>().v;
      for (double& x : v) x = -x;
      return GroupElement::transl(std::move(v));
    }
    case GroupElement::Kind::Perm: {
      const auto& s = g.as<Perm>().sigma;
      std::vector<int> inv(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) inv[static_cast<std::size_t>(s[i])] = static_cast<int>(i);
      return GroupElement::perm(std::move(inv));
    }
    case GroupElement::Kind::SE3: {
      const auto& x = g.as<SE3>();
      const Mat3 rt = mat3_transpose(x.rot);
      const Vec3 nt = mat3_apply(rt, x.t);
      return GroupElement::se3(rt, {-nt[0], -nt[1], -nt[2]});
    }
  }
  throw std::logic_error("inverse: bad kind");
}

double element_distance(const GroupElement& a, const GroupElement& b) {
  if (a.kind() != b.kind()) kind_error(a, b);
  double d = 0.0;
  switch (a.kind()) {
    case GroupElement::Kind::Rot2:
      for (int i = 0; i < 4; ++i)
        d = std::max(d, std::fabs(a.as<Rot2>().m[static_cast<std::size_t>(i)] - b.as<Rot2>().m[static_cast<std::size_t>(i)]));
      break;
    case GroupElement::Kind::Rot3:
      for (int i = 0; i < 9; ++i)
        d = std::max(d, std::fabs(a.as<Rot3>().m[static_cast<std::size_t>(i)] - b.as<Rot3>().m[static_cast<std::size_t>(i)]));
      break;
    case GroupElement::Kind::Transl:
      for (std::size_t i = 0; i < a.as<Transl>().v.size(); ++i)
        d = std::max(d, std::fabs(a.as<Transl>().v[i] - b.as<Transl>().v[i]));
      break;
    case GroupElement::Kind::Perm:
      for (std::size_t i = 0; i < a.as<Perm>().sigma.size(); ++i)
        d = std::max(d, static_cast<double>(std::abs(a.as<Perm>().sigma[i] - b.as<Perm>().sigma[i])));
      break;
    case GroupElement::Kind::SE3:
      for (int i = 0; i < 9; ++i)
        d = std::max(d, std::fabs(a.as<SE3>().rot[static_cast<std::size_t>(i)] - b.as<SE3>().rot[static_cast<std::size_t>(i)]));
      for (int i = 0; i < 3; ++i)
        d = std::max(d, std::fabs(a.as<SE3>().t[static_cast<std::size_t>(i)] - b.as<SE3>().t[static_cast<std::size_t>(i)]));
      break;
  }
  return d;
}

Tensor apply(const GroupElement& g, const Tensor& rows) {
  if (rows.rank() != 2) throw std::invalid_argument("apply: expected rank-2 rows, got " + shape_str(rows.shape()));
  const int n = rows.rows(), d = rows.cols();
  const auto* p = rows.data().data();
  std::vector<double> out(static_cast<std::size_t>(n) * d);

  switch (g.kind()) {
    case GroupElement::Kind::Rot2: {
      if (d != 2) throw std::invalid_argument("apply: rot2 needs 2 coordinate columns, got " + std::to_string(d));
      const auto& m = g.as<Rot2>().m;
      for (int i = 0; i < n; ++i) {
        const double x = p[static_cast<std::size_t>(i) * 2], y = p[static_cast<std::size_t>(i) * 2 + 1];
        out[static_cast<std::size_t>(i) * 2] = m[0] * x + m[1] * y;
        out[static_cast<std::size_t>(i) * 2 + 1] = m[2] * x + m[3] * y;
      }
      break;
    }
    case GroupElement::Kind::Rot3:
    case GroupElement::Kind::SE3: {
      if (d != 3) throw std::invalid_argument("apply: rot3/se3 needs 3 coordinate columns, got " + std::to_string(d));
      const Mat3& m = g.kind() == GroupElement::Kind::Rot3 ? g.as<Rot3>().m : g.as<SE3>().rot;
      const Vec3 t = g.kind() == GroupElement::Kind::SE3 ? g.as<SE3>().t : Vec3{0, 0, 0};
      for (int i = 0; i < n; ++i) {
        const Vec3 x{p[static_cast<std::size_t>(i) * 3], p[static_cast<std::size_t>(i) * 3 + 1],
                     p[static_cast<std::size_t>(i) * 3 + 2]};
        const Vec3 y = mat3_apply(m, x);
        for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(i) * 3 + c] = y[static_cast<std::size_t>(c)] + t[static_cast<std::size_t>(c)];
      }
      break;
    }
    case GroupElement::Kind::Transl: {
      const auto& v = g.as<Transl>().v;
      if (static_cast<int>(v.size()) != d)
        throw std::invalid_argument("apply: translation dim " + std::to_string(v.size()) +
                                    " vs row width " + std::to_string(d));
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c)
          out[static_cast<std::size_t>(i) * d + c] = p[static_cast<std::size_t>(i) * d + c] + v[static_cast<std::size_t>(c)];
      break;
    }
    case GroupElement::Kind::Perm: {
      const auto& s = g.as<Perm>().sigma;
      if (static_cast<int>(s.size()) != n)
        throw std::invalid_argument("apply: perm length " + std::to_string(s.size()) + " vs row count " +
                                    std::to_string(n));
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c)
          out[static_cast<std::size_t>(i) * d + c] = p[static_cast<std::size_t>(s[static_cast<std::size_t>(i)]) * d + c];
      break;
    }
  }
  return Tensor(rows.shape(), std::move(out));
}

GroupElement xi_so2(const Vec2& y) {
  const double n = std::sqrt(y[0] * y[0] + y[1] * y[1]);
  if (n < kFrameEps) throw DegenerateFrame("xi_so2: near-zero vector");
  const double c = y[0] / n, s = y[1] / n;
  return GroupElement::rot2({c, -s, s, c});
}

GroupElement xi_so3(const Vec3& y1, const Vec3& y2) {
  const double n1 = norm3(y1);
  if (n1 < kFrameEps) throw DegenerateFrame("xi_so3: first vector near zero");
  Vec3 e1{y1[0] / n1, y1[1] / n1, y1[2] / n1};

  const double n2raw = norm3(y2);
  if (n2raw < kFrameEps) throw DegenerateFrame("xi_so3: second vector near zero");
  const double proj = dot3(y2, e1);
  Vec3 r{y2[0] - proj * e1[0], y2[1] - proj * e1[1], y2[2] - proj * e1[2]};
  const double n2 = norm3(r);
  if (n2 < 1e-6 * n2raw) throw DegenerateFrame("xi_so3: vectors near parallel");
  Vec3 e2{r[0] / n2, r[1] / n2, r[2] / n2};
  Vec3 e3 = cross3v(e1, e2);

  Mat3 m{};
  for (int i = 0; i < 3; ++i) {
    m[static_cast<std::size_t>(i) * 3 + 0] = e1[static_cast<std::size_t>(i)];
    m[static_cast<std::size_t>(i) * 3 + 1] = e2[static_cast<std::size_t>(i)];
    m[static_cast<std::size_t>(i) * 3 + 2] = e3[static_cast<std::size_t>(i)];
  }
  return GroupElement::rot3(m);
}

std::vector<int> argsort(const std::vector<double>& w) {
  std::vector<int> idx(w.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&w](int a, int b) { return w[static_cast<std::size_t>(a)] < w[static_cast<std::size_t>(b)]; });
  return idx;
}

std::vector<int> ranks(const std::vector<double>& w) {
  const auto order = argsort(w);
  std::vector<int> r(w.size());
  for (std::size_t k = 0; k < order.size(); ++k) r[static_cast<std::size_t>(order[k])] = static_cast<int>(k);
  return r;
}

GroupElement xi_perm(const std::vector<double>& w) { return GroupElement::perm(ranks(w)); }

GroupElement xi_translation(std::vector<double> y) { return GroupElement::transl(std::move(y)); }

GroupElement xi_se3(const Vec3& mu1, const Vec3& mu2, const Vec3& mu3, const Vec3& mu4) {
  (void)mu3;  // the third frame column comes from the cross product, so the
              // rotation is proper by construction
  Vec3 d1{mu1[0] - mu4[0], mu1[1] - mu4[1], mu1[2] - mu4[2]};
  Vec3 d2{mu2[0] - mu4[0], mu2[1] - mu4[1], mu2[2] - mu4[2]};
  const GroupElement r = xi_so3(d1, d2);
  return GroupElement::se3(r.as<Rot3>().m, mu4);
}

GroupElement random_element(GroupTag tag, int dims, Rng& rng, double box) {
  switch (tag) {
    case GroupTag::SO2:
      return GroupElement::rot2_angle(rng.uniform(0.0, 2.0 * std::numbers::pi));
    case GroupTag::SO3: {
      // uniform unit quaternion
      double q[4];
      double n = 0.0;
      do {
        n = 0.0;
        for (double& qi : q) {
          qi = rng.normal();
          n += qi * qi;
        }
      } while (n < 1e-12);
      n = std::sqrt(n);
      const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
      Mat3 m{1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
             2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
             2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
      return GroupElement::rot3(m);
    }
    case GroupTag::T: {
      std::vector<double> v(static_cast<std::size_t>(dims));
      for (double& x : v) x = rng.uniform(-box, box);
      return GroupElement::transl(std::move(v));
    }
    case GroupTag::Perm:
      return GroupElement::perm(rng.permutation(dims));
    case GroupTag::SE3: {
      const GroupElement r = random_element(GroupTag::SO3, 3, rng);
      Vec3 t{rng.uniform(-box, box), rng.uniform(-box, box), rng.uniform(-box, box)};
      return GroupElement::se3(r.as<Rot3>().m, t);
    }
  }
  throw std::logic_error("random_element: bad tag");
}

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double d = 0.0;
  for (int i = 0; i < a.size(); ++i) d = std::max(d, std::fabs(a.at(i) - b.at(i)));
  return d;
}

}  // namespace

double point_set_distance(const Tensor& a, const Tensor& b) {
  const int n = a.rows(), d = a.cols();
  if (b.rows() != n || b.cols() != d) throw std::invalid_argument("point_set_distance: shape mismatch");
  auto row_dist = [&](int i, int j) {
    double m = 0.0;
    for (int c = 0; c < d; ++c) m = std::max(m, std::fabs(a.at(i, c) - b.at(j, c)));
    return m;
  };
  if (n <= 8) {
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
      double m = 0.0;
      for (int i = 0; i < n; ++i) m = std::max(m, row_dist(i, perm[static_cast<std::size_t>(i)]));
      best = std::min(best, m);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
  }
  // greedy nearest for larger sets
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    int bj = -1;
    double bd = 1e300;
    for (int j = 0; j < n; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      const double dj = row_dist(i, j);
      if (dj < bd) {
        bd = dj;
        bj = j;
      }
    }
    used[static_cast<std::size_t>(bj)] = 1;
    worst = std::max(worst, bd);
  }
  return worst;
}

bool check_equivariance_up_to_stabilizer(const std::function<GroupElement(const Tensor&)>& psi,
                                         const Tensor& x, const GroupElement& g, double tol,
                                         bool as_point_set) {
  const Tensor gx = apply(g, x);
  const GroupElement residual = compose(inverse(psi(gx)), compose(g, psi(x)));
  const Tensor rx = apply(residual, x);
  const double d = as_point_set ? point_set_distance(rx, x) : max_abs_diff(rx, x);
  return d <= tol;
}

// ---------------------------------------------------------------------------
// JSON

std::string GroupElement::to_json() const {
  json j;
  j["kind"] = kind_name();
  switch (kind()) {
    case Kind::Rot2: {
      const auto& m = as<Rot2>().m;
      j["matrix"] = {{m[0], m[1]}, {m[2], m[3]}};
      break;
    }
    case Kind::Rot3: {
      const auto& m = as<Rot3>().m;
      j["matrix"] = {{m[0], m[1], m[2]}, {m[3], m[4], m[5]}, {m[6], m[7], m[8]}};
      break;
    }
    case Kind::Transl: j["v"] = as<Transl>().v; break;
    case Kind::Perm: j["sigma"] = as<Perm>().sigma; break;
    case Kind::SE3: {
      const auto& e = as<SE3>();
      j["matrix"] = {{e.rot[0], e.rot[1], e.rot[2]}, {e.rot[3], e.rot[4], e.rot[5]}, {e.rot[6], e.rot[7], e.rot[8]}};
      j["t"] = {e.t[0], e.t[1], e.t[2]};
      break;
    }
  }
  return j.dump();
}

GroupElement GroupElement::from_json(const std::string& text) {
  const json j = json::parse(text);
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "rot2") {
    const auto m = j.at("matrix");
    return rot2({m[0][0], m[0][1], m[1][0], m[1][1]});
  }
  if (kind == "rot3" || kind == "se3") {
    const auto m = j.at("matrix");
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) r[static_cast<std::size_t>(i) * 3 + c] = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    if (kind == "rot3") return rot3(r);
    const auto t = j.at("t");
    return se3(r, {t[0], t[1], t[2]});
  }
  if (kind == "transl") return transl(j.at("v").get<std::vector<double>>());
  if (kind == "perm") return perm(j.at("sigma").get<std::vector<int>>());
  throw std::invalid_argument("from_json: unknown kind '" + kind + "'");
}

}  // namespace canonae
