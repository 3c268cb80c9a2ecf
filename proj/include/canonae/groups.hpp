#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "canonae/rng.hpp"
#include "canonae/tensor.hpp"

namespace canonae {

// Raised when a frame construction receives near-zero or near-parallel
// vectors; the training loop catches it and retries once with jitter.
struct DegenerateFrame : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Mat2 = std::array<double, 4>;   // row-major 2x2
using Mat3 = std::array<double, 9>;   // row-major 3x3
using Vec2 = std::array<double, 2>;
using Vec3 = std::array<double, 3>;

struct Rot2 {
  Mat2 m;
};
struct Rot3 {
  Mat3 m;
};
struct Transl {
  std::vector<double> v;
};
struct Perm {
  // The action gathers rows: row i of the result is row sigma[i] of the input.
  std::vector<int> sigma;
};
struct SE3 {
  Mat3 rot;
  Vec3 t;
};

// Tagged union of every supported group element.
class GroupElement {
 public:
  using Variant = std::variant<Rot2, Rot3, Transl, Perm, SE3>;

  GroupElement() = default;
  explicit GroupElement(Variant v) : v_(std::move(v)) {}

  static GroupElement rot2(const Mat2& m) { return GroupElement(Rot2{m}); }
  static GroupElement rot2_angle(double theta);
  static GroupElement rot3(const Mat3& m) { return GroupElement(Rot3{m}); }
  static GroupElement transl(std::vector<double> v) { return GroupElement(Transl{std::move(v)}); }
  static GroupElement perm(std::vector<int> sigma);
  static GroupElement se3(const Mat3& rot, const Vec3& t) { return GroupElement(SE3{rot, t}); }

  enum class Kind { Rot2, Rot3, Transl, Perm, SE3 };
  Kind kind() const { return static_cast<Kind>(v_.index()); }
  std::string kind_name() const;

  template <typename T>
  const T& as() const {
    return std::get<T>(v_);
  }
  template <typename T>
  bool is() const {
    return std::holds_alternative<T>(v_);
  }

  double angle() const;  // Rot2 only, read back via atan2

  std::string to_json() const;
  static GroupElement from_json(const std::string& text);

 private:
  Variant v_;
};

GroupElement identity_like(const GroupElement& g);
GroupElement compose(const GroupElement& a, const GroupElement& b);  // a * b
GroupElement inverse(const GroupElement& g);
// max-abs difference of canonical parameters; elements must share a kind
double element_distance(const GroupElement& a, const GroupElement& b);

// Group action on row data. Rotations/SE3 act on coordinate columns, Perm
// gathers rows, Transl shifts rows. `rows` is [N, d].
Tensor apply(const GroupElement& g, const Tensor& rows);

// ---- deterministic xi maps (Y -> G) ----

// Normalized y becomes the first column of the rotation: [[yx,-yy],[yy,yx]].
GroupElement xi_so2(const Vec2& y);
// Columns (y1_hat, y2_perp, y1_hat x y2_perp) with y2 Gram-Schmidt
// orthogonalized against y1.
GroupElement xi_so3(const Vec3& y1, const Vec3& y2);
// sigma such that gathering by inverse(sigma) sorts w ascending (i.e. sigma is
// the rank vector; ties keep input order).
GroupElement xi_perm(const std::vector<double>& w);
GroupElement xi_translation(std::vector<double> y);
// Rotation from (mu1-mu4, mu2-mu4), translation mu4.
GroupElement xi_se3(const Vec3& mu1, const Vec3& mu2, const Vec3& mu3, const Vec3& mu4);

// argsort ascending, stable (ties by lower index)
std::vector<int> argsort(const std::vector<double>& w);
// rank of each entry under stable ascending order (inverse of argsort)
std::vector<int> ranks(const std::vector<double>& w);

enum class GroupTag { SO2, SO3, T, Perm, SE3 };

// Haar-uniform Rot3 (unit quaternion), Fisher-Yates Perm, translations uniform
// in [-box, box]^dims.
GroupElement random_element(GroupTag tag, int dims, Rng& rng, double box = 3.0);

// Tests Proposition 2.3 by the action of the residual element: true iff
// apply(inverse(psi(g x)) * g * psi(x), x) == x within tol. When
// `as_point_set` is set, equality is tested up to a row permutation.
bool check_equivariance_up_to_stabilizer(const std::function<GroupElement(const Tensor&)>& psi,
                                         const Tensor& x, const GroupElement& g, double tol = 1e-6,
                                         bool as_point_set = false);

// max row distance under the best row matching (exact for N <= 8)
double point_set_distance(const Tensor& a, const Tensor& b);

}  // namespace canonae
