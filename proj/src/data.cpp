#include "canonae/data.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "canonae/groups.hpp"

namespace canonae {

namespace {
using nlohmann::json;
}

const char* const kTetrisShapeNames[8] = {
    "chiral_l", "chiral_j", "square", "line", "corner", "ell", "tee", "zigzag",
};

Tensor tetris_shape(int cls) {
  // Block-center coordinates; shapes 0 and 1 are mirror images of each other
  // and are not related by any proper rotation.
  static const double coords[8][12] = {
      {0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0},   // chiral_l
      {0, 0, 0, 0, 0, 1, 1, 0, 0, 1, -1, 0},  // chiral_j
      {0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0},   // square
      {0, 0, 0, 0, 0, 1, 0, 0, 2, 0, 0, 3},   // line
      {0, 0, 0, 0, 0, 1, 0, 1, 0, 1, 0, 0},   // corner
      {0, 0, 0, 0, 0, 1, 0, 0, 2, 0, 1, 0},   // ell
      {0, 0, 0, 0, 0, 1, 0, 0, 2, 0, 1, 1},   // tee
      {0, 0, 0, 1, 0, 0, 1, 1, 0, 2, 1, 0},   // zigzag
  };
  if (cls < 0 || cls >= 8) throw std::invalid_argument("tetris_shape: class out of range");
  return Tensor::matrix(4, 3, std::vector<double>(coords[cls], coords[cls] + 12));
}

Dataset gen_tetris(int count, double sigma, std::uint64_t seed, bool augment) {
  if (count < 8) throw std::invalid_argument("gen_tetris: count must be at least 8");
  Rng rng(seed);
  Dataset ds;
  ds.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int cls = i % 8;
    Tensor base = tetris_shape(cls);
    std::vector<double> pos(base.data().begin(), base.data().end());
    for (double& v : pos) v += sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0;
    Tensor positions = Tensor::matrix(4, 3, std::move(pos));
    if (augment) {
      const GroupElement rot = random_element(GroupTag::SO3, 3, rng);
      const GroupElement tr = random_element(GroupTag::T, 3, rng, 3.0);
      GroupElement g = GroupElement::se3(rot.as<Rot3>().m,
                                         {tr.as<Transl>().v[0], tr.as<Transl>().v[1], tr.as<Transl>().v[2]});
      positions = apply(g, positions);
    }
    Sample s;
    s.kind = Sample::Kind::PointCloud;
    s.cloud.positions = positions;
    s.cloud.label = cls;
    ds.push_back(std::move(s));
  }
  return ds;
}

long long multiset_coefficient(int d, int n) {
  // C(d+n-1, n), saturating
  const long long cap = 1LL << 62;
  long long r = 1;
  for (int i = 1; i <= n; ++i) {
    // r *= (d - 1 + i); r /= i  -- keep exact by multiplying first
    if (r > cap / (d - 1 + i)) return cap;
    r = r * (d - 1 + i) / i;
  }
  return r;
}

Dataset gen_digit_sets(int n, int d, int count, std::uint64_t seed) {
  if (n < 1 || d < 1) throw std::invalid_argument("gen_digit_sets: n and d must be positive");
  const long long limit = multiset_coefficient(d, n);
  if (count > limit)
    throw std::invalid_argument("gen_digit_sets: count " + std::to_string(count) + " exceeds " +
                                std::to_string(limit) + " distinct multisets");
  Rng rng(seed);
  std::unordered_set<std::string> seen;
  Dataset ds;
  ds.reserve(static_cast<std::size_t>(count));
  while (static_cast<int>(ds.size()) < count) {
    std::vector<int> labels(static_cast<std::size_t>(n));
    std::vector<int> hist(static_cast<std::size_t>(d), 0);
    for (int i = 0; i < n; ++i) {
      labels[static_cast<std::size_t>(i)] = rng.below(d);
      ++hist[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    std::string key;
    for (int h : hist) {
      key += std::to_string(h);
      key += ',';
    }
    if (!seen.insert(key).second) continue;  // same orbit as an earlier sample
    std::vector<double> rows(static_cast<std::size_t>(n) * d, 0.0);
    for (int i = 0; i < n; ++i)
      rows[static_cast<std::size_t>(i) * d + labels[static_cast<std::size_t>(i)]] = 1.0;
    Sample s;
    s.kind = Sample::Kind::DigitSet;
    s.digits.rows = Tensor::matrix(n, d, std::move(rows));
    ds.push_back(std::move(s));
  }
  return ds;
}

Dataset gen_clouds2d(int count, int n, int classes, double sigma, std::uint64_t seed, bool augment) {
  if (n < 2) throw std::invalid_argument("gen_clouds2d: need at least 2 points");
  if (classes < 1) throw std::invalid_argument("gen_clouds2d: need at least 1 class");
  // Fixed asymmetric base constellations, deterministic per (n, classes).
  Rng shapes_rng(0x2d5eedULL);
  std::vector<Tensor> base;
  base.reserve(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    std::vector<double> pts(static_cast<std::size_t>(n) * 2);
    for (double& v : pts) v = shapes_rng.uniform(-1.0, 1.0);
    base.push_back(Tensor::matrix(n, 2, std::move(pts)));
  }
  Rng rng(seed);
  Dataset ds;
  ds.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int cls = i % classes;
    std::vector<double> pos(base[static_cast<std::size_t>(cls)].data().begin(),
                            base[static_cast<std::size_t>(cls)].data().end());
    for (double& v : pos) v += sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0;
    Tensor positions = Tensor::matrix(n, 2, std::move(pos));
    if (augment) positions = apply(random_element(GroupTag::SO2, 2, rng), positions);
    Sample s;
    s.kind = Sample::Kind::PointCloud;
    s.cloud.positions = positions;
    s.cloud.label = cls;
    ds.push_back(std::move(s));
  }
  return ds;
}

namespace {

json tensor_to_json(const Tensor& t) {
  json j;
  j["shape"] = t.shape();
  j["data"] = std::vector<double>(t.data().begin(), t.data().end());
  return j;
}

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  for (const Sample& s : ds) {
    json j;
    if (s.kind == Sample::Kind::PointCloud) {
      j["kind"] = "pointcloud";
      j["positions"] = tensor_to_json(s.cloud.positions);
      if (s.cloud.features) j["features"] = tensor_to_json(*s.cloud.features);
      if (s.cloud.label) j["label"] = *s.cloud.label;
    } else {
      j["kind"] = "digitset";
      j["rows"] = tensor_to_json(s.digits.rows);
    }
    out << j.dump() << '\n';
  }
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  Dataset ds;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(lineno, "line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      Sample s;
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "pointcloud") {
        s.kind = Sample::Kind::PointCloud;
        s.cloud.positions = tensor_from_json(j.at("positions"));
        if (j.contains("features")) s.cloud.features = tensor_from_json(j.at("features"));
        if (j.contains("label")) s.cloud.label = j.at("label").get<int>();
      } else if (kind == "digitset") {
        s.kind = Sample::Kind::DigitSet;
        s.digits.rows = tensor_from_json(j.at("rows"));
      } else {
        throw std::runtime_error("unknown kind '" + kind + "'");
      }
      ds.push_back(std::move(s));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(lineno, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return ds;
}

std::string string_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("file_hash: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return string_hash(ss.str());
}

}  // namespace canonae
