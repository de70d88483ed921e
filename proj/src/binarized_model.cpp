#include "bihl/binarized_model.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "bihl/error.hpp"
#include "json.hpp"

namespace bihl {

int reconstruct_byte(const BinarizedPatch& p, int j) {
  int v = 0;
  for (int k = 1; k <= p.ng; ++k)
    v += int((p.planes[k - 1] >> j) & 1u) << (8 - k);
  return v;
}

BinarizedPatch binarize_patch(const HlFeatureMap& map, int y, int x, int ng) {
  if (ng < 1 || ng > 8)
    throw Error("config-mismatch", "binarize_patch: ng must be in 1..8");
  if (y < 0 || x < 0 || y > map.height - 8 || x > map.width - 8)
    throw Error("oob", "binarize_patch: 8x8 window at (" + std::to_string(y) +
                           "," + std::to_string(x) + ") leaves " +
                           std::to_string(map.width) + "x" +
                           std::to_string(map.height) + " map");
  BinarizedPatch p;
  p.ng = ng;
  for (int r = 0; r < 8; ++r) {
    const std::uint8_t* row = map.row(y + r) + x;
    for (int c = 0; c < 8; ++c) {
      const int j = r * 8 + c;
      const std::uint8_t v = row[c];
      for (int k = 1; k <= ng; ++k)
        p.planes[k - 1] |= std::uint64_t((v >> (8 - k)) & 1u) << j;
    }
  }
  return p;
}

BinarizedModel decompose(const std::array<double, 64>& w, int na, int ng) {
  if (na < 1) throw Error("config-mismatch", "decompose: na must be >= 1");
  BinarizedModel m;
  m.w = w;
  m.ng = ng;
  m.na = na;
  std::array<double, 64> r = w;
  for (int i = 0; i < na; ++i) {
    std::uint64_t bits = 0;
    double dot = 0.0;
    for (int j = 0; j < 64; ++j) {
      if (r[j] > 0.0) {
        bits |= std::uint64_t(1) << j;
        dot += r[j];
      } else {
        dot -= r[j];
      }
    }
    const double lambda = dot / 64.0;
    for (int j = 0; j < 64; ++j)
      r[j] -= ((bits >> j) & 1u) ? lambda : -lambda;
    m.basis.push_back({lambda, bits});
  }
  return m;
}

std::vector<double> decompose_residual_norms(const std::array<double, 64>& w, int na) {
  std::vector<double> norms;
  std::array<double, 64> r = w;
  auto l2 = [](const std::array<double, 64>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  norms.push_back(l2(r));
  for (int i = 0; i < na; ++i) {
    double dot = 0.0;
    std::uint64_t bits = 0;
    for (int j = 0; j < 64; ++j) {
      if (r[j] > 0.0) {
        bits |= std::uint64_t(1) << j;
        dot += r[j];
      } else {
        dot -= r[j];
      }
    }
    const double lambda = dot / 64.0;
    for (int j = 0; j < 64; ++j)
      r[j] -= ((bits >> j) & 1u) ? lambda : -lambda;
    norms.push_back(l2(r));
  }
  return norms;
}

double score_patch(const BinarizedModel& model, const BinarizedPatch& patch) {
  if (patch.ng != model.ng)
    throw Error("config-mismatch", "score_patch: patch has " +
                                       std::to_string(patch.ng) +
                                       " planes, model expects " +
                                       std::to_string(model.ng));
  double score = 0.0;
  for (const BasisTerm& t : model.basis) {
    long long inner = 0;
    for (int k = 1; k <= model.ng; ++k) {
      const std::uint64_t b = patch.planes[k - 1];
      const int pc_and = std::popcount(t.bits & b);
      const int pc_b = std::popcount(b);
      inner += static_cast<long long>(2 * pc_and - pc_b) << (8 - k);
    }
    score += t.lambda * double(inner);
  }
  return score;
}

namespace {

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf, 16);
}

std::uint64_t parse_hex16(const std::string& s) {
  if (s.size() != 16) throw Error("malformed", "basis bits must be 16 hex chars");
  std::uint64_t v = 0;
  for (char c : s) {
    int d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else throw Error("malformed", "basis bits must be lowercase hex");
    v = (v << 4) | std::uint64_t(d);
  }
  return v;
}

}  // namespace

void save_model(const ModelFile& mf, const std::string& path) {
  nlohmann::json j;
  j["format"] = "bihl-model";
  j["version"] = 1;
  j["ng"] = mf.model.ng;
  j["na"] = mf.model.na;
  j["w"] = mf.model.w;
  nlohmann::json basis = nlohmann::json::array();
  for (const BasisTerm& t : mf.model.basis)
    basis.push_back({{"lambda", t.lambda}, {"bits", hex16(t.bits)}});
  j["basis"] = std::move(basis);
  nlohmann::json scales = nlohmann::json::array();
  for (const ScaleSpec& s : mf.scales) scales.push_back({s.m, s.n});
  j["scales"] = std::move(scales);
  if (mf.calibration) {
    nlohmann::json cal = nlohmann::json::array();
    for (const auto& ab : *mf.calibration) cal.push_back({ab[0], ab[1]});
    j["calibration"] = std::move(cal);
  } else {
    j["calibration"] = nullptr;
  }

  std::ofstream out(path);
  if (!out) throw Error("io", path + ": cannot open for writing");
  out << j.dump(2) << "\n";
  if (!out) throw Error("io", path + ": write error");
}

ModelFile load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", path + ": cannot open for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed", path + ": " + e.what());
  }

  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!j.is_object() || !j.contains(key))
      throw Error("malformed", path + ": missing \"" + key + "\"");
    return j.at(key);
  };

  try {
    if (need("format").get<std::string>() != "bihl-model")
      throw Error("malformed", path + ": not a bihl-model file");
    if (!need("version").is_number_integer() || need("version").get<int>() != 1)
      throw Error("unsupported-version",
                  path + ": only version 1 is supported");

    ModelFile mf;
    mf.model.ng = need("ng").get<int>();
    mf.model.na = need("na").get<int>();
    if (mf.model.ng < 1 || mf.model.ng > 8)
      throw Error("malformed", path + ": ng must be in 1..8");
    if (mf.model.na < 1 || mf.model.na > 1024)
      throw Error("malformed", path + ": na out of range");

    const auto& w = need("w");
    if (!w.is_array() || w.size() != 64)
      throw Error("malformed", path + ": \"w\" must have 64 entries");
    for (int i = 0; i < 64; ++i) mf.model.w[i] = w.at(i).get<double>();

    const auto& basis = need("basis");
    if (!basis.is_array() || int(basis.size()) != mf.model.na)
      throw Error("malformed", path + ": \"basis\" must have na entries");
    for (const auto& term : basis) {
      BasisTerm t;
      t.lambda = term.at("lambda").get<double>();
      t.bits = parse_hex16(term.at("bits").get<std::string>());
      mf.model.basis.push_back(t);
    }

    const auto& scales = need("scales");
    if (!scales.is_array() || scales.empty())
      throw Error("malformed", path + ": \"scales\" must be a nonempty array");
    for (const auto& s : scales) {
      if (!s.is_array() || s.size() != 2)
        throw Error("malformed", path + ": scale entries must be [m,n]");
      int m = s.at(0).get<int>(), n = s.at(1).get<int>();
      if (!scale_valid(m, n))
        throw Error("malformed", path + ": (" + std::to_string(m) + "," +
                                     std::to_string(n) + ") is not a valid scale");
      mf.scales.push_back({m, n});
    }

    const auto& cal = need("calibration");
    if (!cal.is_null()) {
      if (!cal.is_array() || cal.size() != mf.scales.size())
        throw Error("malformed", path + ": calibration must be null or one [a,b] per scale");
      std::vector<std::array<double, 2>> pairs;
      for (const auto& ab : cal) {
        if (!ab.is_array() || ab.size() != 2)
          throw Error("malformed", path + ": calibration entries must be [a,b]");
        pairs.push_back({ab.at(0).get<double>(), ab.at(1).get<double>()});
      }
      mf.calibration = std::move(pairs);
    }
    return mf;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed", path + ": " + e.what());
  }
}

}  // namespace bihl
