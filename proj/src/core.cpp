#include "ssm/core.hpp"

#include <cctype>
#include <cmath>

namespace ssm {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::S4: return "S4";
    case ModelKind::S4D: return "S4D";
    case ModelKind::S5: return "S5";
    case ModelKind::LRU: return "LRU";
    case ModelKind::S6: return "S6";
    case ModelKind::RGLRU: return "RGLRU";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  std::string up;
  for (char c : name) {
    if (c == '-' || c == '_') continue;
    up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  if (up == "S4") return ModelKind::S4;
  if (up == "S4D") return ModelKind::S4D;
  if (up == "S5") return ModelKind::S5;
  if (up == "LRU") return ModelKind::LRU;
  if (up == "S6" || up == "MAMBA") return ModelKind::S6;
  if (up == "RGLRU") return ModelKind::RGLRU;
  throw std::invalid_argument("unknown model kind: " + std::string(name));
}

bool is_time_varying(ModelKind kind) { return kind == ModelKind::S6 || kind == ModelKind::RGLRU; }

Sequence::Sequence(RMat data) : data_(std::move(data)) {
  if (data_.rows() < 1 || data_.cols() < 1) throw std::invalid_argument("sequence must have T >= 1 and q >= 1");
  if (!data_.allFinite()) throw std::invalid_argument("sequence contains non-finite entries");
}

Sequence Sequence::zeros(int length, int channels) { return Sequence(RMat::Zero(length, channels)); }

std::vector<Violation> validate_system(const DiscreteSystem& sys, ValidateOptions opts) {
  std::vector<Violation> out;
  const int p = sys.state_size();
  const int q = sys.channels();
  if (p < 1) out.push_back({"p >= 1", -1, "empty state"});
  if (q < 1) out.push_back({"q >= 1", -1, "no channels"});
  if (sys.bbar.rows() != p || sys.bbar.cols() != q)
    out.push_back({"bbar is p x q", -1, "got " + std::to_string(sys.bbar.rows()) + "x" + std::to_string(sys.bbar.cols())});
  if (sys.cbar.rows() != q || sys.cbar.cols() != p)
    out.push_back({"cbar is q x p", -1, "got " + std::to_string(sys.cbar.rows()) + "x" + std::to_string(sys.cbar.cols())});
  for (int i = 0; i < p; ++i) {
    const cplx a = sys.abar(i);
    if (!std::isfinite(a.real()) || !std::isfinite(a.imag())) {
      out.push_back({"abar finite", i, "non-finite eigenvalue"});
    } else if (opts.memory && std::abs(a) > 1.0 + opts.disk_slack) {
      out.push_back({"|abar| <= 1", i, "modulus " + std::to_string(std::abs(a))});
    }
  }
  if (!sys.bbar.allFinite()) out.push_back({"bbar finite", -1, ""});
  if (!sys.cbar.allFinite()) out.push_back({"cbar finite", -1, ""});
  if (!sys.dbar.allFinite()) out.push_back({"dbar finite", -1, ""});
  return out;
}

std::vector<Violation> validate_system(const ContinuousSystem& sys, bool stable) {
  std::vector<Violation> out;
  const int p = sys.state_size();
  const int q = sys.channels();
  if (p < 1) out.push_back({"p >= 1", -1, "empty state"});
  if (q < 1) out.push_back({"q >= 1", -1, "no channels"});
  if (!(sys.delta > 0.0) || !std::isfinite(sys.delta)) out.push_back({"delta > 0", -1, std::to_string(sys.delta)});
  if (sys.B.rows() != p || sys.B.cols() != q) out.push_back({"B is p x q", -1, ""});
  if (sys.C.rows() != q || sys.C.cols() != p) out.push_back({"C is q x p", -1, ""});
  if (sys.low_rank && (sys.low_rank->r.size() != p || sys.low_rank->s.size() != p))
    out.push_back({"low_rank vectors have length p", -1, ""});
  if (stable) {
    for (int i = 0; i < p; ++i)
      if (sys.lambda(i).real() > 0.0) out.push_back({"Re(lambda) <= 0", i, std::to_string(sys.lambda(i).real())});
  }
  return out;
}

double spectral_radius(const DiscreteSystem& sys) {
  double r = 0.0;
  for (int i = 0; i < sys.state_size(); ++i) r = std::max(r, std::abs(sys.abar(i)));
  return r;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return splitmix64(splitmix64(root ^ h) + index);
}

}  // namespace ssm
