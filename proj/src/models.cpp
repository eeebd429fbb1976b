#include "ssm/models.hpp"

#include <cmath>

#include "ssm/json_io.hpp"
#include "ssm/parallel.hpp"

namespace ssm {

using nlohmann::json;

std::string_view to_string(ExecMode mode) {
  switch (mode) {
    case ExecMode::recurrent: return "recurrent";
    case ExecMode::scan: return "scan";
    case ExecMode::conv: return "conv";
  }
  return "?";
}

ExecMode parse_exec_mode(std::string_view name) {
  if (name == "recurrent" || name == "rec") return ExecMode::recurrent;
  if (name == "scan") return ExecMode::scan;
  if (name == "conv" || name == "convolution") return ExecMode::conv;
  throw std::invalid_argument("unknown execution mode: " + std::string(name));
}

int LtiModel::channels() const {
  if (const auto* bank = std::get_if<SisoBank>(&params)) return static_cast<int>(bank->channels.size());
  if (const auto* c = std::get_if<ContinuousSystem>(&params)) return c->channels();
  return std::get<DiscreteSystem>(params).channels();
}

ExecMode LtiModel::preferred_mode() const {
  return (kind == ModelKind::S4 || kind == ModelKind::S4D) ? ExecMode::conv : ExecMode::scan;
}

ModelKind kind_of(const AnyModel& m) {
  if (const auto* lti = std::get_if<LtiModel>(&m)) return lti->kind;
  if (std::holds_alternative<S6Model>(m)) return ModelKind::S6;
  return ModelKind::RGLRU;
}

std::vector<DiscreteSystem> discretize_bank(const LtiModel& model) {
  const auto* bank = std::get_if<SisoBank>(&model.params);
  if (!bank) throw std::invalid_argument("discretize_bank: model is not a SISO bank");
  if (model.kind == ModelKind::S4) throw std::invalid_argument("discretize_bank: S4 transitions are DPLR, not diagonal");
  std::vector<DiscreteSystem> out;
  out.reserve(bank->channels.size());
  for (const auto& ch : bank->channels) out.push_back(zoh(ch));
  return out;
}

DiscreteSystem to_mimo(const LtiModel& model) {
  if (const auto* c = std::get_if<ContinuousSystem>(&model.params))
    return model.discretization == Discretization::zoh ? zoh(*c) : bilinear(*c);
  if (const auto* d = std::get_if<DiscreteSystem>(&model.params)) return *d;
  const auto subs = discretize_bank(model);
  const int q = static_cast<int>(subs.size());
  int total = 0;
  for (const auto& s : subs) total += s.state_size();
  DiscreteSystem out;
  out.abar.resize(total);
  out.bbar = CMat::Zero(total, q);
  out.cbar = CMat::Zero(q, total);
  out.dbar.resize(q);
  int offset = 0;
  for (int j = 0; j < q; ++j) {
    const int p = subs[j].state_size();
    out.abar.segment(offset, p) = subs[j].abar;
    out.bbar.block(offset, j, p, 1) = subs[j].bbar;
    out.cbar.block(j, offset, 1, p) = subs[j].cbar;
    out.dbar(j) = subs[j].dbar(0);
    offset += p;
  }
  return out;
}

namespace {

Sequence run_diagonal(const DiscreteSystem& sys, const Sequence& u, ExecMode mode, int workers) {
  switch (mode) {
    case ExecMode::recurrent: return run_recurrent(sys, u);
    case ExecMode::scan: return run_scan(sys, u, {.workers = workers});
    case ExecMode::conv: return run_convolution(sys, u, workers);
  }
  throw std::logic_error("unreachable");
}

Sequence column(const Sequence& u, int j) { return Sequence(u.data().col(j)); }

}  // namespace

Sequence lti_forward(const LtiModel& model, const Sequence& u, ExecMode mode, int workers) {
  if (u.channels() != model.channels())
    throw std::invalid_argument("lti_forward: input has " + std::to_string(u.channels()) + " channels, model has " +
                                std::to_string(model.channels()));
  if (const auto* bank = std::get_if<SisoBank>(&model.params)) {
    const int q = u.channels();
    RMat y(u.length(), q);
    parallel_chunks(workers, q, [&](int, int jb, int je) {
      for (int j = jb; j < je; ++j) {
        const Sequence uj = column(u, j);
        const ContinuousSystem& ch = bank->channels[j];
        Sequence yj;
        if (model.kind == ModelKind::S4) {
          const DplrDiscrete dplr = ch.low_rank ? bilinear_dplr(ch) : DplrDiscrete(ch);
          if (mode == ExecMode::scan)
            throw std::invalid_argument("lti_forward: S4 transition is not diagonal; use recurrent or conv");
          yj = mode == ExecMode::recurrent ? run_recurrent(dplr, uj)
                                           : run_convolution(materialize_kernel(dplr, uj.length()), dplr.dbar(), uj);
        } else {
          yj = run_diagonal(zoh(ch), uj, mode, 1);
        }
        y.col(j) = yj.data().col(0);
      }
    });
    return Sequence(std::move(y));
  }
  return run_diagonal(to_mimo(model), u, mode, workers);
}

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

TimeVaryingParams s6_compute_params(const S6Model& model, const Sequence& u) {
  const int T = u.length();
  const int q = model.channels();
  const int n = model.state_size();
  if (u.channels() != q) throw std::invalid_argument("s6_compute_params: channel mismatch");
  TimeVaryingParams tv;
  tv.channels = q;
  tv.abar_seq.resize(T, q * n);
  tv.drive_seq.resize(T, q * n);
  tv.c_seq = RMat(T, n);
  tv.delta.resize(T);
  const RMat b_seq = u.data() * model.w_b.transpose();  // T x n
  *tv.c_seq = u.data() * model.w_c.transpose();
  const RVec pre = u.data() * model.w_delta.transpose();
  for (int k = 0; k < T; ++k) {
    const double dk = softplus(pre(k) + model.delta_bias);
    tv.delta(k) = dk;
    for (int i = 0; i < n; ++i) {
      const double z = dk * model.lambda(i);
      const double a = std::exp(z);
      const double b = dk * expm1_over(z) * b_seq(k, i);
      for (int j = 0; j < q; ++j) {
        tv.abar_seq(k, j * n + i) = a;
        tv.drive_seq(k, j * n + i) = b * u(k, j);
      }
    }
  }
  return tv;
}

Sequence s6_forward(const S6Model& model, const Sequence& u, int workers) {
  const TimeVaryingParams tv = s6_compute_params(model, u);
  const RMat x = scan<double>(tv.abar_seq, tv.drive_seq, {.workers = workers});
  if (!x.allFinite()) throw DivergenceError("s6_forward: non-finite state", u.length() - 1);
  const int n = model.state_size();
  RMat y(u.length(), u.channels());
  for (int k = 0; k < u.length(); ++k)
    for (int j = 0; j < u.channels(); ++j)
      y(k, j) = x.row(k).segment(j * n, n).dot(tv.c_seq->row(k)) + model.d(j) * u(k, j);
  return Sequence(std::move(y));
}

TimeVaryingParams rglru_compute_params(const RgLruModel& model, const Sequence& u) {
  const int p = model.channels();
  if (u.channels() != p) throw std::invalid_argument("rglru: the recurrence requires p = q");
  if (!(model.c > 0.0)) throw std::invalid_argument("rglru: c must be positive");
  const int T = u.length();
  TimeVaryingParams tv;
  tv.channels = p;
  tv.abar_seq.resize(T, p);
  tv.drive_seq.resize(T, p);
  const RMat gate_a = u.data() * model.w_delta.transpose();
  const RMat gate_b = u.data() * model.w_b.transpose();
  for (int k = 0; k < T; ++k)
    for (int i = 0; i < p; ++i) {
      const double a = std::exp(-model.c * softplus(model.w_a(i)) * sigmoid(gate_a(k, i)));
      tv.abar_seq(k, i) = a;
      tv.drive_seq(k, i) = std::sqrt(1.0 - a * a) * sigmoid(gate_b(k, i)) * u(k, i);
    }
  return tv;
}

Sequence rglru_forward(const RgLruModel& model, const Sequence& u, int workers) {
  const TimeVaryingParams tv = rglru_compute_params(model, u);
  return Sequence(scan<double>(tv.abar_seq, tv.drive_seq, {.workers = workers}));
}

Sequence forward(const AnyModel& model, const Sequence& u, int workers) {
  return std::visit(
      [&](const auto& m) -> Sequence {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, LtiModel>) return lti_forward(m, u, m.preferred_mode(), workers);
        else if constexpr (std::is_same_v<M, S6Model>) return s6_forward(m, u, workers);
        else return rglru_forward(m, u, workers);
      },
      model);
}

json to_json(const AnyModel& model) {
  json j = {{"format_version", kFormatVersion}, {"model_kind", std::string(to_string(kind_of(model)))}};
  if (const auto* lti = std::get_if<LtiModel>(&model)) {
    j["discretization"] = lti->discretization == Discretization::zoh ? "zoh" : "bilinear";
    if (const auto* bank = std::get_if<SisoBank>(&lti->params)) {
      j["channels"] = json::array();
      for (const auto& c : bank->channels) j["channels"].push_back(to_json(c));
    } else if (const auto* c = std::get_if<ContinuousSystem>(&lti->params)) {
      j["system"] = to_json(*c);
    } else {
      j["system"] = to_json(std::get<DiscreteSystem>(lti->params));
    }
  } else if (const auto* s6 = std::get_if<S6Model>(&model)) {
    j["lambda"] = to_json(s6->lambda);
    j["w_delta"] = to_json(s6->w_delta);
    j["delta_bias"] = s6->delta_bias;
    j["w_b"] = to_json(s6->w_b);
    j["w_c"] = to_json(s6->w_c);
    j["d"] = to_json(s6->d);
  } else {
    const auto& rg = std::get<RgLruModel>(model);
    j["w_a"] = to_json(rg.w_a);
    j["w_delta"] = to_json(rg.w_delta);
    j["w_b"] = to_json(rg.w_b);
    j["c"] = rg.c;
  }
  return j;
}

AnyModel model_from_json(const json& j) {
  if (j.at("format_version").get<int>() != kFormatVersion) throw std::invalid_argument("unsupported model format version");
  const ModelKind kind = parse_model_kind(j.at("model_kind").get<std::string>());
  switch (kind) {
    case ModelKind::S4:
    case ModelKind::S4D: {
      SisoBank bank;
      for (const auto& c : j.at("channels")) bank.channels.push_back(continuous_from_json(c));
      return LtiModel{kind, std::move(bank), Discretization::zoh};
    }
    case ModelKind::S5:
      return LtiModel{kind, continuous_from_json(j.at("system")),
                      j.value("discretization", "zoh") == "zoh" ? Discretization::zoh : Discretization::bilinear};
    case ModelKind::LRU:
      return LtiModel{kind, discrete_from_json(j.at("system")), Discretization::zoh};
    case ModelKind::S6: {
      S6Model m;
      m.lambda = rvec_from_json(j.at("lambda"));
      m.w_delta = rmat_from_json(j.at("w_delta"));
      m.delta_bias = j.at("delta_bias").get<double>();
      m.w_b = rmat_from_json(j.at("w_b"));
      m.w_c = rmat_from_json(j.at("w_c"));
      m.d = rvec_from_json(j.at("d"));
      return m;
    }
    case ModelKind::RGLRU: {
      RgLruModel m;
      m.w_a = rvec_from_json(j.at("w_a"));
      m.w_delta = rmat_from_json(j.at("w_delta"));
      m.w_b = rmat_from_json(j.at("w_b"));
      m.c = j.at("c").get<double>();
      return m;
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace ssm
