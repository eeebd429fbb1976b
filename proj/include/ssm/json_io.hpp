#pragma once

// JSON encoding of the core types. Complex numbers are [re, im] pairs,
// matrices are arrays of rows.

#include <json.hpp>

#include "ssm/core.hpp"

namespace ssm {

inline constexpr int kFormatVersion = 1;

nlohmann::json to_json(const RMat& m);
nlohmann::json to_json(const CMat& m);
nlohmann::json to_json(const RVec& v);
nlohmann::json to_json(const CVec& v);
RMat rmat_from_json(const nlohmann::json& j);
CMat cmat_from_json(const nlohmann::json& j);
RVec rvec_from_json(const nlohmann::json& j);
CVec cvec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Sequence& s);
nlohmann::json to_json(const ContinuousSystem& s);
nlohmann::json to_json(const DiscreteSystem& s);

Sequence sequence_from_json(const nlohmann::json& j);
ContinuousSystem continuous_from_json(const nlohmann::json& j);
DiscreteSystem discrete_from_json(const nlohmann::json& j);

}  // namespace ssm
