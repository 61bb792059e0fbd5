#include "attncheck/config.hpp"

#include "attncheck/rng.hpp"

namespace attncheck {

json AttentionConfig::to_json() const {
  json pos_j{{"scheme", to_string(pos.scheme)}};
  if (pos.scheme == PosScheme::LearnedAbsolute) pos_j["max_positions"] = pos.max_positions;
  if (pos.scheme == PosScheme::RelativeBucketed) {
    pos_j["num_buckets"] = pos.num_buckets;
    pos_j["max_distance"] = pos.max_distance;
  }
  return json{
      {"B", B},
      {"L", L},
      {"d_m", d_m},
      {"n_h", n_h},
      {"d_h", d_h},
      {"d_q", d_q},
      {"d_k", d_k},
      {"d_v", d_v},
      {"scaling_enabled", scaling_enabled},
      {"mask_mode", to_string(mask_mode)},
      {"mask_convention", mask_convention},
      {"dropout_rate", dropout_rate},
      {"dropout_placement", to_string(dropout_placement)},
      {"pos_encoding", pos_j},
      {"dtype_x", to_string(dtype_x)},
      {"dtype_wq", to_string(dtype_wq)},
      {"dtype_wk", to_string(dtype_wk)},
      {"dtype_wv", to_string(dtype_wv)},
      {"input_std", input_std},
      {"padding", padding},
      {"kernel_preference", kernel_preference},
      {"dispatch_policy", to_string(dispatch_policy)},
      {"m_avail", m_avail},
      {"seed", seed},
  };
}

AttentionConfig AttentionConfig::from_json(const json& j) {
  AttentionConfig c;
  try {
    c.B = j.value("B", c.B);
    c.L = j.value("L", c.L);
    c.d_m = j.value("d_m", c.d_m);
    c.n_h = j.value("n_h", c.n_h);
    c.d_h = j.value("d_h", c.d_h);
    c.d_q = j.value("d_q", c.d_q);
    c.d_k = j.value("d_k", c.d_k);
    c.d_v = j.value("d_v", c.d_v);
    c.scaling_enabled = j.value("scaling_enabled", c.scaling_enabled);
    if (j.contains("mask_mode")) c.mask_mode = mask_mode_from_string(j["mask_mode"]);
    c.mask_convention = j.value("mask_convention", c.mask_convention);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    if (j.contains("dropout_placement"))
      c.dropout_placement = dropout_placement_from_string(j["dropout_placement"]);
    if (j.contains("pos_encoding")) {
      const json& p = j["pos_encoding"];
      c.pos.scheme = pos_scheme_from_string(p.value("scheme", "NoneP"));
      c.pos.max_positions = p.value("max_positions", c.pos.max_positions);
      c.pos.num_buckets = p.value("num_buckets", c.pos.num_buckets);
      c.pos.max_distance = p.value("max_distance", c.pos.max_distance);
    }
    if (j.contains("dtype_x")) c.dtype_x = dtype_from_string(j["dtype_x"]);
    if (j.contains("dtype_wq")) c.dtype_wq = dtype_from_string(j["dtype_wq"]);
    if (j.contains("dtype_wk")) c.dtype_wk = dtype_from_string(j["dtype_wk"]);
    if (j.contains("dtype_wv")) c.dtype_wv = dtype_from_string(j["dtype_wv"]);
    c.input_std = j.value("input_std", c.input_std);
    if (j.contains("padding")) c.padding = j["padding"].get<std::vector<int>>();
    c.kernel_preference = j.value("kernel_preference", c.kernel_preference);
    if (j.contains("dispatch_policy"))
      c.dispatch_policy = dispatch_policy_from_string(j["dispatch_policy"]);
    c.m_avail = j.value("m_avail", c.m_avail);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("config parse failure: ") + e.what());
  }
  return c;
}

std::vector<std::string> AttentionConfig::validate_structure() const {
  std::vector<std::string> problems;
  auto positive = [&](int64_t v, const char* name) {
    if (v <= 0) problems.push_back(std::string(name) + " must be positive");
  };
  positive(B, "B");
  positive(L, "L");
  positive(d_m, "d_m");
  positive(n_h, "n_h");
  positive(d_h, "d_h");
  positive(d_q, "d_q");
  positive(d_k, "d_k");
  positive(d_v, "d_v");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    problems.push_back("dropout_rate must lie in [0, 1)");
  if (mask_convention != "AdditiveNegInf")
    problems.push_back("unknown mask_convention: " + mask_convention);
  if (!padding.empty() && static_cast<int64_t>(padding.size()) != B * L)
    problems.push_back("padding length must equal B*L");
  for (int p : padding)
    if (p != 0 && p != 1) {
      problems.push_back("padding entries must be 0 or 1");
      break;
    }
  if (pos.scheme == PosScheme::LearnedAbsolute && pos.max_positions <= 0)
    problems.push_back("max_positions must be positive");
  if (pos.scheme == PosScheme::RelativeBucketed) {
    if (pos.num_buckets < 2) problems.push_back("num_buckets must be >= 2");
    if (pos.max_distance < 1) problems.push_back("max_distance must be >= 1");
  }
  if (m_avail <= 0) problems.push_back("m_avail must be positive");
  return problems;
}

uint64_t AttentionConfig::digest() const {
  return hash_label(to_json().dump());
}

AttentionConfig default_base_config(uint64_t seed) {
  AttentionConfig c;
  c.B = 2;
  c.L = 24;
  c.d_m = 32;
  c.n_h = 2;
  c.d_h = 16;
  c.d_q = c.d_k = c.d_v = 32;
  c.mask_mode = MaskMode::Causal;
  c.seed = seed;
  return c;
}

}  // namespace attncheck
