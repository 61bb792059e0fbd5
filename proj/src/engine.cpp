#include "attncheck/engine.hpp"

#include <algorithm>
#include <cmath>

#include "attncheck/rng.hpp"

namespace attncheck {

namespace {

json shape_json(const std::vector<int64_t>& s) { return json(s); }

Tensor random_normal(std::vector<int64_t> shape, double stddev, uint64_t seed, Dtype dtype) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.normal(0.0, stddev);
  return quantize(t, dtype);
}

/// Mean normalized entropy over finite probability rows; skips rows that are
/// not usable (NaN/inf) instead of throwing. Returns nullopt when no row is.
std::optional<double> lenient_mean_entropy(const Tensor& weights) {
  int64_t cols = weights.dim(-1);
  int64_t rows = weights.numel() / cols;
  double acc = 0.0;
  int64_t used = 0;
  for (int64_t r = 0; r < rows; ++r) {
    const double* p = weights.data.data() + r * cols;
    bool finite = true;
    for (int64_t j = 0; j < cols; ++j) {
      if (!std::isfinite(p[j])) {
        finite = false;
        break;
      }
    }
    if (!finite) continue;
    double h = 0.0;
    if (cols > 1) {
      for (int64_t j = 0; j < cols; ++j) {
        if (p[j] > 0.0) h -= p[j] * std::log(p[j]);
      }
      h /= std::log(static_cast<double>(cols));
    } else {
      h = 1.0;
    }
    acc += h;
    ++used;
  }
  if (used == 0) return std::nullopt;
  return acc / static_cast<double>(used);
}

std::vector<double> row_sums_of(const Tensor& weights) {
  int64_t cols = weights.dim(-1);
  int64_t rows = weights.numel() / cols;
  std::vector<double> sums(static_cast<size_t>(rows), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    const double* p = weights.data.data() + r * cols;
    double s = 0.0;
    for (int64_t j = 0; j < cols; ++j) s += p[j];
    sums[static_cast<size_t>(r)] = s;
  }
  return sums;
}

/// Largest attention mass any kept query row places on padded key columns.
std::optional<double> padding_mass(const Tensor& weights, const AttentionConfig& cfg) {
  if (!mask_has_padding(cfg.mask_mode) || cfg.padding.empty()) return std::nullopt;
  // weights: [B, H, L, L]
  int64_t B = weights.dim(0), H = weights.dim(1), L = weights.dim(-1);
  double worst = 0.0;
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t h = 0; h < H; ++h) {
      for (int64_t i = 0; i < L; ++i) {
        if (cfg.padding[static_cast<size_t>(b * L + i)] == 0) continue;  // padded query
        double mass = 0.0;
        for (int64_t j = 0; j < L; ++j) {
          if (cfg.padding[static_cast<size_t>(b * L + j)] != 0) continue;
          double w = weights.at({b, h, i, j});
          if (std::isfinite(w)) mass += w;
        }
        worst = std::max(worst, mass);
      }
    }
  }
  return worst;
}

struct DropoutResult {
  Tensor tensor;
  bool applied = false;
};

/// Deterministic Bernoulli stream over the elements, row-major.
DropoutResult apply_dropout(const Tensor& t, double rate, bool inverted, uint64_t seed) {
  if (rate <= 0.0) return {t, false};
  Rng rng(seed);
  Tensor out = t;
  double scale = inverted ? 1.0 / (1.0 - rate) : 1.0;
  for (double& v : out.data) {
    if (rng.bernoulli(rate)) {
      v = 0.0;
    } else {
      v *= scale;
    }
  }
  return {out, true};
}

}  // namespace

Tensor* AttentionWeights::find(const std::string& name) {
  if (name == "wq") return &wq;
  if (name == "wk") return &wk;
  if (name == "wv") return &wv;
  return nullptr;
}

void qkv_project(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                 Tensor& q, Tensor& k, Tensor& v) {
  auto project = [&](const Tensor& w, const char* name) {
    if (x.dim(-1) != w.dim(0)) {
      throw Error(ErrorCode::ShapeMismatch,
                  std::string("projection ") + name + " inner dim disagrees with input",
                  {{"x", shape_json(x.shape)}, {"w", shape_json(w.shape)}});
    }
    // x: [B, L, d_m]; w: [d_m, d]; plain product, no bias.
    int64_t B = x.dim(0), L = x.dim(1), dm = x.dim(2), d = w.dim(1);
    Tensor out = Tensor::zeros({B, L, d});
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t i = 0; i < L; ++i) {
        const double* xr = x.data.data() + (b * L + i) * dm;
        double* orow = out.data.data() + (b * L + i) * d;
        for (int64_t j = 0; j < d; ++j) {
          double acc = 0.0;
          for (int64_t t = 0; t < dm; ++t) acc += xr[t] * w.data[static_cast<size_t>(t * d + j)];
          orow[j] = acc;
        }
      }
    }
    return quantize(out, w.dtype);
  };
  q = project(wq, "wq");
  k = project(wk, "wk");
  v = project(wv, "wv");
}

Tensor split_heads(const Tensor& t, int64_t n_h) {
  int64_t d = t.dim(-1);
  if (n_h <= 0 || d % n_h != 0) {
    throw Error(ErrorCode::IndivisibleHeads, "head count does not divide the feature width",
                {{"d", d}, {"n_h", n_h}});
  }
  int64_t B = t.dim(0), L = t.dim(1), dh = d / n_h;
  Tensor out = Tensor::zeros({B, n_h, L, dh}, t.dtype);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t l = 0; l < L; ++l)
      for (int64_t h = 0; h < n_h; ++h)
        for (int64_t j = 0; j < dh; ++j)
          out.at({b, h, l, j}) = t.at({b, l, h * dh + j});
  return out;
}

Tensor merge_heads(const Tensor& t) {
  int64_t B = t.dim(0), H = t.dim(1), L = t.dim(2), dh = t.dim(3);
  Tensor out = Tensor::zeros({B, L, H * dh}, t.dtype);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t l = 0; l < L; ++l)
        for (int64_t j = 0; j < dh; ++j)
          out.at({b, l, h * dh + j}) = t.at({b, h, l, j});
  return out;
}

Tensor scaled_scores(const Tensor& q, const Tensor& k, bool scaling_enabled) {
  int64_t dq = q.dim(-1), dk = k.dim(-1);
  if (dq != dk) {
    throw Error(ErrorCode::QkDimMismatch, "query and key widths disagree",
                {{"d_q", dq}, {"d_k", dk}});
  }
  Tensor s = matmul(q, transpose_last2(k));
  if (scaling_enabled) {
    double inv = 1.0 / std::sqrt(static_cast<double>(dk));
    for (double& v : s.data) v *= inv;
  }
  s.dtype = promote_dtype(q.dtype, k.dtype);
  return s;
}

Tensor build_causal_mask(int64_t L) {
  Tensor m = Tensor::zeros({L, L});
  for (int64_t i = 0; i < L; ++i)
    for (int64_t j = i + 1; j < L; ++j) m.at({i, j}) = kNegMask;
  return m;
}

Tensor build_padding_mask(const std::vector<int>& keep, int64_t B, int64_t L) {
  if (static_cast<int64_t>(keep.size()) != B * L) {
    throw Error(ErrorCode::ShapeMismatch, "padding flags must have B*L entries",
                {{"expected", B * L}, {"got", keep.size()}});
  }
  Tensor m = Tensor::zeros({B, 1, 1, L});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t j = 0; j < L; ++j)
      if (keep[static_cast<size_t>(b * L + j)] == 0) m.at({b, 0, 0, j}) = kNegMask;
  return m;
}

Tensor apply_mask(const Tensor& scores, const Tensor& mask) {
  Tensor out = add_broadcast(scores, mask);
  out.dtype = scores.dtype;
  return out;
}

Tensor softmax_rows(const Tensor& scores) {
  Tensor out = scores;
  out.dtype = Dtype::F64Sim;
  int64_t cols = scores.dim(-1);
  int64_t rows = scores.numel() / cols;
  for (int64_t r = 0; r < rows; ++r) {
    double* p = out.data.data() + r * cols;
    double mx = p[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, p[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      p[j] = std::exp(p[j] - mx);
      sum += p[j];
    }
    for (int64_t j = 0; j < cols; ++j) p[j] /= sum;
  }
  return out;
}

std::vector<double> row_entropy_normalized(const Tensor& weights, double* mean) {
  int64_t cols = weights.dim(-1);
  int64_t rows = weights.numel() / cols;
  std::vector<double> out(static_cast<size_t>(rows), 0.0);
  double acc = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const double* p = weights.data.data() + r * cols;
    double sum = 0.0;
    for (int64_t j = 0; j < cols; ++j) sum += p[j];
    if (!(std::fabs(sum - 1.0) <= 1e-6)) {
      throw Error(ErrorCode::NotRowStochastic, "row is not a probability vector",
                  {{"row", r}, {"sum", std::isfinite(sum) ? json(sum) : json("non-finite")}});
    }
    double h;
    if (cols > 1) {
      h = 0.0;
      for (int64_t j = 0; j < cols; ++j)
        if (p[j] > 0.0) h -= p[j] * std::log(p[j]);
      h /= std::log(static_cast<double>(cols));
    } else {
      h = 1.0;
    }
    out[static_cast<size_t>(r)] = h;
    acc += h;
  }
  if (mean != nullptr) *mean = rows > 0 ? acc / static_cast<double>(rows) : 0.0;
  return out;
}

Tensor sinusoidal_embedding(const std::vector<int64_t>& positions, int64_t d) {
  Tensor out = Tensor::zeros({static_cast<int64_t>(positions.size()), d});
  for (size_t r = 0; r < positions.size(); ++r) {
    double pos = static_cast<double>(positions[r]);
    for (int64_t j = 0; j < d; ++j) {
      int64_t pair = j - (j % 2);
      double angle = pos / std::pow(10000.0, static_cast<double>(pair) / static_cast<double>(d));
      out.at({static_cast<int64_t>(r), j}) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return out;
}

Tensor learned_embedding(const std::vector<int64_t>& positions, const Tensor& table) {
  int64_t n = table.dim(0), d = table.dim(1);
  int64_t max_index = 0;
  for (int64_t p : positions) max_index = std::max(max_index, p);
  for (int64_t p : positions) {
    if (p < 0 || p >= n) {
      throw Error(ErrorCode::PositionOutOfRange, "position lookup past the embedding table",
                  {{"max_index", max_index}, {"table_size", n}});
    }
  }
  Tensor out = Tensor::zeros({static_cast<int64_t>(positions.size()), d}, table.dtype);
  for (size_t r = 0; r < positions.size(); ++r) {
    const double* src = table.data.data() + positions[r] * d;
    std::copy(src, src + d, out.data.data() + static_cast<int64_t>(r) * d);
  }
  return out;
}

int64_t relative_bucket(int64_t i, int64_t j, int64_t num_buckets, int64_t max_distance) {
  int64_t d = j - i;
  int64_t half = num_buckets / 2;
  int64_t base = d > 0 ? half : 0;
  int64_t a = std::llabs(d);
  if (half <= 1) return base;
  int64_t max_exact = half / 2;
  int64_t idx;
  if (a < max_exact) {
    idx = a;
  } else {
    double log_ratio = std::log(static_cast<double>(a) / static_cast<double>(max_exact)) /
                       std::log(static_cast<double>(max_distance) / static_cast<double>(max_exact));
    idx = max_exact +
          static_cast<int64_t>(log_ratio * static_cast<double>(half - max_exact));
    idx = std::min(idx, half - 1);
  }
  return base + idx;
}

Dtype promote_dtype(Dtype a, Dtype b) {
  if (a == b) return a;
  if (a == Dtype::F64Sim || b == Dtype::F64Sim) return Dtype::F64Sim;
  // Any remaining mix involves a half format; promote to single.
  return Dtype::F32Sim;
}

Tensor make_input(const AttentionConfig& config) {
  return random_normal({config.B, config.L, config.d_m}, config.input_std,
                       derive_seed(config.seed, "x"), config.dtype_x);
}

AttentionWeights make_weights(const AttentionConfig& config) {
  double stddev = 1.0 / std::sqrt(static_cast<double>(config.d_m));
  AttentionWeights w;
  w.wq = random_normal({config.d_m, config.d_q}, stddev, derive_seed(config.seed, "wq"),
                       config.dtype_wq);
  w.wk = random_normal({config.d_m, config.d_k}, stddev, derive_seed(config.seed, "wk"),
                       config.dtype_wk);
  w.wv = random_normal({config.d_m, config.d_v}, stddev, derive_seed(config.seed, "wv"),
                       config.dtype_wv);
  return w;
}

Tensor make_position_table(const AttentionConfig& config) {
  return random_normal({config.pos.max_positions, config.d_m}, 0.1,
                       derive_seed(config.seed, "pos_table"), Dtype::F64Sim);
}

std::vector<double> make_relative_bias(const AttentionConfig& config) {
  Rng rng(derive_seed(config.seed, "rel_bias"));
  std::vector<double> bias(static_cast<size_t>(config.pos.num_buckets));
  for (double& b : bias) b = rng.normal(0.0, 0.5);
  return bias;
}

ForwardResult attention_forward(const AttentionConfig& config,
                                const EngineOverrides& overrides) {
  return attention_forward(config, make_input(config), make_weights(config), overrides);
}

ForwardResult attention_forward(const AttentionConfig& config, const Tensor& x,
                                const AttentionWeights& weights,
                                const EngineOverrides& overrides) {
  ForwardResult result;
  RunTrace& trace = result.trace;
  trace.config = config;

  const int64_t L = config.L;
  std::vector<int64_t> positions(static_cast<size_t>(L));
  for (int64_t i = 0; i < L; ++i)
    positions[static_cast<size_t>(i)] = i + overrides.position_offset;
  trace.position_indices = positions;
  if (config.pos.scheme == PosScheme::LearnedAbsolute)
    trace.position_table_size = config.pos.max_positions;

  const bool mask_present = config.mask_mode != MaskMode::None;
  const KernelRegistry registry =
      overrides.registry ? *overrides.registry : KernelRegistry::standard();

  try {
    KernelDescriptor selected;
    DispatchEvent event;
    if (overrides.force_select_reference) {
      // Variant layer overrides the dispatcher and pins the universal kernel.
      const KernelDescriptor* reference = registry.find("reference");
      if (reference == nullptr)
        throw Error(ErrorCode::ConfigInvalid, "registry is missing the reference kernel");
      selected = *reference;
      event.requested = config.kernel_preference;
      event.selected = reference->id;
      event.reason = DispatchReason::SilentFallback;
      event.warned = false;
      event.cost_incurred = reference->cost_multiplier;
    } else {
      std::tie(selected, event) = dispatch(config, registry, config.dispatch_policy, mask_present);
    }
    trace.dispatch_events.push_back(event);
    trace.selected_kernel = selected;
    trace.wall_cost = event.cost_incurred *
                      static_cast<double>(config.B * config.n_h * L * L *
                                          std::max<int64_t>(config.d_h, 1)) /
                      1e6;

    if (auto oom = simulate_oom(config, config.m_avail)) {
      throw Error(ErrorCode::OutOfMemory, "score buffer exceeds the memory budget",
                  {{"required", oom->required}, {"available", oom->available}});
    }

    const bool rounded = selected.precision == PrecisionProfile::RoundedIntermediate;

    // Positional embeddings are added to the input before projection.
    Tensor x_enc = x;
    if (config.pos.scheme == PosScheme::SinusoidalAbsolute ||
        (config.pos.scheme == PosScheme::RelativeBucketed && overrides.disable_relative_bias)) {
      Tensor pe = sinusoidal_embedding(positions, config.d_m);
      x_enc = quantize(add_broadcast(x, reshape(pe, {1, L, config.d_m})), x.dtype);
    } else if (config.pos.scheme == PosScheme::LearnedAbsolute) {
      Tensor pe = learned_embedding(positions, make_position_table(config));
      x_enc = quantize(add_broadcast(x, reshape(pe, {1, L, config.d_m})), x.dtype);
    }

    Tensor q, k, v;
    qkv_project(x_enc, weights.wq, weights.wk, weights.wv, q, k, v);
    trace.stages.push_back(
        {"project", {{"q", summarize(q)}, {"k", summarize(k)}, {"v", summarize(v)}}});

    Tensor qh = split_heads(q, config.n_h);
    Tensor kh = split_heads(k, config.n_h);
    Tensor vh = split_heads(v, config.n_h);
    trace.stages.push_back(
        {"split_heads", {{"q", summarize(qh)}, {"k", summarize(kh)}, {"v", summarize(vh)}}});

    Tensor scores = scaled_scores(qh, kh, config.scaling_enabled);
    if (config.pos.scheme == PosScheme::RelativeBucketed && !overrides.disable_relative_bias) {
      std::vector<double> bias = make_relative_bias(config);
      int64_t B = scores.dim(0), H = scores.dim(1);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t i = 0; i < L; ++i)
            for (int64_t j = 0; j < L; ++j) {
              int64_t bucket =
                  relative_bucket(positions[static_cast<size_t>(i)],
                                  positions[static_cast<size_t>(j)], config.pos.num_buckets,
                                  config.pos.max_distance) +
                  overrides.relative_bucket_offset;
              bucket = std::clamp<int64_t>(bucket, 0, config.pos.num_buckets - 1);
              scores.at({b, h, i, j}) += bias[static_cast<size_t>(bucket)];
            }
    }
    scores = quantize(scores, overrides.force_score_dtype.value_or(scores.dtype));
    if (rounded) scores = quantize(scores, Dtype::F16Sim);
    trace.stages.push_back({"scores", {{"s", summarize(scores)}}});

    // Build the additive mask for the configured mode, overrides permitting.
    std::optional<Tensor> mask;
    if (mask_present) {
      if (overrides.zero_mask) {
        std::vector<int64_t> shape = mask_has_padding(config.mask_mode)
                                         ? std::vector<int64_t>{config.B, 1, L, L}
                                         : std::vector<int64_t>{L, L};
        mask = Tensor::zeros(shape);
      } else {
        std::optional<Tensor> causal;
        if (mask_has_causal(config.mask_mode)) {
          if (overrides.mask_frozen_len && *overrides.mask_frozen_len < L) {
            int64_t frozen = *overrides.mask_frozen_len;
            Tensor grown = Tensor::zeros({L, L});
            Tensor prefix = build_causal_mask(frozen);
            for (int64_t i = 0; i < frozen; ++i)
              for (int64_t j = 0; j < frozen; ++j) grown.at({i, j}) = prefix.at({i, j});
            causal = grown;
          } else {
            causal = build_causal_mask(L);
          }
        }
        std::optional<Tensor> pad;
        if (mask_has_padding(config.mask_mode) && !config.padding.empty())
          pad = build_padding_mask(config.padding, config.B, L);
        if (causal && pad) {
          mask = add_broadcast(*causal, *pad);
        } else if (causal) {
          mask = *causal;
        } else if (pad) {
          mask = *pad;
        }
      }
    }
    if (mask) trace.mask_snapshot = *mask;

    uint64_t dropout_seed = derive_seed(config.seed, "dropout");
    // Pre-normalization dropout removes score entries from the attention
    // graph entirely; softmax renormalizes over the survivors.
    auto drop_scores = [&](Tensor s) {
      if (config.dropout_placement != DropoutPlacement::BeforeSoftmax ||
          config.dropout_rate <= 0.0)
        return s;
      Rng rng(dropout_seed);
      for (double& v : s.data)
        if (rng.bernoulli(config.dropout_rate)) v = kNegMask;
      return s;
    };

    Tensor weights_eff;  // effective attention weights entering aggregation
    if (!overrides.mask_after_softmax) {
      Tensor masked = mask ? apply_mask(scores, *mask) : scores;
      trace.stages.push_back({"mask", {{"s", summarize(masked)}}});
      weights_eff = softmax_rows(drop_scores(masked));
      trace.stages.push_back({"softmax", {{"w", [&] {
                                 TensorSummary s = summarize(weights_eff);
                                 s.mean_norm_entropy = lenient_mean_entropy(weights_eff);
                                 return s;
                               }()}}});
    } else {
      // Faulty ordering: normalize first, then add the mask to the weights.
      Tensor w = softmax_rows(drop_scores(scores));
      trace.stages.push_back({"softmax", {{"w", [&] {
                                 TensorSummary s = summarize(w);
                                 s.mean_norm_entropy = lenient_mean_entropy(w);
                                 return s;
                               }()}}});
      weights_eff = mask ? apply_mask(w, *mask) : w;
      trace.stages.push_back({"mask", {{"s", summarize(weights_eff)}}});
    }

    TensorSummary weff_summary = summarize(weights_eff);
    weff_summary.row_sums = row_sums_of(weights_eff);
    weff_summary.mean_norm_entropy = lenient_mean_entropy(weights_eff);
    weff_summary.max_padding_mass = padding_mass(weights_eff, config);
    trace.weights_summary = weff_summary;

    Tensor w_final = weights_eff;
    DropoutResult drop{w_final, false};
    switch (config.dropout_placement) {
      case DropoutPlacement::BeforeSoftmax:
        break;  // already applied to the scores
      case DropoutPlacement::AfterSoftmaxPreAggregation:
        drop = apply_dropout(w_final, config.dropout_rate, /*inverted=*/true, dropout_seed);
        break;
      case DropoutPlacement::AfterNormalization_FAULTY:
        drop = apply_dropout(w_final, config.dropout_rate, /*inverted=*/false, dropout_seed);
        break;
    }
    w_final = drop.tensor;
    trace.stages.push_back({"dropout", {{"w", summarize(w_final)}}});

    if (rounded) w_final = quantize(w_final, Dtype::F16Sim);

    Tensor y_heads = matmul(w_final, vh);
    y_heads.dtype = promote_dtype(w_final.dtype, vh.dtype);
    trace.stages.push_back({"aggregate", {{"y", summarize(y_heads)}}});

    Tensor y;
    if (overrides.sum_heads_instead_of_concat) {
      // Sum head outputs and repeat the block instead of concatenating.
      int64_t B = y_heads.dim(0), H = y_heads.dim(1), dh = y_heads.dim(3);
      y = Tensor::zeros({B, L, H * dh}, y_heads.dtype);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t l = 0; l < L; ++l)
          for (int64_t j = 0; j < dh; ++j) {
            double sum = 0.0;
            for (int64_t h = 0; h < H; ++h) sum += y_heads.at({b, h, l, j});
            for (int64_t h = 0; h < H; ++h) y.at({b, l, h * dh + j}) = sum;
          }
    } else {
      y = merge_heads(y_heads);
    }
    if (rounded) y = quantize(y, Dtype::F16Sim);
    trace.stages.push_back({"merge_heads", {{"y", summarize(y)}}});

    trace.output_summary = summarize(y);
    if (overrides.embed_output) trace.output = y;
    result.output = std::move(y);
  } catch (const Error& e) {
    trace.raised_error = ErrorRecord::from_error(e);
  }
  return result;
}

}  // namespace attncheck
