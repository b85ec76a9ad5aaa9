#pragma once

// Contrastive fine-tuning of the toy model.
//
// For example i in a batch the softmax candidates are its positive, its hard
// negatives, and the positives of every other example in the batch:
//
//   loss_i = -log( exp(cos(h_i, h_i+)/tau) / sum_c exp(cos(h_i, h_c)/tau) )
//
// The batch loss is the mean of loss_i. Gradients flow through cosine,
// pooling and the full transformer, including the trainable end token.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "echoembed/error.hpp"
#include "echoembed/pooling.hpp"
#include "echoembed/random.hpp"
#include "echoembed/strategy.hpp"
#include "echoembed/synthetic_bench.hpp"
#include "echoembed/templating.hpp"
#include "echoembed/toy_model.hpp"

namespace echoembed {

struct TrainingExample {
  std::string query;
  std::string positive;
  std::vector<std::string> hard_negatives;
  std::string instruction;
  bool symmetric = false;
  std::string dataset_id;
};

struct TrainConfig {
  double tau = 1.0 / 50.0;
  double learning_rate = 8e-4;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t steps = 100;
  std::uint64_t seed = 0;
  Pooling pooling = Pooling::mean;
  Strategy strategy = Strategy::echo;

  void validate() const {
    if (!(tau > 0.0)) throw Error(Errc::invalid_config, "tau must be > 0");
    if (batch_size < 2) throw Error(Errc::invalid_config, "batch_size must be >= 2");
    if (!(learning_rate >= 0.0)) throw Error(Errc::invalid_config, "learning_rate must be >= 0");
    if (strategy == Strategy::summarization) throw Error(Errc::invalid_config, "train with classical or echo");
    if (pooling == Pooling::sequence_last) throw Error(Errc::invalid_config, "train with mean or last pooling");
  }
};

// ---------------------------------------------------------------------------
// Loss.

struct SimcseTerms {
  double loss = 0.0;
  std::vector<double> d_anchor;
  std::vector<std::vector<double>> d_candidates;  // [0] is the positive
};

namespace detail {

/// cos(u, v) and its gradients with respect to u and v.
inline double cosine_with_grad(std::span<const double> u, std::span<const double> v, std::vector<double>* du,
                               std::vector<double>* dv) {
  const double uu = dot(u, u);
  const double vv = dot(v, v);
  if (!(uu > 0.0) || !(vv > 0.0)) throw Error(Errc::zero_vector, "cosine of a zero vector");
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  const double c = dot(u, v) / (nu * nv);
  if (du) {
    du->resize(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) (*du)[i] = v[i] / (nu * nv) - c * u[i] / uu;
  }
  if (dv) {
    dv->resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) (*dv)[i] = u[i] / (nu * nv) - c * v[i] / vv;
  }
  return c;
}

}  // namespace detail

/// Loss and gradients for one anchor. `candidates[0]` is the positive.
inline SimcseTerms simcse_terms(std::span<const double> anchor, const std::vector<std::span<const double>>& candidates,
                                double tau) {
  SimcseTerms out;
  out.d_anchor.assign(anchor.size(), 0.0);
  out.d_candidates.assign(candidates.size(), std::vector<double>(anchor.size(), 0.0));
  if (candidates.size() <= 1) {
    // A softmax over one candidate is exactly 1; still reject zero vectors.
    for (const auto& c : candidates) detail::cosine_with_grad(anchor, c, nullptr, nullptr);
    return out;
  }
  std::vector<double> logits(candidates.size());
  std::vector<std::vector<double>> du(candidates.size()), dv(candidates.size());
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    logits[j] = detail::cosine_with_grad(anchor, candidates[j], &du[j], &dv[j]) / tau;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  out.loss = -(logits[0] - mx) + std::log(z);
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    const double p = std::exp(logits[j] - mx) / z;
    const double ds = (p - (j == 0 ? 1.0 : 0.0)) / tau;
    for (std::size_t i = 0; i < anchor.size(); ++i) {
      out.d_anchor[i] += ds * du[j][i];
      out.d_candidates[j][i] = ds * dv[j][i];
    }
  }
  return out;
}

/// Denominator runs over {positive} and the negatives.
inline double simcse_loss(std::span<const double> anchor, std::span<const double> positive,
                          const std::vector<std::vector<double>>& negatives, double tau) {
  if (!(tau > 0.0)) throw Error(Errc::invalid_config, "tau must be > 0");
  std::vector<std::span<const double>> cands{positive};
  for (const auto& n : negatives) cands.emplace_back(n);
  return simcse_terms(anchor, cands, tau).loss;
}

// ---------------------------------------------------------------------------
// Data.

/// One JSON object per line: {"query", "positive", "hard_negatives",
/// "instruction", "symmetric", "dataset_id"}.
inline std::vector<TrainingExample> parse_training_data(std::istream& in) {
  std::vector<TrainingExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank(line)) continue;
    TrainingExample ex;
    try {
      const auto j = nlohmann::json::parse(line);
      ex.query = j.at("query").get<std::string>();
      ex.positive = j.at("positive").get<std::string>();
      ex.hard_negatives = j.value("hard_negatives", std::vector<std::string>{});
      ex.instruction = j.value("instruction", std::string{});
      ex.symmetric = j.value("symmetric", false);
      ex.dataset_id = j.at("dataset_id").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::malformed_row, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (detail::is_blank(ex.positive) || ex.dataset_id.empty()) {
      throw Error(Errc::malformed_row, "line " + std::to_string(line_no) + ": positive and dataset_id are required");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<TrainingExample> load_training_data(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open training data " + path.string());
  return parse_training_data(in);
}

/// Query = q, positive = s+, hard negative = s-, one symmetric dataset.
inline std::vector<TrainingExample> examples_from_triplets(const std::vector<Triplet>& triplets,
                                                           const std::string& dataset_id,
                                                           const std::string& instruction) {
  std::vector<TrainingExample> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) {
    out.push_back({t[Member::q], t[Member::s_plus], {t[Member::s_minus]}, instruction, true, dataset_id});
  }
  return out;
}

struct Batch {
  std::string dataset_id;
  std::vector<std::size_t> members;  // indices into the example list
};

/// One pass over the data. Each dataset's examples are shuffled; then each
/// batch picks a dataset with probability proportional to what it has left
/// and takes up to batch_size examples from it.
inline std::vector<Batch> make_batches(const std::vector<TrainingExample>& examples, std::size_t batch_size,
                                       std::uint64_t seed) {
  if (batch_size == 0) throw Error(Errc::invalid_config, "batch_size must be >= 1");
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].dataset_id.empty()) throw Error(Errc::invalid_config, "example without dataset_id");
    auto [it, inserted] = groups.try_emplace(examples[i].dataset_id);
    if (inserted) order.push_back(examples[i].dataset_id);
    it->second.push_back(i);
  }
  Xoshiro256ss rng(seed);
  std::vector<std::size_t> cursor(order.size(), 0);
  for (const auto& id : order) deterministic_shuffle(groups[id], rng);

  std::vector<Batch> batches;
  std::size_t remaining = examples.size();
  while (remaining > 0) {
    auto pick = rng.below(remaining);
    std::size_t g = 0;
    for (; g < order.size(); ++g) {
      const auto left = groups[order[g]].size() - cursor[g];
      if (pick < left) break;
      pick -= left;
    }
    const auto& members = groups[order[g]];
    const auto take = std::min(batch_size, members.size() - cursor[g]);
    Batch b{order[g], {members.begin() + static_cast<std::ptrdiff_t>(cursor[g]),
                       members.begin() + static_cast<std::ptrdiff_t>(cursor[g] + take)}};
    cursor[g] += take;
    remaining -= take;
    batches.push_back(std::move(b));
  }
  return batches;
}

struct TrainingTemplates {
  Template query_side;
  Template document_side;
};

/// Symmetric examples use the instructed query template on both sides.
inline TrainingTemplates training_templates(const TrainingExample& ex, Strategy strategy) {
  auto query = training_template(strategy, TemplateRole::query_or_symmetric, ex.instruction);
  auto document = ex.symmetric ? query : training_template(strategy, TemplateRole::document, std::nullopt);
  return {std::move(query), std::move(document)};
}

/// Rendered query and positive. The trainable end token is appended at
/// tokenization time and joins the pooled occurrence.
inline std::pair<RenderedInput, RenderedInput> render_training_pair(const TrainingExample& ex, Strategy strategy) {
  const auto t = training_templates(ex, strategy);
  return {render(t.query_side, ex.query), render(t.document_side, ex.positive)};
}

// ---------------------------------------------------------------------------
// Batch loss and gradient.

namespace detail {

struct TapedEmbedding {
  ForwardTape tape;
  std::vector<std::size_t> rows;
  std::vector<double> pooled;
};

inline TapedEmbedding taped_embed(const ToyModel& model, const ToyTokenizer& tokenizer, std::string_view text,
                                  const Template& tmpl, Pooling pooling, bool with_tape) {
  const auto max_len = model.config().max_seq_len;
  const auto fitted = render_fitting(
      tmpl, text, [&](std::string_view s) { return std::optional<std::size_t>(tokenizer.tokenize(s).size()); },
      max_len, 1);
  auto tokens = tokenizer.tokenize(fitted.rendered.text);
  tokens.token_ids.push_back(tokenizer.eos_id());
  tokens.offsets.emplace_back(fitted.rendered.text.size(), fitted.rendered.text.size());
  const auto spans = align_tokens(fitted.rendered, tokens, true, pooled_occurrence(tmpl.strategy));

  TapedEmbedding out;
  out.rows = select_rows(spans, tmpl.strategy, pooling);
  const auto states = model.forward(tokens.token_ids, model.config().attention, with_tape ? &out.tape : nullptr);
  out.pooled = mean_pool(states, out.rows).values;
  if (!std::all_of(out.pooled.begin(), out.pooled.end(), [](double v) { return std::isfinite(v); })) {
    throw Error(Errc::divergence_detected, "non-finite embedding");
  }
  return out;
}

inline void backprop_pooled(const ToyModel& model, const TapedEmbedding& e, std::span<const double> d_pooled,
                            std::span<double> grad) {
  const auto d = model.config().dim;
  HiddenStates d_states(e.tape.token_ids.size(), d);
  const double w = 1.0 / static_cast<double>(e.rows.size());
  for (auto r : e.rows)
    for (std::size_t i = 0; i < d; ++i) d_states.data[r * d + i] += w * d_pooled[i];
  model.backward(e.tape, d_states, grad);
}

}  // namespace detail

/// Mean SimCSE loss over a batch. If `grad` is non-empty it receives (is
/// overwritten with) the gradient with respect to every model parameter.
inline double batch_loss(const ToyModel& model, const std::vector<const TrainingExample*>& batch,
                         const TrainConfig& config, std::span<double> grad = {}) {
  const ToyTokenizer tokenizer(model.config().vocab_size);
  const bool want_grad = !grad.empty();
  if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);

  // Layout: queries[i], positives[i], negatives[i][k].
  const std::size_t n = batch.size();
  std::vector<detail::TapedEmbedding> queries, positives;
  std::vector<std::vector<detail::TapedEmbedding>> negatives(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = training_templates(*batch[i], config.strategy);
    queries.push_back(detail::taped_embed(model, tokenizer, batch[i]->query, t.query_side, config.pooling, want_grad));
    positives.push_back(
        detail::taped_embed(model, tokenizer, batch[i]->positive, t.document_side, config.pooling, want_grad));
    for (const auto& neg : batch[i]->hard_negatives) {
      negatives[i].push_back(detail::taped_embed(model, tokenizer, neg, t.document_side, config.pooling, want_grad));
    }
  }

  const auto d = model.config().dim;
  std::vector<std::vector<double>> d_query(n, std::vector<double>(d, 0.0)), d_pos(n, std::vector<double>(d, 0.0));
  std::vector<std::vector<std::vector<double>>> d_neg(n);
  double total = 0.0;
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    d_neg[i].assign(negatives[i].size(), std::vector<double>(d, 0.0));
    std::vector<std::span<const double>> cands{positives[i].pooled};
    for (const auto& e : negatives[i]) cands.emplace_back(e.pooled);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cands.emplace_back(positives[j].pooled);
    const auto terms = simcse_terms(queries[i].pooled, cands, config.tau);
    total += terms.loss;
    if (!want_grad) continue;
    for (std::size_t k = 0; k < d; ++k) d_query[i][k] += scale * terms.d_anchor[k];
    std::size_t c = 0;
    for (std::size_t k = 0; k < d; ++k) d_pos[i][k] += scale * terms.d_candidates[c][k];
    ++c;
    for (std::size_t h = 0; h < negatives[i].size(); ++h, ++c)
      for (std::size_t k = 0; k < d; ++k) d_neg[i][h][k] += scale * terms.d_candidates[c][k];
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      for (std::size_t k = 0; k < d; ++k) d_pos[j][k] += scale * terms.d_candidates[c][k];
      ++c;
    }
  }
  const double loss = total * scale;
  if (!std::isfinite(loss)) throw Error(Errc::divergence_detected, "batch loss is not finite");

  if (want_grad) {
    for (std::size_t i = 0; i < n; ++i) {
      detail::backprop_pooled(model, queries[i], d_query[i], grad);
      detail::backprop_pooled(model, positives[i], d_pos[i], grad);
      for (std::size_t h = 0; h < negatives[i].size(); ++h) detail::backprop_pooled(model, negatives[i][h], d_neg[i][h], grad);
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Gradient verification.

struct GroupGradCheck {
  std::string tensor;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double relative_error = 0.0;
};

struct GradCheckReport {
  std::vector<GroupGradCheck> groups;
  double max_relative_error = 0.0;
  bool passed(double tolerance) const noexcept { return max_relative_error < tolerance; }
};

/// Norm below which a tensor's gradient counts as zero. Tensors with an
/// exactly vanishing gradient (the attention key bias, whose shift cancels in
/// the softmax) would otherwise compare pure rounding noise.
inline constexpr double kGradCheckNormFloor = 1e-6;

/// Central differences on every parameter, compared per tensor as
/// ||analytic - numeric|| / max(||analytic||, ||numeric||, floor).
inline GradCheckReport gradient_check(const ToyModel& model, const std::vector<const TrainingExample*>& batch,
                                      const TrainConfig& config, double step = 1e-4) {
  std::vector<double> analytic(model.parameter_count());
  batch_loss(model, batch, config, analytic);
  ToyModel probe = model;
  auto params = probe.parameters();
  GradCheckReport report;
  for (const auto& slot : model.tensors()) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = slot.offset; i < slot.offset + slot.size(); ++i) {
      const double saved = params[i];
      params[i] = saved + step;
      const double up = batch_loss(probe, batch, config);
      params[i] = saved - step;
      const double down = batch_loss(probe, batch, config);
      params[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    GroupGradCheck g{slot.name, std::sqrt(a2), std::sqrt(n2), 0.0};
    const double denom = std::max({g.analytic_norm, g.numeric_norm, kGradCheckNormFloor});
    g.relative_error = std::sqrt(diff2) / denom;
    report.max_relative_error = std::max(report.max_relative_error, g.relative_error);
    report.groups.push_back(std::move(g));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Training loop.

struct TrainResult {
  ToyModel model;
  std::vector<double> step_losses;
};

/// Momentum gradient descent: v <- momentum * v + g; p <- p - lr * v.
/// Batches of one example are skipped; a fresh shuffled pass starts whenever
/// the current one is used up.
inline TrainResult train(ToyModel model, const std::vector<TrainingExample>& data, const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw Error(Errc::invalid_config, "no training data");
  std::vector<double> velocity(model.parameter_count(), 0.0), grad(model.parameter_count());
  TrainResult result{std::move(model), {}};
  auto params = result.model.parameters();

  std::vector<Batch> batches;
  std::size_t next = 0, epoch = 0;
  while (result.step_losses.size() < config.steps) {
    if (next == batches.size()) {
      batches = make_batches(data, config.batch_size, config.seed + 0x9E37ULL * epoch++);
      next = 0;
      const bool any_usable =
          std::any_of(batches.begin(), batches.end(), [](const Batch& b) { return b.members.size() >= 2; });
      if (!any_usable) throw Error(Errc::invalid_config, "every batch has a single example");
    }
    const auto& b = batches[next++];
    if (b.members.size() < 2) continue;
    std::vector<const TrainingExample*> batch;
    for (auto i : b.members) batch.push_back(&data[i]);
    const double loss = batch_loss(result.model, batch, config, grad);
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity[i] = config.momentum * velocity[i] + grad[i];
      params[i] -= config.learning_rate * velocity[i];
    }
    result.step_losses.push_back(loss);
  }
  return result;
}

/// Embeds triplets the way training saw them: q on the query side, s+ and s-
/// on the document side, each with the end token.
inline TripletEmbedFn trained_embedder(Backend& backend, Strategy strategy, Pooling pooling,
                                       const std::string& instruction, bool symmetric) {
  TrainingExample proto{"", "", {}, instruction, symmetric, "eval"};
  auto t = training_templates(proto, strategy);
  return [t = std::move(t), pooling, &backend](const Triplet& tr, Member m) {
    const auto& tmpl = m == Member::q ? t.query_side : t.document_side;
    EmbedOptions opts;
    opts.append_eos = true;
    if (!tr.noise_for(m).empty()) opts.trailing = " " + tr.noise_for(m);
    return embed(tr[m], tmpl, pooling, backend, opts);
  };
}

}  // namespace echoembed
