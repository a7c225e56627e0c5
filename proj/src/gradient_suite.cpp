// SPDX-License-Identifier: Apache-2.0
#include "gfss/gradient_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>

#include "gfss/head.hpp"
#include "gfss/losses.hpp"
#include "gfss/numeric/gradcheck.hpp"

namespace gfss {
namespace {

using ad::Tape;
using ad::Var;
using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); }

Tensor normal(Shape s, Rng& rng, double stddev = 1.0) {
  Tensor t(s);
  std::normal_distribution<double> n(0.0, stddev);
  for (double& v : t.data()) v = n(rng);
  return t;
}

Tensor uniform(Shape s, Rng& rng, double lo, double hi) {
  Tensor t(s);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

Tensor simplex_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t = uniform(Shape::matrix(rows, cols), rng, 0.05, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (double v : t.row(r)) s += v;
    for (double& v : t.row(r)) v /= s;
  }
  return t;
}

/// Contracts `v` with fixed random weights so every output entry reaches the loss.
Var probe(Tape& tape, Var v, const Tensor& weights) { return ad::sum(ad::mul(v, tape.constant(weights))); }

/// One random instance: parameters plus a loss over them.
struct Instance {
  std::vector<Tensor> params;
  ad::LossFn fn;
};

using Generator = std::function<Instance(Rng&)>;

Instance unary(Rng& rng, Var (*op)(Var), double lo, double hi) {
  const Shape s = Shape::matrix(pick(rng, 1, 4), pick(rng, 1, 5));
  Tensor w = normal(s, rng);
  return {{uniform(s, rng, lo, hi)}, [op, w](Tape& t, std::span<const Var> p) { return probe(t, op(p[0]), w); }};
}

Instance matrix_op(Rng& rng, Var (*op)(Var)) {
  const Shape s = Shape::matrix(pick(rng, 1, 4), pick(rng, 1, 5));
  Tensor x = normal(s, rng);
  Tape shape_probe;
  Tensor w = normal(op(shape_probe.constant(x)).shape(), rng);
  return {{x}, [op, w](Tape& t, std::span<const Var> p) { return probe(t, op(p[0]), w); }};
}

HeadParams random_head(Rng& rng, std::size_t F, std::size_t nb, std::size_t nn) {
  const ClassPartition part{nb, nn};
  Tensor w_frozen = normal(Shape::matrix(part.base_side(), F), rng);
  HeadInit init;
  init.hidden = pick(rng, 1, 3);
  init.novel_std = 0.5;
  init.mlp_out_std = 0.5;
  HeadParams h = init_head(w_frozen, part, init, rng);
  // Move away from the structured initial point so every branch carries weight.
  for (Tensor* t : {&h.w_base, &h.row_mlp.b1, &h.row_mlp.b2, &h.col_mlp.b1, &h.col_mlp.b2, &h.beta}) {
    std::normal_distribution<double> n(0.0, 0.3);
    for (double& v : t->data()) v += n(rng);
  }
  return h;
}

std::vector<Tensor> head_tensors(const HeadParams& h) {
  return {h.w_base,       h.w_novel,      h.row_mlp.w1, h.row_mlp.b1, h.row_mlp.w2, h.row_mlp.b2,
          h.col_mlp.w1,   h.col_mlp.b1,   h.col_mlp.w2, h.col_mlp.b2, h.beta};
}

HeadVars head_vars(Tape& tape, const Tensor& w_frozen, std::span<const Var> p) {
  return {tape.constant(w_frozen), p[0], p[1], {p[2], p[3], p[4], p[5]}, {p[6], p[7], p[8], p[9]}, p[10]};
}

std::vector<std::size_t> random_labels(Rng& rng, std::size_t n, std::size_t K) {
  std::vector<std::size_t> l(n);
  for (auto& v : l) v = pick(rng, 0, K - 1);
  return l;
}

std::vector<std::uint8_t> random_mask(Rng& rng, std::size_t n) {
  std::vector<std::uint8_t> m(n);
  for (auto& v : m) v = static_cast<std::uint8_t>(pick(rng, 0, 3) != 0);
  m[pick(rng, 0, n - 1)] = 1;
  return m;
}

MarginVector random_margins(Rng& rng, std::size_t K) {
  MarginVector m;
  m.scale = 0.5;
  std::uniform_real_distribution<double> u(0.0, 0.5);
  for (std::size_t k = 0; k < K; ++k) m.deltas.push_back(u(rng));
  return m;
}

ProportionVector random_proportions(Rng& rng, std::size_t K) {
  Tensor p = simplex_rows(1, K, rng);
  return ProportionVector{std::vector<double>(p.data().begin(), p.data().end())};
}

std::vector<std::pair<std::string, Generator>> cases() {
  std::vector<std::pair<std::string, Generator>> c;
  c.emplace_back("matmul", [](Rng& rng) {
    const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
    Tensor w = normal(Shape::matrix(m, n), rng);
    return Instance{{normal(Shape::matrix(m, k), rng), normal(Shape::matrix(k, n), rng)},
                    [w](Tape& t, std::span<const Var> p) { return probe(t, ad::matmul(p[0], p[1]), w); }};
  });
  c.emplace_back("matmul_nt", [](Rng& rng) {
    const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
    Tensor w = normal(Shape::matrix(m, n), rng);
    return Instance{{normal(Shape::matrix(m, k), rng), normal(Shape::matrix(n, k), rng)},
                    [w](Tape& t, std::span<const Var> p) { return probe(t, ad::matmul_nt(p[0], p[1]), w); }};
  });
  c.emplace_back("add/sub/mul", [](Rng& rng) {
    const Shape s = Shape::matrix(pick(rng, 1, 4), pick(rng, 1, 4));
    Tensor w = normal(s, rng);
    return Instance{{normal(s, rng), normal(s, rng)}, [w](Tape& t, std::span<const Var> p) {
                      return probe(t, ad::sub(ad::mul(p[0], p[1]), ad::add(ad::scale(p[0], 0.7), ad::add_scalar(p[1], 2.0))), w);
                    }};
  });
  c.emplace_back("exp", [](Rng& rng) { return unary(rng, ad::exp, -2.0, 2.0); });
  c.emplace_back("log", [](Rng& rng) { return unary(rng, ad::log, 0.2, 3.0); });
  c.emplace_back("tanh", [](Rng& rng) { return unary(rng, ad::tanh, -2.0, 2.0); });
  c.emplace_back("xlogx", [](Rng& rng) { return unary(rng, ad::xlogx, 0.05, 2.0); });
  c.emplace_back("maximum", [](Rng& rng) {
    const Shape s = Shape::matrix(pick(rng, 1, 4), pick(rng, 1, 4));
    Tensor x = uniform(s, rng, 0.1, 1.0);
    for (double& v : x.data())
      if (pick(rng, 0, 1)) v = -v;  // keeps every entry at least 0.1 from the kink at 0
    Tensor w = normal(s, rng);
    return Instance{{x}, [w](Tape& t, std::span<const Var> p) { return probe(t, ad::maximum(p[0], 0.0), w); }};
  });
  c.emplace_back("softmax_rows", [](Rng& rng) { return matrix_op(rng, ad::softmax_rows); });
  c.emplace_back("log_softmax_rows", [](Rng& rng) { return matrix_op(rng, ad::log_softmax_rows); });
  c.emplace_back("softmax_cols", [](Rng& rng) { return matrix_op(rng, ad::softmax_cols); });
  c.emplace_back("outer", [](Rng& rng) {
    const std::size_t m = pick(rng, 1, 5), n = pick(rng, 1, 5);
    Tensor w = normal(Shape::matrix(m, n), rng);
    return Instance{{normal(Shape::vector(m), rng), normal(Shape::vector(n), rng)},
                    [w](Tape& t, std::span<const Var> p) { return probe(t, ad::outer(p[0], p[1]), w); }};
  });
  c.emplace_back("reductions", [](Rng& rng) {
    const Shape s = Shape::matrix(pick(rng, 1, 4), pick(rng, 1, 4));
    Tensor wr = normal(Shape::vector(s.rows), rng), wc = normal(Shape::vector(s.cols), rng);
    return Instance{{normal(s, rng)}, [wr, wc](Tape& t, std::span<const Var> p) {
                      Var a = ad::add(probe(t, ad::sum_rows(p[0]), wr), probe(t, ad::mean_rows(p[0]), wr));
                      Var b = ad::add(probe(t, ad::sum_cols(p[0]), wc), probe(t, ad::mean_cols(p[0]), wc));
                      return ad::add(ad::add(a, b), ad::add(ad::sum(ad::mul(p[0], p[0])), ad::mean(p[0])));
                    }};
  });
  c.emplace_back("layout", [](Rng& rng) {
    const std::size_t r1 = pick(rng, 1, 3), r2 = pick(rng, 1, 3), cols = pick(rng, 1, 4);
    std::vector<std::size_t> idx(pick(rng, 1, 5));
    for (auto& i : idx) i = pick(rng, 0, r1 + r2 - 1);
    Tensor w = normal(Shape::matrix(cols, idx.size()), rng);
    Tensor w2 = normal(Shape::matrix(1, (r1 + r2) * cols), rng);
    return Instance{{normal(Shape::matrix(r1, cols), rng), normal(Shape::matrix(r2, cols), rng),
                     normal(Shape::vector(cols), rng)},
                    [idx, w, w2, r1, r2, cols](Tape& t, std::span<const Var> p) {
                      Var stacked = ad::add_row_vector(ad::concat_rows(p[0], p[1]), p[2]);
                      Var picked = ad::transpose(ad::gather_rows(stacked, idx));
                      Var flat = ad::reshape(stacked, Shape::matrix(1, (r1 + r2) * cols));
                      return ad::add(probe(t, picked, w), probe(t, flat, w2));
                    }};
  });
  c.emplace_back("row_outer", [](Rng& rng) {
    const std::size_t n = pick(rng, 1, 4), k = pick(rng, 1, 4), b = pick(rng, 1, 4);
    Tensor w = normal(Shape::matrix(n, k * b), rng);
    return Instance{{normal(Shape::matrix(n, k), rng), normal(Shape::matrix(n, b), rng)},
                    [w](Tape& t, std::span<const Var> p) { return probe(t, ad::row_outer(p[0], p[1]), w); }};
  });
  c.emplace_back("block_softmax_cols", [](Rng& rng) {
    const std::size_t n = pick(rng, 1, 3), k = pick(rng, 1, 4), b = pick(rng, 1, 4);
    Tensor w = normal(Shape::matrix(n, k * b), rng);
    return Instance{{normal(Shape::matrix(n, k * b), rng)},
                    [w, k](Tape& t, std::span<const Var> p) { return probe(t, ad::block_softmax_cols(p[0], k), w); }};
  });
  c.emplace_back("row_matvec", [](Rng& rng) {
    const std::size_t n = pick(rng, 1, 4), k = pick(rng, 1, 4), b = pick(rng, 1, 4);
    Tensor w = normal(Shape::matrix(n, k), rng);
    return Instance{{normal(Shape::matrix(n, k * b), rng), normal(Shape::matrix(n, b), rng)},
                    [w](Tape& t, std::span<const Var> p) { return probe(t, ad::row_matvec(p[0], p[1]), w); }};
  });
  c.emplace_back("ldam", [](Rng& rng) {
    const std::size_t n = pick(rng, 1, 6), K = pick(rng, 2, 5);
    auto labels = random_labels(rng, n, K);
    auto mask = random_mask(rng, n);
    MarginVector margins = random_margins(rng, K);
    return Instance{{normal(Shape::matrix(n, K), rng, 2.0)}, [labels, mask, margins](Tape&, std::span<const Var> p) {
                      return ldam_loss(p[0], labels, margins, mask);
                    }};
  });
  c.emplace_back("pi_regularizer", [](Rng& rng) {
    const std::size_t n = pick(rng, 1, 6), K = pick(rng, 2, 5);
    ProportionVector pi = random_proportions(rng, K);
    return Instance{{normal(Shape::matrix(n, K), rng)}, [pi](Tape&, std::span<const Var> p) {
                      return pi_regularizer(query_proportions(ad::softmax_rows(p[0])), pi);
                    }};
  });
  c.emplace_back("kd", [](Rng& rng) {
    const ClassPartition part{pick(rng, 1, 3), pick(rng, 1, 2)};
    const std::size_t n = pick(rng, 1, 6);
    Tensor base = simplex_rows(n, part.base_side(), rng);
    return Instance{{normal(Shape::matrix(n, part.num_classes()), rng)}, [base, part](Tape&, std::span<const Var> p) {
                      return kd_loss(ad::softmax_rows(p[0]), base, part);
                    }};
  });
  c.emplace_back("transition_branch", [](Rng& rng) {
    const std::size_t F = pick(rng, 2, 5), nb = pick(rng, 1, 3), nn = pick(rng, 1, 2), n = pick(rng, 1, 5);
    HeadParams h = random_head(rng, F, nb, nn);
    Tensor x = normal(Shape::matrix(n, F), rng);
    Tensor w = normal(Shape::matrix(n, h.partition.num_classes()), rng);
    std::vector<Tensor> params{h.row_mlp.w1, h.row_mlp.b1, h.row_mlp.w2, h.row_mlp.b2,
                               h.col_mlp.w1, h.col_mlp.b1, h.col_mlp.w2, h.col_mlp.b2, h.beta};
    Tensor frozen = h.w_base_frozen;
    return Instance{params, [x, w, frozen](Tape& t, std::span<const Var> p) {
                      Var tr = transition_logits(t.constant(x), t.constant(frozen), {p[0], p[1], p[2], p[3]},
                                                 {p[4], p[5], p[6], p[7]}, p[8]);
                      return probe(t, ad::log(tr), w);
                    }};
  });
  c.emplace_back("full_objective", [](Rng& rng) {
    const std::size_t F = pick(rng, 2, 4), nb = pick(rng, 1, 3), nn = pick(rng, 1, 2);
    HeadParams h = random_head(rng, F, nb, nn);
    const ClassPartition part = h.partition;
    const std::size_t ns = pick(rng, 2, 5), nq = pick(rng, 2, 5);
    Tensor xs = normal(Shape::matrix(ns, F), rng), xq = normal(Shape::matrix(nq, F), rng);
    auto labels = random_labels(rng, ns, part.num_classes());
    auto mask = random_mask(rng, ns);
    MarginVector margins = random_margins(rng, part.num_classes());
    ProportionVector pi = random_proportions(rng, part.num_classes());
    Tensor base = simplex_rows(nq, part.base_side(), rng);
    MergeConfig merge;
    merge.mode = pick(rng, 0, 1) ? MergeMode::kLogProbSum : MergeMode::kRawSum;
    merge.gamma = std::uniform_real_distribution<double>(0.2, 1.5)(rng);
    const double lambda = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
    Tensor frozen = h.w_base_frozen;
    return Instance{head_tensors(h), [=](Tape& t, std::span<const Var> p) {
                      HeadVars v = head_vars(t, frozen, p);
                      HeadOutputs s = forward_head(v, t.constant(xs), merge, true);
                      HeadOutputs q = forward_head(v, t.constant(xq), merge, true);
                      Var obj = total_loss(ldam_loss(s.logits, labels, margins, mask),
                                           pi_regularizer(query_proportions(q.probs), pi), lambda);
                      return ad::add(obj, kd_loss(q.probs, base, part));
                    }};
  });
  return c;
}

}  // namespace

bool GradientSuiteReport::passed() const {
  return !cases.empty() && std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.passed; });
}

GradientSuiteReport run_gradient_suite(std::size_t instances_per_case, std::uint64_t seed, double tolerance,
                                       double epsilon) {
  const auto start = std::chrono::steady_clock::now();
  GradientSuiteReport report;
  report.tolerance = tolerance;
  std::uint64_t case_index = 0;
  for (const auto& [name, generate] : cases()) {
    Rng rng(seed * 1000003ULL + case_index++);
    GradientCaseResult r;
    r.name = name;
    for (std::size_t i = 0; i < instances_per_case; ++i) {
      Instance inst = generate(rng);
      const ad::GradCheckReport g = ad::finite_difference_check(inst.fn, inst.params, epsilon);
      r.max_rel_error = std::max(r.max_rel_error, std::isfinite(g.max_rel_error) ? g.max_rel_error : INFINITY);
      ++r.instances;
    }
    r.passed = r.instances > 0 && r.max_rel_error < tolerance;
    report.cases.push_back(std::move(r));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace gfss
