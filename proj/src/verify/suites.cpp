#include <dsnet/verify/suites.hpp>

#include <dsnet/backbone.hpp>
#include <dsnet/verify/oracles.hpp>

#include <algorithm>

namespace dsnet::verify {

namespace {

Tensor<double> uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return random_uniform<double>(std::move(shape), rng, lo, hi);
}

/// Row block n of an N x L x D tensor as an L x D matrix.
Tensor<double> sample(const Tensor<double>& t, Index n) {
  const Index rows = t.dim(1), cols = t.dim(2);
  const double* base = t.data() + n * rows * cols;
  return Tensor<double>({rows, cols}, std::vector<double>(base, base + rows * cols));
}

bool is_query_or_key(const std::string& name) {
  for (const char* tag : {".q", ".k", ".wq", ".wk"})
    if (name.find(tag) != std::string::npos) return true;
  return false;
}

void add_cases(Report& report, const std::string& prefix, const GradCheckReport& r, double tolerance) {
  for (const auto& e : r.entries) report.check(prefix + "/" + e.name, "max_rel_error", e.max_rel_error, "<", tolerance);
  report.check(prefix, "max_rel_error", r.max_rel_error(), "<", tolerance);
}

}  // namespace

Report gradcheck_suite(const GradCheckSuiteOptions& options) {
  Report report;
  report.suite = "gradcheck";
  std::mt19937_64 rng(options.seed);

  {
    DSBlockConfig c;
    c.channels = 16;
    c.alpha = 0.5;
    c.heads = 2;
    c.align_enabled = true;
    c.downsample_factor = 8;
    Initializer init(options.seed);
    DSBlock<double> block(c, init);
    const auto params = block.parameters();
    // Wide query/key projections keep the attentions away from the uniform
    // regime, where their gradients fall below finite-difference resolution.
    for (auto p : params) {
      const double spread = is_query_or_key(p.name) ? 2.0 : 0.5;
      p.var.mutable_value() = uniform(p.var.shape(), rng, -spread, spread);
    }
    // Coarse structure survives the 8x pooling, so global tokens differ.
    auto input = uniform({1, 16, 16, 16}, rng, -0.3, 0.3);
    const auto coarse = uniform({1, 16, 2, 2}, rng, -2, 2);
    for (Index ch = 0; ch < 16; ++ch)
      for (Index i = 0; i < 16; ++i)
        for (Index j = 0; j < 16; ++j) input.at(0, ch, i, j) += coarse.at(0, ch, i / 8, j / 8);
    const auto x = constant(input);
    const auto probe = constant(uniform({1, 16, 16, 16}, rng));
    const auto r = gradcheck([&] { return sum(mul(block.forward(x), probe)); }, params, options.check);
    add_cases(report, "block", r, options.check.tolerance);
  }

  {
    ModelConfig c;
    c.variant = "custom";
    const Index channels[] = {8, 8, 16, 16};
    const Index heads[] = {1, 1, 2, 2};
    for (int s = 0; s < 4; ++s) c.stages[s] = {1, channels[s], heads[s], Index{4} << s};
    c.align = true;
    c.num_classes = 5;
    Model<double> model(c, options.seed + 1);
    const auto images = constant(uniform({1, 3, 64, 64}, rng));
    const int labels[] = {3};
    auto check = options.check;
    check.max_entries_per_tensor = options.model_entries_per_tensor;
    const auto r = gradcheck([&] { return cross_entropy(model.forward(images).logits, labels); }, model.parameters(),
                             check);
    add_cases(report, "model", r, options.check.tolerance);
  }
  return report;
}

Report oracle_suite(int cases, std::uint64_t seed, double tolerance) {
  Report report;
  report.suite = "oracles";
  std::mt19937_64 rng(seed);
  auto ext = [&](Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); };

  double worst = 0;
  for (int t = 0; t < cases; ++t) {
    const Index c = ext(1, 6);
    const auto x = uniform({ext(1, 2), c, ext(1, 9), ext(1, 9)}, rng);
    const auto w = uniform({c, 3, 3}, rng), b = uniform({c}, rng);
    const auto fast = depthwise_conv3x3(constant(x), constant(w), constant(b)).value();
    worst = std::max(worst, max_abs_diff(fast, oracle_depthwise3x3(x, w, b)));
  }
  report.check("depthwise_conv3x3", "max_abs_diff", worst, "<=", tolerance);

  worst = 0;
  for (int t = 0; t < cases; ++t) {
    const Index heads = ext(1, 4);
    const Index c = heads * ext(1, 4);
    const Index l = ext(1, 49);
    const auto x = uniform({2, l, c}, rng);
    const auto wq = uniform({c, c}, rng), wk = uniform({c, c}, rng), wv = uniform({c, c}, rng);
    const auto fast = multi_head_attention(constant(x), constant(wq), constant(wk), constant(wv), heads);
    for (Index n = 0; n < 2; ++n) {
      const auto ref = oracle_attention(sample(x, n), wq, wk, wv, heads);
      worst = std::max(worst, max_abs_diff(sample(fast.output.value(), n), ref.output));
      for (Index h = 0; h < heads; ++h)
        worst = std::max(worst, max_abs_diff(sample(fast.weights.value(), n * heads + h), ref.weights[h]));
    }
  }
  report.check("self_attention", "max_abs_diff", worst, "<=", tolerance);

  worst = 0;
  for (int t = 0; t < cases; ++t) {
    const Index ll = ext(1, 64), lg = ext(1, 49), cl = ext(1, 8), cg = ext(1, 8), dim = ext(1, 8);
    const auto local = uniform({2, ll, cl}, rng), global = uniform({2, lg, cg}, rng);
    const CoAttentionWeights64 w{uniform({cl, dim}, rng), uniform({cl, dim}, rng), uniform({cl, dim}, rng),
                                 uniform({cg, dim}, rng), uniform({cg, dim}, rng), uniform({cg, dim}, rng)};
    const CoAttentionParams<double> p{constant(w.q_local),  constant(w.k_local),  constant(w.v_local),
                                      constant(w.q_global), constant(w.k_global), constant(w.v_global)};
    const auto fast = co_attention(constant(local), constant(global), p);
    for (Index n = 0; n < 2; ++n) {
      const auto ref = oracle_coattention(sample(local, n), sample(global, n), w);
      worst = std::max({worst, max_abs_diff(sample(fast.local.value(), n), ref.local),
                        max_abs_diff(sample(fast.global.value(), n), ref.global),
                        max_abs_diff(sample(fast.global_to_local.value(), n), ref.global_to_local),
                        max_abs_diff(sample(fast.local_to_global.value(), n), ref.local_to_global)});
    }
  }
  report.check("co_attention", "max_abs_diff", worst, "<=", tolerance);
  return report;
}

}  // namespace dsnet::verify
