// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <dsnet/checkpoint.hpp>
#include <dsnet/fpn.hpp>
#include <dsnet/verify/suites.hpp>
#include <dsnet/verify/toy.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

namespace {

using namespace dsnet;

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects sub-checks; the first failures are kept for the printed line.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    if (failures_++ < 4) detail_ << (detail_.tellp() > 0 ? "; " : "") << what;
  }
  void note(const std::string& what) { notes_ << (notes_.tellp() > 0 ? ", " : "") << what; }
  Outcome done() const {
    if (failures_ == 0) return {true, notes_.str()};
    return {false, std::to_string(failures_) + " failed: " + detail_.str()};
  }

 private:
  int failures_ = 0;
  std::ostringstream detail_, notes_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool within(double value, double reference, double tolerance) {
  return std::abs(value - reference) <= tolerance * reference;
}

template <typename Scalar>
void randomize(const ParameterList<Scalar>& params, std::uint64_t seed, double spread = 0.5) {
  std::mt19937_64 rng(seed);
  for (auto p : params) p.var.mutable_value() = random_uniform<Scalar>(p.var.shape(), rng, -spread, spread);
}

Outcome shapes() {
  Checks c;
  const Index grid[] = {56, 28, 14, 7};
  for (const char* v : {"T", "S", "B"}) {
    Model<float> model(ModelConfig::preset(v), 1);
    std::mt19937_64 rng(2);
    NoGradGuard no_grad;
    ModelTrace<float> trace;
    model.forward(constant(random_uniform<float>({1, 3, 224, 224}, rng)), &trace);
    for (int s = 0; s < 4; ++s)
      c.expect(trace.stage_shapes[s][2] == grid[s] && trace.stage_shapes[s][3] == grid[s],
               std::string(v) + " stage " + std::to_string(s + 1) + " grid");
    Index blocks = 0;
    for (const auto& st : model.config().stages) blocks += st.depth;
    c.expect(static_cast<Index>(trace.blocks.size()) == blocks, std::string(v) + " traced block count");
    for (const auto& [stage, block] : trace.blocks)
      c.expect(block.global_shape[2] == 7 && block.global_shape[3] == 7,
               std::string(v) + " stage " + std::to_string(stage + 1) + " global grid");
    c.note(std::string(v) + " " + std::to_string(blocks) + " blocks");
  }
  return c.done();
}

Index enumerated(const ModelConfig& config) {
  Model<float> model(config, 1);
  Index n = 0;
  for (const auto& p : model.parameters()) n += p.var.size();
  return n;
}

Outcome parameters() {
  Checks c;
  struct Row {
    const char* variant;
    bool align;
    double reference;
  };
  const Row rows[] = {{"T", false, 9.1e6}, {"T", true, 10.5e6}, {"S", false, 19.7e6},
                      {"S", true, 23.0e6}, {"B", false, 48.8e6}, {"B", true, 49.3e6}};
  Index counts[6];
  for (int i = 0; i < 6; ++i) {
    const auto config = ModelConfig::preset(rows[i].variant, rows[i].align);
    counts[i] = enumerated(config);
    const auto audited = Model<float>(config, 1).audit(224, 224).parameter_count();
    const std::string name = std::string(rows[i].variant) + (rows[i].align ? "*" : "");
    c.expect(audited == counts[i], name + " audit disagrees with enumeration");
    c.expect(within(static_cast<double>(counts[i]), rows[i].reference, 0.15),
             name + " " + fmt("%.3fM", counts[i] / 1e6) + " vs " + fmt("%.1fM", rows[i].reference / 1e6));
    c.note(name + " " + fmt("%.2fM", counts[i] / 1e6));
  }
  for (int a = 0; a < 2; ++a) {
    c.expect(counts[a] < counts[2 + a] && counts[2 + a] < counts[4 + a], "ordering T<S<B");
  }
  for (int v = 0; v < 3; ++v) c.expect(counts[2 * v] < counts[2 * v + 1], "ordering plain<starred");
  return c.done();
}

// Published FLOP figures for this model family count multiply-accumulates, so the
// comparison is against analytic MACs; FLOPs (2 x MACs) are shown alongside.
Outcome flops() {
  Checks c;
  const std::pair<const char*, double> rows[] = {{"T", 1.6e9}, {"S", 3.0e9}, {"B", 7.6e9}};
  for (const auto& [v, reference] : rows) {
    const auto audit = Model<float>(ModelConfig::preset(v), 1).audit(224, 224);
    const double macs = static_cast<double>(audit.macs());
    c.expect(within(macs, reference, 0.20), std::string(v) + " " + fmt("%.3fG", macs / 1e9) + " vs " +
                                                 fmt("%.1fG", reference / 1e9));
    c.note(std::string(v) + " " + fmt("%.2fG MACs", macs / 1e9) + fmt(" (%.2fG FLOPs)", 2 * macs / 1e9));
  }
  return c.done();
}

Outcome summarize(const verify::Report& report, double tolerance) {
  Checks c;
  double worst = 0;
  for (const auto& r : report.cases) {
    c.expect(r.pass, r.id + " " + r.metric + " " + fmt("%.3g", r.value));
    worst = std::max(worst, std::isfinite(r.value) ? r.value : INFINITY);
  }
  c.expect(!report.cases.empty(), "no cases");
  c.note(std::to_string(report.cases.size()) + " cases, worst " + fmt("%.3g", worst) + " vs " + fmt("%.0e", tolerance));
  return c.done();
}

Outcome gradients() { return summarize(verify::gradcheck_suite(), 1e-4); }

Outcome oracles() { return summarize(verify::oracle_suite(100, 1, 1e-10), 1e-10); }

Outcome ablations() {
  Checks c;
  for (int stage = 0; stage < 4; ++stage) {
    auto aligned = ModelConfig::preset("T", true);
    aligned.ablation = Ablation::no_align;
    const auto plain_cfg = ModelConfig::preset("T", false).block_config(stage);
    const auto ablated_cfg = aligned.block_config(stage);
    Initializer init_a(28), init_b(28);
    DSBlock<double> plain(plain_cfg, init_a);
    DSBlock<double> ablated(ablated_cfg, init_b);
    auto pp = plain.parameters();
    auto pa = ablated.parameters();
    randomize(pp, 29 + static_cast<std::uint64_t>(stage));
    bool same_layout = pp.size() == pa.size();
    for (std::size_t i = 0; same_layout && i < pp.size(); ++i) {
      same_layout = pp[i].name == pa[i].name && pp[i].var.shape() == pa[i].var.shape();
      if (same_layout) pa[i].var.mutable_value() = pp[i].var.value();
    }
    c.expect(same_layout, "stage " + std::to_string(stage + 1) + " parameter layouts differ");
    if (!same_layout) continue;
    const Index side = 56 >> stage;
    std::mt19937_64 rng(30);
    NoGradGuard no_grad;
    const auto x = constant(random_uniform<double>({2, plain_cfg.channels, side, side}, rng));
    c.expect(bitwise_equal(plain.forward(x).value(), ablated.forward(x).value()),
             "stage " + std::to_string(stage + 1) + " no_align output differs");
  }
  auto sum_entries = [](const AuditReport& r, const std::string& suffix) {
    Index n = 0;
    for (const auto& e : r.entries)
      if (e.name.size() >= suffix.size() && e.name.compare(e.name.size() - suffix.size(), suffix.size(), suffix) == 0)
        n += e.params;
    return n;
  };
  for (bool align : {false, true}) {
    auto conv_only = ModelConfig::preset("T", align);
    conv_only.alpha = 0.0;
    auto attn_only = ModelConfig::preset("T", align);
    attn_only.alpha = 1.0;
    const auto a0 = Model<float>(conv_only, 1).audit(224, 224);
    const auto a1 = Model<float>(attn_only, 1).audit(224, 224);
    const std::string tag = align ? "T*" : "T";
    c.expect(sum_entries(a0, ".attention") == 0, tag + " alpha 0 has attention parameters");
    c.expect(sum_entries(a1, ".local") == 0, tag + " alpha 1 has depthwise parameters");
    c.expect(sum_entries(a0, ".local") > 0 && sum_entries(a1, ".attention") > 0, tag + " remaining path is empty");
    for (const auto& p : Model<float>(conv_only, 1).parameters())
      c.expect(p.name.find(".attn.") == std::string::npos, tag + " alpha 0 enumerates " + p.name);
    for (const auto& p : Model<float>(attn_only, 1).parameters())
      c.expect(p.name.find(".local.") == std::string::npos, tag + " alpha 1 enumerates " + p.name);
  }
  c.note("no_align bit-identical in 4 stages, alpha extremes empty");
  return c.done();
}

Outcome normalization() {
  Checks c;
  Model<double> model(ModelConfig::preset("T", true), 3);
  std::mt19937_64 rng(4);
  NoGradGuard no_grad;
  ModelTrace<double> trace;
  model.forward(constant(random_uniform<double>({1, 3, 224, 224}, rng)), &trace);
  double worst = 0;
  Index rows = 0;
  std::array<bool, 4> stage_seen{};
  auto scan = [&](const Tensor<double>& w, const std::string& what) {
    c.expect(w.size() > 0, what + " missing");
    if (w.size() == 0) return;
    const Index cols = w.dim(-1);
    for (Index r = 0; r < w.size() / cols; ++r) {
      double s = 0;
      bool in_range = true;
      for (Index j = 0; j < cols; ++j) {
        const double v = w[r * cols + j];
        in_range = in_range && v >= 0 && v <= 1;
        s += v;
      }
      c.expect(in_range, what + " weight outside [0, 1]");
      worst = std::max(worst, std::abs(s - 1));
      ++rows;
    }
  };
  for (const auto& [stage, block] : trace.blocks) {
    const std::string where = "stage " + std::to_string(stage + 1);
    scan(block.attention, where + " self-attention");
    scan(block.global_to_local, where + " global-to-local");
    scan(block.local_to_global, where + " local-to-global");
    stage_seen[static_cast<std::size_t>(stage)] = true;
  }
  c.expect(std::all_of(stage_seen.begin(), stage_seen.end(), [](bool b) { return b; }), "a stage was not traced");
  c.expect(worst <= 1e-6, "row sum off by " + fmt("%.3g", worst));
  c.note(std::to_string(rows) + " rows, worst |sum - 1| " + fmt("%.3g", worst));
  return c.done();
}

Outcome equivariance() {
  Checks c;
  const auto config = ModelConfig::preset("T", true);
  Index compared = 0;
  for (int stage = 0; stage < 4; ++stage) {
    auto bc = config.block_config(stage);
    Initializer init(9 + static_cast<std::uint64_t>(stage));
    DSBlock<double> block(bc, init);
    randomize(block.parameters(), 10 + static_cast<std::uint64_t>(stage));
    std::mt19937_64 rng(11 + static_cast<std::uint64_t>(stage));
    const Index h = 7, w = 7, l = h * w, cg = bc.global_channels();
    const auto tokens = random_uniform<double>({2, l, cg}, rng);
    std::vector<Index> perm(static_cast<std::size_t>(l));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor<double> permuted(tokens.shape());
    for (Index n = 0; n < 2; ++n)
      for (Index i = 0; i < l; ++i)
        for (Index j = 0; j < cg; ++j) permuted.at(n, i, j) = tokens.at(n, perm[i], j);
    NoGradGuard no_grad;
    const auto out = to_tokens(block.intra_global(from_tokens(constant(tokens), h, w))).value();
    const auto out_p = to_tokens(block.intra_global(from_tokens(constant(permuted), h, w))).value();
    bool exact = true;
    for (Index n = 0; n < 2; ++n)
      for (Index i = 0; i < l; ++i)
        for (Index j = 0; j < cg; ++j) exact = exact && out_p.at(n, i, j) == out.at(n, perm[i], j);
    c.expect(exact, "stage " + std::to_string(stage + 1) + " output not permuted exactly");
    compared += out.size();
  }
  c.note(std::to_string(compared) + " values compared exactly over 4 stages");
  return c.done();
}

Outcome learnability() {
  Checks c;
  using namespace verify;
  const auto data = make_toy_dataset({});
  auto config = reduced_config(ModelConfig::preset("T", true), 10);
  config.alpha = 0.5;
  const auto trained = overfit_toy(config, data, {});
  c.expect(!trained.diverged, "training diverged");
  c.expect(trained.final_accuracy >= 0.99 && static_cast<Index>(trained.curve.size()) <= 200,
           "accuracy " + fmt("%.3f", trained.final_accuracy) + " after " + std::to_string(trained.curve.size()) +
               " epochs");
  c.note(fmt("%.0f%%", 100 * trained.final_accuracy) + " after " + std::to_string(trained.curve.size()) + " epochs");

  ToyRunConfig frozen;
  frozen.epochs = 10;
  frozen.early_stop = false;
  frozen.optimizer.lr = 0;
  const double chance = 1.0 / static_cast<double>(data.classes);
  const double initial = evaluate_accuracy(Model<float>(config, frozen.seed), data, frozen.batch_size);
  const auto control = overfit_toy(config, data, frozen);
  bool constant_accuracy = !control.curve.empty();
  for (const auto& e : control.curve) constant_accuracy = constant_accuracy && e.accuracy == initial;
  c.expect(constant_accuracy, "lr=0 accuracy moved");
  // 100 balanced images: a frozen model predicting one class scores exactly 0.1.
  c.expect(control.final_accuracy <= 2 * chance, "lr=0 accuracy " + fmt("%.2f", control.final_accuracy));
  c.note("lr=0 control " + fmt("%.2f", control.final_accuracy) + " (chance " + fmt("%.2f", chance) + ")");
  return c.done();
}

// Straight-line FPN built from the neck's own lateral, smoothing and extra convs.
std::vector<Var<double>> plain_fpn(const DSFpn<double>& neck, const std::array<Var<double>, 4>& f) {
  const auto& lat = neck.lateral_convs();
  const auto& smooth = neck.smooth_convs();
  std::array<Var<double>, 4> m;
  m[3] = conv1x1(f[3], lat[3].weight, lat[3].bias);
  for (int i = 2; i >= 0; --i) {
    m[i] = conv1x1(f[i], lat[i].weight, lat[i].bias);
    m[i] = add(m[i], upsample_nearest(m[i + 1], m[i].dim(2), m[i].dim(3)));
  }
  std::vector<Var<double>> p;
  for (int i = 0; i < 4; ++i) p.push_back(conv2d(m[i], smooth[i].weight, smooth[i].bias, 1, 1));
  for (const auto& e : neck.extra_convs()) p.push_back(conv2d(p.back(), e.weight, e.bias, 2, 1));
  return p;
}

Outcome fpn() {
  Checks c;
  const auto backbone = ModelConfig::preset("T", true);
  {
    DSFpn<double> neck(FpnConfig{}, backbone, 5);
    randomize(neck.parameters(), 6, 0.1);
    std::mt19937_64 rng(7);
    std::array<Var<double>, 4> f;
    for (int i = 0; i < 4; ++i) {
      const Index side = 64 / backbone.stages[i].stride;
      f[i] = constant(random_uniform<double>({1, backbone.stages[i].channels, side, side}, rng));
    }
    NoGradGuard no_grad;
    const auto got = neck.forward(f);
    const auto want = plain_fpn(neck, f);
    c.expect(got.size() == want.size(), "level count differs");
    for (std::size_t l = 0; l < std::min(got.size(), want.size()); ++l)
      c.expect(bitwise_equal(got[l].value(), want[l].value()), "none differs at level " + std::to_string(l));
  }
  Model<float> model(backbone, 1);
  auto neck_params = [&](Insertion ins) {
    FpnConfig config;
    config.insertion = ins;
    return fpn_audit(DSFpn<float>(config, backbone, 2), model, 224, 224).neck.parameter_count();
  };
  const Index none = neck_params(Insertion::none), rev = neck_params(Insertion::lateral_rev),
              lat = neck_params(Insertion::lateral), extra = neck_params(Insertion::lateral_extra);
  c.expect(none < rev && rev < lat && lat < extra, "ordering none < lateral_rev < lateral < lateral_extra");
  const double delta = static_cast<double>(extra - none);
  c.expect(within(delta, 5.60e6, 0.30), "delta " + fmt("%.3fM", delta / 1e6) + " vs 5.60M");
  c.note("none bit-identical, " + fmt("%.2fM", none / 1e6) + " < " + fmt("%.2fM", rev / 1e6) + " < " +
         fmt("%.2fM", lat / 1e6) + " < " + fmt("%.2fM", extra / 1e6) + ", delta " + fmt("%.2fM", delta / 1e6));
  return c.done();
}

Outcome checkpoint() {
  Checks c;
  const auto config = ModelConfig::preset("T", true);
  Model<float> a(config, 1), b(config, 2);
  const auto bytes = encode_checkpoint(snapshot(a.parameters()));
  restore(decode_checkpoint(bytes), b.parameters());
  const auto pa = a.parameters(), pb = b.parameters();
  bool exact = pa.size() == pb.size();
  for (std::size_t i = 0; exact && i < pa.size(); ++i) exact = bitwise_equal(pa[i].var.value(), pb[i].var.value());
  c.expect(exact, "restored parameters differ");
  c.expect(encode_checkpoint(snapshot(b.parameters())) == bytes, "re-export not byte-identical");

  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> pick(8, bytes.size() - 5);
  int rejected = 0;
  const int trials = 16;
  for (int t = 0; t < trials; ++t) {
    auto corrupted = bytes;
    corrupted[pick(rng)] ^= static_cast<char>(1 << (t % 8));
    try {
      restore(decode_checkpoint(corrupted), b.parameters());
    } catch (const CheckpointError& e) {
      rejected += e.code() == CheckpointErrc::crc;
    }
  }
  c.expect(rejected == trials, std::to_string(trials - rejected) + " corrupted payloads not rejected by CRC");
  c.note(std::to_string(pa.size()) + " tensors bit-exact, " + std::to_string(rejected) + "/" +
         std::to_string(trials) + " corrupted bytes rejected by CRC");
  return c.done();
}

Outcome complexity() {
  Checks c;
  const Index fixed = 7 * 7, full = 56 * 56;
  const std::uint64_t expected = static_cast<std::uint64_t>(full / fixed) * static_cast<std::uint64_t>(full / fixed);
  c.expect(full % fixed == 0 && expected == 4096, "token ratio");
  const auto config = ModelConfig::preset("T", true);
  for (int stage = 0; stage < 4; ++stage) {
    const Index width = config.block_config(stage).global_channels();
    const auto small = attention_score_macs(fixed, width), large = attention_score_macs(full, width);
    c.expect(large % small == 0 && large / small == expected,
             "stage " + std::to_string(stage + 1) + " ratio " + std::to_string(large / small));
  }
  c.note("(3136/49)^2 = " + std::to_string(expected) + " for every stage width");
  return c.done();
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {1, "shape suite", 60, shapes},
      {2, "parameter audit", 60, parameters},
      {3, "FLOP audit", 60, flops},
      {4, "gradient verification", 300, gradients},
      {5, "oracle equivalence", 120, oracles},
      {6, "ablation equivalence", 60, ablations},
      {7, "attention normalization", 60, normalization},
      {8, "permutation equivariance", 60, equivariance},
      {9, "toy learnability", 600, learnability},
      {10, "DS-FPN", 60, fpn},
      {11, "checkpoint round-trip", 60, checkpoint},
      {12, "complexity claim", 1, complexity},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = cr.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (elapsed >= cr.budget_s) {
      out.pass = false;
      out.detail += fmt("; over the %.0f s budget", cr.budget_s);
    }
    failed += !out.pass;
    std::printf("criterion %2d  %-26s %s  %7.2f s  %s\n", cr.id, cr.name, out.pass ? "PASS" : "FAIL", elapsed,
                out.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of 12 criteria passed\n", 12 - failed);
  return failed == 0 ? 0 : 1;
}
