#include <dsnet/autograd.hpp>

#include <algorithm>
#include <atomic>
#include <unordered_set>

namespace dsnet {

namespace {

thread_local bool t_grad_enabled = true;
thread_local bool t_verify_mode = false;
thread_local bool t_counting = false;
thread_local std::uint64_t t_macs = 0;

std::atomic<std::uint64_t> g_sequence{0};

}  // namespace

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

VerifyModeGuard::VerifyModeGuard() : previous_(t_verify_mode) { t_verify_mode = true; }
VerifyModeGuard::~VerifyModeGuard() { t_verify_mode = previous_; }

bool grad_enabled() { return t_grad_enabled; }
bool verify_mode() { return t_verify_mode; }

MacCounter::MacCounter() : start_(t_macs), previous_(t_counting) { t_counting = true; }
MacCounter::~MacCounter() { t_counting = previous_; }
std::uint64_t MacCounter::count() const { return t_macs - start_; }

template <typename Scalar>
Var<Scalar>::Var(Tensor<Scalar> value, bool requires_grad) : node_(std::make_shared<Node<Scalar>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->sequence = detail::next_sequence();
}

template <typename Scalar>
Graph<Scalar> Graph<Scalar>::trace(const Var<Scalar>& root) {
  Graph graph;
  if (!root.defined() || !root.requires_grad()) return graph;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<Node<Scalar>*> stack{&root.node()};
  seen.insert(&root.node());
  while (!stack.empty()) {
    Node<Scalar>* n = stack.back();
    stack.pop_back();
    graph.nodes_.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(graph.nodes_.begin(), graph.nodes_.end(),
            [](const Node<Scalar>* a, const Node<Scalar>* b) { return a->sequence < b->sequence; });
  return graph;
}

template <typename Scalar>
void backward(const Var<Scalar>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw UsageError("backward: loss must be a scalar, got " + (loss.defined() ? to_string(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) return;
  const Graph<Scalar> graph = Graph<Scalar>::trace(loss);
  const auto& nodes = graph.nodes();
  for (Node<Scalar>* n : nodes) {
    if (!n->is_leaf()) n->grad = Tensor<Scalar>();
  }
  loss.node().grad_buffer()[0] += Scalar(1);
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    Node<Scalar>* n = *it;
    if (n->is_leaf()) continue;
    if (n->grad.defined()) n->backward(*n);
    n->grad = Tensor<Scalar>();
  }
}

namespace detail {

std::uint64_t next_sequence() { return g_sequence.fetch_add(1, std::memory_order_relaxed) + 1; }

void count_macs(std::uint64_t macs) {
  if (t_counting) t_macs += macs;
}

template <typename Scalar>
Var<Scalar> record(Tensor<Scalar> value, std::vector<Var<Scalar>> inputs, const char* op, BackwardFn<Scalar> backward) {
  if (t_verify_mode && !all_finite(value)) {
    throw NumericError(std::string("verify: non-finite output from ") + op);
  }
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  node->op = op;
  node->sequence = next_sequence();
  if (t_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var<Scalar>& v) { return v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& v : inputs) node->inputs.push_back(v.node_ptr());
      node->backward = std::move(backward);
    }
  }
  return Var<Scalar>(std::move(node));
}

template <typename Scalar>
void accumulate(Node<Scalar>& input, const Tensor<Scalar>& g) {
  if (!input.requires_grad) return;
  auto& buf = input.grad_buffer();
  if (buf.size() != g.size()) {
    throw DimensionError(std::string("backward: gradient ") + to_string(g.shape()) + " for " + to_string(buf.shape()));
  }
  buf.flat() += g.flat();
}

template Var<float> record(Tensor<float>, std::vector<Var<float>>, const char*, BackwardFn<float>);
template Var<double> record(Tensor<double>, std::vector<Var<double>>, const char*, BackwardFn<double>);
template void accumulate(Node<float>&, const Tensor<float>&);
template void accumulate(Node<double>&, const Tensor<double>&);

}  // namespace detail

template class Var<float>;
template class Var<double>;
template class Graph<float>;
template class Graph<double>;
template void backward(const Var<float>&);
template void backward(const Var<double>&);

}  // namespace dsnet
