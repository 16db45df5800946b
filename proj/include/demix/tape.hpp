// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "demix/tensor.hpp"

namespace demix {

class Tape;

// Handle to either a tape node or an untaped constant. All algorithm code is
// written against Var; running it with constant inputs executes the exact same
// arithmetic without recording anything.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor t)
      : holder_(std::make_shared<const Tensor>(std::move(t))) {}
  explicit Var(std::shared_ptr<const Tensor> t) : holder_(std::move(t)) {}
  Var(Tape* tape, int id, std::shared_ptr<const Tensor> value)
      : tape_(tape), id_(id), holder_(std::move(value)) {}

  bool taped() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  const Tensor& value() const { return *holder_; }
  const std::shared_ptr<const Tensor>& holder() const { return holder_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
  std::shared_ptr<const Tensor> holder_;
};

// Accumulates gradient `g` into the adjoint of node `id`.
using AccumFn = std::function<void(int id, const Tensor& g)>;
// Node backward rule: receives the node's own adjoint, pushes to parents.
using BackFn = std::function<void(const Tensor& g, const AccumFn& acc)>;

// Append-only record of forward operations. Node ids are topological by
// construction. Node count and retained bytes are the memory metric used by
// the benchmark harness.
class Tape {
 public:
  Var leaf(Tensor value) {
    return emit(std::move(value), {}, nullptr, "leaf");
  }

  Var emit(Tensor value, std::vector<int> parents, BackFn back,
           const char* op) {
    for (int p : parents)
      if (p < 0 || p >= static_cast<int>(nodes_.size()))
        throw std::logic_error("Tape::emit: dangling parent node");
    auto holder = std::make_shared<const Tensor>(std::move(value));
    retained_bytes_ += holder->bytes();
    nodes_.push_back(Node{holder, std::move(parents), std::move(back), op});
    return Var(this, static_cast<int>(nodes_.size()) - 1, holder);
  }

  size_t size() const { return nodes_.size(); }
  size_t retained_bytes() const { return retained_bytes_; }
  const Tensor& value(int id) const { return *nodes_[id].value; }
  const char* op(int id) const { return nodes_[id].op; }

  // Reverse sweep. Seeds are (node id, gradient); returns one adjoint slot
  // per node (empty Tensor where no gradient flowed).
  std::vector<Tensor> backward(
      const std::vector<std::pair<int, Tensor>>& seeds) const {
    std::vector<Tensor> adj(nodes_.size());
    std::vector<char> has(nodes_.size(), 0);
    AccumFn acc = [&](int id, const Tensor& g) {
      const Tensor& v = *nodes_[id].value;
      if (g.shape != v.shape || g.dtype != v.dtype)
        throw std::logic_error("Tape::backward: gradient shape/dtype mismatch at node " +
                               std::to_string(id) + " (" + nodes_[id].op + ")");
      if (!has[id]) {
        adj[id] = g;
        has[id] = 1;
      } else {
        adj[id] += g;
      }
    };
    for (const auto& [id, g] : seeds) {
      if (id < 0 || id >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("Tape::backward: seed id out of range");
      acc(id, g);
    }
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      if (!has[id] || !nodes_[id].back) continue;
      nodes_[id].back(adj[id], acc);
    }
    return adj;
  }

 private:
  struct Node {
    std::shared_ptr<const Tensor> value;
    std::vector<int> parents;
    BackFn back;  // null for leaves
    const char* op;
  };
  std::vector<Node> nodes_;
  size_t retained_bytes_ = 0;
};

}  // namespace demix
