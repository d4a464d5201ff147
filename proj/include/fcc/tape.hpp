#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fcc/tensor.hpp"

namespace fcc {

// Reverse-mode gradient tape. Records primitive applications in execution
// order (topological by construction) and replays them backward exactly once.
// Single-writer: one tape per training thread; disjoint tapes are independent.
template <class S>
class Tape {
  public:
    struct Node {
        std::string kind;
        std::vector<std::shared_ptr<detail::Storage<S>>> inputs;
        std::shared_ptr<detail::Storage<S>> output;
        // Accumulates d(output) into the inputs' grad buffers. Saved
        // intermediates (pool argmaxes, batch statistics) live in the closure.
        std::function<void()> backward;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool empty() const { return nodes_.empty(); }
    std::size_t size() const { return nodes_.size(); }
    const Node& node(std::size_t i) const { return nodes_[i]; }

    std::int64_t record(const std::string& kind, const std::vector<TensorT<S>>& inputs,
                        TensorT<S>& output, std::function<void()> backward) {
        Node n;
        n.kind = kind;
        n.inputs.reserve(inputs.size());
        for (const auto& t : inputs) {
            n.inputs.push_back(t.storage());
        }
        n.output = output.storage();
        n.backward = std::move(backward);
        const auto id = static_cast<std::int64_t>(nodes_.size());
        n.output->node_id = id;
        n.output->requires_grad = true;
        nodes_.push_back(std::move(n));
        return id;
    }

    // Reverse sweep from a scalar loss. Every requires_grad tensor reachable
    // from the loss gets its grad populated; unreached tensors read as zero.
    // Intermediate buffers are released as soon as their node has run, which
    // bounds peak memory at roughly the forward activation footprint.
    void backward(TensorT<S>& loss) {
        if (loss.numel() != 1) {
            throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
        }
        if (loss.node_id() < 0) {
            throw ContractError("backward requires a loss recorded on this tape");
        }
        loss.grad()[0] = S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node& n = *it;
            if (!n.output->grad.empty()) {
                n.backward();
            }
            if (n.output->node_id >= 0) {  // non-leaf: safe to release
                n.output->grad.clear();
                n.output->grad.shrink_to_fit();
            }
            n.backward = nullptr;
            n.inputs.clear();
            n.output.reset();
        }
        spent_ = true;
    }

    bool spent() const { return spent_; }

    void reset() {
        nodes_.clear();
        spent_ = false;
    }

  private:
    std::vector<Node> nodes_;
    bool spent_ = false;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace fcc
