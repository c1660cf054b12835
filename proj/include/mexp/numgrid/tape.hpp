#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mexp/numgrid/grid.hpp"

namespace mexp {

/// Ordered log of differentiable operations. Records are appended in
/// execution order, so every record's inputs were produced by an earlier
/// record (or are leaves); a reverse sweep is a valid topological traversal.
template <typename T>
class BasicTape {
public:
    using GridT = BasicGrid<T>;

    struct Record {
        const char* op;
        std::vector<GridT> inputs;
        GridT output;
        std::function<void()> backward;
    };

    void push(const char* op, std::vector<GridT> inputs, GridT output,
              std::function<void()> backward) {
        records_.push_back({op, std::move(inputs), std::move(output), std::move(backward)});
    }

    std::size_t size() const noexcept { return records_.size(); }
    const std::vector<Record>& records() const noexcept { return records_; }
    void clear() { records_.clear(); }

    /// Seeds d(loss)/d(loss) = 1 and sweeps the records once in reverse.
    /// Leaf gradients accumulate into their grad buffers.
    void backward(GridT loss) {
        if (!loss.defined() || loss.size() != 1) {
            throw ShapeError("backward() needs a scalar loss, got " +
                             (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
        }
        if (!loss.requires_grad()) {
            throw ValidationError("backward(): loss does not depend on any tracked grid");
        }
        loss.grad_buffer()[0] += T(1);
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            if (it->output.has_grad()) it->backward();
            // intermediates are dead once propagated
            it->output.drop_grad();
        }
        records_.clear();
    }

private:
    std::vector<Record> records_;
};

template <typename T>
BasicTape<T>*& active_tape() {
    thread_local BasicTape<T>* tape = nullptr;
    return tape;
}

/// Routes ops executed on this thread into `tape` for the guard's lifetime.
template <typename T>
class Recording {
public:
    explicit Recording(BasicTape<T>& tape) : previous_(active_tape<T>()) {
        active_tape<T>() = &tape;
    }
    ~Recording() { active_tape<T>() = previous_; }
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

private:
    BasicTape<T>* previous_;
};

using Tape = BasicTape<float>;
using TapeD = BasicTape<double>;

}  // namespace mexp
