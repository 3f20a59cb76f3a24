#pragma once

#include "deephedge/stochastics.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace dh {

struct NetworkShape {
    int inputs = 20;
    int lstm_width = 56;
    int lstm_cells = 2;
    int ffnn_width = 56;
    int ffnn_layers = 2;
    int outputs = 2;

    [[nodiscard]] std::size_t parameter_count() const;
    void validate() const;
    bool operator==(const NetworkShape&) const = default;
};

/// Recurrent cell: gates i, o and candidate g from the cell input and the
/// previous hidden state; c = i * g, h = o * tanh(c). No forget gate.
///
/// All parameters live in one flat vector. Per cell: W (3n x in), U (3n x n),
/// b (3n), gate blocks stacked in the order i, o, g. Then per FFNN layer W, b,
/// then the linear head W, b. Matrices are column-major.
class Network {
public:
    explicit Network(NetworkShape shape = {});

    [[nodiscard]] const NetworkShape& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(params_.size()); }
    Eigen::VectorXd& parameters() { return params_; }
    [[nodiscard]] const Eigen::VectorXd& parameters() const { return params_; }

    /// Glorot-uniform weights (per gate block), zero biases.
    void glorot_init(Rng& rng);

    using CMap = Eigen::Map<const Eigen::MatrixXd>;
    using CVec = Eigen::Map<const Eigen::VectorXd>;
    using Map = Eigen::Map<Eigen::MatrixXd>;
    using Vec = Eigen::Map<Eigen::VectorXd>;

    struct Block {
        std::size_t offset = 0;
        int rows = 0;
        int cols = 0;
    };

    [[nodiscard]] const Block& cell_w(int cell) const { return layout_[static_cast<std::size_t>(3 * cell)]; }
    [[nodiscard]] const Block& cell_u(int cell) const { return layout_[static_cast<std::size_t>(3 * cell + 1)]; }
    [[nodiscard]] const Block& cell_b(int cell) const { return layout_[static_cast<std::size_t>(3 * cell + 2)]; }
    [[nodiscard]] const Block& layer_w(int layer) const { return layout_[static_cast<std::size_t>(3 * shape_.lstm_cells + 2 * layer)]; }
    [[nodiscard]] const Block& layer_b(int layer) const { return layout_[static_cast<std::size_t>(3 * shape_.lstm_cells + 2 * layer + 1)]; }
    [[nodiscard]] const Block& head_w() const { return layout_[layout_.size() - 2]; }
    [[nodiscard]] const Block& head_b() const { return layout_.back(); }
    [[nodiscard]] const std::vector<Block>& blocks() const { return layout_; }

    [[nodiscard]] CMap view(const Block& b) const { return {params_.data() + b.offset, b.rows, b.cols}; }
    static Map view(Eigen::VectorXd& flat, const Block& b) { return {flat.data() + b.offset, b.rows, b.cols}; }

private:
    NetworkShape shape_;
    std::vector<Block> layout_;
    Eigen::VectorXd params_;
};

/// Evaluates a Network over an episode for a batch of paths (one column per
/// path), keeping the activations needed to backpropagate through time.
class NetworkRunner {
public:
    /// `keep_history` retains every step for backward(); without it only the
    /// recurrent state is kept (inference). `dropout_p` applies to FFNN hidden
    /// activations when a dropout generator is passed to step().
    NetworkRunner(const Network& net, std::size_t batch, bool keep_history, double dropout_p = 0.0);

    void reset();
    [[nodiscard]] std::size_t batch() const { return batch_; }
    [[nodiscard]] std::size_t steps() const { return t_; }

    /// One time step; `x` is inputs x batch. Returns outputs x batch.
    const Eigen::MatrixXd& step(const Eigen::MatrixXd& x, Rng* dropout_rng = nullptr);

    /// Backpropagates the most recent not-yet-processed step (call in reverse
    /// order after the forward sweep). Accumulates into `grad` (size of the
    /// flat parameter vector) and writes the input gradient to `d_x`.
    void backward_step(const Eigen::MatrixXd& d_out, Eigen::MatrixXd& d_x, Eigen::VectorXd& grad);

private:
    struct Cell {
        Eigen::MatrixXd i, o, g, tc, h;
    };
    struct Step {
        Eigen::MatrixXd x;
        std::vector<Cell> cells;
        std::vector<Eigen::MatrixXd> layers;  // post-activation (after dropout)
        bool dropout = false;
    };

    Step& slot(std::size_t t);
    [[nodiscard]] const Eigen::MatrixXd* previous_h(std::size_t t, int cell) const;

    const Network* net_;
    std::size_t batch_;
    bool keep_history_;
    double dropout_p_;
    std::vector<Step> history_;
    std::size_t t_ = 0;
    std::size_t back_t_ = 0;
    Eigen::MatrixXd out_;
    Eigen::MatrixXd z_;
    std::vector<Eigen::MatrixXd> dh_next_;
};

}  // namespace dh
