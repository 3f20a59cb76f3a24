#include "deephedge/network.hpp"

#include "deephedge/errors.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace dh {

namespace {

void sigmoid_into(const Eigen::Ref<const Eigen::MatrixXd>& z, Eigen::MatrixXd& out) {
    out = (1.0 + (-z.array()).exp()).inverse().matrix();
}

}  // namespace

std::size_t NetworkShape::parameter_count() const {
    std::size_t n = 0;
    int in = inputs;
    for (int c = 0; c < lstm_cells; ++c) {
        n += static_cast<std::size_t>(3 * lstm_width) * static_cast<std::size_t>(in + lstm_width + 1);
        in = lstm_width;
    }
    for (int j = 0; j < ffnn_layers; ++j) {
        n += static_cast<std::size_t>(ffnn_width) * static_cast<std::size_t>(in + 1);
        in = ffnn_width;
    }
    return n + static_cast<std::size_t>(outputs) * static_cast<std::size_t>(in + 1);
}

void NetworkShape::validate() const {
    if (inputs <= 0 || outputs <= 0 || lstm_cells < 0 || ffnn_layers < 0 || lstm_width <= 0 || ffnn_width <= 0)
        throw ConfigError("network shape entries must be positive");
}

Network::Network(NetworkShape shape) : shape_(shape) {
    shape_.validate();
    std::size_t offset = 0;
    auto add = [&](int rows, int cols) {
        layout_.push_back(Block{offset, rows, cols});
        offset += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    };
    int in = shape_.inputs;
    for (int c = 0; c < shape_.lstm_cells; ++c) {
        add(3 * shape_.lstm_width, in);
        add(3 * shape_.lstm_width, shape_.lstm_width);
        add(3 * shape_.lstm_width, 1);
        in = shape_.lstm_width;
    }
    for (int j = 0; j < shape_.ffnn_layers; ++j) {
        add(shape_.ffnn_width, in);
        add(shape_.ffnn_width, 1);
        in = shape_.ffnn_width;
    }
    add(shape_.outputs, in);
    add(shape_.outputs, 1);
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(offset));
}

void Network::glorot_init(Rng& rng) {
    params_.setZero();
    auto fill = [&](const Block& b, int row0, int rows, int fan_in, int fan_out) {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> u(-limit, limit);
        Map m = view(params_, b);
        for (int j = 0; j < b.cols; ++j)
            for (int i = row0; i < row0 + rows; ++i) m(i, j) = u(rng);
    };
    const int n = shape_.lstm_width;
    for (int c = 0; c < shape_.lstm_cells; ++c)
        for (int gate = 0; gate < 3; ++gate) {
            fill(cell_w(c), gate * n, n, cell_w(c).cols, n);
            fill(cell_u(c), gate * n, n, n, n);
        }
    for (int j = 0; j < shape_.ffnn_layers; ++j) fill(layer_w(j), 0, layer_w(j).rows, layer_w(j).cols, layer_w(j).rows);
    fill(head_w(), 0, head_w().rows, head_w().cols, head_w().rows);
}

NetworkRunner::NetworkRunner(const Network& net, std::size_t batch, bool keep_history, double dropout_p)
    : net_(&net), batch_(batch), keep_history_(keep_history), dropout_p_(dropout_p) {
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout probability must lie in [0,1)");
    if (!keep_history_) history_.resize(2);
    reset();
}

void NetworkRunner::reset() {
    t_ = 0;
    back_t_ = 0;
    dh_next_.assign(static_cast<std::size_t>(net_->shape().lstm_cells),
                    Eigen::MatrixXd::Zero(net_->shape().lstm_width, static_cast<Eigen::Index>(batch_)));
}

NetworkRunner::Step& NetworkRunner::slot(std::size_t t) {
    if (!keep_history_) return history_[t % 2];
    if (history_.size() <= t) history_.resize(t + 1);
    return history_[t];
}

const Eigen::MatrixXd* NetworkRunner::previous_h(std::size_t t, int cell) const {
    if (t == 0) return nullptr;
    const Step& s = keep_history_ ? history_[t - 1] : history_[(t - 1) % 2];
    return &s.cells[static_cast<std::size_t>(cell)].h;
}

const Eigen::MatrixXd& NetworkRunner::step(const Eigen::MatrixXd& x, Rng* dropout_rng) {
    const auto& shape = net_->shape();
    if (x.rows() != shape.inputs || static_cast<std::size_t>(x.cols()) != batch_)
        throw ConfigError("network input has shape " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                          ", expected " + std::to_string(shape.inputs) + "x" + std::to_string(batch_));
    Step& s = slot(t_);
    s.x = x;
    s.cells.resize(static_cast<std::size_t>(shape.lstm_cells));
    s.layers.resize(static_cast<std::size_t>(shape.ffnn_layers));
    s.dropout = dropout_rng != nullptr && dropout_p_ > 0.0;
    const Eigen::MatrixXd* input = &s.x;
    const int n = shape.lstm_width;
    for (int c = 0; c < shape.lstm_cells; ++c) {
        Cell& cell = s.cells[static_cast<std::size_t>(c)];
        z_.noalias() = net_->view(net_->cell_w(c)) * (*input);
        if (const auto* prev = previous_h(t_, c)) z_.noalias() += net_->view(net_->cell_u(c)) * (*prev);
        z_.colwise() += net_->view(net_->cell_b(c)).col(0);
        sigmoid_into(z_.topRows(n), cell.i);
        sigmoid_into(z_.middleRows(n, n), cell.o);
        cell.g = z_.bottomRows(n).array().tanh().matrix();
        cell.tc = (cell.i.array() * cell.g.array()).tanh().matrix();
        cell.h = (cell.o.array() * cell.tc.array()).matrix();
        input = &cell.h;
    }
    const double keep_scale = 1.0 / (1.0 - dropout_p_);
    std::bernoulli_distribution keep(1.0 - dropout_p_);
    for (int j = 0; j < shape.ffnn_layers; ++j) {
        Eigen::MatrixXd& y = s.layers[static_cast<std::size_t>(j)];
        y.noalias() = net_->view(net_->layer_w(j)) * (*input);
        y.colwise() += net_->view(net_->layer_b(j)).col(0);
        y = y.cwiseMax(0.0);
        if (s.dropout) {
            for (Eigen::Index k = 0; k < y.size(); ++k) y.data()[k] = keep(*dropout_rng) ? y.data()[k] * keep_scale : 0.0;
        }
        input = &y;
    }
    out_.noalias() = net_->view(net_->head_w()) * (*input);
    out_.colwise() += net_->view(net_->head_b()).col(0);
    ++t_;
    back_t_ = t_;
    return out_;
}

void NetworkRunner::backward_step(const Eigen::MatrixXd& d_out, Eigen::MatrixXd& d_x, Eigen::VectorXd& grad) {
    if (!keep_history_) throw std::logic_error("NetworkRunner: backward without history");
    if (back_t_ == 0) throw std::logic_error("NetworkRunner: no step left to backpropagate");
    const std::size_t t = --back_t_;
    const auto& shape = net_->shape();
    Step& s = history_[t];
    const int n = shape.lstm_width;

    auto cell_out = [&]() -> const Eigen::MatrixXd& { return shape.lstm_cells > 0 ? s.cells.back().h : s.x; };
    const Eigen::MatrixXd& top = shape.ffnn_layers > 0 ? s.layers.back() : cell_out();
    Network::view(grad, net_->head_w()).noalias() += d_out * top.transpose();
    Network::view(grad, net_->head_b()) += d_out.rowwise().sum();
    Eigen::MatrixXd dy = net_->view(net_->head_w()).transpose() * d_out;

    const double scale = s.dropout ? 1.0 / (1.0 - dropout_p_) : 1.0;
    Eigen::MatrixXd da;
    for (int j = shape.ffnn_layers - 1; j >= 0; --j) {
        const Eigen::MatrixXd& y = s.layers[static_cast<std::size_t>(j)];
        da = (dy.array() * (y.array() > 0.0).cast<double>() * scale).matrix();
        const Eigen::MatrixXd& in = j == 0 ? cell_out() : s.layers[static_cast<std::size_t>(j - 1)];
        Network::view(grad, net_->layer_w(j)).noalias() += da * in.transpose();
        Network::view(grad, net_->layer_b(j)) += da.rowwise().sum();
        dy.noalias() = net_->view(net_->layer_w(j)).transpose() * da;
    }

    Eigen::MatrixXd dz(3 * n, static_cast<Eigen::Index>(batch_));
    for (int c = shape.lstm_cells - 1; c >= 0; --c) {
        const Cell& cell = s.cells[static_cast<std::size_t>(c)];
        auto& carry = dh_next_[static_cast<std::size_t>(c)];
        const Eigen::ArrayXXd dh = dy.array() + carry.array();
        const Eigen::ArrayXXd dc = dh * cell.o.array() * (1.0 - cell.tc.array().square());
        dz.topRows(n) = (dc * cell.g.array() * cell.i.array() * (1.0 - cell.i.array())).matrix();
        dz.middleRows(n, n) = (dh * cell.tc.array() * cell.o.array() * (1.0 - cell.o.array())).matrix();
        dz.bottomRows(n) = (dc * cell.i.array() * (1.0 - cell.g.array().square())).matrix();
        const Eigen::MatrixXd& in = c == 0 ? s.x : s.cells[static_cast<std::size_t>(c - 1)].h;
        Network::view(grad, net_->cell_w(c)).noalias() += dz * in.transpose();
        Network::view(grad, net_->cell_b(c)) += dz.rowwise().sum();
        if (const auto* prev = previous_h(t, c)) {
            Network::view(grad, net_->cell_u(c)).noalias() += dz * prev->transpose();
            carry.noalias() = net_->view(net_->cell_u(c)).transpose() * dz;
        } else {
            carry.setZero();
        }
        dy.noalias() = net_->view(net_->cell_w(c)).transpose() * dz;
    }
    d_x = std::move(dy);
}

}  // namespace dh
