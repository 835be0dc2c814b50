#include "satdet/det/graph.hpp"

#include <algorithm>

#include "satdet/error.hpp"
#include "satdet/nn/ops.hpp"

namespace satdet::det {
namespace {

// Folds a following channel affine (and an optional input gain) into conv weights.
GraphOp fold_conv(OpKind kind, std::string name, int input, const nn::Param& weight, const nn::ChannelAffine& affine,
                  int stride, bool relu6, double input_gain = 1.0) {
    GraphOp op;
    op.kind = kind;
    op.name = std::move(name);
    op.input = input;
    op.stride = stride;
    op.relu6 = relu6;
    const nn::Tensor& w = weight.value;
    const std::size_t cout = w.dim(0);
    const std::size_t per_out = w.size() / cout;
    op.out_channels = cout;
    op.weights = nn::TensorF(w.shape());
    op.bias.resize(cout);
    for (std::size_t co = 0; co < cout; ++co) {
        const double s = affine.scale().value[co] * input_gain;
        for (std::size_t k = 0; k < per_out; ++k) {
            op.weights[co * per_out + k] = static_cast<float>(w[co * per_out + k] * s);
        }
        op.bias[co] = static_cast<float>(affine.shift().value[co]);
    }
    return op;
}

int push(InferenceGraph& g, GraphOp op) {
    g.ops.push_back(std::move(op));
    return static_cast<int>(g.ops.size()) - 1;
}

} // namespace

std::vector<int> InferenceGraph::last_use() const {
    std::vector<int> last(ops.size(), -1);
    for (std::size_t i = 0; i < ops.size(); ++i) {
        if (ops[i].input >= 0) last[static_cast<std::size_t>(ops[i].input)] = static_cast<int>(i);
        if (ops[i].input2 >= 0) last[static_cast<std::size_t>(ops[i].input2)] = static_cast<int>(i);
    }
    for (int o : outputs) last[static_cast<std::size_t>(o)] = static_cast<int>(ops.size());
    return last;
}

InferenceGraph fold_model(const DetectorModel& model) {
    InferenceGraph g;
    g.config = model.config();
    g.tracking_mode = model.tracking_mode();
    int cur = push(g, fold_conv(OpKind::Conv, "stem", -1, model.stem().weight(), model.stem_affine(),
                                model.stem().stride(), true, model.config().input_gain));

    std::vector<int> taps;
    std::size_t next_tap = 0;
    for (std::size_t b = 0; b < model.blocks().size(); ++b) {
        const auto& blk = model.blocks()[b];
        const std::string prefix = "block" + std::to_string(b);
        const int block_in = cur;
        if (blk.has_expand()) {
            cur = push(g, fold_conv(OpKind::Conv, prefix + ".expand", cur, blk.expand().weight(), blk.expand_affine(),
                                    1, true));
        }
        cur = push(g, fold_conv(OpKind::Depthwise, prefix + ".depthwise", cur, blk.depthwise().weight(),
                                blk.depthwise_affine(), blk.depthwise().stride(), true));
        cur = push(g, fold_conv(OpKind::Conv, prefix + ".project", cur, blk.project().weight(), blk.project_affine(),
                                1, false));
        if (blk.has_skip()) {
            GraphOp add;
            add.kind = OpKind::Add;
            add.name = prefix + ".add";
            add.input = cur;
            add.input2 = block_in;
            add.out_channels = blk.spec().out_channels;
            cur = push(g, std::move(add));
        }
        if (next_tap < g.config.head_taps.size() && g.config.head_taps[next_tap] == b) {
            taps.push_back(cur);
            ++next_tap;
        }
    }
    for (std::size_t h = 0; h < model.heads().size(); ++h) {
        const auto& head = model.heads()[h];
        GraphOp op;
        op.kind = OpKind::Conv;
        op.name = "head" + std::to_string(h);
        op.input = taps[h];
        op.stride = 1;
        op.weights = head.weight().value.cast<float>();
        op.out_channels = op.weights.dim(0);
        for (double v : head.bias()->value.data()) op.bias.push_back(static_cast<float>(v));
        g.outputs.push_back(push(g, std::move(op)));
    }
    return g;
}

std::vector<nn::TensorF> run_graph(const InferenceGraph& graph, const nn::TensorF& input, const OpObserver& observe) {
    nn::require_rank4(input.shape(), "graph input");
    if (input.dim(1) != 1 || input.dim(2) != static_cast<std::size_t>(graph.config.input_h) ||
        input.dim(3) != static_cast<std::size_t>(graph.config.input_w)) {
        throw ShapeError("graph input must be [N, 1, " + std::to_string(graph.config.input_h) + ", " +
                         std::to_string(graph.config.input_w) + "], got " + nn::shape_string(input.shape()));
    }
    const std::vector<int> last = graph.last_use();
    std::vector<nn::TensorF> values(graph.ops.size());
    auto operand = [&](int idx) -> const nn::TensorF& {
        return idx < 0 ? input : values[static_cast<std::size_t>(idx)];
    };
    for (std::size_t i = 0; i < graph.ops.size(); ++i) {
        const GraphOp& op = graph.ops[i];
        nn::TensorF y;
        switch (op.kind) {
        case OpKind::Conv:
            y = nn::conv2d_forward<float>(operand(op.input), op.weights, op.bias, op.stride, nn::Padding::Same);
            break;
        case OpKind::Depthwise:
            y = nn::depthwise_conv2d_forward<float>(operand(op.input), op.weights, op.bias, op.stride,
                                                    nn::Padding::Same);
            break;
        case OpKind::Add:
            y = nn::add_forward(operand(op.input), operand(op.input2));
            break;
        }
        if (op.relu6) {
            for (float& v : y.data()) v = std::min(std::max(v, 0.0f), 6.0f);
        }
        if (observe) observe(static_cast<int>(i), y);
        values[i] = std::move(y);
        // Release operands whose last reader was this op.
        for (int src : {op.input, op.input2}) {
            if (src >= 0 && last[static_cast<std::size_t>(src)] == static_cast<int>(i)) {
                values[static_cast<std::size_t>(src)] = nn::TensorF();
            }
        }
    }
    std::vector<nn::TensorF> out;
    for (int o : graph.outputs) out.push_back(std::move(values[static_cast<std::size_t>(o)]));
    return out;
}

} // namespace satdet::det
