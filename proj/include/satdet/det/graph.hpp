#pragma once

#include <functional>
#include <string>
#include <vector>

#include "satdet/det/model.hpp"
#include "satdet/nn/tensor.hpp"

namespace satdet::det {

enum class OpKind { Conv, Depthwise, Add };

/// One node of the inference graph. Channel affines are folded into the
/// preceding convolution, the input gain into the stem, and ReLU6 is fused.
/// All convolutions use same padding.
struct GraphOp {
    OpKind kind = OpKind::Conv;
    std::string name;
    int input = -1;   // producing op, or -1 for the graph input
    int input2 = -1;  // second operand of Add
    int stride = 1;
    bool relu6 = false;
    nn::TensorF weights;  // Conv: [Cout, Cin, k, k]; Depthwise: [C, 1, k, k]
    std::vector<float> bias;
    std::size_t out_channels = 0;
};

struct InferenceGraph {
    ModelConfig config;
    TrackingMode tracking_mode = TrackingMode::RateTrack;
    std::vector<GraphOp> ops;
    std::vector<int> outputs;  // head ops, in head order

    /// Index of the last op reading each op's output (or the op itself for
    /// graph outputs), for freeing intermediates early.
    std::vector<int> last_use() const;
};

InferenceGraph fold_model(const DetectorModel& model);

/// Called with every op's output as it is produced.
using OpObserver = std::function<void(int op, const nn::TensorF& value)>;

/// Runs the folded graph on [N, 1, H, W] input in [0, 1]; returns the head maps.
std::vector<nn::TensorF> run_graph(const InferenceGraph& graph, const nn::TensorF& input,
                                   const OpObserver& observe = {});

} // namespace satdet::det
