#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace sparseattn {

class ModelState;
class BaselineNet;

// Multiply-adds of a same-size convolution: H * W * C_in * K^2 * C_out.
double conv_macs(std::size_t height, std::size_t width, std::size_t c_in, std::size_t kernel,
                 std::size_t c_out);

struct StageCost {
  std::string name;
  double flops = 0.0;  // multiply-adds
};

/// Parameter count and per-forward multiply-add counts, split by stage.
struct CostReport {
  std::string model;
  std::size_t parameters = 0;
  std::vector<StageCost> stages;
  double total_flops = 0.0;
  std::size_t height = 0, width = 0, k = 0;
  double pixel_percent = 0.0;  // share of pixels the fine stage sees

  double stage(const std::string& name) const;
};

// Fine attention over k pixel tokens plus CLS, split into the per-pixel
// projections, the CLS-row projections and the context/output products.
struct FineCost {
  double pixel_projections = 0.0;
  double cls_projections = 0.0;
  double mixing = 0.0;
  double total() const { return pixel_projections + cls_projections + mixing; }
};
FineCost fine_attention_cost(std::size_t k, std::size_t dim, std::size_t heads);

// k may be 0 here for boundary accounting (CLS-only fine stage).
CostReport count_cost(const ModelState& model, std::size_t height, std::size_t width, std::size_t k);
CostReport count_cost(const BaselineNet& model);

// Human-readable table and a one-line JSON object.
std::string format_cost_table(const CostReport& r);
std::string cost_json(const CostReport& r);

}  // namespace sparseattn
