#include "sparseattn/cost.hpp"

#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sparseattn/baseline.hpp"
#include "sparseattn/errors.hpp"
#include "sparseattn/model.hpp"

namespace sparseattn {

double conv_macs(std::size_t height, std::size_t width, std::size_t c_in, std::size_t kernel,
                 std::size_t c_out) {
  return static_cast<double>(height) * static_cast<double>(width) * static_cast<double>(c_in) *
         static_cast<double>(kernel * kernel) * static_cast<double>(c_out);
}

double CostReport::stage(const std::string& name) const {
  for (const StageCost& s : stages) {
    if (s.name == name) return s.flops;
  }
  throw ArgumentError("no cost stage named '" + name + "'");
}

FineCost fine_attention_cost(std::size_t k, std::size_t dim, std::size_t heads) {
  const double D = static_cast<double>(dim);
  const double dh = static_cast<double>(dim / heads);
  const double H = static_cast<double>(heads);
  const double tokens = static_cast<double>(k) + 1.0;
  // Per token: V (D x D) plus per head Q and K (D x d_h each).
  const double per_token = D * D + H * 2.0 * D * dh;
  FineCost c;
  c.pixel_projections = static_cast<double>(k) * per_token;
  c.cls_projections = per_token;
  // Per head: C = A^T V (d_h x tokens x D) and O = Q C (tokens x d_h x D).
  c.mixing = H * (dh * tokens * D + tokens * dh * D);
  return c;
}

CostReport count_cost(const ModelState& model, std::size_t height, std::size_t width, std::size_t k) {
  const ModelConfig& c = model.config();
  CostReport r;
  r.model = "sparseattn";
  r.parameters = parameter_count(model.parameters());
  r.height = height;
  r.width = width;
  r.k = k;
  const std::size_t K = 3, Cc = c.coarse_channels;
  const double coarse = conv_macs(height, width, 1, K, Cc) + conv_macs(height, width, Cc, K, 1);
  const double embed =
      static_cast<double>(k) * static_cast<double>(3 * c.embed_hidden + c.embed_hidden * c.dim);
  const double fine = fine_attention_cost(k, c.dim, c.heads).total();
  const double Hd = static_cast<double>(c.hidden);
  const double classifier = static_cast<double>(c.dim + Cc) * Hd +
                            static_cast<double>(c.blocks) * 2.0 * Hd * Hd +
                            Hd * static_cast<double>(c.classes);
  r.stages = {{"coarse", coarse}, {"embedding", embed}, {"fine", fine}, {"classifier", classifier}};
  for (const StageCost& s : r.stages) r.total_flops += s.flops;
  r.pixel_percent = 100.0 * static_cast<double>(k) / static_cast<double>(height * width);
  return r;
}

CostReport count_cost(const BaselineNet& model) {
  const BaselineConfig& c = model.config();
  CostReport r;
  r.model = "baseline";
  r.parameters = parameter_count(model.parameters());
  r.height = c.height;
  r.width = c.width;
  r.k = c.height * c.width;
  const double conv1 = conv_macs(c.height, c.width, 1, 3, c.channels1);
  const double conv2 = conv_macs(c.height / 2, c.width / 2, c.channels1, 3, c.channels2);
  const double head = static_cast<double>(c.channels2 * (c.height / 4) * (c.width / 4)) *
                      static_cast<double>(c.classes);
  r.stages = {{"conv1", conv1}, {"conv2", conv2}, {"head", head}};
  for (const StageCost& s : r.stages) r.total_flops += s.flops;
  r.pixel_percent = 100.0;
  return r;
}

std::string format_cost_table(const CostReport& r) {
  std::ostringstream os;
  os << "model        " << r.model << '\n';
  os << "image        " << r.height << 'x' << r.width << '\n';
  os << "k            " << r.k << '\n';
  os << "% image      " << std::fixed << std::setprecision(2) << r.pixel_percent << '\n';
  os << "parameters   " << r.parameters << '\n';
  os << "stage                 MACs\n";
  os << std::setprecision(0);
  for (const StageCost& s : r.stages) {
    os << "  " << std::left << std::setw(14) << s.name << std::right << std::setw(12) << s.flops
       << '\n';
  }
  os << "  " << std::left << std::setw(14) << "total" << std::right << std::setw(12)
     << r.total_flops << '\n';
  return os.str();
}

std::string cost_json(const CostReport& r) {
  nlohmann::ordered_json j;
  j["model"] = r.model;
  j["height"] = r.height;
  j["width"] = r.width;
  j["k"] = r.k;
  j["pixel_percent"] = r.pixel_percent;
  j["parameters"] = r.parameters;
  nlohmann::ordered_json stages = nlohmann::ordered_json::object();
  for (const StageCost& s : r.stages) stages[s.name] = s.flops;
  j["stages"] = stages;
  j["total_flops"] = r.total_flops;
  return j.dump();
}

}  // namespace sparseattn
