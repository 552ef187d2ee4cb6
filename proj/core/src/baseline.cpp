#include "sparseattn/baseline.hpp"

#include <fstream>

#include "sparseattn/archive.hpp"
#include "sparseattn/errors.hpp"
#include "sparseattn/model.hpp"

namespace sparseattn {

namespace {
constexpr const char* kBaselineKind = "baseline";
}  // namespace

std::map<std::string, std::string> BaselineConfig::to_kv() const {
  return {{"height", std::to_string(height)},       {"width", std::to_string(width)},
          {"classes", std::to_string(classes)},     {"channels1", std::to_string(channels1)},
          {"channels2", std::to_string(channels2)}, {"seed", std::to_string(seed)}};
}

BaselineConfig BaselineConfig::from_kv(const std::map<std::string, std::string>& kv) {
  BaselineConfig c;
  auto get = [&kv](const char* key, std::size_t fallback) {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : static_cast<std::size_t>(parse_long(it->second, key));
  };
  c.height = get("height", c.height);
  c.width = get("width", c.width);
  c.classes = get("classes", c.classes);
  c.channels1 = get("channels1", c.channels1);
  c.channels2 = get("channels2", c.channels2);
  c.seed = get("seed", 0);
  return c;
}

BaselineNet::BaselineNet(const BaselineConfig& config) : config_(config) {
  if (config.height % 4 || config.width % 4 || config.height == 0 || config.width == 0) {
    throw ConfigError("baseline needs image sides divisible by 4");
  }
  Rng rng(config.seed);
  const std::size_t c1 = config.channels1, c2 = config.channels2;
  const std::size_t flat = c2 * (config.height / 4) * (config.width / 4);
  conv1_weight = {"baseline.conv1.weight", fan_in_uniform({c1, 1, 3, 3}, 9, rng)};
  conv1_bias = {"baseline.conv1.bias", Tensor({c1})};
  conv2_weight = {"baseline.conv2.weight", fan_in_uniform({c2, c1, 3, 3}, c1 * 9, rng)};
  conv2_bias = {"baseline.conv2.bias", Tensor({c2})};
  head_weight = {"baseline.head.w", fan_in_uniform({flat, config.classes}, flat, rng)};
  head_bias = {"baseline.head.b", Tensor({config.classes})};
}

ParameterRefs BaselineNet::parameters() {
  return {&conv1_weight, &conv1_bias, &conv2_weight, &conv2_bias, &head_weight, &head_bias};
}

ConstParameterRefs BaselineNet::parameters() const {
  return {&conv1_weight, &conv1_bias, &conv2_weight, &conv2_bias, &head_weight, &head_bias};
}

Var baseline_forward(Tape& tape, const BaselineNet& net, const Tensor& images) {
  const BaselineConfig& c = net.config();
  const std::size_t B = images.rank() == 3 ? images.dim(0) : 1;
  if ((images.rank() == 3 && (images.dim(1) != c.height || images.dim(2) != c.width)) ||
      (images.rank() == 2 && images.shape() != Shape{c.height, c.width}) ||
      (images.rank() != 2 && images.rank() != 3)) {
    throw DimensionError("baseline_forward: images " + shape_str(images.shape()) +
                         " do not match the configured image size");
  }
  Var x = tape.constant(images.reshaped({B, 1, c.height, c.width}));
  Var h = relu(conv2d(x, tape.param(net.conv1_weight), tape.param(net.conv1_bias), 1));
  h = avg_pool2d(h, 2);
  h = relu(conv2d(h, tape.param(net.conv2_weight), tape.param(net.conv2_bias), 1));
  h = avg_pool2d(h, 2);
  const std::size_t flat = h.value().size() / B;
  return affine(reshape(h, {B, flat}), tape.param(net.head_weight), tape.param(net.head_bias));
}

std::vector<std::size_t> predict_batch(const BaselineNet& net, const Tensor& images) {
  Tape tape(false);
  const Tensor& logits = baseline_forward(tape, net, images).value();
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  std::vector<std::size_t> out(B);
  for (std::size_t b = 0; b < B; ++b) out[b] = argmax(logits.data().subspan(b * C, C));
  return out;
}

void write_checkpoint(std::ostream& out, const BaselineNet& net) {
  Archive a;
  a.kind = kBaselineKind;
  a.meta = net.config().to_kv();
  for (const Parameter* p : net.parameters()) a.tensors.emplace_back(p->name, p->value);
  write_archive(out, a);
}

BaselineNet read_baseline_checkpoint(std::istream& in) {
  const Archive a = read_archive(in);
  if (a.kind != kBaselineKind) {
    throw DataError("checkpoint holds a '" + a.kind + "' model, expected 'baseline'");
  }
  BaselineNet net(BaselineConfig::from_kv(a.meta));
  for (Parameter* p : net.parameters()) {
    const Tensor& t = a.tensor(p->name);
    if (t.shape() != p->value.shape()) throw DataError("checkpoint tensor '" + p->name + "' has wrong shape");
    p->value = t;
  }
  return net;
}

void save_checkpoint(const std::string& path, const BaselineNet& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  write_checkpoint(out, net);
}

BaselineNet load_baseline_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  return read_baseline_checkpoint(in);
}

std::string checkpoint_kind(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  return read_archive(in).kind;
}

}  // namespace sparseattn
