#include "sparseattn/model.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "sparseattn/archive.hpp"
#include "sparseattn/errors.hpp"

namespace sparseattn {

namespace {

constexpr const char* kModelKind = "sparseattn";

std::size_t get_size(const std::map<std::string, std::string>& kv, const std::string& key,
                     std::size_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const long v = parse_long(it->second, key);
  if (v < 0) throw ConfigError(key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

long get_long(const std::map<std::string, std::string>& kv, const std::string& key, long fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : parse_long(it->second, key);
}

double get_double(const std::map<std::string, std::string>& kv, const std::string& key,
                  double fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : parse_double(it->second, key);
}

Tensor moments_tensor(const std::vector<double>& v) { return Tensor::vector(v); }

}  // namespace

std::map<std::string, std::string> ModelConfig::to_kv() const {
  return {
      {"height", std::to_string(height)},
      {"width", std::to_string(width)},
      {"classes", std::to_string(classes)},
      {"coarse_channels", std::to_string(coarse_channels)},
      {"embed_hidden", std::to_string(embed_hidden)},
      {"dim", std::to_string(dim)},
      {"heads", std::to_string(heads)},
      {"hidden", std::to_string(hidden)},
      {"blocks", std::to_string(blocks)},
      {"fine_epsilon", format_double(fine_epsilon)},
      {"k_init", std::to_string(k.k_init)},
      {"k_min", std::to_string(k.k_min)},
      {"k_max", std::to_string(k.k_max)},
      {"k_step_up", std::to_string(k.step_up)},
      {"k_step_down", std::to_string(k.step_down)},
      {"ema_beta", format_double(k.beta)},
      {"k_alpha", format_double(k.alpha)},
      {"seed", std::to_string(seed)},
  };
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  c.height = get_size(kv, "height", c.height);
  c.width = get_size(kv, "width", c.width);
  c.classes = get_size(kv, "classes", c.classes);
  c.coarse_channels = get_size(kv, "coarse_channels", c.coarse_channels);
  c.embed_hidden = get_size(kv, "embed_hidden", c.embed_hidden);
  c.dim = get_size(kv, "dim", c.dim);
  c.heads = get_size(kv, "heads", c.heads);
  c.hidden = get_size(kv, "hidden", c.hidden);
  c.blocks = get_size(kv, "blocks", c.blocks);
  c.fine_epsilon = get_double(kv, "fine_epsilon", c.fine_epsilon);
  c.k.k_init = get_long(kv, "k_init", c.k.k_init);
  c.k.k_min = get_long(kv, "k_min", c.k.k_min);
  c.k.k_max = get_long(kv, "k_max", c.k.k_max);
  c.k.step_up = get_long(kv, "k_step_up", c.k.step_up);
  c.k.step_down = get_long(kv, "k_step_down", c.k.step_down);
  c.k.beta = get_double(kv, "ema_beta", c.k.beta);
  c.k.alpha = get_double(kv, "k_alpha", c.k.alpha);
  c.seed = static_cast<std::uint64_t>(get_long(kv, "seed", 0));
  return c;
}

ModelState::ModelState(const ModelConfig& config) : config_(config) {
  if (config.height < 2 || config.width < 2) throw ConfigError("image must be at least 2x2");
  if (config.classes < 2) throw ConfigError("need at least two classes");
  Rng rng(config.seed);
  coarse = CoarseNet(CoarseConfig{config.coarse_channels, 3}, rng);
  embedder = Embedder(EmbedderConfig{config.dim, config.embed_hidden}, rng);
  fine = FineAttention(FineConfig{config.dim, config.heads, config.fine_epsilon}, rng);
  ClassifierConfig cc;
  cc.input = config.dim + config.coarse_channels;
  cc.hidden = config.hidden;
  cc.classes = config.classes;
  cc.blocks = config.blocks;
  classifier = Classifier(cc, rng);
  controller = KController(config.k, config.pixel_count());
}

ParameterRefs ModelState::parameters() {
  ParameterRefs out;
  for (Parameter* p : coarse.parameters()) out.push_back(p);
  for (Parameter* p : embedder.parameters()) out.push_back(p);
  for (Parameter* p : fine.parameters()) out.push_back(p);
  for (Parameter* p : classifier.parameters()) out.push_back(p);
  return out;
}

ConstParameterRefs ModelState::parameters() const {
  ConstParameterRefs out;
  for (const Parameter* p : coarse.parameters()) out.push_back(p);
  for (const Parameter* p : embedder.parameters()) out.push_back(p);
  for (const Parameter* p : fine.parameters()) out.push_back(p);
  for (const Parameter* p : classifier.parameters()) out.push_back(p);
  return out;
}

void absorb_moments(ModelState& m, const ObservedMoments& observed) {
  if (!observed.present) return;
  m.coarse.absorb_batch_moments(observed.coarse, observed.coarse_count);
  m.classifier.absorb_batch_moments(observed.classifier, observed.classifier_count);
}

Var fuse(Var z_fine, Var z_coarse) {
  if (z_fine.value().rank() == 1 && z_coarse.value().rank() == 1) {
    const Var parts[] = {z_fine, z_coarse};
    return concat(parts);
  }
  return concat_cols(z_fine, z_coarse);
}

ForwardResult model_forward(Tape& tape, const ModelState& m, const Tensor& images, std::size_t k,
                            bool training, ObservedMoments* observed) {
  const ModelConfig& cfg = m.config();
  const std::size_t H = cfg.height, W = cfg.width;
  std::size_t B = 1;
  if (images.rank() == 3) {
    B = images.dim(0);
    if (images.dim(1) != H || images.dim(2) != W) {
      throw DimensionError("model_forward: images " + shape_str(images.shape()) +
                           " do not match model shape [" + std::to_string(H) + "x" +
                           std::to_string(W) + "]");
    }
  } else if (images.shape() != Shape{H, W}) {
    throw DimensionError("model_forward: image " + shape_str(images.shape()) +
                         " does not match model shape [" + std::to_string(H) + "x" +
                         std::to_string(W) + "]");
  }
  if (B == 0) throw ArgumentError("model_forward: empty batch");
  if (k < 1 || k > H * W) {
    throw ArgumentError("model_forward: k=" + std::to_string(k) + " outside [1, " +
                        std::to_string(H * W) + "]");
  }

  ForwardResult r;
  ChannelMoments coarse_moments;
  Var x = tape.constant(images.reshaped({B, 1, H, W}));
  r.coarse = coarse_forward(m.coarse, x, training, &coarse_moments);

  // Selection is an index gather on plain values; no gradient flows through it.
  const Tensor& map = r.coarse.attention_map.value();
  Tensor points({B * k, 3});
  r.selected.reserve(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto begin = static_cast<std::ptrdiff_t>(b * H * W);
    const auto end = static_cast<std::ptrdiff_t>((b + 1) * H * W);
    Tensor map_b({H, W}, std::vector<double>(map.data().begin() + begin, map.data().begin() + end));
    Tensor img_b({H, W},
                 std::vector<double>(images.data().begin() + begin, images.data().begin() + end));
    r.selected.push_back(select_top_k(map_b, img_b, k));
    const Tensor feats = pixel_features(r.selected.back());
    std::copy(feats.data().begin(), feats.data().end(), points.data().begin() + b * k * 3);
  }

  Var embedded = embed_points(m.embedder, tape.constant(std::move(points)));
  std::vector<Var> z_rows;
  z_rows.reserve(B);
  r.fine.reserve(B);
  for (std::size_t b = 0; b < B; ++b) {
    Var tokens = append_cls(m.embedder, slice_rows(embedded, b * k, (b + 1) * k));
    r.fine.push_back(fine_forward(m.fine, tokens));
    z_rows.push_back(r.fine.back().z_fine);
  }
  r.z_fine = stack_rows(z_rows);
  r.features = fuse(r.z_fine, r.coarse.z_coarse);

  const bool batch_stats = training && B > 1;
  std::vector<ChannelMoments> clf_moments;
  r.logits = classifier_forward(m.classifier, r.features, batch_stats, &clf_moments);

  if (observed) {
    *observed = ObservedMoments{};
    if (batch_stats) {
      observed->present = true;
      observed->coarse = std::move(coarse_moments);
      observed->coarse_count = B * H * W;
      observed->classifier = std::move(clf_moments);
      observed->classifier_count = B;
    }
  }
  return r;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ArgumentError("argmax of an empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<std::size_t> predict_batch(const ModelState& m, const Tensor& images, std::size_t k) {
  Tape tape(false);
  ForwardResult r = model_forward(tape, m, images, k, false);
  const Tensor& logits = r.logits.value();
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  std::vector<std::size_t> out(B);
  for (std::size_t b = 0; b < B; ++b) out[b] = argmax(logits.data().subspan(b * C, C));
  return out;
}

std::size_t predict(const ModelState& m, const Tensor& image) {
  return predict_batch(m, image, m.controller.k()).front();
}

std::vector<std::pair<std::string, Tensor>> named_tensors(const ModelState& m) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const Parameter* p : m.parameters()) out.emplace_back(p->name, p->value);
  out.emplace_back("coarse.bn.running_mean", moments_tensor(m.coarse.running.mean));
  out.emplace_back("coarse.bn.running_var", moments_tensor(m.coarse.running.var));
  for (std::size_t i = 0; i < m.classifier.blocks.size(); ++i) {
    const std::string p = "classifier.block" + std::to_string(i) + ".bn.";
    out.emplace_back(p + "running_mean", moments_tensor(m.classifier.blocks[i].running.mean));
    out.emplace_back(p + "running_var", moments_tensor(m.classifier.blocks[i].running.var));
  }
  out.emplace_back("controller.state", Tensor::vector(m.controller.state()));
  return out;
}

void write_checkpoint(std::ostream& out, const ModelState& m) {
  Archive a;
  a.kind = kModelKind;
  a.meta = m.config().to_kv();
  a.tensors = named_tensors(m);
  write_archive(out, a);
}

ModelState read_checkpoint(std::istream& in) {
  const Archive a = read_archive(in);
  if (a.kind != kModelKind) {
    throw DataError("checkpoint holds a '" + a.kind + "' model, expected '" + kModelKind + "'");
  }
  ModelState m(ModelConfig::from_kv(a.meta));
  auto assign = [&a](Parameter& p) {
    const Tensor& t = a.tensor(p.name);
    if (t.shape() != p.value.shape()) {
      throw DataError("checkpoint tensor '" + p.name + "' has shape " + shape_str(t.shape()) +
                      ", expected " + shape_str(p.value.shape()));
    }
    p.value = t;
  };
  for (Parameter* p : m.parameters()) assign(*p);
  auto moments = [&a](const std::string& name, std::vector<double>& dst) {
    const Tensor& t = a.tensor(name);
    if (t.size() != dst.size()) throw DataError("checkpoint tensor '" + name + "' has wrong size");
    dst.assign(t.data().begin(), t.data().end());
  };
  moments("coarse.bn.running_mean", m.coarse.running.mean);
  moments("coarse.bn.running_var", m.coarse.running.var);
  for (std::size_t i = 0; i < m.classifier.blocks.size(); ++i) {
    const std::string p = "classifier.block" + std::to_string(i) + ".bn.";
    moments(p + "running_mean", m.classifier.blocks[i].running.mean);
    moments(p + "running_var", m.classifier.blocks[i].running.var);
  }
  const Tensor& ctrl = a.tensor("controller.state");
  m.controller.restore(std::vector<double>(ctrl.data().begin(), ctrl.data().end()));
  return m;
}

void save_checkpoint(const std::string& path, const ModelState& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  write_checkpoint(out, m);
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace sparseattn
