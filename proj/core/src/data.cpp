#include "sparseattn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "sparseattn/errors.hpp"

namespace sparseattn {

namespace {


bool in_disk(double x, double y, double cx, double cy, double r) {
  const double dx = x - cx, dy = y - cy;
  return dx * dx + dy * dy <= r * r;
}

}  // namespace

Dataset generate(const SyntheticSpec& spec) {
  if (spec.image_size < 16) throw ConfigError("synthetic image_size must be >= 16");
  if (spec.class_count < 2 || spec.class_count > 3) {
    throw ConfigError("synthetic generator supports 2 or 3 classes");
  }
  if (!(spec.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  const std::size_t S = spec.image_size;
  const double scale = static_cast<double>(S) / 32.0;
  const double mid = (static_cast<double>(S) - 1.0) / 2.0;

  Dataset out;
  out.reserve(spec.class_count * spec.samples_per_class);
  for (std::size_t cls = 0; cls < spec.class_count; ++cls) {
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                        static_cast<std::uint32_t>(cls), static_cast<std::uint32_t>(i)};
      std::mt19937_64 rng(seq);
      auto uni = [&rng](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
      };

      // Geometry.
      double r_outer = 0.0, r_inner = 0.0, lobe_r = 0.0, lobe_d = 0.0, theta = 0.0, extent = 0.0;
      if (cls == 0) {
        r_outer = uni(7.5, 9.5) * scale;
        extent = r_outer;
      } else if (cls == 1) {
        r_outer = uni(9.0, 11.0) * scale;
        r_inner = r_outer - uni(3.5, 4.5) * scale;
        extent = r_outer;
      } else {
        lobe_r = uni(5.5, 6.5) * scale;
        lobe_d = lobe_r * uni(0.9, 1.1);
        theta = uni(0.0, std::numbers::pi);
        extent = lobe_d + lobe_r;
      }
      const double jitter = std::max(0.0, std::min(S / 8.0, mid - 1.0 - extent));
      const double cx = mid + uni(-jitter, jitter);
      const double cy = mid + uni(-jitter, jitter);

      // Texture parameters.
      const double base = uni(0.6, 0.85);
      const double amp = uni(0.05, 0.12);
      const double fx = uni(0.3, 0.8), fy = uni(0.3, 0.8), phase = uni(0.0, 2.0 * std::numbers::pi);

      Tensor img({S, S});
      std::vector<std::uint8_t> mask(S * S, 0);
      for (std::size_t r = 0; r < S; ++r) {
        for (std::size_t c = 0; c < S; ++c) {
          const double x = static_cast<double>(c), y = static_cast<double>(r);
          bool fg = false;
          if (cls == 0) {
            fg = in_disk(x, y, cx, cy, r_outer);
          } else if (cls == 1) {
            fg = in_disk(x, y, cx, cy, r_outer) && !in_disk(x, y, cx, cy, r_inner);
          } else {
            const double ox = lobe_d * std::cos(theta), oy = lobe_d * std::sin(theta);
            fg = in_disk(x, y, cx + ox, cy + oy, lobe_r) || in_disk(x, y, cx - ox, cy - oy, lobe_r);
          }
          if (fg) {
            mask[r * S + c] = 1;
            img[r * S + c] = base + amp * std::sin(fx * x + phase) * std::cos(fy * y - phase);
          }
        }
      }
      if (spec.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.noise_sigma);
        for (double& v : img.data()) v += noise(rng);
      }
      for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);

      LabeledImage li;
      li.pixels = std::move(img);
      li.label = cls;
      li.foreground_mask = std::move(mask);
      std::ostringstream name;
      name << "c" << cls << "_" << i;
      li.name = name.str();
      out.push_back(std::move(li));
    }
  }
  return out;
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in, const std::string& path) {
  std::string tok;
  char ch = 0;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  if (tok.empty()) throw DataError(path + ": truncated PGM header");
  return tok;
}

std::size_t pgm_number(std::istream& in, const std::string& path) {
  const std::string tok = pgm_token(in, path);
  std::size_t v = 0;
  for (char c : tok) {
    if (c < '0' || c > '9') throw DataError(path + ": bad PGM header value '" + tok + "'");
    v = v * 10 + static_cast<std::size_t>(c - '0');
  }
  return v;
}

}  // namespace

Tensor read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path);
  const std::string magic = pgm_token(in, path);
  if (magic != "P5" && magic != "P2") {
    throw DataError(path + ": bad magic '" + magic + "' (expected P5 or P2 PGM)");
  }
  const std::size_t w = pgm_number(in, path);
  const std::size_t h = pgm_number(in, path);
  const std::size_t maxval = pgm_number(in, path);
  if (w == 0 || h == 0) throw DataError(path + ": empty image");
  if (maxval != 255) throw DataError(path + ": only 8-bit PGM (maxval 255) is supported");
  Tensor t({h, w});
  if (magic == "P5") {
    std::vector<unsigned char> buf(w * h);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
      throw DataError(path + ": truncated pixel data");
    }
    for (std::size_t i = 0; i < buf.size(); ++i) t[i] = buf[i] / 255.0;
  } else {
    for (std::size_t i = 0; i < w * h; ++i) {
      const std::size_t v = pgm_number(in, path);
      if (v > 255) throw DataError(path + ": pixel value above maxval");
      t[i] = static_cast<double>(v) / 255.0;
    }
  }
  return t;
}

void write_pgm(const std::string& path, const Tensor& pixels) {
  if (pixels.rank() != 2) throw DimensionError("write_pgm: expected [H x W], got " + shape_str(pixels.shape()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "P5\n" << pixels.dim(1) << ' ' << pixels.dim(0) << "\n255\n";
  std::vector<unsigned char> buf(pixels.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = static_cast<unsigned char>(std::lround(std::clamp(pixels[i], 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("failed writing " + path);
}

Dataset load_dataset(const std::string& dir, std::size_t class_count, const std::string& manifest) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = fs::path(dir) / manifest;
  std::ifstream in(manifest_path);
  if (!in) throw DataError("missing manifest " + manifest_path.string());
  Dataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("filename", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw DataError(manifest_path.string() + " row " + std::to_string(line_no) +
                      ": expected 'filename,label'");
    }
    const std::string file = line.substr(0, comma);
    const std::string label_str = line.substr(comma + 1);
    long label = -1;
    try {
      std::size_t used = 0;
      label = std::stol(label_str, &used);
      if (used != label_str.size()) label = -1;
    } catch (const std::exception&) {
      label = -1;
    }
    if (label < 0 || static_cast<std::size_t>(label) >= class_count) {
      throw DataError(manifest_path.string() + " row " + std::to_string(line_no) + ": label '" +
                      label_str + "' outside [0," + std::to_string(class_count) + ")");
    }
    LabeledImage li;
    li.pixels = read_pgm((fs::path(dir) / file).string());
    li.label = static_cast<std::size_t>(label);
    li.name = fs::path(file).stem().string();
    if (!out.empty() && li.pixels.shape() != out.front().pixels.shape()) {
      throw DataError(file + ": shape " + shape_str(li.pixels.shape()) + " differs from " +
                      shape_str(out.front().pixels.shape()) + " (no resampling is performed)");
    }
    out.push_back(std::move(li));
  }
  return out;
}

void export_dataset(const std::string& dir, const Dataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw DataError("cannot write manifest in " + dir);
  manifest << "filename,label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::ostringstream name;
    name << "img_" << std::setw(5) << std::setfill('0') << i << ".pgm";
    write_pgm((fs::path(dir) / name.str()).string(), data[i].pixels);
    manifest << name.str() << ',' << data[i].label << '\n';
  }
}

DatasetSplit split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  if (data.empty()) throw ArgumentError("cannot split an empty dataset");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ArgumentError("train fraction must lie in (0, 1)");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data[i].label].push_back(i);

  DatasetSplit out;
  std::vector<std::size_t> train_idx, test_idx;
  std::mt19937_64 rng(seed);
  for (auto& [cls, idx] : by_class) {
    if (idx.size() < 2) {
      out.warnings.push_back("class " + std::to_string(cls) + " has " +
                             std::to_string(idx.size()) + " sample(s); all assigned to train");
      train_idx.insert(train_idx.end(), idx.begin(), idx.end());
      continue;
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_idx.insert(test_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  for (std::size_t i : train_idx) out.train.push_back(data[i]);
  for (std::size_t i : test_idx) out.test.push_back(data[i]);
  return out;
}

Tensor stack_images(const Dataset& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ArgumentError("stack_images: no indices");
  const Shape& s = data.at(indices.front()).pixels.shape();
  if (s.size() != 2) throw DimensionError("stack_images: images must be [H x W]");
  Tensor out({indices.size(), s[0], s[1]});
  const std::size_t n = s[0] * s[1];
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& p = data.at(indices[i]).pixels;
    if (p.shape() != s) throw DimensionError("stack_images: mixed image shapes");
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + i * n);
  }
  return out;
}

}  // namespace sparseattn
