#include "ddb/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ddb/errors.hpp"

namespace fs = std::filesystem;

namespace ddb {

CyclicSampler::CyclicSampler(int64_t size, RngState rng) : rng_(rng) {
  if (size <= 0) {
    throw std::invalid_argument("CyclicSampler: empty index set");
  }
  order_.resize(static_cast<size_t>(size));
  std::iota(order_.begin(), order_.end(), int64_t{0});
  rng_.shuffle(order_);
}

int64_t CyclicSampler::next() {
  if (pos_ == order_.size()) {
    rng_.shuffle(order_);
    pos_ = 0;
  }
  return order_[pos_++];
}

namespace {

struct Rgb {
  double r, g, b;
};

// Five scene colors per domain. Within one domain the disk color is shared
// by classes 4 and 5: only band context can tell them apart. Across domains
// the bands shift mildly (they anchor the adaptation), while object colors
// shift hard inside a stable hue family, so a source-only model loses the
// objects but bridging can recover them.
struct Palette {
  Rgb band_a, band_b, square2, square3, disk;
};

Palette palette_for(int id) {
  switch (id) {
    case 0:
      return {{0.72, 0.60, 0.28},
              {0.24, 0.34, 0.62},
              {0.86, 0.16, 0.16},
              {0.16, 0.78, 0.22},
              {0.90, 0.90, 0.92}};
    case 1:
      return {{0.55, 0.58, 0.22},
              {0.14, 0.40, 0.58},
              {0.82, 0.10, 0.42},
              {0.05, 0.72, 0.45},
              {0.78, 0.78, 0.95}};
    default:
      throw ConfigError("palette id must be 0 or 1");
  }
}

struct Band {
  int top;  // first row
  int end;  // one past last row
};

void paint_square(std::vector<double>& img, LabelMap& label, int w, int y0,
                  int x0, int side, const Rgb& color, uint8_t cls) {
  for (int y = y0; y < y0 + side; ++y) {
    for (int x = x0; x < x0 + side; ++x) {
      double* px = img.data() + (static_cast<size_t>(y) * w + x) * 3;
      px[0] = color.r;
      px[1] = color.g;
      px[2] = color.b;
      label.at(y, x) = cls;
    }
  }
}

void paint_disk(std::vector<double>& img, LabelMap& label, int w, int cy,
                int cx, int radius, const Rgb& color, uint8_t cls) {
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dy * dy + dx * dx > radius * radius) continue;
      double* px =
          img.data() + (static_cast<size_t>(cy + dy) * w + (cx + dx)) * 3;
      px[0] = color.r;
      px[1] = color.g;
      px[2] = color.b;
      label.at(cy + dy, cx + dx) = cls;
    }
  }
}

Sample render_scene(const DomainSpec& spec, int size, RngState rng,
                    bool keep_label, int domain_id) {
  const Palette pal = palette_for(spec.palette);
  const int h = size, w = size;

  const int boundary =
      static_cast<int>(std::lround(h * rng.uniform(0.4, 0.6)));
  const bool a_on_top = rng.bernoulli(0.5);
  const Band band_a = a_on_top ? Band{0, boundary} : Band{boundary, h};
  const Band band_b = a_on_top ? Band{boundary, h} : Band{0, boundary};

  std::vector<double> img(static_cast<size_t>(h) * w * 3);
  LabelMap label(h, w);
  for (int y = 0; y < h; ++y) {
    const bool in_a = y >= band_a.top && y < band_a.end;
    const Rgb& c = in_a ? pal.band_a : pal.band_b;
    for (int x = 0; x < w; ++x) {
      double* px = img.data() + (static_cast<size_t>(y) * w + x) * 3;
      px[0] = c.r;
      px[1] = c.g;
      px[2] = c.b;
      label.at(y, x) = in_a ? 0 : 1;
    }
  }

  auto draw_count = [&rng](double rate) {
    int n = static_cast<int>(std::floor(rate));
    if (rng.bernoulli(rate - n)) ++n;
    return n;
  };
  const auto& freq = spec.class_frequencies;
  if (freq.size() != 4) {
    throw ConfigError("class_frequencies must list rates for classes 2..5");
  }
  const std::array<int, 4> counts = {draw_count(freq[0]), draw_count(freq[1]),
                                     draw_count(freq[2]), draw_count(freq[3])};

  // Classes 2/3: appearance twins. Band placement is a hard rule that the
  // context rule inverts, so it is a spurious cue across domains.
  for (int cls = 2; cls <= 3; ++cls) {
    const bool on_a = (cls == 2) == (spec.context_rule == 0);
    const Rgb& color = cls == 2 ? pal.square2 : pal.square3;
    for (int i = 0; i < counts[static_cast<size_t>(cls - 2)]; ++i) {
      const Band& band = on_a ? band_a : band_b;
      // Clamped to the band so the smallest legal frames stay renderable;
      // at the default 64px geometry the clamp never binds.
      const int side = std::min(10 + static_cast<int>(rng.uniform_int(5)),
                                band.end - band.top);
      const int y0 =
          band.top + static_cast<int>(rng.uniform_int(band.end - band.top -
                                                      side + 1));
      const int x0 = static_cast<int>(rng.uniform_int(w - side + 1));
      paint_square(img, label, w, y0, x0, side, color,
                   static_cast<uint8_t>(cls));
    }
  }

  // Classes 4/5: identical disks. The band decides the class, in every
  // domain; class 4 lives on band A, class 5 on band B.
  for (int cls = 4; cls <= 5; ++cls) {
    const Band& band = cls == 4 ? band_a : band_b;
    for (int i = 0; i < counts[static_cast<size_t>(cls - 2)]; ++i) {
      const int radius = 4 + static_cast<int>(rng.uniform_int(3));
      const int cy =
          band.top + radius +
          static_cast<int>(rng.uniform_int(band.end - band.top -
                                           2 * radius));
      const int cx =
          radius + static_cast<int>(rng.uniform_int(w - 2 * radius));
      paint_disk(img, label, w, cy, cx, radius, pal.disk,
                 static_cast<uint8_t>(cls));
    }
  }

  for (double& v : img) {
    v += rng.uniform(-spec.noise, spec.noise);
    v = std::clamp(v, 0.0, 1.0);
    v = std::round(v * 255.0) / 255.0;  // 8-bit grid, lossless on disk
  }

  Sample out;
  out.image = Tensor::from_data({h, w, 3}, std::move(img));
  if (keep_label) out.label = std::move(label);
  out.domain = domain_id;
  return out;
}

}  // namespace

BenchmarkConfig default_benchmark(int source_count, int target_count,
                                  int eval_count) {
  DomainSpec src;
  src.role = DomainSpec::Role::kSource;
  src.count = source_count;
  src.palette = 0;
  src.context_rule = 0;

  DomainSpec tgt;
  tgt.role = DomainSpec::Role::kTarget;
  tgt.count = target_count;
  tgt.eval_count = eval_count;
  tgt.palette = 1;
  tgt.context_rule = 1;
  tgt.noise = 0.10;

  BenchmarkConfig cfg;
  cfg.domains = {src, tgt};
  return cfg;
}

Dataset generate_benchmark(const BenchmarkConfig& cfg) {
  if (cfg.num_classes != 6) {
    throw ConfigError("the scene generator renders exactly 6 classes");
  }
  if (cfg.image_size < 32) {
    throw ConfigError("image_size must be at least 32");
  }
  if (cfg.domains.empty()) {
    throw ConfigError("no domains configured");
  }

  Dataset ds;
  ds.num_classes = cfg.num_classes;
  const RngState base(cfg.seed);
  for (size_t d = 0; d < cfg.domains.size(); ++d) {
    const DomainSpec& spec = cfg.domains[d];
    const RngState dom_rng = base.fork(static_cast<uint64_t>(d));
    const bool is_source = spec.role == DomainSpec::Role::kSource;
    for (int i = 0; i < spec.count; ++i) {
      Sample s = render_scene(
          spec, cfg.image_size,
          dom_rng.fork("train").fork(static_cast<uint64_t>(i)), is_source,
          static_cast<int>(d));
      (is_source ? ds.train_source : ds.train_target).push_back(std::move(s));
    }
    if (!is_source) {
      for (int i = 0; i < spec.eval_count; ++i) {
        ds.eval_target.push_back(render_scene(
            spec, cfg.image_size,
            dom_rng.fork("eval").fork(static_cast<uint64_t>(i)), true,
            static_cast<int>(d)));
      }
    }
  }
  if (ds.train_source.empty()) {
    throw ConfigError("benchmark needs at least one source domain");
  }
  return ds;
}

namespace {

void write_binary_file(const std::string& path, const std::string& header,
                       const std::vector<uint8_t>& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << header;
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("short write: " + path);
}

// Reads "P6"/"P5", dimensions and maxval, then the binary payload.
std::vector<uint8_t> read_netpbm(const std::string& path, const char* magic,
                                 int values_per_pixel, int* h, int* w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path);
  std::string tag;
  int maxval = 0;
  in >> tag >> *w >> *h >> maxval;
  if (!in || tag != magic || *w <= 0 || *h <= 0 || maxval != 255) {
    throw FormatError("bad netpbm header: " + path);
  }
  in.get();  // single whitespace after maxval
  std::vector<uint8_t> data(static_cast<size_t>(*h) * *w * values_per_pixel);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size()));
  if (in.gcount() != static_cast<std::streamsize>(data.size())) {
    throw FormatError("truncated netpbm payload: " + path);
  }
  return data;
}

std::string netpbm_header(const char* magic, int h, int w) {
  std::ostringstream os;
  os << magic << "\n" << w << " " << h << "\n255\n";
  return os.str();
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
  const int h = image.dim(0), w = image.dim(1);
  if (image.dim(2) != 3) {
    throw std::invalid_argument("write_ppm: image must be HxWx3");
  }
  std::vector<uint8_t> bytes(image.raw().size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    const double v = std::clamp(image.raw()[i], 0.0, 1.0);
    bytes[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  write_binary_file(path, netpbm_header("P6", h, w), bytes);
}

Tensor read_ppm(const std::string& path) {
  int h = 0, w = 0;
  const std::vector<uint8_t> bytes = read_netpbm(path, "P6", 3, &h, &w);
  std::vector<double> data(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) data[i] = bytes[i] / 255.0;
  return Tensor::from_data({h, w, 3}, std::move(data));
}

void write_pgm(const std::string& path, const LabelMap& labels) {
  write_binary_file(path, netpbm_header("P5", labels.h, labels.w), labels.ids);
}

LabelMap read_pgm(const std::string& path) {
  int h = 0, w = 0;
  std::vector<uint8_t> bytes = read_netpbm(path, "P5", 1, &h, &w);
  LabelMap out(h, w);
  out.ids = std::move(bytes);
  return out;
}

void write_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "labels");
  std::ofstream manifest(fs::path(dir) / "manifest");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);

  auto emit = [&](const Sample& s, const char* split, int index) {
    char stem[64];
    std::snprintf(stem, sizeof stem, "%s_d%d_%05d", split, s.domain, index);
    const std::string image_rel = std::string("images/") + stem + ".ppm";
    write_ppm((fs::path(dir) / image_rel).string(), s.image);
    std::string label_rel = "-";
    if (s.label.size() > 0) {
      label_rel = std::string("labels/") + stem + ".pgm";
      write_pgm((fs::path(dir) / label_rel).string(), s.label);
    }
    manifest << split << ' ' << s.domain << ' ' << image_rel << ' '
             << label_rel << '\n';
  };

  int i = 0;
  for (const Sample& s : ds.train_source) emit(s, "train", i++);
  for (const Sample& s : ds.train_target) emit(s, "train", i++);
  i = 0;
  for (const Sample& s : ds.eval_target) emit(s, "eval", i++);
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest");
  if (!manifest) throw FormatError("no manifest in " + dir);

  Dataset ds;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string split, image_rel, label_rel;
    int domain = 0;
    if (!(is >> split >> domain >> image_rel >> label_rel)) {
      throw FormatError("bad manifest line: " + line);
    }
    Sample s;
    s.image = read_ppm((fs::path(dir) / image_rel).string());
    s.domain = domain;
    if (label_rel != "-") {
      s.label = read_pgm((fs::path(dir) / label_rel).string());
      if (s.label.h != s.image.dim(0) || s.label.w != s.image.dim(1)) {
        throw FormatError("image/label size mismatch: " + line);
      }
    }
    if (split == "train") {
      (s.label.size() > 0 ? ds.train_source : ds.train_target)
          .push_back(std::move(s));
    } else if (split == "eval") {
      if (s.label.size() == 0) throw FormatError("unlabeled eval: " + line);
      ds.eval_target.push_back(std::move(s));
    } else {
      throw FormatError("unknown split '" + split + "' in manifest");
    }
  }
  int max_id = -1;
  auto scan = [&max_id](const std::vector<Sample>& v) {
    for (const Sample& s : v) {
      for (uint8_t id : s.label.ids) {
        if (id != kIgnoreLabel) max_id = std::max(max_id, static_cast<int>(id));
      }
    }
  };
  scan(ds.train_source);
  scan(ds.eval_target);
  ds.num_classes = max_id + 1;
  return ds;
}

}  // namespace ddb
