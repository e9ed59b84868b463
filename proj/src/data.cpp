#include "ka/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ka/error.hpp"

namespace ka {

const char* to_string(DatasetId id) { return id == DatasetId::A ? "A" : "B"; }
const char* to_string(Task task) { return task == Task::T1 ? "reid" : "par"; }

Image make_image(std::size_t height, std::size_t width, std::size_t channels, float fill) {
  Image img;
  img.height = height;
  img.width = width;
  img.channels = channels;
  img.pixels.assign(height * width * channels, fill);
  return img;
}

void PartialDataset::validate() const {
  const DatasetId expected = dataset_id();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const std::string where = "sample " + std::to_string(i) + ": ";
    require(s.dataset_id == expected, where + "dataset id does not match the dataset");
    if (task_labeled == Task::T1) {
      require(s.person_id.has_value() && !s.attributes.has_value(), where + "dataset A sample needs person_id only");
      require(*s.person_id >= 0 && static_cast<std::size_t>(*s.person_id) < num_ids,
              where + "person_id " + std::to_string(*s.person_id) + " outside [0, " + std::to_string(num_ids) + ")");
    } else {
      require(s.attributes.has_value() && !s.person_id.has_value(), where + "dataset B sample needs attributes only");
      require(s.attributes->size() == num_attributes, where + "attribute vector length mismatch");
      for (auto v : *s.attributes) require(v == 0 || v == 1, where + "attribute values must be 0/1");
    }
    for (float p : s.image.pixels) require(p >= 0.0f && p <= 1.0f, where + "pixel outside [0, 1]");
  }
}

// ---------------------------------------------------------------------------
// PNM I/O
// ---------------------------------------------------------------------------

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  while (in) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  in >> tok;
  return tok;
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open image " + path.string());
  const std::string magic = next_token(in);
  require(magic == "P5" || magic == "P6", "unsupported image format in " + path.string() + " (need P5/P6)");
  const std::size_t channels = magic == "P6" ? 3 : 1;
  const long w = std::stol(next_token(in)), h = std::stol(next_token(in)), maxval = std::stol(next_token(in));
  require(w > 0 && h > 0 && maxval > 0 && maxval < 256, "bad image header in " + path.string());
  in.get();
  Image img = make_image(static_cast<std::size_t>(h), static_cast<std::size_t>(w), channels);
  std::vector<unsigned char> raw(img.pixels.size());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(in.gcount() == static_cast<std::streamsize>(raw.size()), "truncated image " + path.string());
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<float>(raw[i]) / static_cast<float>(maxval);
  return img;
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
  require(image.channels == 1 || image.channels == 3, "write_pnm: 1 or 3 channels required");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write image " + path.string());
  out << (image.channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
  for (float p : image.pixels) {
    const auto v = static_cast<unsigned char>(std::lround(std::clamp(p, 0.0f, 1.0f) * 255.0f));
    out.put(static_cast<char>(v));
  }
}

Image resize_bilinear(const Image& image, ImageSize size) {
  require(size.height > 0 && size.width > 0, "resize: empty target size");
  if (image.height == size.height && image.width == size.width) return image;
  Image out = make_image(size.height, size.width, image.channels);
  const double sy = static_cast<double>(image.height) / static_cast<double>(size.height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(size.width);
  for (std::size_t y = 0; y < size.height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < size.width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double top = (1 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c);
        const double bot = (1 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c);
        out.at(y, x, c) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest loading
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int parse_nonneg_int(const std::string& s, const std::string& where) {
  std::size_t pos = 0;
  long v = -1;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  require(pos == s.size() && v >= 0, where + ": expected a non-negative integer, got '" + s + "'");
  return static_cast<int>(v);
}

}  // namespace

PartialDataset load_dataset(const std::filesystem::path& manifest_path, const LoadOptions& options) {
  std::ifstream in(manifest_path);
  require(in.good(), "manifest not found: " + manifest_path.string());

  std::filesystem::path root;
  if (options.data_root) {
    root = *options.data_root;
  } else if (const char* env = std::getenv("KA_DATA_ROOT"); env && *env) {
    root = env;
  } else {
    root = manifest_path.parent_path();
  }

  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "schema violation: manifest has no header");
  const auto header = split_csv(trim(line));
  require(header == std::vector<std::string>{"path", "person_id", "camera_id", "attributes"},
          "schema violation: header must be 'path,person_id,camera_id,attributes'");

  struct Row {
    std::string path;
    std::optional<int> raw_id;
    std::optional<int> camera;
    std::optional<std::vector<std::uint8_t>> attributes;
  };
  std::vector<Row> rows;
  std::optional<Task> task;
  std::size_t row_index = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row_index;
    const std::string where = "manifest row " + std::to_string(row_index);
    const auto f = split_csv(trim(line));
    require(f.size() == 4, "schema violation: " + where + " has " + std::to_string(f.size()) + " fields (need 4)");
    Row r;
    r.path = f[0];
    require(!r.path.empty(), "schema violation: " + where + " has an empty path");
    const bool has_id = !f[1].empty(), has_attr = !f[3].empty();
    require(!(has_id && has_attr), where + " has both person_id and attributes (labels must be disjoint)");
    require(has_id || has_attr, "schema violation: " + where + " has neither person_id nor attributes");
    if (has_id) r.raw_id = parse_nonneg_int(f[1], where);
    if (!f[2].empty()) r.camera = parse_nonneg_int(f[2], where);
    if (has_attr) {
      std::vector<std::uint8_t> bits;
      for (char c : f[3]) {
        require(c == '0' || c == '1', "schema violation: " + where + " attributes must be a 0/1 string");
        bits.push_back(static_cast<std::uint8_t>(c - '0'));
      }
      r.attributes = std::move(bits);
    }
    const Task row_task = has_id ? Task::T1 : Task::T2;
    if (!task) task = row_task;
    require(*task == row_task, "schema violation: " + where + " is labeled for " + to_string(row_task) +
                                   " but the manifest is " + to_string(*task));
    if (r.attributes && !rows.empty())
      require(r.attributes->size() == rows.front().attributes->size(),
              "schema violation: " + where + " attribute length differs from row 1");
    rows.push_back(std::move(r));
  }
  require(!rows.empty(), "empty dataset: " + manifest_path.string());

  PartialDataset ds;
  ds.task_labeled = *task;
  std::map<int, int> id_map;
  if (ds.task_labeled == Task::T1) {
    std::set<int> raw;
    for (const auto& r : rows) raw.insert(*r.raw_id);
    for (int v : raw) id_map.emplace(v, static_cast<int>(id_map.size()));
    ds.num_ids = id_map.size();
  } else {
    ds.num_attributes = rows.front().attributes->size();
  }

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row& r = rows[i];
    Sample s;
    const std::filesystem::path p(r.path);
    s.image = read_pnm(p.is_absolute() ? p : root / p);
    if (options.resize) s.image = resize_bilinear(s.image, *options.resize);
    if (i > 0) {
      const Image& first = ds.samples.front().image;
      require(s.image.height == first.height && s.image.width == first.width && s.image.channels == first.channels,
              "manifest row " + std::to_string(i + 1) + ": image size differs (set a resize target)");
    }
    s.dataset_id = ds.dataset_id();
    if (r.raw_id) s.person_id = id_map.at(*r.raw_id);
    s.camera_id = r.camera;
    s.attributes = r.attributes;
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic pair
// ---------------------------------------------------------------------------

namespace {

constexpr std::array<std::array<float, 3>, 8> kPalette{{{0.85f, 0.15f, 0.15f},
                                                        {0.15f, 0.65f, 0.20f},
                                                        {0.20f, 0.30f, 0.85f},
                                                        {0.90f, 0.80f, 0.15f},
                                                        {0.60f, 0.20f, 0.70f},
                                                        {0.15f, 0.75f, 0.80f},
                                                        {0.95f, 0.50f, 0.10f},
                                                        {0.45f, 0.45f, 0.45f}}};

struct Appearance {
  std::size_t upper = 0;
  std::size_t lower = 0;
  std::vector<std::uint8_t> attributes;

  friend bool operator<(const Appearance& a, const Appearance& b) {
    return std::tie(a.upper, a.lower, a.attributes) < std::tie(b.upper, b.lower, b.attributes);
  }
};

Appearance random_appearance(std::size_t num_attributes, std::size_t palette, Rng& rng) {
  Appearance a;
  a.upper = rng.index(palette);
  a.lower = rng.index(palette);
  a.attributes.resize(num_attributes);
  for (auto& bit : a.attributes) bit = rng.bernoulli(0.5) ? 1 : 0;
  return a;
}

// Figure box split into upper/lower body; attribute m toggles a bright marker
// in its own cell of a 2-column grid laid over the figure.
Image render(const Appearance& look, double brightness, ImageSize size, const SyntheticOptions& opt, Rng& rng) {
  const auto H = static_cast<long>(size.height), W = static_cast<long>(size.width);
  Image img = make_image(size.height, size.width, 3);
  const float bg = static_cast<float>(rng.uniform(0.25, 0.55));
  const long span = 2 * opt.max_shift + 1;
  const long dy = static_cast<long>(rng.index(static_cast<std::uint64_t>(span))) - opt.max_shift;
  const long dx = static_cast<long>(rng.index(static_cast<std::uint64_t>(span))) - opt.max_shift;

  const long r0 = H / 8 + dy, r1 = H - H / 8 + dy, c0 = W / 4 + dx, c1 = W - W / 4 + dx;
  const long mid = (r0 + r1) / 2;
  const long m = static_cast<long>(look.attributes.size());
  const long grid_rows = (m + 1) / 2;
  const long cell_h = std::max<long>(1, (r1 - r0) / std::max<long>(1, grid_rows));
  const long cell_w = std::max<long>(1, (c1 - c0) / 2);

  auto marker_at = [&](long y, long x) {
    if (y < r0 || y >= r1 || x < c0 || x >= c1) return false;
    const long gr = (y - r0) / cell_h, gc = (x - c0) / cell_w;
    if (gr >= grid_rows || gc > 1) return false;
    const long idx = gr * 2 + gc;
    if (idx >= m || !look.attributes[static_cast<std::size_t>(idx)]) return false;
    const long iy = (y - r0) - gr * cell_h, ix = (x - c0) - gc * cell_w;
    const long mh = std::max<long>(1, cell_h / 2), mw = std::max<long>(1, cell_w / 2);
    return iy >= cell_h / 4 && iy < cell_h / 4 + mh && ix >= cell_w / 4 && ix < cell_w / 4 + mw;
  };

  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      std::array<float, 3> px{bg, bg, bg};
      if (y >= r0 && y < r1 && x >= c0 && x < c1) {
        px = y < mid ? kPalette[look.upper] : kPalette[look.lower];
        if (marker_at(y, x)) {
          for (auto& v : px) v = v + static_cast<float>(opt.marker_contrast) * (1.0f - v);
        }
      }
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = px[c] * brightness + rng.normal(0.0, opt.noise_stddev);
        img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

double camera_brightness(std::size_t cam, std::size_t num_cameras) {
  if (num_cameras <= 1) return 1.0;
  return 0.75 + 0.5 * static_cast<double>(cam) / static_cast<double>(num_cameras - 1);
}

}  // namespace

std::pair<PartialDataset, PartialDataset> make_synthetic_pair(std::size_t num_ids, std::size_t num_attributes,
                                                              std::size_t samples_per_dataset, ImageSize image_size,
                                                              std::uint64_t seed, const SyntheticOptions& options) {
  require(num_ids >= 2, "make_synthetic_pair: num_ids must be >= 2");
  require(num_attributes >= 1, "make_synthetic_pair: num_attributes must be >= 1");
  require(samples_per_dataset >= 1, "make_synthetic_pair: samples_per_dataset must be positive");
  require(image_size.height >= 8 && image_size.width >= 4, "make_synthetic_pair: image must be at least 8x4");
  require(options.palette_size >= 1 && options.palette_size <= kPalette.size(),
          "make_synthetic_pair: palette_size must be in [1, 8]");
  require(options.num_cameras >= 1, "make_synthetic_pair: need at least one camera");
  const double capacity =
      static_cast<double>(options.palette_size * options.palette_size) * std::pow(2.0, static_cast<double>(num_attributes));
  require(static_cast<double>(num_ids) <= capacity, "make_synthetic_pair: more identities than distinct appearances");

  Rng id_rng(mix_seed(seed, 0));
  std::vector<Appearance> identities;
  std::set<Appearance> seen;
  while (identities.size() < num_ids) {
    Appearance a = random_appearance(num_attributes, options.palette_size, id_rng);
    if (seen.insert(a).second) identities.push_back(std::move(a));
  }

  PartialDataset ds_a;
  ds_a.task_labeled = Task::T1;
  {
    Rng rng(mix_seed(seed, 1));
    std::vector<int> ids(samples_per_dataset);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i % num_ids);
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.index(i)]);
    for (int id : ids) {
      Sample s;
      s.dataset_id = DatasetId::A;
      s.person_id = id;
      const auto cam = rng.index(options.num_cameras);
      s.camera_id = static_cast<int>(cam);
      s.image = render(identities[static_cast<std::size_t>(id)], camera_brightness(cam, options.num_cameras),
                       image_size, options, rng);
      ds_a.samples.push_back(std::move(s));
    }
    ds_a.num_ids = std::min(num_ids, samples_per_dataset);
  }

  PartialDataset ds_b;
  ds_b.task_labeled = Task::T2;
  ds_b.num_attributes = num_attributes;
  {
    Rng rng(mix_seed(seed, 2));
    for (std::size_t i = 0; i < samples_per_dataset; ++i) {
      const Appearance look = random_appearance(num_attributes, options.palette_size, rng);
      const auto cam = rng.index(options.num_cameras);
      Sample s;
      s.dataset_id = DatasetId::B;
      s.attributes = look.attributes;
      s.image = render(look, camera_brightness(cam, options.num_cameras), image_size, options, rng);
      ds_b.samples.push_back(std::move(s));
    }
  }
  ds_a.validate();
  ds_b.validate();
  return {std::move(ds_a), std::move(ds_b)};
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

MixedBatch sample_batch(const PartialDataset& ds_a, const PartialDataset& ds_b, std::size_t batch_size,
                        double ratio_a, Rng& rng) {
  require(!ds_a.empty() && !ds_b.empty(), "sample_batch: empty dataset");
  require(batch_size >= 2, "sample_batch: batch_size must be >= 2");
  require(ratio_a > 0.0 && ratio_a < 1.0, "sample_batch: ratio_a must lie in (0, 1)");
  const auto n_a = static_cast<std::size_t>(std::lround(static_cast<double>(batch_size) * ratio_a));
  require(n_a > 0 && n_a < batch_size, "sample_batch: empty sub-batch (batch " + std::to_string(batch_size) +
                                           ", ratio " + std::to_string(ratio_a) + ")");
  MixedBatch batch;
  batch.a_samples.reserve(n_a);
  batch.b_samples.reserve(batch_size - n_a);
  for (std::size_t i = 0; i < n_a; ++i) batch.a_samples.push_back(ds_a.samples[rng.index(ds_a.size())]);
  for (std::size_t i = n_a; i < batch_size; ++i) batch.b_samples.push_back(ds_b.samples[rng.index(ds_b.size())]);
  return batch;
}

MixedBatch sample_single(const PartialDataset& ds, std::size_t batch_size, Rng& rng) {
  require(!ds.empty(), "sample_single: empty dataset");
  require(batch_size >= 1, "sample_single: batch_size must be positive");
  MixedBatch batch;
  auto& dst = ds.dataset_id() == DatasetId::A ? batch.a_samples : batch.b_samples;
  dst.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) dst.push_back(ds.samples[rng.index(ds.size())]);
  return batch;
}

std::size_t steps_per_epoch(std::size_t total_samples, std::size_t batch_size) {
  require(batch_size > 0, "steps_per_epoch: batch_size must be positive");
  return (total_samples + batch_size - 1) / batch_size;
}

std::pair<PartialDataset, PartialDataset> split_holdout(const PartialDataset& ds, double fraction,
                                                        std::uint64_t seed) {
  require(fraction >= 0.0 && fraction < 1.0, "split_holdout: fraction must lie in [0, 1)");
  const std::size_t n = ds.size();
  const auto held = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  std::vector<bool> is_held(n, false);
  for (std::size_t i = 0; i < held; ++i) is_held[perm[i]] = true;

  PartialDataset keep, out;
  for (auto* d : {&keep, &out}) {
    d->task_labeled = ds.task_labeled;
    d->num_ids = ds.num_ids;
    d->num_attributes = ds.num_attributes;
  }
  for (std::size_t i = 0; i < n; ++i) (is_held[i] ? out : keep).samples.push_back(ds.samples[i]);
  return {std::move(keep), std::move(out)};
}

std::pair<PartialDataset, PartialDataset> split_tail(const PartialDataset& ds, std::size_t count) {
  require(count <= ds.size(), "split_tail: count exceeds dataset size");
  PartialDataset head, tail;
  for (auto* d : {&head, &tail}) {
    d->task_labeled = ds.task_labeled;
    d->num_ids = ds.num_ids;
    d->num_attributes = ds.num_attributes;
  }
  const std::size_t cut = ds.size() - count;
  head.samples.assign(ds.samples.begin(), ds.samples.begin() + static_cast<long>(cut));
  tail.samples.assign(ds.samples.begin() + static_cast<long>(cut), ds.samples.end());
  return {std::move(head), std::move(tail)};
}

}  // namespace ka
