#include "lowrank/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "lowrank/error.hpp"
#include "lowrank/linalg.hpp"
#include "lowrank/rng.hpp"

namespace lowrank {

namespace {

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw IoError(strfmt("cannot open %s", path.string().c_str()));
  const std::streamsize size = is.tellg();
  is.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  if (size > 0 && !is.read(reinterpret_cast<char*>(bytes.data()), size))
    throw IoError(strfmt("read failed: %s", path.string().c_str()));
  return bytes;
}

uint32_t be32(const std::vector<uint8_t>& b, size_t off, const std::filesystem::path& path) {
  if (off + 4 > b.size())
    throw IoError(strfmt("truncated IDX header in %s", path.string().c_str()));
  return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) | (uint32_t(b[off + 2]) << 8) |
         uint32_t(b[off + 3]);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const std::vector<uint8_t> img = read_file(images_path);
  const std::vector<uint8_t> lbl = read_file(labels_path);

  const uint32_t img_magic = be32(img, 0, images_path);
  if (img_magic != 0x00000803u)
    throw IoError(strfmt("%s: bad IDX image magic 0x%08x (want 0x00000803)",
                         images_path.string().c_str(), img_magic));
  const uint32_t lbl_magic = be32(lbl, 0, labels_path);
  if (lbl_magic != 0x00000801u)
    throw IoError(strfmt("%s: bad IDX label magic 0x%08x (want 0x00000801)",
                         labels_path.string().c_str(), lbl_magic));

  const uint32_t n_img = be32(img, 4, images_path);
  const uint32_t rows = be32(img, 8, images_path);
  const uint32_t cols = be32(img, 12, images_path);
  const uint32_t n_lbl = be32(lbl, 4, labels_path);
  if (n_img != n_lbl)
    throw IoError(strfmt("IDX count mismatch: %u images vs %u labels", n_img, n_lbl));
  const size_t pixels = static_cast<size_t>(rows) * cols;
  if (img.size() != 16 + static_cast<size_t>(n_img) * pixels)
    throw IoError(strfmt("%s: truncated IDX image payload (%zu bytes for %u %ux%u images)",
                         images_path.string().c_str(), img.size(), n_img, rows, cols));
  if (lbl.size() != 8 + static_cast<size_t>(n_lbl))
    throw IoError(strfmt("%s: truncated IDX label payload", labels_path.string().c_str()));

  Dataset d;
  d.channels = 1;
  d.height = static_cast<int>(rows);
  d.width = static_cast<int>(cols);
  d.images = Matrix(static_cast<int>(n_img), static_cast<int>(pixels));
  d.labels.resize(n_img);
  for (uint32_t i = 0; i < n_img; ++i) {
    double* row = d.images.row(static_cast<int>(i));
    const uint8_t* src = img.data() + 16 + static_cast<size_t>(i) * pixels;
    for (size_t p = 0; p < pixels; ++p) row[p] = src[p] / 255.0;
    d.labels[i] = lbl[8 + i];
  }
  int32_t max_label = -1;
  for (int32_t l : d.labels) max_label = std::max(max_label, l);
  d.class_count = max_label + 1;
  return d;
}

Dataset load_cifar10(const std::vector<std::filesystem::path>& batch_files) {
  constexpr size_t kPixels = 3072;
  Dataset d;
  d.channels = 3;
  d.height = 32;
  d.width = 32;

  // first pass: record layout + total count
  size_t total = 0;
  std::vector<std::vector<uint8_t>> raws;
  std::vector<size_t> record_lens;
  for (const auto& path : batch_files) {
    std::vector<uint8_t> bytes = read_file(path);
    size_t rec = 0;
    if (bytes.size() % (kPixels + 1) == 0)
      rec = kPixels + 1;  // CIFAR-10: <label><3072 pixels>
    else if (bytes.size() % (kPixels + 2) == 0)
      rec = kPixels + 2;  // CIFAR-100: <coarse><fine><3072 pixels>
    else
      throw IoError(strfmt("%s: size %zu is not a multiple of a CIFAR record length",
                           path.string().c_str(), bytes.size()));
    total += bytes.size() / rec;
    record_lens.push_back(rec);
    raws.push_back(std::move(bytes));
  }

  d.images = Matrix(static_cast<int>(total), static_cast<int>(kPixels));
  d.labels.resize(total);
  size_t out = 0;
  for (size_t f = 0; f < raws.size(); ++f) {
    const std::vector<uint8_t>& bytes = raws[f];
    const size_t rec = record_lens[f];
    const size_t label_off = rec - kPixels - 1;  // fine label directly before pixels
    for (size_t r = 0; r * rec < bytes.size(); ++r) {
      const uint8_t* p = bytes.data() + r * rec;
      d.labels[out] = p[label_off];
      double* row = d.images.row(static_cast<int>(out));
      for (size_t i = 0; i < kPixels; ++i) row[i] = p[label_off + 1 + i] / 255.0;
      ++out;
    }
  }
  int32_t max_label = -1;
  for (int32_t l : d.labels) max_label = std::max(max_label, l);
  d.class_count = max_label + 1;
  return d;
}

Dataset subset_first(const Dataset& d, size_t n) {
  if (n == 0 || n >= d.size()) return d;
  Dataset out;
  out.channels = d.channels;
  out.height = d.height;
  out.width = d.width;
  out.class_count = d.class_count;
  out.images = copy_rows(d.images, 0, static_cast<int>(n));
  out.labels.assign(d.labels.begin(), d.labels.begin() + static_cast<ptrdiff_t>(n));
  return out;
}

double mean_pixel(const Dataset& d) {
  double sum = 0.0;
  for (double v : d.images.data()) sum += v;
  return d.images.size() == 0 ? 0.0 : sum / static_cast<double>(d.images.size());
}

ChannelStats channel_stats(const Dataset& d) {
  const int ch = d.channels;
  const size_t per_ch = static_cast<size_t>(d.height) * d.width;
  ChannelStats st;
  st.mean.assign(ch, 0.0);
  st.stddev.assign(ch, 0.0);
  if (d.size() == 0) return st;
  for (size_t i = 0; i < d.size(); ++i) {
    const double* row = d.images.row(static_cast<int>(i));
    for (int c = 0; c < ch; ++c)
      for (size_t p = 0; p < per_ch; ++p) st.mean[c] += row[c * per_ch + p];
  }
  const double count = static_cast<double>(d.size()) * static_cast<double>(per_ch);
  for (int c = 0; c < ch; ++c) st.mean[c] /= count;
  for (size_t i = 0; i < d.size(); ++i) {
    const double* row = d.images.row(static_cast<int>(i));
    for (int c = 0; c < ch; ++c)
      for (size_t p = 0; p < per_ch; ++p) {
        const double dv = row[c * per_ch + p] - st.mean[c];
        st.stddev[c] += dv * dv;
      }
  }
  for (int c = 0; c < ch; ++c) st.stddev[c] = std::max(std::sqrt(st.stddev[c] / count), 1e-12);
  return st;
}

void standardize(Dataset& d, const ChannelStats& stats) {
  const size_t per_ch = static_cast<size_t>(d.height) * d.width;
  for (size_t i = 0; i < d.size(); ++i) {
    double* row = d.images.row(static_cast<int>(i));
    for (int c = 0; c < d.channels; ++c)
      for (size_t p = 0; p < per_ch; ++p)
        row[c * per_ch + p] = (row[c * per_ch + p] - stats.mean[c]) / stats.stddev[c];
  }
}

SyntheticStream synthetic_stream(const SyntheticStreamSpec& spec) {
  const int r = spec.rank;
  if (r < 1 || r > std::min(spec.m, spec.n))
    throw ConfigError(strfmt("synthetic_stream: rank %d outside [1, min(%d, %d)]", r, spec.m,
                             spec.n));
  if (static_cast<int>(spec.singular_values.size()) != r)
    throw ConfigError(strfmt("synthetic_stream: %zu singular values for rank %d",
                             spec.singular_values.size(), r));
  for (int j = 0; j < r; ++j) {
    if (spec.singular_values[j] <= 0.0)
      throw ConfigError("synthetic_stream: singular values must be positive");
    if (j > 0 && spec.singular_values[j] > spec.singular_values[j - 1])
      throw ConfigError("synthetic_stream: singular values must be non-increasing");
  }

  Rng rng_u(mix_seed(spec.seed, 0x5eed1));
  Rng rng_v(mix_seed(spec.seed, 0x5eed2));
  Rng rng_g(mix_seed(spec.seed, 0x5eed3));

  SyntheticStream out;
  out.u = qr(Matrix::gaussian(spec.m, r, rng_u)).q;
  out.v = qr(Matrix::gaussian(spec.n, r, rng_v)).q;
  out.s = spec.singular_values;

  std::vector<double> root_s(r);
  for (int j = 0; j < r; ++j) root_s[j] = std::sqrt(out.s[j]);

  // delta_t = u diag(sqrt s) g_t, x_t = v diag(sqrt s) g_t with shared
  // Rademacher (+-1) coefficients g_t: E[g g^T] = I gives E[delta x^T] =
  // u diag(s) v^T, and g_j^2 = 1 makes even a single noise-free rank-1
  // sample reproduce its target outer product exactly.
  out.xs = Matrix(spec.samples, spec.n);
  out.deltas = Matrix(spec.samples, spec.m);
  std::vector<double> g(r);
  for (int t = 0; t < spec.samples; ++t) {
    for (int j = 0; j < r; ++j)
      g[j] = (rng_g.uniform() < 0.5 ? -1.0 : 1.0) * root_s[j];
    double* xrow = out.xs.row(t);
    double* drow = out.deltas.row(t);
    for (int i = 0; i < spec.n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < r; ++j) acc += out.v(i, j) * g[j];
      xrow[i] = acc;
    }
    for (int i = 0; i < spec.m; ++i) {
      double acc = 0.0;
      for (int j = 0; j < r; ++j) acc += out.u(i, j) * g[j];
      drow[i] = acc;
    }
    if (spec.noise_scale > 0.0) {
      for (int i = 0; i < spec.n; ++i) xrow[i] += spec.noise_scale * rng_g.gaussian();
      for (int i = 0; i < spec.m; ++i) drow[i] += spec.noise_scale * rng_g.gaussian();
    }
  }
  return out;
}

std::vector<std::vector<int32_t>> batches(const Dataset& d, int batch_size, uint64_t seed,
                                          int epoch) {
  if (batch_size < 1 || static_cast<size_t>(batch_size) > d.size())
    throw ConfigError(strfmt("batches: batch size %d for %zu samples", batch_size, d.size()));
  std::vector<int32_t> perm(d.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int32_t>(i);
  Rng rng(mix_seed(seed, 0xba7c0000ull + static_cast<uint64_t>(epoch)));
  shuffle_indices(perm, rng);
  const size_t count = d.size() / static_cast<size_t>(batch_size);
  std::vector<std::vector<int32_t>> out(count);
  for (size_t b = 0; b < count; ++b)
    out[b].assign(perm.begin() + static_cast<ptrdiff_t>(b) * batch_size,
                  perm.begin() + static_cast<ptrdiff_t>(b + 1) * batch_size);
  return out;
}

}  // namespace lowrank
