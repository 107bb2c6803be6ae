#include "sba/data_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "sba/error.hpp"
#include "sba/rng.hpp"

namespace sba {

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::vector<double> features, std::size_t dim, std::vector<int> labels,
                 std::size_t class_count)
    : features_(std::move(features)),
      dim_(dim),
      labels_(std::move(labels)),
      class_count_(class_count) {
  if (labels_.empty()) throw ConfigError("dataset must hold at least one sample");
  if (dim_ == 0) throw ConfigError("dataset has no feature columns");
  if (features_.size() != labels_.size() * dim_) {
    throw DimensionError("dataset: " + std::to_string(features_.size()) + " values for " +
                         std::to_string(labels_.size()) + " samples of width " +
                         std::to_string(dim_));
  }
  for (int y : labels_) {
    if (y < 0 || static_cast<std::size_t>(y) >= class_count_) {
      throw DomainError("dataset label " + std::to_string(y) + " outside [0, " +
                        std::to_string(class_count_) + ")");
    }
  }
  for (double v : features_) {
    if (!std::isfinite(v)) throw DomainError("dataset holds a non-finite feature value");
  }
}

std::span<const double> Dataset::sample(std::size_t i) const {
  return std::span<const double>(features_).subspan(i * dim_, dim_);
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  std::vector<double> data;
  data.reserve(indices.size() * dim_);
  for (std::size_t i : indices) {
    if (i >= size()) throw DimensionError("sample index out of range");
    const auto s = sample(i);
    data.insert(data.end(), s.begin(), s.end());
  }
  return Tensor(Shape{indices.size(), dim_}, std::move(data));
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels_.at(i));
  return out;
}

Tensor Dataset::all_features() const { return Tensor(Shape{size(), dim_}, features_); }

Dataset Dataset::head(std::size_t n) const {
  if (n == 0 || n >= size()) return *this;
  Dataset out(std::vector<double>(features_.begin(),
                                  features_.begin() + static_cast<std::ptrdiff_t>(n * dim_)),
              dim_, std::vector<int>(labels_.begin(), labels_.begin() + static_cast<std::ptrdiff_t>(n)),
              class_count_);
  out.label_names = label_names;
  out.normalization_ = normalization_;
  return out;
}

const Normalization& Dataset::normalize(NormalizationKind kind) {
  if (normalization_) throw ContractError("dataset is already normalized");
  Normalization norm;
  norm.kind = kind;
  norm.shift.assign(dim_, 0.0);
  norm.scale.assign(dim_, 1.0);
  const double n = static_cast<double>(size());
  for (std::size_t c = 0; c < dim_; ++c) {
    if (kind == NormalizationKind::zscore) {
      double mean = 0.0;
      for (std::size_t i = 0; i < size(); ++i) mean += features_[i * dim_ + c];
      mean /= n;
      double var = 0.0;
      for (std::size_t i = 0; i < size(); ++i) {
        const double d = features_[i * dim_ + c] - mean;
        var += d * d;
      }
      const double sd = std::sqrt(var / n);
      norm.shift[c] = mean;
      norm.scale[c] = sd > 0.0 ? sd : 1.0;
    } else {
      double lo = features_[c], hi = features_[c];
      for (std::size_t i = 0; i < size(); ++i) {
        lo = std::min(lo, features_[i * dim_ + c]);
        hi = std::max(hi, features_[i * dim_ + c]);
      }
      norm.shift[c] = lo;
      norm.scale[c] = hi > lo ? hi - lo : 1.0;
    }
  }
  apply_normalization(norm);
  return *normalization_;
}

void Dataset::apply_normalization(const Normalization& norm) {
  if (normalization_) throw ContractError("dataset is already normalized");
  if (norm.shift.size() != dim_ || norm.scale.size() != dim_) {
    throw DimensionError("normalization width does not match dataset");
  }
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t c = 0; c < dim_; ++c) {
      double& v = features_[i * dim_ + c];
      v = (v - norm.shift[c]) / norm.scale[c];
    }
  normalization_ = norm;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  const bool gz = path.extension() == ".gz";
  std::vector<unsigned char> bytes;
  if (gz) {
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw FormatError("cannot open " + path.string());
    unsigned char chunk[1 << 16];
    int got = 0;
    while ((got = gzread(f, chunk, sizeof chunk)) > 0) bytes.insert(bytes.end(), chunk, chunk + got);
    const bool failed = got < 0;
    gzclose(f);
    if (failed) throw FormatError(path.string() + ": corrupt gzip stream");
  } else {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    bytes.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  }
  return bytes;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t offset,
                   const std::filesystem::path& path) {
  if (offset + 4 > b.size()) {
    throw FormatError(path.string() + ": truncated header at byte offset " +
                      std::to_string(offset));
  }
  return static_cast<std::uint32_t>(b[offset]) << 24 |
         static_cast<std::uint32_t>(b[offset + 1]) << 16 |
         static_cast<std::uint32_t>(b[offset + 2]) << 8 | static_cast<std::uint32_t>(b[offset + 3]);
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_bytes(images);
  const auto lab = read_bytes(labels);

  if (be32(img, 0, images) != kImageMagic) {
    throw FormatError(images.string() + ": bad IDX image magic at byte offset 0");
  }
  if (be32(lab, 0, labels) != kLabelMagic) {
    throw FormatError(labels.string() + ": bad IDX label magic at byte offset 0");
  }
  const std::size_t n = be32(img, 4, images);
  const std::size_t height = be32(img, 8, images);
  const std::size_t width = be32(img, 12, images);
  const std::size_t label_count = be32(lab, 4, labels);
  if (n != label_count) {
    throw FormatError(labels.string() + ": label count " + std::to_string(label_count) +
                      " at byte offset 4 differs from image count " + std::to_string(n));
  }
  const std::size_t dim = height * width;
  constexpr std::size_t kImageHeader = 16, kLabelHeader = 8;
  if (img.size() != kImageHeader + n * dim) {
    throw FormatError(images.string() + ": expected " + std::to_string(kImageHeader + n * dim) +
                      " bytes, file ends at byte offset " + std::to_string(img.size()));
  }
  if (lab.size() != kLabelHeader + n) {
    throw FormatError(labels.string() + ": expected " + std::to_string(kLabelHeader + n) +
                      " bytes, file ends at byte offset " + std::to_string(lab.size()));
  }
  std::vector<double> features(n * dim);
  for (std::size_t i = 0; i < features.size(); ++i)
    features[i] = static_cast<double>(img[kImageHeader + i]) / 255.0;
  std::vector<int> y(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = lab[kLabelHeader + i];
    max_label = std::max(max_label, y[i]);
  }
  return Dataset(std::move(features), dim, std::move(y), static_cast<std::size_t>(max_label) + 1);
}

// ---------------------------------------------------------------------------
// Delimited text

namespace {

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

Dataset load_delimited(const std::filesystem::path& path, int label_column) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  std::vector<double> features;
  std::vector<int> labels;
  std::vector<std::string> names;
  std::unordered_map<std::string, int> index_of;
  std::size_t width = 0, label_at = 0, line_no = 0;
  bool first_row = true;
  std::string line;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_cells(line);
    if (first_row) {
      width = cells.size();
      if (width < 2) throw ConfigError(path.string() + ": table needs a feature column besides the label");
      const int resolved = label_column < 0 ? static_cast<int>(width) + label_column : label_column;
      if (resolved < 0 || static_cast<std::size_t>(resolved) >= width) {
        throw ConfigError(path.string() + ": label column " + std::to_string(label_column) +
                          " outside a table of " + std::to_string(width) + " columns");
      }
      label_at = static_cast<std::size_t>(resolved);
      first_row = false;
      bool header = false;
      for (std::size_t c = 0; c < width; ++c)
        if (c != label_at && !parse_number(cells[c])) header = true;
      if (header) continue;
    }
    if (cells.size() != width) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(width) + " cells, found " + std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < width; ++c) {
      if (c == label_at) continue;
      const auto v = parse_number(cells[c]);
      if (!v) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": non-numeric cell '" +
                          cells[c] + "' in column " + std::to_string(c + 1));
      }
      features.push_back(*v);
    }
    const std::string& key = cells[label_at];
    auto [it, inserted] = index_of.emplace(key, static_cast<int>(names.size()));
    if (inserted) names.push_back(key);
    labels.push_back(it->second);
  }
  if (labels.empty()) throw FormatError(path.string() + ": no data rows");
  Dataset ds(std::move(features), width - 1, std::move(labels), names.size());
  ds.label_names = std::move(names);
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic

Dataset synth_two_moons(std::size_t n, double noise_std, std::uint64_t seed) {
  if (n < 4 || n % 2 != 0) throw ConfigError("two_moons needs an even n >= 4");
  if (!(noise_std >= 0.0)) throw ConfigError("two_moons noise_std must be >= 0");
  const std::size_t half = n / 2;
  std::vector<double> features;
  features.reserve(n * 2);
  std::vector<int> labels;
  for (int cls = 0; cls < 2; ++cls) {
    for (std::size_t i = 0; i < half; ++i) {
      const double t = std::numbers::pi * static_cast<double>(i) / static_cast<double>(half - 1);
      if (cls == 0) {
        features.push_back(std::cos(t));
        features.push_back(std::sin(t));
      } else {
        features.push_back(1.0 - std::cos(t));
        features.push_back(0.5 - std::sin(t));
      }
      labels.push_back(cls);
    }
  }
  if (noise_std > 0.0) {
    RandomStream stream = make_stream(seed, 0x4d4f4f4e);  // "MOON"
    std::normal_distribution<double> normal(0.0, noise_std);
    for (double& v : features) v += normal(stream);
  }
  return Dataset(std::move(features), 2, std::move(labels), 2);
}

// ---------------------------------------------------------------------------
// Batching

std::vector<std::size_t> BatchPlan::permutation(std::size_t n, std::size_t epoch) const {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  RandomStream stream = make_stream(shuffle_seed, 0x53485546, epoch);  // "SHUF"
  std::shuffle(perm.begin(), perm.end(), stream);
  return perm;
}

std::vector<std::vector<std::size_t>> BatchPlan::batch_indices(std::size_t n,
                                                               std::size_t epoch) const {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (batch_size > n) {
    throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds dataset size " +
                      std::to_string(n));
  }
  const auto perm = permutation(n, epoch);
  std::vector<std::vector<std::size_t>> out(n / batch_size);
  for (std::size_t b = 0; b < out.size(); ++b) {
    out[b].assign(perm.begin() + static_cast<std::ptrdiff_t>(b * batch_size),
                  perm.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch_size));
  }
  return out;
}

std::vector<Batch> batches(const Dataset& ds, const BatchPlan& plan, std::size_t epoch) {
  std::vector<Batch> out;
  for (const auto& idx : plan.batch_indices(ds.size(), epoch)) {
    out.push_back(Batch{ds.gather(idx), ds.gather_labels(idx)});
  }
  return out;
}

}  // namespace sba
