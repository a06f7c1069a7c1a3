#include "euda/feature_store.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "binary_io.hpp"
#include "euda/error.hpp"

namespace euda {
namespace {

constexpr char kMagic[4] = {'E', 'U', 'D', 'F'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint16_t kFlagLabels = 1;

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t epoch, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), stream};
  return std::mt19937_64(seq);
}

// Endless shuffled stream over [0, n); a fresh permutation on every wrap.
class CyclingShuffle {
 public:
  CyclingShuffle(std::size_t n, std::mt19937_64 rng) : perm_(n), rng_(std::move(rng)) { reshuffle(); }

  std::size_t next() {
    if (pos_ == perm_.size()) reshuffle();
    return perm_[pos_++];
  }

 private:
  void reshuffle() {
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    std::shuffle(perm_.begin(), perm_.end(), rng_);
    pos_ = 0;
  }

  std::vector<std::size_t> perm_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

double parse_number(std::string_view token, const std::string& where) {
  double v = 0.0;
  const auto* first = token.data();
  const auto* last = token.data() + token.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && (last[-1] == ' ' || last[-1] == '\r')) --last;
  const std::string_view trimmed(first, static_cast<std::size_t>(last - first));
  if (trimmed == "nan" || trimmed == "NaN" || trimmed == "inf" || trimmed == "-inf" || trimmed == "Inf" ||
      trimmed == "-Inf") {
    throw DataError(where + ": non-finite value '" + std::string(trimmed) + "'");
  }
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec == std::errc::result_out_of_range) throw DataError(where + ": value out of range");
  if (ec != std::errc() || ptr != last) throw FormatError(where + ": cannot parse '" + std::string(trimmed) + "'");
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

void check_labels(const std::vector<std::uint32_t>& labels, std::uint32_t num_classes, const std::string& where) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw ConsistencyError(where + ": label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                             " is not below the class count " + std::to_string(num_classes));
    }
  }
}

DomainDataset load_binary(const std::filesystem::path& path) {
  auto in = io::ByteReader::from_file(path);
  char magic[4];
  in.get_bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw FormatError(path.string() + ": bad magic, not an EUDF file");
  const auto version = in.get<std::uint16_t>();
  if (version != kVersion) throw FormatError(path.string() + ": unsupported EUDF version " + std::to_string(version));
  const auto flags = in.get<std::uint16_t>();
  const auto n = in.get<std::uint64_t>();
  const auto d = in.get<std::uint64_t>();
  const auto num_classes = in.get<std::uint32_t>();
  const auto tag_len = in.get<std::uint16_t>();
  std::string tag(tag_len, '\0');
  in.get_bytes(tag.data(), tag_len);

  const bool labelled = (flags & kFlagLabels) != 0;
  const std::uint64_t label_bytes = labelled ? n * 4 : 0;
  if (n == 0 || d == 0 || n > in.remaining() / 4 || d > in.remaining() / 4 / n ||
      n * d * 4 + label_bytes != in.remaining()) {
    throw FormatError(path.string() + ": payload size does not match header");
  }

  std::vector<float> raw(n * d);
  in.get_bytes(raw.data(), raw.size() * sizeof(float));
  std::vector<double> values(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!std::isfinite(raw[i])) {
      throw DataError(path.string() + ": non-finite feature at row " + std::to_string(i / d) + ", column " +
                      std::to_string(i % d));
    }
    values[i] = raw[i];
  }

  std::optional<std::vector<std::uint32_t>> labels;
  std::optional<std::uint32_t> classes;
  if (labelled) {
    if (num_classes == 0) throw ConsistencyError(path.string() + ": labels present but class count is zero");
    labels.emplace(n);
    in.get_bytes(labels->data(), n * sizeof(std::uint32_t));
    check_labels(*labels, num_classes, path.string());
    classes = num_classes;
  }
  return DomainDataset(Matrix(n, d, std::move(values)), std::move(labels), classes, std::move(tag));
}

DomainDataset load_csv(const std::filesystem::path& path, std::optional<std::uint32_t> num_classes_override) {
  std::error_code ec;
  if (std::filesystem::is_directory(path, ec)) throw IoError("cannot read " + path.string() + ": is a directory");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty CSV file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_commas(line);
  const bool labelled = !header.empty() && header.back() == "label";
  const std::size_t d = header.size() - (labelled ? 1 : 0);
  if (d == 0) throw FormatError(path.string() + ": header declares no feature columns");
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "f" + std::to_string(j)) {
      throw FormatError(path.string() + ": header column " + std::to_string(j) + " should be f" + std::to_string(j));
    }
  }

  std::vector<double> values;
  std::vector<std::uint32_t> labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(row + 2);
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) throw FormatError(where + ": expected " + std::to_string(header.size()) + " columns");
    for (std::size_t j = 0; j < d; ++j) {
      const double v = parse_number(cells[j], where);
      if (!std::isfinite(static_cast<float>(v))) throw DataError(where + ": value overflows 32-bit float");
      values.push_back(v);
    }
    if (labelled) {
      const double lv = parse_number(cells[d], where);
      if (lv < 0 || lv != std::floor(lv) || lv > 4294967295.0) throw ConsistencyError(where + ": label is not a class index");
      labels.push_back(static_cast<std::uint32_t>(lv));
    }
    ++row;
  }
  if (row == 0) throw FormatError(path.string() + ": no data rows");

  std::optional<std::vector<std::uint32_t>> maybe_labels;
  std::optional<std::uint32_t> classes;
  if (labelled) {
    const std::uint32_t inferred = *std::max_element(labels.begin(), labels.end()) + 1;
    classes = num_classes_override.value_or(inferred);
    check_labels(labels, *classes, path.string());
    maybe_labels = std::move(labels);
  }
  return DomainDataset(Matrix(row, d, std::move(values)), std::move(maybe_labels), classes, path.stem().string());
}

void save_binary(const DomainDataset& ds, const std::filesystem::path& path) {
  if (ds.domain_tag().size() > 0xFFFF) throw ContractError("domain tag longer than 65535 bytes");
  io::ByteWriter out;
  out.put_bytes(kMagic, 4);
  out.put<std::uint16_t>(kVersion);
  out.put<std::uint16_t>(ds.has_labels() ? kFlagLabels : 0);
  out.put<std::uint64_t>(ds.size());
  out.put<std::uint64_t>(ds.dim());
  out.put<std::uint32_t>(ds.num_classes().value_or(0));
  out.put<std::uint16_t>(static_cast<std::uint16_t>(ds.domain_tag().size()));
  out.put_bytes(ds.domain_tag().data(), ds.domain_tag().size());
  for (double v : ds.features().values()) out.put<float>(static_cast<float>(v));
  if (ds.has_labels()) {
    const auto& labels = ds.labels();
    out.put_bytes(labels.data(), labels.size() * sizeof(std::uint32_t));
  }
  out.write_to(path);
}

void save_csv(const DomainDataset& ds, const std::filesystem::path& path) {
  std::error_code ec;
  if (std::filesystem::is_directory(path, ec)) throw IoError("cannot write " + path.string() + ": is a directory");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (std::size_t j = 0; j < ds.dim(); ++j) out << (j ? ",f" : "f") << j;
  if (ds.has_labels()) out << ",label";
  out << '\n';
  const std::vector<std::uint32_t>* labels = ds.has_labels() ? &ds.labels() : nullptr;
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto row = ds.features().row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      // Shortest float representation; parses back to the same float.
      auto res = std::to_chars(buf, buf + sizeof buf, static_cast<float>(row[j]));
      if (j) out << ',';
      out.write(buf, res.ptr - buf);
    }
    if (labels) out << ',' << (*labels)[i];
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

FileFormat format_from_path(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".csv" ? FileFormat::kCsv : FileFormat::kBinary;
}

DomainDataset::DomainDataset(Matrix features, std::optional<std::vector<std::uint32_t>> labels,
                             std::optional<std::uint32_t> num_classes, std::string domain_tag)
    : labels_(std::move(labels)),
      num_classes_(num_classes),
      domain_tag_(std::move(domain_tag)),
      reads_(std::make_unique<std::atomic<std::uint64_t>>(0)) {
  if (features.rows() == 0 || features.cols() == 0) throw ContractError("dataset needs at least one row and column");
  for (double& v : features.values()) {
    if (!std::isfinite(v)) throw DataError("dataset contains a non-finite feature");
    v = static_cast<float>(v);
    if (!std::isfinite(v)) throw DataError("feature overflows 32-bit float");
  }
  if (labels_) {
    if (labels_->size() != features.rows()) throw ContractError("label count differs from row count");
    if (!num_classes_ || *num_classes_ == 0) throw ConsistencyError("labelled dataset needs a positive class count");
    check_labels(*labels_, *num_classes_, "dataset '" + domain_tag_ + "'");
  }
  features_ = std::make_shared<const Matrix>(std::move(features));
}

DomainDataset::DomainDataset(const DomainDataset& other)
    : features_(other.features_),
      labels_(other.labels_),
      num_classes_(other.num_classes_),
      domain_tag_(other.domain_tag_),
      reads_(std::make_unique<std::atomic<std::uint64_t>>(0)) {}

DomainDataset& DomainDataset::operator=(const DomainDataset& other) {
  if (this != &other) {
    features_ = other.features_;
    labels_ = other.labels_;
    num_classes_ = other.num_classes_;
    domain_tag_ = other.domain_tag_;
    reads_ = std::make_unique<std::atomic<std::uint64_t>>(0);
  }
  return *this;
}

const std::vector<std::uint32_t>& DomainDataset::labels() const {
  if (!labels_) throw ContractError("dataset '" + domain_tag_ + "' has no labels");
  reads_->fetch_add(1, std::memory_order_relaxed);
  return *labels_;
}

bool DomainDataset::same_content(const DomainDataset& other) const {
  return *features_ == *other.features_ && labels_ == other.labels_ && num_classes_ == other.num_classes_ &&
         domain_tag_ == other.domain_tag_;
}

void SynthSpec::validate() const {
  if (num_classes < 2) throw ContractError("synth: num_classes must be at least 2");
  if (feature_dim < 2) throw ContractError("synth: feature_dim must be at least 2");
  if (num_classes > feature_dim) throw ContractError("synth: num_classes may not exceed feature_dim (axis-aligned means)");
  if (samples_per_class < 4) throw ContractError("synth: samples_per_class must be at least 4");
  if (!(class_radius > 0) || !std::isfinite(class_radius)) throw ContractError("synth: class_radius must be positive");
  if (!(shift_magnitude >= 0) || !std::isfinite(shift_magnitude)) {
    throw ContractError("synth: shift_magnitude must be non-negative");
  }
  if (!(noise_std > 0) || !std::isfinite(noise_std)) throw ContractError("synth: noise_std must be positive");
}

DomainDataset load_dataset(const std::filesystem::path& path, FileFormat format,
                           std::optional<std::uint32_t> num_classes_override) {
  if (format == FileFormat::kCsv) return load_csv(path, num_classes_override);
  return load_binary(path);
}

DomainDataset load_dataset(const std::filesystem::path& path) { return load_dataset(path, format_from_path(path)); }

void save_dataset(const DomainDataset& ds, const std::filesystem::path& path, FileFormat format) {
  if (format == FileFormat::kCsv) {
    save_csv(ds, path);
  } else {
    save_binary(ds, path);
  }
}

void save_dataset(const DomainDataset& ds, const std::filesystem::path& path) {
  save_dataset(ds, path, format_from_path(path));
}

std::pair<DomainDataset, DomainDataset> synth_shifted_gaussians(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = spec.feature_dim;

  std::vector<double> direction(d);
  double norm = 0.0;
  while (norm == 0.0) {
    for (double& v : direction) v = normal(rng);
    norm = std::sqrt(std::inner_product(direction.begin(), direction.end(), direction.begin(), 0.0));
  }
  for (double& v : direction) v *= spec.shift_magnitude / norm;

  // Axis-aligned means scaled so that every pair of classes is class_radius apart.
  const double offset = spec.class_radius / std::sqrt(2.0);
  const std::size_t n = spec.num_classes * spec.samples_per_class;
  auto draw = [&](bool shifted) {
    Matrix x(n, d);
    std::vector<std::uint32_t> labels(n);
    std::size_t row = 0;
    for (std::uint32_t k = 0; k < spec.num_classes; ++k) {
      for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++row) {
        labels[row] = k;
        for (std::size_t j = 0; j < d; ++j) {
          double mean = (j == k) ? offset : 0.0;
          if (shifted) mean += direction[j];
          x(row, j) = mean + spec.noise_std * normal(rng);
        }
      }
    }
    return std::make_pair(std::move(x), std::move(labels));
  };

  auto [xs, ys] = draw(false);
  auto [xt, yt] = draw(true);
  return {DomainDataset(std::move(xs), std::move(ys), spec.num_classes, "source"),
          DomainDataset(std::move(xt), std::move(yt), spec.num_classes, "target")};
}

std::vector<BatchIndices> paired_batch_indices(std::size_t n_source, std::size_t n_target, std::size_t batch_size,
                                               std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 2) throw ContractError("batch_size must be at least 2");
  if (n_source == 0 || n_target == 0) throw ContractError("paired batches need non-empty domains");
  CyclingShuffle source(n_source, derived_rng(seed, epoch, 0));
  CyclingShuffle target(n_target, derived_rng(seed, epoch, 1));

  const std::size_t stream = std::max(n_source, n_target);
  std::vector<BatchIndices> out;
  for (std::size_t start = 0; start < stream; start += batch_size) {
    const std::size_t len = std::min(batch_size, stream - start);
    if (len < 2) break;
    BatchIndices b;
    b.source.reserve(len);
    b.target.reserve(len);
    for (std::size_t i = 0; i < len; ++i) {
      b.source.push_back(source.next());
      b.target.push_back(target.next());
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<BatchPair> paired_batches(const DomainDataset& source, const DomainDataset& target,
                                      std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
  if (!source.has_labels()) throw ContractError("paired_batches: source domain must be labelled");
  if (source.dim() != target.dim()) throw ContractError("paired_batches: source and target dimensions differ");
  const auto& labels = source.labels();
  std::vector<BatchPair> out;
  for (const auto& idx : paired_batch_indices(source.size(), target.size(), batch_size, seed, epoch)) {
    BatchPair pair;
    pair.source_features = gather_rows(source.features(), idx.source);
    pair.source_labels.reserve(idx.source.size());
    for (std::size_t i : idx.source) pair.source_labels.push_back(labels[i]);
    pair.target_features = gather_rows(target.features(), idx.target);
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace euda
