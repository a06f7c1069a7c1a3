#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "euda/matrix.hpp"

namespace euda {

enum class FileFormat { kBinary, kCsv };

// Picks the format from the extension: ".csv" is CSV, anything else EUDF.
FileFormat format_from_path(const std::filesystem::path& path);

// Frozen feature vectors of one domain, optionally labelled.
//
// Features are stored as doubles but always hold values exactly representable
// as 32-bit floats (the on-disk precision); the constructor rounds. They cannot
// be modified after construction.
//
// Every call to labels() is counted. Training code only ever touches the
// features of the target domain, and tests use label_reads() to prove it.
class DomainDataset {
 public:
  DomainDataset(Matrix features, std::optional<std::vector<std::uint32_t>> labels,
                std::optional<std::uint32_t> num_classes, std::string domain_tag);

  DomainDataset(const DomainDataset& other);
  DomainDataset& operator=(const DomainDataset& other);
  DomainDataset(DomainDataset&&) noexcept = default;
  DomainDataset& operator=(DomainDataset&&) noexcept = default;

  std::size_t size() const { return features_->rows(); }
  std::size_t dim() const { return features_->cols(); }
  const Matrix& features() const { return *features_; }
  bool has_labels() const { return labels_.has_value(); }
  std::optional<std::uint32_t> num_classes() const { return num_classes_; }
  const std::string& domain_tag() const { return domain_tag_; }

  // Throws ContractError if the dataset is unlabelled.
  const std::vector<std::uint32_t>& labels() const;

  std::uint64_t label_reads() const { return reads_->load(std::memory_order_relaxed); }

  // Same features and labels, no label-read history.
  bool same_content(const DomainDataset& other) const;

 private:
  std::shared_ptr<const Matrix> features_;
  std::optional<std::vector<std::uint32_t>> labels_;
  std::optional<std::uint32_t> num_classes_;
  std::string domain_tag_;
  std::unique_ptr<std::atomic<std::uint64_t>> reads_;
};

struct BatchPair {
  Matrix source_features;
  std::vector<std::uint32_t> source_labels;
  Matrix target_features;
};

// Row indices behind a BatchPair.
struct BatchIndices {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};

struct SynthSpec {
  std::uint32_t num_classes = 3;
  std::size_t feature_dim = 16;
  std::size_t samples_per_class = 100;
  double class_radius = 4.0;
  double shift_magnitude = 2.5;
  double noise_std = 1.0;

  // Throws ContractError naming the offending field.
  void validate() const;
};

DomainDataset load_dataset(const std::filesystem::path& path, FileFormat format,
                           std::optional<std::uint32_t> num_classes_override = std::nullopt);
DomainDataset load_dataset(const std::filesystem::path& path);

void save_dataset(const DomainDataset& ds, const std::filesystem::path& path, FileFormat format);
void save_dataset(const DomainDataset& ds, const std::filesystem::path& path);

// Class k of the source is centred at (class_radius / sqrt(2)) * e_k, so any two
// class means are class_radius apart. Every target class is displaced by the
// same random direction of length shift_magnitude. Both outputs carry labels;
// the target ones are for evaluation only.
std::pair<DomainDataset, DomainDataset> synth_shifted_gaussians(const SynthSpec& spec, std::uint64_t seed);

// The index stream of one epoch. Both domains are shuffled with generators
// derived from (seed, epoch); the shorter one restarts with a fresh shuffle
// whenever it runs out, until the longer one is exhausted. A trailing short
// pair is kept only if it holds at least two rows.
std::vector<BatchIndices> paired_batch_indices(std::size_t n_source, std::size_t n_target,
                                               std::size_t batch_size, std::uint64_t seed,
                                               std::uint64_t epoch);

std::vector<BatchPair> paired_batches(const DomainDataset& source, const DomainDataset& target,
                                      std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);

}  // namespace euda
