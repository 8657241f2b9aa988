#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "odc/accounting.hpp"
#include "odc/data.hpp"
#include "odc/network.hpp"

namespace odc {

struct TrainConfig {
  std::string model = "tiny-cnn";
  Variant variant = Variant::onedconv;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-3;
  // Step schedule: lr *= lr_gamma every lr_step epochs; 0 keeps lr constant.
  std::size_t lr_step = 0;
  double lr_gamma = 0.1;
  std::uint64_t seed = 1;

  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  std::optional<DistortionMode> train_distortion;  // empty: origin
  std::uint64_t distortion_seed = 7;
  std::size_t train_limit = 2000;
  std::size_t test_limit = 1000;
  std::size_t threads = 1;
  bool random_crop = false;  // pad 4, crop back to 32
  std::size_t eval_every = 0;  // 0: evaluate after the last epoch only
  bool log_wall_time = true;

  std::filesystem::path metrics_path;     // empty: no CSV
  std::filesystem::path checkpoint_path;  // empty: no checkpoint

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Plain-text `key = value` lines; '#' starts a comment. Unknown keys and
/// malformed values throw std::invalid_argument with the line number.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

struct MetricsRecord {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  double seconds = 0.0;
  std::vector<OffsetDeviation> offsets;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  Network model;
  std::vector<MetricsRecord> metrics;
};

/// Datasets used by train(): the (possibly distorted) training subset and the
/// origin, rotated and rts test sets.
struct Splits {
  LabeledDataset train;
  std::vector<std::pair<std::string, LabeledDataset>> tests;
};
Splits load_splits(const TrainConfig& cfg);

TrainResult train(const TrainConfig& cfg);
TrainResult train(const TrainConfig& cfg, const Splits& data);

/// Mean cross-entropy and argmax accuracy in inference mode; ties go to the
/// lowest class index. Offset deviations cover the whole dataset.
MetricsRecord evaluate(Network& model, const LabeledDataset& ds,
                       const std::string& split = "eval");

/// One row per OneDConv layer: layer,name,mean_abs_dev,max_abs_dev,
/// max_sample,max_filter,max_h,max_w,max_value. Throws std::invalid_argument
/// "no dynamic layers" when the model has none.
std::vector<OffsetDeviation> dump_offsets(Network& model,
                                          const LabeledDataset& ds,
                                          const std::filesystem::path& out);

std::string metrics_header(const Network& model);
std::string metrics_row(const MetricsRecord& r);
void append_metrics(const std::filesystem::path& path, const Network& model,
                    const std::vector<MetricsRecord>& records);

}  // namespace odc
