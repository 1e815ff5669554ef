#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmtrain/tensor.hpp"

namespace mmtrain {

/// Malformed feature record or inconsistent dimensions.
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Split { Train, Val, Test };
std::string to_string(Split split);

/// One aligned utterance. Feature blocks are row-major [L x d].
struct Sample {
    std::string id;
    double label = 0.0;
    std::vector<double> text;
    std::vector<double> audio;
    std::vector<double> visual;
    std::vector<double> mask;  // 1 for real steps, 0 for padding; length L
};

struct Dataset {
    Split split = Split::Train;
    std::size_t seq_len = 0;
    std::size_t d_t = 0;
    std::size_t d_a = 0;
    std::size_t d_v = 0;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

struct DataSplits {
    Dataset train;
    Dataset val;
    Dataset test;
};

struct SyntheticConfig {
    std::size_t n_samples = 2000;
    std::size_t seq_len = 8;
    std::size_t d_t = 16;
    std::size_t d_a = 8;
    std::size_t d_v = 8;
    // Signal strength of the latent sentiment in each modality.
    double w_t = 1.0;
    double w_a = 0.4;
    double w_v = 0.2;
    double noise_std = 0.2;      // label noise
    double feature_noise = 1.0;  // additive N(0, feature_noise^2) on every feature
    std::uint64_t seed = 0;

    void validate() const;
};

/// Latent u ~ U[-3, 3]; every step of modality m carries w_m * u along a fixed
/// random unit-RMS direction plus Gaussian noise; label = clip(u + N(0, noise_std), -3, 3).
Dataset gen_synthetic(const SyntheticConfig& cfg);

/// Deterministic 80/10/10 split of a generated dataset, in generation order.
DataSplits split_dataset(const Dataset& ds, double train_frac = 0.8, double val_frac = 0.1);

/// Reads newline-delimited JSON records {id, label, text, audio, visual}.
/// Sequences are truncated or zero-padded to `seq_len`; 0 keeps the length of
/// the first record.
Dataset load_features(const std::filesystem::path& path, std::size_t seq_len = 0,
                      Split split = Split::Train);

/// Writes only the unpadded steps of each sample, so load(save(ds)) == ds.
void save_features(const Dataset& ds, const std::filesystem::path& path);

struct MultimodalBatch {
    Tensor text;    // [B, L, d_t]
    Tensor audio;   // [B, L, d_a]
    Tensor visual;  // [B, L, d_v]
    Tensor labels;  // [B]
    Tensor mask;    // [B, L]
    std::vector<std::size_t> indices;

    std::size_t size() const { return labels.numel(); }
};

/// Per-channel min-max over all (b, l) positions of a [B, L, d] block.
/// Zero-range channels map to 0.
Tensor minmax_normalize(const Tensor& block);

/// Normalizes audio and visual; text passes through untouched.
MultimodalBatch normalize_batch(const MultimodalBatch& batch);

MultimodalBatch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices);

/// Splits `ds` into batches, visiting samples in a Fisher-Yates order drawn
/// from `shuffle_seed` (dataset order when `shuffle` is false). The last
/// partial batch is kept. batch_size <= 0 is a ContractError.
std::vector<MultimodalBatch> batches(const Dataset& ds, int batch_size,
                                     std::uint64_t shuffle_seed, bool shuffle = true);

}  // namespace mmtrain
