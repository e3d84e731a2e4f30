#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "btsr/corpus.hpp"

namespace btsr {

struct PrepareParams {
    int min_count = 5;
    double quantile = 0.95;
    int max_len = 50;
};

struct PrepareSummary {
    std::size_t raw_users = 0, raw_items = 0, raw_events = 0;
    std::size_t users = 0, items = 0, events = 0;
    std::size_t train_events = 0;
    std::size_t test_users = 0;
    std::size_t validation_fallbacks = 0;
    std::size_t examples = 0;
    Timestamp boundary = 0;

    friend bool operator==(const PrepareSummary&, const PrepareSummary&) = default;
};

// Everything downstream commands need, produced by one `prepare` run.
struct DatasetBundle {
    PrepareParams params;
    PrepareSummary summary;
    SplitDataset split;
    std::vector<TrainingExample> examples;

    std::size_t num_items() const { return split.num_items(); }
};

// raw log -> core filter -> temporal split -> training examples.
DatasetBundle prepare_dataset(const InteractionLog& raw, const PrepareParams& params);

std::string summary_text(const PrepareSummary& summary, const PrepareParams& params);

// JSON container. Serializing a loaded bundle reproduces the original bytes.
std::string bundle_to_json(const DatasetBundle& bundle);
DatasetBundle bundle_from_json(const std::string& text);

void save_bundle(const std::filesystem::path& path, const DatasetBundle& bundle);
DatasetBundle load_bundle(const std::filesystem::path& path);

}  // namespace btsr
