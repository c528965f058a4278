#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geoproxy/ingest.hpp"

namespace geoproxy::transfer {

struct VillageEmbedding {
    std::vector<double> embedding;
    double population = 0.0;
};

struct DistrictEmbedding {
    std::string district_id;
    std::vector<double> embedding;
    double total_population = 0.0;
};

// Population-weighted mean; all-zero populations fall back to uniform
// weights (logged). Throws InputError on an empty list or ragged embeddings.
DistrictEmbedding district_embed(const std::string& district_id, std::span<const VillageEmbedding> villages);

// Groups villages by district (ordered by district id).
std::map<std::string, DistrictEmbedding> district_embeddings(
    const std::map<std::string, std::vector<double>>& village_embeddings, std::span<const ingest::VillageRecord> records);

enum class HeadKind { single_layer, two_layer };

// Inputs are standardized with the stored feature statistics. The single-layer
// head is ReLU(W x + b) in target units; the two-layer head is
// W2 ReLU(W1 x + b1) + b2 on standardized targets.
struct HeadModel {
    HeadKind kind = HeadKind::single_layer;
    int input_dim = 0;
    int hidden = 0;
    int output_dim = 0;
    std::vector<double> feature_mean, feature_std;
    std::vector<double> target_mean, target_std;  // two-layer only
    std::vector<double> W1, b1;                   // first layer, row-major (out, in)
    std::vector<double> W2, b2;                   // output layer of the two-layer head

    std::vector<double> predict(std::span<const double> features) const;
};

struct HeadSpec {
    double learning_rate = 1e-3;
    int batch_size = 64;
    double train_fraction = 0.8;
    int max_epochs = 400;
    int patience = 25;
    int hidden = 64;
    double weight_decay = 1e-4;
    int folds = 5;
    std::uint64_t seed = 1;

    void validate() const;
};

struct HeadFit {
    HeadModel model;
    std::vector<std::size_t> train, val;
    std::vector<std::optional<double>> val_r2;  // per output, original units
    double val_mse = 0.0;
    int epochs_run = 0;
};

// 8:2 split (stratified when strata are given); upstream features are
// treated as frozen inputs.
HeadFit fit_single_layer_head(const std::vector<std::vector<double>>& features,
                              const std::vector<std::vector<double>>& targets, const HeadSpec& spec,
                              std::span<const std::string> strata = {});

inline constexpr std::size_t kMinSurveyDistricts = 20;

struct FactorResult {
    int factor = 0;                 // 1-based
    std::optional<double> r2;       // nullopt: not evaluated
    std::size_t n_districts = 0;
};

struct SurveyFit {
    HeadModel model;                         // fit on all districts
    std::vector<int> factors;                // output index -> factor number
    std::vector<FactorResult> results;       // all 93 factors, cross-validated
    std::vector<HeadModel> fold_models;      // one per fold
    std::map<std::string, int> fold_of;      // district -> fold
};

// Two-layer head with district-level k-fold cross-validation. Folds come
// from the seeded shuffle of all embedding districts, so rounds sharing the
// embeddings share folds. Absent factors are masked out of loss and R2.
// Throws InputError with fewer than kMinSurveyDistricts districts.
SurveyFit fit_survey_head(const std::map<std::string, DistrictEmbedding>& embeddings,
                          const std::map<std::string, ingest::HealthVector93>& targets, const HeadSpec& spec);

// Hidden layer and feature scaling copied from head_nfhs4, output layer
// re-initialized for the factors present in the new targets, then fine-tuned
// for up to spec.max_epochs (0 keeps the hidden layer bit-identical).
HeadModel double_transfer(const HeadModel& head_nfhs4, const std::vector<std::vector<double>>& features,
                          const std::vector<std::vector<double>>& targets, const HeadSpec& spec);

// Cross-validated double transfer: fold k warm-starts from nfhs4.fold_models[k].
SurveyFit double_transfer_cv(const SurveyFit& nfhs4, const std::map<std::string, DistrictEmbedding>& embeddings,
                             const std::map<std::string, ingest::HealthVector93>& targets_nfhs5, const HeadSpec& spec);

// CSV: factor_id, description, r2, n_districts, path.
void write_survey_report(const std::filesystem::path& path, std::span<const FactorResult> results, const std::string& path_tag);

// Head checkpoint in the EOCK1 container.
void write_head(const std::filesystem::path& path, const HeadModel& head);
HeadModel read_head(const std::filesystem::path& path);

}  // namespace geoproxy::transfer
