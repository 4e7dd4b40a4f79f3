#pragma once

#include <span>
#include <string>
#include <vector>

#include "ttwin/model.hpp"
#include "ttwin/timeline.hpp"
#include "ttwin/vocab.hpp"

namespace ttwin {

struct TrainConfig {
    int epochs = 100;
    double lr_max = 5.0e-4;
    double warmup_fraction = 0.01;
    double weight_decay = 0.01;
    int batch_start = 8;
    int batch_max = 32;
    uint64_t seed = 0;
    double holdout_fraction = 0.1;  // validation split, by patient
    double grad_clip = 1.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double early_stop_val_loss = 0.0;  // stop once val loss drops below; 0 disables
    int threads = 1;
    bool resume = false;  // continue from <out_dir>/state if present

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

// Linear warmup over the first 1% of steps, then cosine annealing to zero.
double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg);

int64_t warmup_steps(int64_t total_steps, const TrainConfig& cfg);

// Linear-in-steps staircase from batch_start to batch_max across the warmup
// window, constant afterward.
int batch_size_at(int64_t step, int64_t warmup, const TrainConfig& cfg);

// Mean of -log p(target) over unmasked positions (target id < 0 masks a
// position). If dlogits is non-null it receives the gradient of the mean.
template <typename S>
double next_entry_loss(const Mat<S>& logits, std::span<const int> targets,
                       Mat<S>* dlogits = nullptr);

// Sum (not mean) variant used to combine sequences position-weighted.
template <typename S>
double next_entry_loss_sum(const Mat<S>& logits, std::span<const int> targets, int64_t* n_positions,
                           Mat<S>* dlogits = nullptr);

// Decoupled-weight-decay Adam on one flat tensor. t is the 1-based step for
// bias correction.
void adamw_update(std::span<float> w, std::span<const float> g, std::span<float> m,
                  std::span<float> v, int64_t t, double lr, double weight_decay, double beta1,
                  double beta2, double eps);

struct AdamState {
    ParamSet<float> m, v;
    int64_t t = 0;
};

// Applies one AdamW step over all tensors. Returns false (step rejected,
// nothing mutated) if any gradient is non-finite.
bool adamw_step(ParamSet<float>& params, const ParamSet<float>& grads, AdamState& state, double lr,
                double weight_decay, const TrainConfig& cfg);

struct EpochMetrics {
    int epoch = 0;
    int64_t step = 0;
    double lr = 0;
    int batch_size = 0;
    double train_loss = 0;
    double val_loss = 0;
    double wall_seconds = 0;
};

struct TrainResult {
    std::vector<EpochMetrics> metrics;
    double best_val_loss = 0;
    double final_train_loss = 0;
    int epochs_run = 0;
    std::string final_checkpoint;
    std::string best_checkpoint;
};

// Self-supervised next-entry pretraining. Writes final.ckpt, best.ckpt,
// metrics.csv and a resumable optimizer state under out_dir.
TrainResult train(std::span<const PatientTimeline> corpus, const Vocabulary& vocab,
                  const ModelConfig& mcfg, const TrainConfig& tcfg, const std::string& out_dir);

// Entropy of the corpus token unigram distribution (nats); the sanity
// baseline a trained model's validation loss must beat.
double unigram_entropy(std::span<const PatientTimeline> corpus, const Vocabulary& vocab);

}  // namespace ttwin
