#include "ttwin/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>
#include <unordered_map>

#include "json.hpp"
#include "ttwin/logging.hpp"
#include "ttwin/rng.hpp"

namespace ttwin {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    if (epochs < 1) throw std::runtime_error("train config: epochs must be >= 1");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
        throw std::runtime_error("train config: warmup_fraction must lie in (0,1)");
    if (batch_start < 1 || batch_start > batch_max)
        throw std::runtime_error("train config: need 1 <= batch_start <= batch_max");
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
        throw std::runtime_error("train config: holdout_fraction must lie in [0,1)");
}

std::string TrainConfig::to_json() const {
    json j{{"epochs", epochs},
           {"lr_max", lr_max},
           {"warmup_fraction", warmup_fraction},
           {"weight_decay", weight_decay},
           {"batch_start", batch_start},
           {"batch_max", batch_max},
           {"seed", seed},
           {"holdout_fraction", holdout_fraction},
           {"grad_clip", grad_clip},
           {"adam_beta1", adam_beta1},
           {"adam_beta2", adam_beta2},
           {"adam_eps", adam_eps},
           {"early_stop_val_loss", early_stop_val_loss},
           {"threads", threads}};
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    TrainConfig c;
    if (j.contains("epochs")) c.epochs = j["epochs"];
    if (j.contains("lr_max")) c.lr_max = j["lr_max"];
    if (j.contains("warmup_fraction")) c.warmup_fraction = j["warmup_fraction"];
    if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"];
    if (j.contains("batch_start")) c.batch_start = j["batch_start"];
    if (j.contains("batch_max")) c.batch_max = j["batch_max"];
    if (j.contains("seed")) c.seed = j["seed"];
    if (j.contains("holdout_fraction")) c.holdout_fraction = j["holdout_fraction"];
    if (j.contains("grad_clip")) c.grad_clip = j["grad_clip"];
    if (j.contains("adam_beta1")) c.adam_beta1 = j["adam_beta1"];
    if (j.contains("adam_beta2")) c.adam_beta2 = j["adam_beta2"];
    if (j.contains("adam_eps")) c.adam_eps = j["adam_eps"];
    if (j.contains("early_stop_val_loss")) c.early_stop_val_loss = j["early_stop_val_loss"];
    if (j.contains("threads")) c.threads = j["threads"];
    c.validate();
    return c;
}

int64_t warmup_steps(int64_t total_steps, const TrainConfig& cfg) {
    if (total_steps <= 0) throw std::runtime_error("lr schedule: total_steps must be positive");
    int64_t w = static_cast<int64_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(total_steps)));
    return w < 1 ? 1 : w;
}

double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
    const int64_t w = warmup_steps(total_steps, cfg);
    if (step < 0 || step > total_steps) throw std::runtime_error("lr_at: step out of range");
    if (step <= w) return cfg.lr_max * static_cast<double>(step) / static_cast<double>(w);
    double progress = static_cast<double>(step - w) / static_cast<double>(total_steps - w);
    return cfg.lr_max * 0.5 * (1.0 + std::cos(M_PI * progress));
}

int batch_size_at(int64_t step, int64_t warmup, const TrainConfig& cfg) {
    if (step < 0) throw std::runtime_error("batch_size_at: negative step");
    if (warmup <= 0 || step >= warmup) return cfg.batch_max;
    return cfg.batch_start +
           static_cast<int>((static_cast<int64_t>(cfg.batch_max - cfg.batch_start) * step) / warmup);
}

template <typename S>
double next_entry_loss_sum(const Mat<S>& logits, std::span<const int> targets, int64_t* n_positions,
                           Mat<S>* dlogits) {
    if (static_cast<size_t>(logits.rows()) != targets.size())
        throw std::runtime_error("next_entry_loss: logits/target length mismatch");
    if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
    double loss = 0.0;
    int64_t n = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int tgt = targets[i];
        if (tgt < 0) continue;
        if (tgt >= logits.cols()) throw std::runtime_error("next_entry_loss: target out of range");
        ++n;
        // log-softmax, max-subtracted
        S mx = logits.row(i).maxCoeff();
        double lse = 0.0;
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            lse += std::exp(static_cast<double>(logits(i, j) - mx));
        double log_z = std::log(lse) + static_cast<double>(mx);
        loss += log_z - static_cast<double>(logits(i, tgt));
        if (dlogits) {
            for (Eigen::Index j = 0; j < logits.cols(); ++j)
                (*dlogits)(i, j) =
                    static_cast<S>(std::exp(static_cast<double>(logits(i, j)) - log_z));
            (*dlogits)(i, tgt) -= S(1);
        }
    }
    if (n_positions) *n_positions = n;
    if (n == 0) throw std::runtime_error("next_entry_loss: all positions masked");
    return loss;
}

template <typename S>
double next_entry_loss(const Mat<S>& logits, std::span<const int> targets, Mat<S>* dlogits) {
    int64_t n = 0;
    double loss = next_entry_loss_sum(logits, targets, &n, dlogits);
    if (dlogits) *dlogits /= static_cast<S>(n);
    return loss / static_cast<double>(n);
}

template double next_entry_loss_sum<float>(const Mat<float>&, std::span<const int>, int64_t*,
                                           Mat<float>*);
template double next_entry_loss_sum<double>(const Mat<double>&, std::span<const int>, int64_t*,
                                            Mat<double>*);
template double next_entry_loss<float>(const Mat<float>&, std::span<const int>, Mat<float>*);
template double next_entry_loss<double>(const Mat<double>&, std::span<const int>, Mat<double>*);

void adamw_update(std::span<float> w, std::span<const float> g, std::span<float> m,
                  std::span<float> v, int64_t t, double lr, double weight_decay, double beta1,
                  double beta2, double eps) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < w.size(); ++i) {
        double gi = g[i];
        double mi = beta1 * m[i] + (1.0 - beta1) * gi;
        double vi = beta2 * v[i] + (1.0 - beta2) * gi * gi;
        m[i] = static_cast<float>(mi);
        v[i] = static_cast<float>(vi);
        double update = (mi / bc1) / (std::sqrt(vi / bc2) + eps);
        w[i] = static_cast<float>(w[i] - lr * update - lr * weight_decay * w[i]);
    }
}

bool adamw_step(ParamSet<float>& params, const ParamSet<float>& grads, AdamState& state, double lr,
                double weight_decay, const TrainConfig& cfg) {
    bool finite = true;
    grads.visit([&](const std::string&, const Mat<float>& g) {
        if (!g.allFinite()) finite = false;
    });
    if (!finite) {
        log_warn("train", "non-finite gradients; optimizer step rejected");
        return false;
    }
    state.t += 1;
    std::vector<Mat<float>*> ws, gs, ms, vs;
    params.visit([&](const std::string&, Mat<float>& m) { ws.push_back(&m); });
    const_cast<ParamSet<float>&>(grads).visit(
        [&](const std::string&, Mat<float>& m) { gs.push_back(&m); });
    state.m.visit([&](const std::string&, Mat<float>& m) { ms.push_back(&m); });
    state.v.visit([&](const std::string&, Mat<float>& m) { vs.push_back(&m); });
    for (size_t i = 0; i < ws.size(); ++i) {
        adamw_update({ws[i]->data(), static_cast<size_t>(ws[i]->size())},
                     {gs[i]->data(), static_cast<size_t>(gs[i]->size())},
                     {ms[i]->data(), static_cast<size_t>(ms[i]->size())},
                     {vs[i]->data(), static_cast<size_t>(vs[i]->size())}, state.t, lr, weight_decay,
                     cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    }
    return true;
}

namespace {

struct Sequence {
    std::vector<EncodedEntry> inputs;  // length L-1
    std::vector<int> targets;          // length L-1
    int patient = 0;
};

// Long timelines are split into overlapping windows with stride d_seq/2.
void append_windows(const std::vector<EncodedEntry>& enc, int d_seq, int patient,
                    std::vector<Sequence>& out) {
    const int L = static_cast<int>(enc.size());
    if (L < 2) return;
    auto emit = [&](int start, int end) {
        Sequence s;
        s.patient = patient;
        for (int i = start; i + 1 < end; ++i) {
            s.inputs.push_back(enc[i]);
            s.targets.push_back(enc[i + 1].token_id);
        }
        if (!s.inputs.empty()) out.push_back(std::move(s));
    };
    if (L <= d_seq) {
        emit(0, L);
        return;
    }
    const int stride = d_seq / 2;
    for (int start = 0;; start += stride) {
        if (start + d_seq >= L) {
            emit(L - d_seq, L);
            break;
        }
        emit(start, start + d_seq);
    }
}

double eval_loss(const Transformer& model, const std::vector<Sequence>& seqs,
                 const std::vector<size_t>& idx) {
    double total = 0.0;
    int64_t n = 0;
    for (size_t i : idx) {
        const Sequence& s = seqs[i];
        Mat<float> logits = model.forward_entries(s.inputs);
        int64_t np = 0;
        total += next_entry_loss_sum(logits, s.targets, &np, static_cast<Mat<float>*>(nullptr));
        n += np;
    }
    return n ? total / static_cast<double>(n) : 0.0;
}

void save_state(const std::string& path, const AdamState& state, int epoch, double best_val) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("train: cannot write state " + path);
    out.write("TTWST", 5);
    int64_t t = state.t;
    int32_t ep = epoch;
    out.write(reinterpret_cast<const char*>(&t), 8);
    out.write(reinterpret_cast<const char*>(&ep), 4);
    out.write(reinterpret_cast<const char*>(&best_val), 8);
    auto dump = [&](const ParamSet<float>& p) {
        p.visit([&](const std::string&, const Mat<float>& m) {
            out.write(reinterpret_cast<const char*>(m.data()), sizeof(float) * m.size());
        });
    };
    dump(state.m);
    dump(state.v);
}

bool load_state(const std::string& path, AdamState& state, int& epoch, double& best_val) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    char magic[5];
    in.read(magic, 5);
    if (!in || std::string(magic, 5) != "TTWST") return false;
    int64_t t = 0;
    int32_t ep = 0;
    in.read(reinterpret_cast<char*>(&t), 8);
    in.read(reinterpret_cast<char*>(&ep), 4);
    in.read(reinterpret_cast<char*>(&best_val), 8);
    auto slurp = [&](ParamSet<float>& p) {
        p.visit([&](const std::string&, Mat<float>& m) {
            in.read(reinterpret_cast<char*>(m.data()), sizeof(float) * m.size());
        });
    };
    slurp(state.m);
    slurp(state.v);
    if (!in) return false;
    state.t = t;
    epoch = ep;
    return true;
}

}  // namespace

TrainResult train(std::span<const PatientTimeline> corpus, const Vocabulary& vocab,
                  const ModelConfig& mcfg, const TrainConfig& tcfg, const std::string& out_dir) {
    tcfg.validate();
    if (corpus.empty()) throw std::runtime_error("train: empty corpus");
    fs::create_directories(out_dir);

    std::vector<Sequence> seqs;
    for (size_t p = 0; p < corpus.size(); ++p)
        append_windows(vocab.encode_timeline(corpus[p], /*append_eot=*/true), mcfg.d_seq,
                       static_cast<int>(p), seqs);
    if (seqs.empty()) throw std::runtime_error("train: no trainable sequences");

    // validation split by patient
    std::vector<size_t> patients(corpus.size());
    std::iota(patients.begin(), patients.end(), 0);
    Rng split_rng(splitmix64(tcfg.seed ^ 0x5f3759df));
    for (size_t i = patients.size(); i > 1; --i)
        std::swap(patients[i - 1], patients[split_rng.below(i)]);
    size_t n_val_patients = static_cast<size_t>(tcfg.holdout_fraction * corpus.size());
    std::vector<char> is_val(corpus.size(), 0);
    for (size_t i = 0; i < n_val_patients; ++i) is_val[patients[i]] = 1;
    std::vector<size_t> train_idx, val_idx;
    for (size_t i = 0; i < seqs.size(); ++i)
        (is_val[seqs[i].patient] ? val_idx : train_idx).push_back(i);
    if (train_idx.empty()) throw std::runtime_error("train: empty training split");

    // total optimizer steps: fixed point of the batch-ramp schedule
    const int64_t n_train = static_cast<int64_t>(train_idx.size());
    int64_t total_steps = std::max<int64_t>(1, n_train * tcfg.epochs / tcfg.batch_max);
    for (int iter = 0; iter < 20; ++iter) {
        int64_t w = warmup_steps(total_steps, tcfg);
        int64_t consumed = 0, steps = 0, remaining = n_train * tcfg.epochs;
        while (consumed < remaining) {
            consumed += batch_size_at(steps, w, tcfg);
            ++steps;
        }
        if (steps == total_steps) break;
        total_steps = steps;
    }
    const int64_t warmup = warmup_steps(total_steps, tcfg);

    Transformer model = Transformer::init_params(mcfg, tcfg.seed);
    AdamState state;
    state.m.allocate(mcfg);
    state.v.allocate(mcfg);
    int start_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
    const std::string state_path = out_dir + "/state.bin";
    const std::string final_path = out_dir + "/final.ckpt";
    const std::string best_path = out_dir + "/best.ckpt";
    if (tcfg.resume && fs::exists(state_path) && fs::exists(final_path)) {
        model = load_checkpoint(final_path);
        if (!load_state(state_path, state, start_epoch, best_val))
            throw std::runtime_error("train: corrupt state file " + state_path);
        log_info("train", "resumed", {{"epoch", start_epoch}, {"step", state.t}});
    }

    TrainResult result;
    int64_t step = state.t;
    ParamSet<float> grads;
    grads.allocate(mcfg);

    std::ofstream metrics(out_dir + "/metrics.csv",
                          start_epoch > 0 ? std::ios::app : std::ios::trunc);
    if (start_epoch == 0)
        metrics << "epoch,step,lr,batch_size,train_loss,val_loss,wall_seconds\n";

    auto t0 = std::chrono::steady_clock::now();
    const int n_threads = std::max(1, tcfg.threads);

    for (int epoch = start_epoch; epoch < tcfg.epochs; ++epoch) {
        // shuffled patient (sequence) order, derived from (seed, epoch)
        std::vector<size_t> order = train_idx;
        Rng shuffle_rng(derive_seed(tcfg.seed, "epoch", static_cast<uint64_t>(epoch), 0));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double epoch_loss = 0.0;
        int64_t epoch_positions = 0;
        size_t cursor = 0;
        double last_lr = 0.0;
        int last_bs = 0;

        while (cursor < order.size()) {
            const int bs = std::min<int64_t>(batch_size_at(step, warmup, tcfg),
                                             static_cast<int64_t>(order.size() - cursor));
            last_bs = bs;
            std::vector<size_t> batch(order.begin() + cursor, order.begin() + cursor + bs);
            cursor += bs;

            // Per-sequence gradients computed (possibly in parallel) and
            // reduced in batch order; the result depends only on the batch.
            std::vector<ParamSet<float>> seq_grads(bs);
            std::vector<double> seq_loss(bs, 0.0);
            std::vector<int64_t> seq_pos(bs, 0);
            auto work = [&](int w_id) {
                for (int i = w_id; i < bs; i += n_threads) {
                    const Sequence& s = seqs[batch[i]];
                    seq_grads[i].allocate(mcfg);
                    Tape<float> tape;
                    Rng drop_rng(derive_seed(tcfg.seed, "dropout", static_cast<uint64_t>(epoch),
                                             batch[i]));
                    Mat<float> logits = model.forward_entries(s.inputs, true, &tape, &drop_rng);
                    Mat<float> dlogits;
                    seq_loss[i] = next_entry_loss_sum(logits, s.targets, &seq_pos[i], &dlogits);
                    model.backward(tape, dlogits, seq_grads[i]);
                }
            };
            if (n_threads == 1) {
                work(0);
            } else {
                std::vector<std::thread> pool;
                for (int w_id = 0; w_id < n_threads; ++w_id) pool.emplace_back(work, w_id);
                for (auto& th : pool) th.join();
            }

            grads.set_zero();
            int64_t n_pos = 0;
            double loss_sum = 0.0;
            std::vector<Mat<float>*> acc;
            grads.visit([&](const std::string&, Mat<float>& m) { acc.push_back(&m); });
            for (int i = 0; i < bs; ++i) {
                std::vector<Mat<float>*> src;
                seq_grads[i].visit([&](const std::string&, Mat<float>& m) { src.push_back(&m); });
                for (size_t k = 0; k < acc.size(); ++k) *acc[k] += *src[k];
                n_pos += seq_pos[i];
                loss_sum += seq_loss[i];
            }
            const float inv = 1.0f / static_cast<float>(n_pos);
            for (auto* g : acc) *g *= inv;
            epoch_loss += loss_sum;
            epoch_positions += n_pos;

            if (tcfg.grad_clip > 0.0) {
                double sq = 0.0;
                for (auto* g : acc) sq += static_cast<double>(g->squaredNorm());
                double norm = std::sqrt(sq);
                if (norm > tcfg.grad_clip) {
                    float sc = static_cast<float>(tcfg.grad_clip / norm);
                    for (auto* g : acc) *g *= sc;
                }
            }

            last_lr = lr_at(std::min(step, total_steps), total_steps, tcfg);
            adamw_step(model.params, grads, state, last_lr, tcfg.weight_decay, tcfg);
            ++step;
        }

        double train_loss = epoch_positions ? epoch_loss / static_cast<double>(epoch_positions) : 0;
        double val_loss = val_idx.empty() ? train_loss : eval_loss(model, seqs, val_idx);
        double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        EpochMetrics em{epoch, step, last_lr, last_bs, train_loss, val_loss, wall};
        result.metrics.push_back(em);
        metrics << em.epoch << "," << em.step << "," << em.lr << "," << em.batch_size << ","
                << em.train_loss << "," << em.val_loss << "," << em.wall_seconds << "\n";
        metrics.flush();
        log_info("train", "epoch done",
                 {{"epoch", epoch}, {"train_loss", train_loss}, {"val_loss", val_loss}});

        save_checkpoint(final_path, model);
        if (val_loss < best_val) {
            best_val = val_loss;
            save_checkpoint(best_path, model);
        }
        save_state(state_path, state, epoch + 1, best_val);
        result.final_train_loss = train_loss;
        result.epochs_run = epoch + 1;

        if (tcfg.early_stop_val_loss > 0.0 && val_loss < tcfg.early_stop_val_loss) {
            log_info("train", "early stop: validation target reached",
                     {{"val_loss", val_loss}, {"target", tcfg.early_stop_val_loss}});
            break;
        }
    }

    result.best_val_loss = best_val;
    result.final_checkpoint = final_path;
    result.best_checkpoint = best_path;
    return result;
}

double unigram_entropy(std::span<const PatientTimeline> corpus, const Vocabulary& vocab) {
    std::unordered_map<int, int64_t> counts;
    int64_t total = 0;
    for (const PatientTimeline& tl : corpus) {
        for (const EncodedEntry& e : vocab.encode_timeline(tl, true)) {
            ++counts[e.token_id];
            ++total;
        }
    }
    double h = 0.0;
    for (const auto& [tok, c] : counts) {
        double f = static_cast<double>(c) / static_cast<double>(total);
        h -= f * std::log(f);
    }
    return h;
}

}  // namespace ttwin
