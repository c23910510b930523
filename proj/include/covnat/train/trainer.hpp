#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "covnat/batching.hpp"
#include "covnat/decode.hpp"
#include "covnat/eval/bleu.hpp"
#include "covnat/model/nat.hpp"
#include "covnat/model/teacher.hpp"
#include "covnat/train/losses.hpp"
#include "covnat/train/optim.hpp"

namespace covnat {

// Pairs are processed in fixed-size chunks whose gradients merge in chunk
// order, so results are bit-identical for any worker count.
constexpr std::size_t kGradChunk = 8;

struct BatchStats {
    double ce_sum = 0.0;
    long tokens = 0;
    double len_sum = 0.0;
    double sca_sum = 0.0;
    long clamped = 0;

    void merge(const BatchStats& other) {
        ce_sum += other.ce_sum;
        tokens += other.tokens;
        len_sum += other.len_sum;
        sca_sum += other.sca_sum;
        clamped += other.clamped;
    }
};

inline std::vector<std::vector<double>> snapshot_values(const ParameterStore& store) {
    std::vector<std::vector<double>> snap;
    snap.reserve(store.size());
    for (const auto& p : store) snap.push_back(p.tensor.values());
    return snap;
}

inline void restore_values(ParameterStore& store, const std::vector<std::vector<double>>& snap) {
    if (snap.size() != store.size()) throw ContractError("restore_values: size mismatch");
    for (std::size_t i = 0; i < snap.size(); ++i) store.at(i).tensor.mutable_values() = snap[i];
}

inline void sync_values(ParameterStore& dst, const ParameterStore& src) {
    if (dst.size() != src.size()) throw ContractError("sync_values: store size mismatch");
    for (std::size_t i = 0; i < src.size(); ++i)
        dst.at(i).tensor.mutable_values() = src.at(i).tensor.values();
}

// Runs fn(model, pair_index, stats) for every pair, accumulating gradients
// into the master store and returning merged stats. Worker models (if any)
// are value-synced copies of the master; chunk grads merge in chunk order.
template <class ModelT, class PairFn>
BatchStats chunked_batch_backward(ModelT& master, std::vector<std::unique_ptr<ModelT>>& workers,
                                  std::size_t npairs, PairFn&& fn) {
    const std::size_t nchunks = (npairs + kGradChunk - 1) / kGradChunk;
    std::vector<std::vector<std::vector<double>>> chunk_grads(nchunks);
    std::vector<BatchStats> chunk_stats(nchunks);

    auto run_chunk = [&](ModelT& model, std::size_t c) {
        const std::size_t begin = c * kGradChunk;
        const std::size_t end = std::min(npairs, begin + kGradChunk);
        for (std::size_t p = begin; p < end; ++p) fn(model, p, chunk_stats[c]);
        auto& store = model.params();
        auto& grads = chunk_grads[c];
        grads.resize(store.size());
        for (std::size_t pi = 0; pi < store.size(); ++pi) {
            Tensor t = store.at(pi).tensor;
            if (t.has_grad()) grads[pi] = t.grad();
            t.zero_grad();
        }
    };

    if (workers.empty() || nchunks <= 1) {
        for (std::size_t c = 0; c < nchunks; ++c) run_chunk(master, c);
    } else {
        for (auto& w : workers) sync_values(w->params(), master.params());
        std::atomic<std::size_t> next{0};
        auto worker_loop = [&](ModelT& model) {
            for (;;) {
                const std::size_t c = next.fetch_add(1);
                if (c >= nchunks) break;
                run_chunk(model, c);
            }
        };
        std::vector<std::thread> threads;
        for (std::size_t w = 1; w < workers.size(); ++w)
            threads.emplace_back([&, w] { worker_loop(*workers[w]); });
        worker_loop(*workers[0]);
        for (auto& t : threads) t.join();
    }

    BatchStats total;
    auto& store = master.params();
    for (std::size_t c = 0; c < nchunks; ++c) {
        total.merge(chunk_stats[c]);
        for (std::size_t pi = 0; pi < store.size(); ++pi) {
            if (chunk_grads[c][pi].empty()) continue;
            store.at(pi).tensor.node()->accumulate_grad(chunk_grads[c][pi]);
        }
    }
    return total;
}

// Deterministic order-preserving parallel map over [0, n) for no-grad work
// (decoding, evaluation). fn(i) must only write to its own slot.
inline void parallel_for_indexed(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto loop = [&] {
        autograd::NoGradGuard no_grad;
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(loop);
    loop();
    for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Batch objectives (single-graph form)
// ---------------------------------------------------------------------------

struct ObjectiveBreakdown {
    Tensor objective;
    Tensor mle;     // mean over unmasked target tokens
    Tensor length;  // mean over pairs
    Tensor sca;     // mean over pairs; undefined tensor when beta is absent
};

namespace detail {

struct PairView {
    std::vector<int> src, tgt;
};

inline PairView unpadded_pair(const Batch& b, std::size_t p) {
    PairView v;
    v.src.assign(b.src[p].begin(), b.src[p].begin() + b.src_len[p]);
    v.tgt.assign(b.tgt[p].begin(), b.tgt[p].begin() + b.tgt_len[p]);
    return v;
}

}  // namespace detail

// L = L_mle + alpha * L_length (+ beta * L_coverage when with_sca). One graph
// over the whole batch; component means are exposed so loss-weight linearity
// is checkable directly.
inline ObjectiveBreakdown batch_objective(const NatModel& model, const Batch& batch, double alpha,
                                          double beta, bool with_sca, const ForwardCtx& ctx = {},
                                          long* clamp_counter = nullptr) {
    if (batch.npairs() == 0) throw ContractError("batch_objective: empty batch");
    long total_tokens = 0;
    for (std::size_t p = 0; p < batch.npairs(); ++p) total_tokens += batch.tgt_len[p];
    if (total_tokens == 0) throw ContractError("batch_objective: empty target mask");

    Tensor ce_total, len_total, sca_total;
    for (std::size_t p = 0; p < batch.npairs(); ++p) {
        auto view = detail::unpadded_pair(batch, p);
        EncoderOutput enc = model.encode(view.src, std::vector<double>(view.src.size(), 1.0), ctx);
        Tensor logits = model.forward_from_encoder(enc, static_cast<int>(view.tgt.size()),
                                                   model.config().k_train, ctx);
        Tensor ce = cross_entropy_sum_from_logits(logits, view.tgt);
        Tensor len = length_loss(enc.length_logits, static_cast<int>(view.src.size()),
                                 static_cast<int>(view.tgt.size()),
                                 model.config().length_bucket_radius, clamp_counter);
        ce_total = ce_total.defined() ? add(ce_total, ce) : ce;
        len_total = len_total.defined() ? add(len_total, len) : len;
        if (with_sca) {
            Tensor s = sca_loss(view.src, logits, model.embedding_table(), model.sca_ws());
            sca_total = sca_total.defined() ? add(sca_total, s) : s;
        }
    }
    ObjectiveBreakdown out;
    out.mle = scale_by_scalar(ce_total, 1.0 / static_cast<double>(total_tokens));
    out.length = scale_by_scalar(len_total, 1.0 / static_cast<double>(batch.npairs()));
    out.objective = add(out.mle, scale_by_scalar(out.length, alpha));
    if (with_sca) {
        out.sca = scale_by_scalar(sca_total, 1.0 / static_cast<double>(batch.npairs()));
        out.objective = add(out.objective, scale_by_scalar(out.sca, beta));
    }
    return out;
}

inline ObjectiveBreakdown pretrain_objective(const NatModel& model, const Batch& batch, double alpha,
                                             const ForwardCtx& ctx = {}) {
    if (alpha < 0) throw ContractError("pretrain_objective: alpha must be >= 0");
    return batch_objective(model, batch, alpha, 0.0, false, ctx);
}

inline ObjectiveBreakdown finetune_objective(const NatModel& model, const Batch& batch, double alpha,
                                             double beta, const ForwardCtx& ctx = {}) {
    if (alpha < 0 || beta < 0) throw ContractError("finetune_objective: weights must be >= 0");
    return batch_objective(model, batch, alpha, beta, true, ctx);
}

// ---------------------------------------------------------------------------
// Training drivers
// ---------------------------------------------------------------------------

struct TrainOptions {
    double alpha = 0.1;
    double beta = 0.5;
    long pretrain_max_steps = 1500;
    long finetune_steps = 200;
    double peak_lr = 5e-4;
    long warmup = 500;
    double finetune_lr = 1e-5;
    Index max_tokens = 2048;
    long eval_interval = 200;
    long patience = 10;  // evaluations without dev BLEU improvement
    std::uint64_t seed = 1;
    int threads = 2;
    bool joint_from_scratch = false;
};

struct MetricsLog {
    std::vector<std::string> rows;

    void add(long step, const std::string& phase, double mle, double len, double sca, double lr,
             std::optional<double> dev_bleu) {
        char buf[224];
        if (dev_bleu)
            std::snprintf(buf, sizeof(buf), "%ld\t%s\t%.6f\t%.6f\t%.6f\t%.8g\t%.4f", step,
                          phase.c_str(), mle, len, sca, lr, *dev_bleu);
        else
            std::snprintf(buf, sizeof(buf), "%ld\t%s\t%.6f\t%.6f\t%.6f\t%.8g", step, phase.c_str(),
                          mle, len, sca, lr);
        rows.emplace_back(buf);
    }
};

struct TrainResult {
    MetricsLog metrics;
    double best_dev_bleu = -1.0;
    long best_step = 0;
    long steps = 0;
    long length_clamp_warnings = 0;
};

namespace detail {

inline std::vector<std::unique_ptr<NatModel>> make_nat_workers(const NatModel& master, int threads) {
    std::vector<std::unique_ptr<NatModel>> workers;
    for (int t = 0; t < threads; ++t) workers.push_back(std::make_unique<NatModel>(master.config(), 0));
    return workers;
}

inline double dev_bleu_eval(const NatModel& model, const std::vector<SentencePair>& dev, int threads) {
    if (dev.empty()) return -1.0;
    std::vector<std::vector<int>> hyps(dev.size());
    parallel_for_indexed(dev.size(), threads, [&](std::size_t i) {
        hyps[i] = greedy_parallel_decode(model, dev[i].src, model.config().k_train).tokens;
    });
    std::vector<std::vector<int>> refs;
    refs.reserve(dev.size());
    for (const auto& p : dev) refs.push_back(p.tgt);
    return bleu_ids(hyps, refs);
}

}  // namespace detail

// Two-phase optimization: pre-train on the basic losses with the warmup +
// inverse-sqrt schedule (dev-BLEU early stopping), then fine-tune jointly
// with the SCA term at a fixed small learning rate. The best dev-BLEU
// parameters are restored into the model at the end.
inline TrainResult two_phase_train(NatModel& model, const std::vector<SentencePair>& train,
                                   const std::vector<SentencePair>& dev, const TrainOptions& opt) {
    if (train.empty()) throw ConfigError("two_phase_train: empty training corpus");
    TrainResult result;
    auto workers = detail::make_nat_workers(model, std::max(1, opt.threads));

    AdamState adam = AdamState::for_store(model.params());
    long step = 0;
    std::vector<std::vector<double>> best_values = snapshot_values(model.params());

    auto run_phase = [&](const std::string& tag, long max_steps, double alpha, double beta,
                         bool with_sca, bool schedule, double fixed_lr, bool early_stop) {
        if (max_steps <= 0) return;
        adam = AdamState::for_store(model.params());
        long phase_step = 0;
        long stale_evals = 0;
        std::uint64_t epoch = 0;
        const Index k = model.config().k_train;
        const double dropout_rate = model.config().dropout;

        while (phase_step < max_steps) {
            auto batches = batch_by_tokens(train, opt.max_tokens,
                                           splitmix64(opt.seed ^ stream_tag(tag) ^ (epoch * 0x9e37ULL)));
            ++epoch;
            for (const Batch& batch : batches) {
                ++step;
                ++phase_step;
                const double lr = schedule ? lr_schedule(phase_step, opt.warmup, opt.peak_lr) : fixed_lr;

                long total_tokens = 0;
                for (std::size_t p = 0; p < batch.npairs(); ++p) total_tokens += batch.tgt_len[p];
                const double inv_tokens = 1.0 / static_cast<double>(total_tokens);
                const double inv_pairs = 1.0 / static_cast<double>(batch.npairs());

                auto pair_fn = [&](NatModel& m, std::size_t p, BatchStats& stats) {
                    auto view = detail::unpadded_pair(batch, p);
                    Rng drop_rng(splitmix64(opt.seed ^ stream_tag("dropout") ^
                                            (static_cast<std::uint64_t>(step) << 20) ^ p));
                    ForwardCtx ctx;
                    if (dropout_rate > 0.0) {
                        ctx.dropout_rng = &drop_rng;
                        ctx.dropout_rate = dropout_rate;
                    }
                    EncoderOutput enc = m.encode(view.src, std::vector<double>(view.src.size(), 1.0), ctx);
                    Tensor logits = m.forward_from_encoder(enc, static_cast<int>(view.tgt.size()), k, ctx);
                    Tensor ce = cross_entropy_sum_from_logits(logits, view.tgt);
                    long clamped = 0;
                    Tensor len = length_loss(enc.length_logits, static_cast<int>(view.src.size()),
                                             static_cast<int>(view.tgt.size()),
                                             m.config().length_bucket_radius, &clamped);
                    Tensor obj = add(scale_by_scalar(ce, inv_tokens),
                                     scale_by_scalar(len, alpha * inv_pairs));
                    double sca_val = 0.0;
                    if (with_sca) {
                        Tensor s = sca_loss(view.src, logits, m.embedding_table(), m.sca_ws());
                        obj = add(obj, scale_by_scalar(s, beta * inv_pairs));
                        sca_val = s.value();
                    }
                    backward(obj);
                    stats.ce_sum += ce.value();
                    stats.tokens += static_cast<long>(view.tgt.size());
                    stats.len_sum += len.value();
                    stats.sca_sum += sca_val;
                    stats.clamped += clamped;
                };

                BatchStats stats = chunked_batch_backward(model, workers, batch.npairs(), pair_fn);
                result.length_clamp_warnings += stats.clamped;

                const double mle = stats.ce_sum / static_cast<double>(stats.tokens);
                const double len_mean = stats.len_sum * inv_pairs;
                const double sca_mean = stats.sca_sum * inv_pairs;
                if (!std::isfinite(mle) || !std::isfinite(len_mean) || !std::isfinite(sca_mean))
                    throw NumericError("training loss not finite at step " + std::to_string(step) +
                                       " (phase " + tag + ", lr " + std::to_string(lr) + ", mle " +
                                       std::to_string(mle) + ", length " + std::to_string(len_mean) +
                                       ", sca " + std::to_string(sca_mean) + ")");

                adam_step(model.params(), adam, lr);
                model.params().zero_grads();

                std::optional<double> bleu_now;
                const bool eval_due = !dev.empty() && (phase_step % opt.eval_interval == 0 ||
                                                       phase_step == max_steps);
                if (eval_due) {
                    bleu_now = detail::dev_bleu_eval(model, dev, opt.threads);
                    if (*bleu_now > result.best_dev_bleu) {
                        result.best_dev_bleu = *bleu_now;
                        result.best_step = step;
                        best_values = snapshot_values(model.params());
                        stale_evals = 0;
                    } else {
                        ++stale_evals;
                    }
                }
                result.metrics.add(step, tag, mle, len_mean, sca_mean, lr, bleu_now);

                if (phase_step >= max_steps) break;
                if (early_stop && stale_evals >= opt.patience) {
                    phase_step = max_steps;
                    break;
                }
            }
        }
    };

    if (opt.joint_from_scratch) {
        run_phase("joint", opt.pretrain_max_steps, opt.alpha, opt.beta, true, true, 0.0, true);
    } else {
        run_phase("pretrain", opt.pretrain_max_steps, opt.alpha, 0.0, false, true, 0.0, true);
        run_phase("finetune", opt.finetune_steps, opt.alpha, opt.beta, opt.beta != 0.0, false,
                  opt.finetune_lr, false);
    }

    result.steps = step;
    if (result.best_dev_bleu >= 0.0) restore_values(model.params(), best_values);
    return result;
}

// ---------------------------------------------------------------------------
// Teacher training and distillation
// ---------------------------------------------------------------------------

struct TeacherTrainOptions {
    long max_steps = 3000;
    double peak_lr = 5e-4;
    long warmup = 400;
    Index max_tokens = 2048;
    std::uint64_t seed = 1;
    int threads = 2;
    double stop_below_ce = 0.0;  // early exit once per-token CE drops below
};

struct TeacherTrainResult {
    long steps = 0;
    double final_ce = 0.0;
    MetricsLog metrics;
};

inline TeacherTrainResult teacher_train(TeacherModel& model, const std::vector<SentencePair>& train,
                                        const TeacherTrainOptions& opt) {
    if (train.empty()) throw ConfigError("teacher_train: empty training corpus");
    std::vector<std::unique_ptr<TeacherModel>> workers;
    for (int t = 0; t < std::max(1, opt.threads); ++t)
        workers.push_back(std::make_unique<TeacherModel>(model.config(), 0));

    AdamState adam = AdamState::for_store(model.params());
    TeacherTrainResult result;
    std::uint64_t epoch = 0;
    const double dropout_rate = model.config().dropout;

    while (result.steps < opt.max_steps) {
        auto batches = batch_by_tokens(train, opt.max_tokens,
                                       splitmix64(opt.seed ^ stream_tag("teacher") ^ (epoch * 0x85ebULL)));
        ++epoch;
        for (const Batch& batch : batches) {
            ++result.steps;
            const double lr = lr_schedule(result.steps, opt.warmup, opt.peak_lr);

            auto pair_fn = [&](TeacherModel& m, std::size_t p, BatchStats& stats) {
                auto view = detail::unpadded_pair(batch, p);
                Rng drop_rng(splitmix64(opt.seed ^ stream_tag("teacher-dropout") ^
                                        (static_cast<std::uint64_t>(result.steps) << 20) ^ p));
                ForwardCtx ctx;
                if (dropout_rate > 0.0) {
                    ctx.dropout_rng = &drop_rng;
                    ctx.dropout_rate = dropout_rate;
                }
                Tensor ce = m.pair_ce_sum(view.src, view.tgt, ctx);
                const long label_count = static_cast<long>(view.tgt.size()) + 1;  // + eos
                backward(ce);  // scaled at merge time via token count
                stats.ce_sum += ce.value();
                stats.tokens += label_count;
            };

            // Note: gradients are of the summed CE; scale to per-token mean.
            BatchStats stats = chunked_batch_backward(model, workers, batch.npairs(), pair_fn);
            long total_tokens = stats.tokens;
            for (std::size_t pi = 0; pi < model.params().size(); ++pi) {
                Tensor t = model.params().at(pi).tensor;
                if (!t.has_grad()) continue;
                auto& g = t.node()->grad;
                const double s = 1.0 / static_cast<double>(total_tokens);
                for (double& v : g) v *= s;
            }

            const double ce_mean = stats.ce_sum / static_cast<double>(stats.tokens);
            if (!std::isfinite(ce_mean))
                throw NumericError("teacher training diverged (NaN loss) at step " +
                                   std::to_string(result.steps));
            adam_step(model.params(), adam, lr);
            model.params().zero_grads();
            result.final_ce = ce_mean;
            result.metrics.add(result.steps, "teacher", ce_mean, 0.0, 0.0, lr, std::nullopt);

            if (result.steps >= opt.max_steps) break;
            if (opt.stop_below_ce > 0.0 && ce_mean < opt.stop_below_ce) return result;
        }
    }
    return result;
}

// Replaces every target with the teacher's beam output; sources unchanged.
inline ParallelText distill(const TeacherModel& teacher, const ParallelText& corpus,
                            const Vocabulary& vocab, Index beam, int threads = 2) {
    ParallelText out;
    out.src = corpus.src;
    out.tgt.resize(corpus.size());
    parallel_for_indexed(corpus.size(), threads, [&](std::size_t i) {
        BeamResult r = teacher.beam_decode(vocab.encode(corpus.src[i]), beam);
        std::vector<int> tokens = r.tokens;
        out.tgt[i] = vocab.decode(tokens);
    });
    return out;
}

}  // namespace covnat
