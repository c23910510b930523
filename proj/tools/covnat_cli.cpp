// covnat command line: data generation, teacher training, distillation,
// NAT training, decoding and analysis. Exit codes: 0 ok, 2 usage/config
// error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "covnat/eval/report.hpp"
#include "covnat/io.hpp"
#include "covnat/model/checkpoint.hpp"
#include "covnat/run_config.hpp"
#include "covnat/synthetic.hpp"
#include "covnat/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace covnat;

namespace {

struct LoadedNat {
    ModelConfig config;
    std::unique_ptr<NatModel> model;
};

LoadedNat load_nat(const std::string& ckpt) {
    auto echo = read_checkpoint_config(ckpt);
    if (echo.count("model_type") && echo["model_type"] != "nat")
        throw DataError("checkpoint is not a NAT model: " + ckpt);
    LoadedNat l;
    l.config = ModelConfig::from_map(echo);
    l.model = std::make_unique<NatModel>(l.config, 0);
    load_checkpoint_into(l.model->params(), ckpt);
    return l;
}

std::unique_ptr<TeacherModel> load_teacher(const std::string& ckpt) {
    auto echo = read_checkpoint_config(ckpt);
    if (echo.count("model_type") && echo["model_type"] != "teacher")
        throw DataError("checkpoint is not a teacher model: " + ckpt);
    auto model = std::make_unique<TeacherModel>(TeacherConfig::from_map(echo), 0);
    load_checkpoint_into(model->params(), ckpt);
    return model;
}

struct MetaRow {
    int src_len = 0;
    long raw_len = 0;
    long removed = 0;
    double ms = 0.0;
};

void write_meta(const std::string& path, Index k_dec, int radius, const std::vector<MetaRow>& rows) {
    std::vector<std::string> lines;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "# k_dec=%lld lpd_radius=%d", static_cast<long long>(k_dec), radius);
    lines.emplace_back(buf);
    lines.emplace_back("src_len,raw_len,removed,ms");
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%ld,%ld,%.4f", r.src_len, r.raw_len, r.removed, r.ms);
        lines.emplace_back(buf);
    }
    atomic_write_lines(path, lines);
}

std::pair<std::vector<MetaRow>, std::pair<Index, int>> read_meta(const std::string& path) {
    std::vector<MetaRow> rows;
    Index k_dec = 0;
    int radius = 0;
    for (const auto& line : read_lines(path)) {
        if (line.rfind("# ", 0) == 0) {
            std::sscanf(line.c_str(), "# k_dec=%lld lpd_radius=%d",
                        reinterpret_cast<long long*>(&k_dec), &radius);
            continue;
        }
        if (line.rfind("src_len", 0) == 0 || line.empty()) continue;
        MetaRow r;
        if (std::sscanf(line.c_str(), "%d,%ld,%ld,%lf", &r.src_len, &r.raw_len, &r.removed, &r.ms) != 4)
            throw DataError("malformed decode meta line: " + line);
        rows.push_back(r);
    }
    return {rows, {k_dec, radius}};
}

Vocabulary build_and_save_vocab(const RunConfig& cfg, const std::string& run_dir) {
    Vocabulary vocab = Vocabulary::build({cfg.train_src, cfg.train_tgt}, cfg.vocab_min_count);
    vocab.save((fs::path(run_dir) / "vocab.txt").string());
    return vocab;
}

int cmd_gen_data(const std::string& task, int size, std::uint64_t seed, const std::string& out,
                 const LexiconParams& lex) {
    ParallelText text = gen_synthetic(task, size, seed, lex);
    write_parallel(out + ".src", out + ".tgt", text);
    std::cout << "wrote " << text.size() << " pairs to " << out << ".src/.tgt\n";
    return 0;
}

int cmd_train_teacher(const std::string& config_path, const std::string& run_dir) {
    RunConfig cfg = RunConfig::load(config_path);
    cfg.validate();
    fs::create_directories(run_dir);
    Vocabulary vocab = build_and_save_vocab(cfg, run_dir);

    TeacherConfig tc = cfg.teacher;
    tc.vocab_size = vocab.size();
    tc.validate();

    auto pairs = encode_corpus(read_parallel(cfg.train_src, cfg.train_tgt), vocab);
    TeacherModel model(tc, cfg.seed);
    TeacherTrainOptions opt;
    opt.max_steps = cfg.teacher_max_steps;
    opt.warmup = cfg.teacher_warmup;
    opt.peak_lr = cfg.train.peak_lr;
    opt.max_tokens = cfg.train.max_tokens;
    opt.seed = cfg.seed;
    opt.threads = cfg.train.threads;
    TeacherTrainResult result = teacher_train(model, pairs, opt);

    save_checkpoint(model.params(), tc.to_map(), (fs::path(run_dir) / "teacher.ckpt").string());
    atomic_write_lines((fs::path(run_dir) / "teacher_metrics.log").string(), result.metrics.rows);
    atomic_write_lines((fs::path(run_dir) / "run.cfg").string(), cfg.to_lines());
    std::cout << "teacher trained for " << result.steps << " steps, final per-token ce "
              << result.final_ce << "\n";
    return 0;
}

int cmd_distill(const std::string& teacher_ckpt, const std::string& vocab_path,
                const std::string& src, const std::string& tgt, Index beam, const std::string& out,
                int threads) {
    auto teacher = load_teacher(teacher_ckpt);
    Vocabulary vocab = Vocabulary::load(vocab_path);
    ParallelText corpus = read_parallel(src, tgt);
    ParallelText distilled = distill(*teacher, corpus, vocab, beam, threads);
    write_parallel(out + ".src", out + ".tgt", distilled);
    std::cout << "distilled " << distilled.size() << " pairs to " << out << ".src/.tgt\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& run_dir) {
    RunConfig cfg = RunConfig::load(config_path);
    cfg.validate();
    fs::create_directories(run_dir);
    Vocabulary vocab = build_and_save_vocab(cfg, run_dir);

    ModelConfig mc = cfg.model;
    mc.vocab_size = vocab.size();
    mc.use_tcir = !cfg.disable_tcir;
    mc.validate();

    auto train_pairs = encode_corpus(read_parallel(cfg.train_src, cfg.train_tgt), vocab);
    std::vector<SentencePair> dev_pairs;
    if (!cfg.dev_src.empty())
        dev_pairs = encode_corpus(read_parallel(cfg.dev_src, cfg.dev_tgt), vocab);

    NatModel model(mc, cfg.seed);
    TrainOptions opt = cfg.train;
    opt.seed = cfg.seed;
    if (cfg.disable_sca) opt.beta = 0.0;

    TrainResult result = two_phase_train(model, train_pairs, dev_pairs, opt);

    save_checkpoint(model.params(), mc.to_map(), (fs::path(run_dir) / "best.ckpt").string());
    atomic_write_lines((fs::path(run_dir) / "metrics.log").string(), result.metrics.rows);
    atomic_write_lines((fs::path(run_dir) / "run.cfg").string(), cfg.to_lines());
    std::cout << "trained " << result.steps << " steps; best dev BLEU " << result.best_dev_bleu
              << " at step " << result.best_step << "\n";
    return 0;
}

int cmd_translate(const std::string& ckpt, const std::string& vocab_path, const std::string& input,
                  const std::string& output, const std::string& meta_path, Index k_dec, int radius,
                  const std::string& teacher_ckpt) {
    if (radius > 0 && teacher_ckpt.empty())
        throw ConfigError("--lpd-radius > 0 requires --teacher for rescoring");
    LoadedNat nat = load_nat(ckpt);
    Vocabulary vocab = Vocabulary::load(vocab_path);
    std::unique_ptr<TeacherModel> teacher;
    if (!teacher_ckpt.empty()) teacher = load_teacher(teacher_ckpt);

    std::vector<std::string> in_lines = read_lines(input);
    std::vector<std::string> hyp_lines;
    std::vector<MetaRow> meta;
    for (const auto& line : in_lines) {
        std::vector<int> src = vocab.encode(line);
        if (src.empty()) throw DataError("empty input sentence: '" + line + "'");
        const auto start = std::chrono::steady_clock::now();
        DecodeResult r = radius > 0 ? lpd_decode(*nat.model, teacher.get(), src, k_dec, radius)
                                    : greedy_parallel_decode(*nat.model, src, k_dec);
        const auto end = std::chrono::steady_clock::now();
        hyp_lines.push_back(vocab.decode(r.tokens));
        meta.push_back({static_cast<int>(src.size()), static_cast<long>(r.raw_tokens.size()),
                        r.removed_count,
                        std::chrono::duration<double, std::milli>(end - start).count()});
    }
    atomic_write_lines(output, hyp_lines);
    if (!meta_path.empty()) write_meta(meta_path, k_dec, radius, meta);
    std::cout << "translated " << hyp_lines.size() << " sentences\n";
    return 0;
}

int cmd_evaluate(const std::string& hyp, const std::string& ref, const std::string& meta_path,
                 const std::string& out_prefix) {
    auto hyp_lines = read_lines(hyp);
    auto ref_lines = read_lines(ref);
    if (hyp_lines.size() != ref_lines.size())
        throw DataError("hypothesis/reference line counts differ");

    EvalReport report;
    report.bleu_score = bleu_lines(hyp_lines, ref_lines);

    std::vector<std::vector<std::string>> hyps, refs;
    for (const auto& l : hyp_lines) hyps.push_back(split_tokens(l));
    for (const auto& l : ref_lines) refs.push_back(split_tokens(l));

    if (!meta_path.empty()) {
        auto [meta, kr] = read_meta(meta_path);
        if (meta.size() != hyp_lines.size())
            throw DataError("decode meta rows do not match hypothesis count");
        report.k_dec = kr.first;
        report.lpd_radius = kr.second;
        std::vector<DecodeMeta> decodes;
        std::vector<int> src_lens;
        double total_ms = 0;
        for (const auto& m : meta) {
            decodes.push_back({m.removed, m.raw_len, m.src_len});
            src_lens.push_back(m.src_len);
            total_ms += m.ms;
        }
        report.repeats = repeated_token_ratio(decodes);
        report.latency = {total_ms / static_cast<double>(meta.size()), static_cast<long>(meta.size())};
        report.buckets = length_bucket_report(src_lens, hyps, refs,
                                              {0, 10, 20, 30, std::numeric_limits<int>::max()});
    }

    auto text = report.to_text();
    for (const auto& line : text) std::cout << line << "\n";
    if (!out_prefix.empty()) {
        atomic_write_lines(out_prefix + ".txt", text);
        atomic_write_lines(out_prefix + ".csv", report.to_csv());
    }
    return 0;
}

int cmd_sweep_kdec(const std::string& ckpt, const std::string& vocab_path, const std::string& src,
                   const std::string& ref, Index k_min, Index k_max, const std::string& out) {
    LoadedNat nat = load_nat(ckpt);
    if (!nat.config.use_tcir)
        throw ConfigError("sweep-kdec: checkpoint was trained without the iterative coverage layer");
    Vocabulary vocab = Vocabulary::load(vocab_path);
    auto src_lines = read_lines(src);
    auto ref_lines = read_lines(ref);
    if (src_lines.size() != ref_lines.size()) throw DataError("src/ref line counts differ");

    std::vector<std::vector<int>> srcs;
    for (const auto& l : src_lines) srcs.push_back(vocab.encode(l));

    std::vector<std::string> rows{"k_dec\tbleu\tmean_ms"};
    std::cout << rows[0] << "\n";
    for (Index k = k_min; k <= k_max; ++k) {
        std::vector<std::string> hyps(srcs.size());
        LatencyStats lat = measure_latency(
            [&](const std::vector<int>& s) {
                DecodeResult r = greedy_parallel_decode(*nat.model, s, k);
                hyps[static_cast<std::size_t>(&s - srcs.data())] = vocab.decode(r.tokens);
            },
            srcs);
        const double score = bleu_lines(hyps, ref_lines);
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%lld\t%.4f\t%.4f", static_cast<long long>(k), score,
                      lat.mean_ms);
        rows.emplace_back(buf);
        std::cout << buf << "\n";
    }
    if (!out.empty()) atomic_write_lines(out, rows);
    return 0;
}

int cmd_analyze_coverage(const std::string& ckpt, const std::string& vocab_path,
                         const std::string& sentence, Index k_dec, const std::string& out) {
    LoadedNat nat = load_nat(ckpt);
    if (!nat.config.use_tcir)
        throw ConfigError("analyze-coverage: checkpoint was trained without the coverage layer");
    Vocabulary vocab = Vocabulary::load(vocab_path);
    std::vector<int> src = vocab.encode(sentence);
    if (src.empty()) throw DataError("empty sentence");
    auto lines = coverage_dump(*nat.model, src, k_dec);
    if (out.empty())
        for (const auto& l : lines) std::cout << l << "\n";
    else
        atomic_write_lines(out, lines);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"coverage-modeling non-autoregressive translation toolkit"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic parallel corpus");
    std::string task, out;
    int size = 0;
    std::uint64_t seed = 0;
    LexiconParams lex;
    gen->add_option("--task", task, "copy|reverse|lexical-swap|multi-synonym")->required();
    gen->add_option("--size", size, "number of sentence pairs")->required();
    gen->add_option("--seed", seed, "generation seed")->required();
    gen->add_option("--out", out, "output prefix (.src/.tgt)")->required();
    gen->add_option("--types", lex.n_source_types, "source lexicon size");
    gen->add_option("--synonyms", lex.synonyms, "synonyms per source token (multi-synonym)");
    gen->add_option("--min-len", lex.min_len, "minimum sentence length");
    gen->add_option("--max-len", lex.max_len, "maximum sentence length");

    // train-teacher
    auto* tt = app.add_subcommand("train-teacher", "train the autoregressive teacher");
    std::string tt_config, tt_run_dir;
    tt->add_option("--config", tt_config, "run config file")->required();
    tt->add_option("--run-dir", tt_run_dir, "output directory")->required();

    // distill
    auto* dis = app.add_subcommand("distill", "replace targets with teacher beam outputs");
    std::string dis_teacher, dis_vocab, dis_src, dis_tgt, dis_out;
    Index dis_beam = 4;
    int dis_threads = 2;
    dis->add_option("--teacher", dis_teacher, "teacher checkpoint")->required();
    dis->add_option("--vocab", dis_vocab, "vocabulary file")->required();
    dis->add_option("--src", dis_src, "source corpus")->required();
    dis->add_option("--tgt", dis_tgt, "target corpus")->required();
    dis->add_option("--beam", dis_beam, "beam size");
    dis->add_option("--threads", dis_threads, "decode threads");
    dis->add_option("--out", dis_out, "output prefix (.src/.tgt)")->required();

    // train
    auto* tr = app.add_subcommand("train", "two-phase NAT training");
    std::string tr_config, tr_run_dir;
    tr->add_option("--config", tr_config, "run config file")->required();
    tr->add_option("--run-dir", tr_run_dir, "output directory")->required();

    // translate
    auto* tl = app.add_subcommand("translate", "decode a file of source sentences");
    std::string tl_ckpt, tl_vocab, tl_in, tl_out, tl_meta, tl_teacher;
    Index tl_kdec = 5;
    int tl_radius = 0;
    tl->add_option("--ckpt", tl_ckpt, "NAT checkpoint")->required();
    tl->add_option("--vocab", tl_vocab, "vocabulary file")->required();
    tl->add_option("--input", tl_in, "source sentences, one per line")->required();
    tl->add_option("--output", tl_out, "hypothesis file")->required();
    tl->add_option("--meta", tl_meta, "decode metadata csv (for evaluate)");
    tl->add_option("--kdec", tl_kdec, "decode-time coverage iterations");
    tl->add_option("--lpd-radius", tl_radius, "length-parallel decoding radius");
    tl->add_option("--teacher", tl_teacher, "teacher checkpoint for LPD rescoring");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "corpus BLEU and analysis report");
    std::string ev_hyp, ev_ref, ev_meta, ev_out;
    ev->add_option("--hyp", ev_hyp, "hypothesis file")->required();
    ev->add_option("--ref", ev_ref, "reference file")->required();
    ev->add_option("--meta", ev_meta, "decode metadata csv from translate");
    ev->add_option("--out", ev_out, "report output prefix (.txt/.csv)");

    // sweep-kdec
    auto* sw = app.add_subcommand("sweep-kdec", "BLEU/latency across decoding iterations");
    std::string sw_ckpt, sw_vocab, sw_src, sw_ref, sw_out;
    Index sw_kmin = 1, sw_kmax = 8;
    sw->add_option("--ckpt", sw_ckpt, "NAT checkpoint")->required();
    sw->add_option("--vocab", sw_vocab, "vocabulary file")->required();
    sw->add_option("--src", sw_src, "dev source file")->required();
    sw->add_option("--ref", sw_ref, "dev reference file")->required();
    sw->add_option("--kmin", sw_kmin, "first K_dec");
    sw->add_option("--kmax", sw_kmax, "last K_dec");
    sw->add_option("--out", sw_out, "output table file");

    // analyze-coverage
    auto* an = app.add_subcommand("analyze-coverage", "dump per-iteration A/C matrices");
    std::string an_ckpt, an_vocab, an_sentence, an_out;
    Index an_kdec = 5;
    an->add_option("--ckpt", an_ckpt, "NAT checkpoint")->required();
    an->add_option("--vocab", an_vocab, "vocabulary file")->required();
    an->add_option("--sentence", an_sentence, "space-separated source sentence")->required();
    an->add_option("--kdec", an_kdec, "coverage iterations");
    an->add_option("--out", an_out, "CSV output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(task, size, seed, out, lex);
        if (tt->parsed()) return cmd_train_teacher(tt_config, tt_run_dir);
        if (dis->parsed())
            return cmd_distill(dis_teacher, dis_vocab, dis_src, dis_tgt, dis_beam, dis_out, dis_threads);
        if (tr->parsed()) return cmd_train(tr_config, tr_run_dir);
        if (tl->parsed())
            return cmd_translate(tl_ckpt, tl_vocab, tl_in, tl_out, tl_meta, tl_kdec, tl_radius, tl_teacher);
        if (ev->parsed()) return cmd_evaluate(ev_hyp, ev_ref, ev_meta, ev_out);
        if (sw->parsed()) return cmd_sweep_kdec(sw_ckpt, sw_vocab, sw_src, sw_ref, sw_kmin, sw_kmax, sw_out);
        if (an->parsed()) return cmd_analyze_coverage(an_ckpt, an_vocab, an_sentence, an_kdec, an_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
