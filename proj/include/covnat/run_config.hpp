#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "covnat/error.hpp"
#include "covnat/io.hpp"
#include "covnat/model/config.hpp"
#include "covnat/train/trainer.hpp"

namespace covnat {

// Everything a training run needs, serialized into the run directory so a
// run is reproducible from its config alone. File syntax: one `key = value`
// per line, `#` starts a comment, unknown keys are rejected.
struct RunConfig {
    std::uint64_t seed = 0;
    bool seed_set = false;

    std::string train_src, train_tgt;
    std::string dev_src, dev_tgt;
    int vocab_min_count = 1;

    ModelConfig model;
    TeacherConfig teacher;

    TrainOptions train;

    Index k_dec = 5;
    int lpd_radius = 0;
    bool disable_tcir = false;
    bool disable_sca = false;

    void validate() const {
        if (!seed_set) throw ConfigError("config: seed is mandatory (no default-random fallback)");
        if (train_src.empty() || train_tgt.empty())
            throw ConfigError("config: train_src and train_tgt are required");
    }

    static RunConfig parse_lines(const std::vector<std::string>& lines) {
        RunConfig c;
        for (std::size_t li = 0; li < lines.size(); ++li) {
            std::string line = lines[li];
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t");
                if (b == std::string::npos) return std::string();
                const auto e = s.find_last_not_of(" \t");
                return s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(li + 1) + ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            c.set(key, value, li + 1);
        }
        return c;
    }

    static RunConfig load(const std::string& path) { return parse_lines(read_lines(path)); }

    void set(const std::string& key, const std::string& value, std::size_t line_no) {
        auto as_ll = [&] { return std::stoll(value); };
        auto as_d = [&] { return std::stod(value); };
        auto as_b = [&] { return value == "1" || value == "true"; };
        if (key == "seed") {
            seed = static_cast<std::uint64_t>(std::stoull(value));
            seed_set = true;
        } else if (key == "train_src") train_src = value;
        else if (key == "train_tgt") train_tgt = value;
        else if (key == "dev_src") dev_src = value;
        else if (key == "dev_tgt") dev_tgt = value;
        else if (key == "vocab_min_count") vocab_min_count = static_cast<int>(as_ll());
        else if (key == "d_model") model.d_model = as_ll();
        else if (key == "d_hidden") model.d_hidden = as_ll();
        else if (key == "n_layers") model.n_layers = as_ll();
        else if (key == "n_heads") model.n_heads = as_ll();
        else if (key == "max_len") model.max_len = as_ll();
        else if (key == "k_train") model.k_train = as_ll();
        else if (key == "length_bucket_radius") model.length_bucket_radius = as_ll();
        else if (key == "dropout") model.dropout = as_d();
        else if (key == "lambda_init") model.lambda_init = as_d();
        else if (key == "disable_tcir") disable_tcir = as_b();
        else if (key == "disable_sca") disable_sca = as_b();
        else if (key == "teacher_d_model") teacher.d_model = as_ll();
        else if (key == "teacher_d_hidden") teacher.d_hidden = as_ll();
        else if (key == "teacher_n_layers") teacher.n_layers = as_ll();
        else if (key == "teacher_n_heads") teacher.n_heads = as_ll();
        else if (key == "teacher_max_len") teacher.max_len = as_ll();
        else if (key == "teacher_dropout") teacher.dropout = as_d();
        else if (key == "beam") teacher.beam = as_ll();
        else if (key == "alpha") train.alpha = as_d();
        else if (key == "beta") train.beta = as_d();
        else if (key == "pretrain_max_steps") train.pretrain_max_steps = as_ll();
        else if (key == "finetune_steps") train.finetune_steps = as_ll();
        else if (key == "peak_lr") train.peak_lr = as_d();
        else if (key == "warmup") train.warmup = as_ll();
        else if (key == "finetune_lr") train.finetune_lr = as_d();
        else if (key == "max_tokens") train.max_tokens = as_ll();
        else if (key == "eval_interval") train.eval_interval = as_ll();
        else if (key == "patience") train.patience = as_ll();
        else if (key == "threads") train.threads = static_cast<int>(as_ll());
        else if (key == "joint_from_scratch") train.joint_from_scratch = as_b();
        else if (key == "teacher_max_steps") teacher_max_steps = as_ll();
        else if (key == "teacher_warmup") teacher_warmup = as_ll();
        else if (key == "k_dec") k_dec = as_ll();
        else if (key == "lpd_radius") lpd_radius = static_cast<int>(as_ll());
        else throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }

    long teacher_max_steps = 3000;
    long teacher_warmup = 400;

    std::vector<std::string> to_lines() const {
        char buf[256];
        std::vector<std::string> out;
        auto put = [&](const char* fmt, auto... args) {
            std::snprintf(buf, sizeof(buf), fmt, args...);
            out.emplace_back(buf);
        };
        put("seed = %llu", static_cast<unsigned long long>(seed));
        put("train_src = %s", train_src.c_str());
        put("train_tgt = %s", train_tgt.c_str());
        if (!dev_src.empty()) put("dev_src = %s", dev_src.c_str());
        if (!dev_tgt.empty()) put("dev_tgt = %s", dev_tgt.c_str());
        put("vocab_min_count = %d", vocab_min_count);
        put("d_model = %lld", static_cast<long long>(model.d_model));
        put("d_hidden = %lld", static_cast<long long>(model.d_hidden));
        put("n_layers = %lld", static_cast<long long>(model.n_layers));
        put("n_heads = %lld", static_cast<long long>(model.n_heads));
        put("max_len = %lld", static_cast<long long>(model.max_len));
        put("k_train = %lld", static_cast<long long>(model.k_train));
        put("length_bucket_radius = %lld", static_cast<long long>(model.length_bucket_radius));
        put("dropout = %.17g", model.dropout);
        put("lambda_init = %.17g", model.lambda_init);
        put("disable_tcir = %d", disable_tcir ? 1 : 0);
        put("disable_sca = %d", disable_sca ? 1 : 0);
        put("teacher_d_model = %lld", static_cast<long long>(teacher.d_model));
        put("teacher_d_hidden = %lld", static_cast<long long>(teacher.d_hidden));
        put("teacher_n_layers = %lld", static_cast<long long>(teacher.n_layers));
        put("teacher_n_heads = %lld", static_cast<long long>(teacher.n_heads));
        put("teacher_max_len = %lld", static_cast<long long>(teacher.max_len));
        put("teacher_dropout = %.17g", teacher.dropout);
        put("beam = %lld", static_cast<long long>(teacher.beam));
        put("teacher_max_steps = %ld", teacher_max_steps);
        put("teacher_warmup = %ld", teacher_warmup);
        put("alpha = %.17g", train.alpha);
        put("beta = %.17g", train.beta);
        put("pretrain_max_steps = %ld", train.pretrain_max_steps);
        put("finetune_steps = %ld", train.finetune_steps);
        put("peak_lr = %.17g", train.peak_lr);
        put("warmup = %ld", train.warmup);
        put("finetune_lr = %.17g", train.finetune_lr);
        put("max_tokens = %lld", static_cast<long long>(train.max_tokens));
        put("eval_interval = %ld", train.eval_interval);
        put("patience = %ld", train.patience);
        put("threads = %d", train.threads);
        put("joint_from_scratch = %d", train.joint_from_scratch ? 1 : 0);
        put("k_dec = %lld", static_cast<long long>(k_dec));
        put("lpd_radius = %d", lpd_radius);
        return out;
    }
};

}  // namespace covnat
